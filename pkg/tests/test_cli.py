import json

import pytest

from sphbi.cli import main
from sphbi.dataset import read_records


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    syn = d / "syn"
    assert main(["synth", "--mode", "easy", "--seed", "1", "--scale", "0.05", "--out", str(syn)]) == 0
    assert main(["extract", "--pcap", str(syn / "capture.pcap"), "--manifest", str(syn / "manifest.csv"),
                 "--out", str(d / "raw.spb"), "--summary", str(d / "extract.json")]) == 0
    assert main(["label", "--records", str(d / "raw.spb"), "--attack-log", str(syn / "attack_log.csv"),
                 "--out", str(d / "lab.spb"), "--ground-truth", str(syn / "ground_truth.csv"),
                 "--offset-check", "--summary", str(d / "label.json")]) == 0
    assert main(["split", "--records", str(d / "lab.spb"), "--out", str(d / "splits")]) == 0
    return d


def test_label_agreement_report(pipeline):
    rep = json.loads((pipeline / "label.json").read_text())
    agr = rep["agreement"]
    assert agr["rule_detectable"] == 1.0
    for name, v in agr.items():
        if isinstance(v, dict) and name != "Normal":
            assert v["agreement"] == 1.0, name
    off = rep["offset_check"]
    assert list(off.values())[0]["best_offset_us"] == 0


def test_extract_summary(pipeline):
    rep = json.loads((pipeline / "extract.json").read_text())
    f = rep["files"][0]
    assert f["capture_class"] == "compromised-scada"
    assert f["modbus_packets"] == f["total_packets"] == rep["records"]
    assert rep["by_class"]["compromised-scada"]["files"] == 1


def test_split_sizes(pipeline):
    total = read_records(pipeline / "lab.spb").counts()
    parts = [read_records(pipeline / "splits" / f"{n}.spb").counts() for n in ("train", "val", "test")]
    for name, n in total.items():
        got = [p[name] for p in parts]
        assert sum(got) == n
        if n >= 10:
            assert all(abs(g - r * n) <= 1 for g, r in zip(got, (0.8, 0.1, 0.1))), name


def test_subcommands_idempotent(pipeline, tmp_path):
    syn = pipeline / "syn"
    main(["extract", "--pcap", str(syn / "capture.pcap"), "--out", str(tmp_path / "raw.spb"),
          "--manifest", str(syn / "manifest.csv"), "--summary", str(tmp_path / "extract.json")])
    assert (tmp_path / "raw.spb").read_bytes() == (pipeline / "raw.spb").read_bytes()
    main(["label", "--records", str(pipeline / "raw.spb"), "--attack-log", str(syn / "attack_log.csv"),
          "--out", str(tmp_path / "lab.spb"), "--summary", str(tmp_path / "l.json")])
    assert (tmp_path / "lab.spb").read_bytes() == (pipeline / "lab.spb").read_bytes()
    main(["synth", "--mode", "easy", "--seed", "1", "--scale", "0.05", "--out", str(tmp_path / "syn")])
    for f in ("capture.pcap", "attack_log.csv", "ground_truth.csv", "config.json"):
        assert (tmp_path / "syn" / f).read_bytes() == (syn / f).read_bytes()


def test_train_zero_epochs_and_evaluate(pipeline, tmp_path):
    ck = tmp_path / "m.ckpt"
    args = ["train", "--task", "multiclass", "--approach", "3", "--epochs", "0", "--seed", "3",
            "--data", str(pipeline / "splits"), "--out", str(ck)]
    assert main(args) == 0
    from sphbi.models import build, load_checkpoint

    clf, meta = load_checkpoint(ck)
    assert meta["best_epoch"] == 0
    init = build("multiclass", "3", seed=3)
    assert all(a.tobytes() == b.tobytes() for (_, a), (_, b) in zip(clf.net.named_arrays(), init.net.named_arrays()))
    first = ck.read_bytes()
    assert main(args) == 0 and ck.read_bytes() == first
    rep = tmp_path / "r.json"
    assert main(["evaluate", "--checkpoint", str(ck), "--test", str(pipeline / "splits" / "test.spb"),
                 "--report", str(rep), "--matrix-csv", str(tmp_path / "m.csv")]) == 0
    r = json.loads(rep.read_text())
    assert r["total"] == len(read_records(pipeline / "splits" / "test.spb"))
    assert (tmp_path / "m.csv").read_text().startswith("true\\pred,Normal")


def test_seeds_and_sweep(pipeline, tmp_path):
    common = ["--data", str(pipeline / "splits"), "--approach", "3", "--epochs", "1", "--seeds", "1,2",
              "--ledger", str(tmp_path / "l.jsonl")]
    assert main(["seeds", *common, "--out", str(tmp_path / "s.json")]) == 0
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["summary"]["n"] == 2 and "wall_time" not in json.dumps(s)
    assert main(["seeds", *common, "--out", str(tmp_path / "s2.json")]) == 0
    assert (tmp_path / "s.json").read_bytes() == (tmp_path / "s2.json").read_bytes()
    assert len((tmp_path / "l.jsonl").read_text().splitlines()) == 2
    assert main(["sweep", *common, "--caps", "50,100", "--out", str(tmp_path / "sw.csv")]) == 0
    assert len((tmp_path / "sw.csv").read_text().splitlines()) == 3


def test_stats_commands(capsys):
    assert main(["stats", "welch", "--a", "94.4,2.2,10", "--b", "87.6,4.9,10"]) == 0
    out = capsys.readouterr().out
    p = float(out.split("p = ")[1])
    assert p == pytest.approx(0.002, abs=0.05)
    assert main(["stats", "ci", "--summary", "45.5,5.7,10"]) == 0
    assert "[41.4" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    [],
    ["train", "--task", "ternary", "--approach", "3", "--data", "x", "--out", "y"],
    ["stats", "welch", "--a", "1,2", "--b", "1,2,3"],
    ["frobnicate"],
    ["synth", "--out", "x", "--bogus"],
])
def test_usage_errors_exit_1(argv):
    assert main(argv) == 1


def test_data_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage!")
    assert main(["evaluate", "--checkpoint", str(bad), "--test", str(bad), "--report", str(tmp_path / "r")]) == 2
    assert main(["split", "--records", str(tmp_path / "missing.spb"), "--out", str(tmp_path)]) == 2
    notpcap = tmp_path / "x.pcap"
    notpcap.write_bytes(b"\x00" * 40)
    assert main(["extract", "--pcap", str(notpcap), "--out", str(tmp_path / "o.spb")]) == 2


def test_unlabelled_split_refused(pipeline, tmp_path):
    assert main(["split", "--records", str(pipeline / "raw.spb"), "--out", str(tmp_path)]) == 2


def test_bad_config_exit_1(pipeline, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"colour": "red"}')
    assert main(["seeds", "--config", str(cfg), "--data", str(pipeline / "splits")]) == 1


def test_run_failure_exit_3(pipeline, tmp_path):
    assert main(["train", "--task", "multiclass", "--approach", "3", "--epochs", "2", "--lr", "1e38",
                 "--data", str(pipeline / "splits"), "--out", str(tmp_path / "m.ckpt")]) == 3
