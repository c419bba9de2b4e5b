import hashlib

import numpy as np
import pytest

from sphbi import synth
from sphbi.errors import ConfigError
from sphbi.labeling import CLASS_INDEX, CLASS_NAMES, WINDOW_ONLY, check_offset, label_corpus, read_attack_log
from sphbi.pcap import dissect, read_pcap, to_table
from sphbi.synth import ScenarioConfig, Segment, default_config, generate, write_outputs


def _label(syn):
    fields = [dissect(p) for p in syn.packets]
    assert not any(isinstance(f, str) for f in fields)
    return label_corpus(to_table(fields), syn.windows)


def test_no_attacks_all_normal():
    syn = generate(ScenarioConfig(seed=1, duration=200))
    labels, summary = _label(syn)
    assert summary["normal"] == summary["total"] == len(syn.packets) > 0
    assert np.array_equal(labels, syn.labels)


def test_one_brute_force_segment_of_500_packets():
    # 100 writes per second for 2.5 s, each echoed by the device
    syn = generate(ScenarioConfig(seed=2, duration=300, segments=[Segment("BruteForce", 100, 2.5, 100)]))
    labels, summary = _label(syn)
    assert summary["per_class"]["BruteForce"] == 500
    assert int((syn.labels == CLASS_INDEX["BruteForce"]).sum()) == 500


def test_same_seed_byte_identical(tmp_path):
    cfg = default_config("easy", seed=7, scale=0.02)
    a = write_outputs(generate(cfg), tmp_path / "a")
    b = write_outputs(generate(default_config("easy", seed=7, scale=0.02)), tmp_path / "b")
    for key in ("pcap", "attack_log", "ground_truth", "manifest", "config"):
        assert open(a[key], "rb").read() == open(b[key], "rb").read(), key
    c = write_outputs(generate(default_config("easy", seed=8, scale=0.02)), tmp_path / "c")
    assert open(a["pcap"], "rb").read() != open(c["pcap"], "rb").read()


@pytest.fixture(scope="module", params=["easy", "hard"])
def corpus(request):
    return generate(default_config(request.param, seed=3, scale=0.05))


def test_labels_agree_with_intent(corpus):
    labels, summary = _label(corpus)
    assert summary["total"] == len(corpus.packets)
    # every attack packet gets its intended class
    attack = corpus.labels != 0
    assert np.array_equal(labels[attack], corpus.labels[attack])
    # signature classes agree exactly in both directions
    for name in ("FDI", "FrameStacking", "BruteForce", "LengthManip"):
        c = CLASS_INDEX[name]
        assert np.array_equal(labels == c, corpus.labels == c), name
    # the rest are benign polls that happen to fall inside a window-only window
    extra = labels != corpus.labels
    assert {CLASS_NAMES[c] for c in labels[extra]} <= set(WINDOW_ONLY)
    in_window = np.zeros(len(labels), bool)
    ts = np.array([p.capture_ts for p in corpus.packets])
    for w in corpus.windows:
        if w.attack_type in WINDOW_ONLY:
            in_window |= (ts >= w.start_ts) & (ts <= w.end_ts)
    assert in_window[extra].all()


def test_every_class_present_in_default_scenario():
    syn = generate(default_config("easy", seed=0, scale=0.2))
    counts = np.bincount(syn.labels, minlength=9)
    assert (counts > 0).all(), counts


def test_replayed_packets_copy_earlier_traffic(corpus):
    rp = CLASS_INDEX["Replay"]
    win = [w for w in corpus.windows if w.attack_type == "Replay"][0]
    seen = {}
    for i, (p, lab) in enumerate(zip(corpus.packets, corpus.labels)):
        h = hashlib.sha256(p.link_bytes).digest()
        if lab == rp:
            j = seen.get(h)
            assert j is not None, f"replayed packet {i} has no earlier original"
            assert corpus.packets[j].capture_ts < win.start_ts
        elif h not in seen:
            seen[h] = i
    assert (corpus.labels == rp).any()


def test_hard_mode_replays_copy_polls():
    syn = generate(default_config("hard", seed=3, scale=0.05))
    rp = syn.labels == CLASS_INDEX["Replay"]
    funcs = {dissect(p).func_code for p, r in zip(syn.packets, rp) if r}
    assert funcs <= {3, 4}


def test_reparse_has_no_malformed_skips(tmp_path, corpus):
    paths = write_outputs(corpus, tmp_path)
    back = read_pcap(paths["pcap"])
    assert [p.link_bytes for p in back] == [p.link_bytes for p in corpus.packets]
    assert all(not isinstance(dissect(p), str) for p in back)
    assert synth.read_ground_truth(paths["ground_truth"]).tolist() == corpus.labels.tolist()
    assert read_attack_log(paths["attack_log"]) == corpus.windows


def test_header_fields_uniform():
    syn = generate(default_config("easy", seed=4, scale=0.02))
    fields = [dissect(p) for p in syn.packets]
    assert {f.ip_ttl for f in fields} == {64}
    assert {502} <= {f.tcp_src_port for f in fields} | {f.tcp_dst_port for f in fields}
    assert all(502 in (f.tcp_src_port, f.tcp_dst_port) for f in fields)


def test_overlapping_segments_rejected():
    with pytest.raises(ConfigError, match="overlap"):
        ScenarioConfig(duration=100, segments=[Segment("Recon", 10, 20), Segment("Replay", 25, 5)])
    with pytest.raises(ConfigError):
        ScenarioConfig(duration=100, segments=[Segment("Recon", 90, 20)])
    with pytest.raises(ConfigError):
        ScenarioConfig(segments=[Segment("Teleport", 1, 2)])
    with pytest.raises(ConfigError):
        ScenarioConfig(mode="medium")


def test_config_json_round_trip(tmp_path):
    cfg = default_config("hard", seed=5, scale=0.1)
    p = tmp_path / "c.json"
    import json

    p.write_text(json.dumps(cfg.to_dict()))
    assert ScenarioConfig.from_json(p) == cfg


def test_shifted_log_is_detected():
    syn = generate(default_config("easy", seed=6, scale=0.1))
    ts = {"capture.pcap": np.array([p.capture_ts for p in syn.packets], dtype=np.int64)}
    hour = 3600 * 1_000_000
    shifted = [w.__class__(w.start_ts + hour, w.end_ts + hour, w.attack_type, w.scenario) for w in syn.windows]
    r = check_offset(ts, shifted)["capture.pcap"]
    assert r["best_offset_us"] == -hour
