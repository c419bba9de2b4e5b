"""sphbi command line: extract, label, split, train, evaluate, experiments, synth, stats."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .codec import APPROACHES, reconstruct_table
from .dataset import UNLABELLED, RecordStore, SplitSpec, read_records, split, write_records
from .errors import ConfigError, ContractError, FormatError, RunFailure
from .labeling import (CLASS_INDEX, CLASS_NAMES, WINDOW_ONLY, binary_labels, check_offset, default_offset_grid,
                       label_corpus, load_length_table, read_attack_log)
from .pcap import FIELD_DTYPE, extract_file, list_pcaps, read_manifest, to_table

log = logging.getLogger("sphbi")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUN = 0, 1, 2, 3
SPLIT_NAMES = ("train", "val", "test")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _meta(command: str, **extra) -> dict:
    return {"tool": "sphbi", "version": __version__, "command": command, **extra}


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _csv_list(text, conv=str):
    try:
        return [conv(x.strip()) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad list {text!r}") from None


def _cap(text):
    return None if str(text).lower() in ("none", "0", "") else int(text)


def sidecar_path(records) -> Path:
    return Path(str(records) + ".fields.npz")


# ---------------------------------------------------------------------------
# extract / label / split


def cmd_extract(args) -> int:
    files = list_pcaps(args.pcap, args.pattern)
    if not files:
        raise FormatError(f"no captures found under {args.pcap}")
    manifest = read_manifest(args.manifest) if args.manifest else {}
    tables, file_rows, names = [], [], []
    for f in files:
        ent = manifest.get(str(f.resolve()))
        try:
            res = extract_file(f)
        except (OSError, FormatError) as exc:
            if len(files) == 1:
                raise FormatError(f"{f}: {exc}") from None
            log.warning("skipping %s: %s", f, exc)
            file_rows.append({"file": str(f), "error": str(exc)})
            continue
        tables.append(to_table(res.fields))
        names.append(str(f))
        file_rows.append({
            "file": str(f), "capture_class": ent.capture_class if ent else "unknown",
            "scenario": ent.scenario if ent else "", "total_packets": res.total,
            "modbus_packets": len(res.fields), "skips": dict(sorted(res.skips.items())),
        })
    table = np.concatenate(tables) if tables else np.zeros(0, FIELD_DTYPE)
    file_index = np.concatenate([np.full(len(t), i, np.int32) for i, t in enumerate(tables)]) if tables \
        else np.zeros(0, np.int32)
    n = len(table)
    store = RecordStore(reconstruct_table(table), np.full(n, UNLABELLED, np.uint8),
                        np.full(n, UNLABELLED, np.uint8), table["capture_ts"])
    write_records(store, args.out)
    meta = _meta("extract", files=names)
    with open(sidecar_path(args.out), "wb") as fh:
        np.savez(fh, fields=table, file_index=file_index, files=np.array(names),
                 meta=np.array(json.dumps(meta, sort_keys=True)))
    by_class: dict[str, dict] = {}
    for r in file_rows:
        if "error" in r:
            continue
        g = by_class.setdefault(r["capture_class"], {"files": 0, "modbus_packets": 0})
        g["files"] += 1
        g["modbus_packets"] += r["modbus_packets"]
    _dump({"meta": meta, "records": n, "files": file_rows, "by_class": by_class}, args.summary)
    return EXIT_OK


def _load_fields(records_path):
    p = sidecar_path(records_path)
    if not p.exists():
        raise FormatError(f"{p}: field sidecar missing; re-run extract")
    with np.load(p, allow_pickle=False) as z:
        return z["fields"], z["file_index"], [str(s) for s in z["files"]]


def _agreement(labels, truth) -> dict:
    """Per-class agreement with the generator's intent.

    Window-only classes label every packet inside their window, so benign
    polls that fall there disagree with intent by design; ``rule_detectable``
    covers the classes whose rule carries a packet-level signature.
    """
    if len(labels) != len(truth):
        raise ContractError(f"ground truth has {len(truth)} rows, records have {len(labels)}")
    out = {}
    for c, name in enumerate(CLASS_NAMES):
        m = truth == c
        if m.any() or (labels == c).any():
            out[name] = {"count": int(m.sum()), "labelled": int((labels == c).sum()),
                         "agreement": float((labels[m] == c).mean()) if m.any() else None}
    out["overall"] = float((labels == truth).mean()) if len(truth) else float("nan")
    rd = np.array([CLASS_INDEX[n] for n in CLASS_NAMES[1:] if n not in WINDOW_ONLY])
    m = np.isin(truth, rd) | np.isin(labels, rd)
    out["rule_detectable"] = float((labels[m] == truth[m]).mean()) if m.any() else 1.0
    return out


def cmd_label(args) -> int:
    store = read_records(args.records)
    fields, file_index, files = _load_fields(args.records)
    if len(fields) != len(store):
        raise FormatError(f"sidecar has {len(fields)} rows, record file has {len(store)}")
    windows = read_attack_log(args.attack_log)
    table = load_length_table(args.length_table) if args.length_table else None
    labels, summary = label_corpus(fields, windows, table)
    out = RecordStore(store.vectors, labels, binary_labels(labels), store.ts)
    write_records(out, args.out)
    report = {"meta": _meta("label", records=str(args.records), attack_log=str(args.attack_log)),
              "summary": summary}
    if args.offset_check:
        ts = {f: fields["capture_ts"][file_index == i] for i, f in enumerate(files)}
        grid = default_offset_grid(args.offset_span, args.offset_step)
        report["offset_check"] = check_offset(ts, windows, grid)
    if args.ground_truth:
        from .synth import read_ground_truth
        report["agreement"] = _agreement(labels, read_ground_truth(args.ground_truth))
    _dump(report, args.summary)
    if args.summary:
        _print_counts(summary)
    return EXIT_OK


def _print_counts(summary):
    for name, n in summary["per_class"].items():
        print(f"{name:<18}{n:>12}")
    print(f"{'total':<18}{summary['total']:>12}")


def cmd_split(args) -> int:
    ratios = tuple(_csv_list(args.ratios, float))
    spec = SplitSpec(ratios)
    store = read_records(args.records)
    if (store.labels == UNLABELLED).any():
        raise ContractError(f"{args.records} contains unlabelled records; run label first")
    parts = split(store, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    counts = {}
    for name, part in zip(SPLIT_NAMES, parts):
        write_records(part, out / f"{name}.spb")
        counts[name] = part.counts()
    _dump({"meta": _meta("split", ratios=list(ratios)), "counts": counts}, out / "split.json")
    _dump(counts)
    return EXIT_OK


# ---------------------------------------------------------------------------
# training and experiments


def _load_splits(data_dir):
    from .experiments import Splits

    d = Path(data_dir)
    return Splits(*(read_records(d / f"{n}.spb") for n in SPLIT_NAMES))


def _run_config(args, base: dict | None = None):
    from .experiments import RunConfig

    cfg = dict(base or {})
    for key, attr in (("task", "task"), ("approach", "approach"), ("seed", "seed"), ("epochs", "epochs"),
                      ("batch_size", "batch"), ("lr", "lr"), ("optimizer", "optimizer"),
                      ("activation", "activation")):
        v = getattr(args, attr, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "cap", None) is not None:
        cfg["cap"] = _cap(args.cap)
    if getattr(args, "batchnorm", False):
        cfg["batchnorm"] = True
    return RunConfig.from_dict(cfg)


def cmd_train(args) -> int:
    from .experiments import train
    from .models import save_checkpoint

    cfg = _run_config(args)
    data = _load_splits(args.data)
    res = train(cfg, data.train, data.val)
    fp = data.fingerprint()
    meta = _meta("train", config=cfg.to_dict(), config_hash=cfg.hash(fp), data=fp,
                 seed=cfg.seed, best_epoch=res.best_epoch, best_val_loss=res.best_val_loss,
                 history=res.history)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(res.model, args.out, meta)
    _dump({"checkpoint": str(args.out), "best_epoch": res.best_epoch, "config_hash": meta["config_hash"],
           "param_count": res.model.param_count})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .metrics import evaluate, write_report
    from .models import load_checkpoint

    clf, meta = load_checkpoint(args.checkpoint)
    test = read_records(args.test)
    if (test.labels == UNLABELLED).any():
        raise ContractError(f"{args.test} contains unlabelled records")
    cm = evaluate(clf, test)
    rep = write_report(cm, args.report, _meta("evaluate", checkpoint=str(args.checkpoint),
                                              config_hash=meta.get("config_hash")))
    if args.matrix_csv:
        cm.write_csv(args.matrix_csv, normalized=args.normalized)
    print(f"accuracy {100 * rep['accuracy']:.2f}% on {rep['total']} records")
    return EXIT_OK


def _config_file(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _strip_times(d):
    # wall times stay in the ledger; report files are reproducible
    if isinstance(d, dict):
        return {k: _strip_times(v) for k, v in d.items() if k != "wall_time"}
    if isinstance(d, list):
        return [_strip_times(v) for v in d]
    return d


def cmd_seeds(args) -> int:
    from .experiments import Ledger, multi_seed

    cfg = _run_config(args, _config_file(args.config))
    ms = multi_seed(cfg, _csv_list(args.seeds, int), _load_splits(args.data), args.jobs,
                    Ledger(args.ledger), args.checkpoints)
    out = {"meta": _meta("seeds", config=cfg.to_dict()), **_strip_times(ms.to_dict())}
    _dump(out, args.out)
    s = ms.summary
    print(f"accuracy {s.mean:.2f} ± {s.std:.2f} (n={s.n}), 95% CI [{s.ci_low:.2f}, {s.ci_high:.2f}]"
          + (" PARTIAL" if ms.partial else ""))
    return EXIT_RUN if ms.partial else EXIT_OK


def cmd_sweep(args) -> int:
    from .experiments import Ledger, cap_sweep, write_csv

    cfg = _run_config(args, _config_file(args.config))
    approaches = _csv_list(args.approaches)
    caps = [_cap(c) for c in _csv_list(args.caps)]
    rows = cap_sweep(cfg, approaches, caps, _csv_list(args.seeds, int), _load_splits(args.data),
                     args.jobs, Ledger(args.ledger))
    write_csv(rows, args.out)
    print(f"{len(rows)} rows -> {args.out}")
    return EXIT_RUN if any(r["partial"] for r in rows) else EXIT_OK


def cmd_factorial(args) -> int:
    from dataclasses import replace

    from .experiments import DEFAULT_FACTORS, Ledger, factorial, followup

    cfg = _run_config(args, _config_file(args.config))
    factors = DEFAULT_FACTORS
    if args.factors:
        factors = {k: tuple(v) for k, v in _config_file(args.factors).items()}
    data = _load_splits(args.data)
    ledger = Ledger(args.ledger)
    fac = factorial(cfg, data, factors, jobs=args.jobs, ledger=ledger)
    out = {"meta": _meta("factorial", config=cfg.to_dict(), factors={k: list(v) for k, v in factors.items()}),
           "rows": fac.rows, "best_multiclass": fac.best,
           "spread": {"multiclass": fac.spread("multiclass"), "binary": fac.spread("binary")}}
    if args.followup_seeds and fac.best is not None:
        winner = replace(cfg, task="multiclass", **fac.best)
        out["followup"] = _strip_times(followup(winner, replace(cfg, task="multiclass"),
                                                _csv_list(args.followup_seeds, int), data, args.jobs, ledger))
    _dump(out, args.out)
    print(f"best multiclass config: {fac.best}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth and stats


def cmd_synth(args) -> int:
    from .synth import ScenarioConfig, default_config, generate, write_outputs

    if args.config:
        cfg = ScenarioConfig(**_config_file(args.config))
    else:
        cfg = default_config(args.mode, args.seed, args.scale)
    syn = generate(cfg)
    paths = write_outputs(syn, args.out)
    _dump({"packets": len(syn.packets), "outputs": paths,
           "intent": {n: int(c) for n, c in zip(CLASS_NAMES, np.bincount(syn.labels, minlength=len(CLASS_NAMES)))}})
    return EXIT_OK


def _triple(text):
    vals = _csv_list(text, float)
    if len(vals) != 3:
        raise UsageError(f"expected mean,std,n but got {text!r}")
    return vals[0], vals[1], int(vals[2])


def cmd_stats(args) -> int:
    from .stats import StatSummary, welch_t

    if args.stats_cmd == "welch":
        a = StatSummary.from_moments(*_triple(args.a))
        b = StatSummary.from_moments(*_triple(args.b))
        t, df, p = welch_t(a, b)
        print(f"t = {t:.4f}  df = {df:.2f}  p = {p:.4f}")
        if args.json:
            _dump({"t": t, "df": df, "p": p, "a": a.to_dict(), "b": b.to_dict()}, args.json)
    else:
        s = StatSummary.from_moments(*_triple(args.summary))
        print(f"{s.mean:.2f} ± {s.std:.2f} (n={s.n}), {100 * s.confidence:.0f}% CI "
              f"[{s.ci_low:.3f}, {s.ci_high:.3f}]")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _add_run_flags(p, required=False):
    p.add_argument("--task", choices=("binary", "multiclass"), required=required)
    p.add_argument("--approach", choices=sorted(APPROACHES), required=required)
    p.add_argument("--cap", default=None, help="per-class cap on train/val records, 'none' to disable "
                   "(default 1000)")
    p.add_argument("--seed", type=int, default=None, help="default 42")
    p.add_argument("--epochs", type=int, default=None, help="default 100 multiclass, 20 binary")
    p.add_argument("--batch", type=int, default=None, help="default 32")
    p.add_argument("--lr", type=float, default=None, help="default 0.01")
    p.add_argument("--optimizer", choices=("sgd", "adam"), default=None,
                   help="default sgd (momentum 0.9) for multiclass, adam for binary")
    p.add_argument("--activation", choices=("sigmoid", "tanh"), default=None,
                   help="default sigmoid multiclass, tanh binary")
    p.add_argument("--batchnorm", action="store_true", help="insert batch normalisation after each conv")


def _add_exp_flags(p):
    p.add_argument("--data", required=True, help="directory holding train/val/test.spb")
    p.add_argument("--ledger", default=None, help="JSON-lines results ledger (resumable)")
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sphbi", description="Single-packet header binary images for Modbus TCP intrusion detection")
    ap.add_argument("--version", action="version", version=f"sphbi {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="dissect captures into an unlabelled record file")
    p.add_argument("--pcap", required=True, help="capture file or directory")
    p.add_argument("--manifest", default=None, help="CSV: file_path,capture_class,scenario")
    p.add_argument("--out", required=True)
    p.add_argument("--pattern", default="*.pcap*")
    p.add_argument("--summary", default=None, help="write the survey JSON here instead of stdout")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("label", help="label records from an attack log")
    p.add_argument("--records", required=True)
    p.add_argument("--attack-log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--offset-check", action="store_true")
    p.add_argument("--offset-span", type=int, default=7200, help="seconds (default 7200)")
    p.add_argument("--offset-step", type=int, default=60, help="seconds (default 60)")
    p.add_argument("--length-table", default=None, help="JSON expected-length table (default built in)")
    p.add_argument("--ground-truth", default=None, help="packet_index,true_label CSV to compare against")
    p.add_argument("--summary", default=None)
    p.set_defaults(fn=cmd_label)

    p = sub.add_parser("split", help="stratified percent-rank split")
    p.add_argument("--records", required=True)
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="train one model, keeping the best-validation epoch")
    _add_run_flags(p, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="confusion matrix and metrics on a record file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--matrix-csv", default=None)
    p.add_argument("--normalized", action="store_true")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("seeds", help="multi-seed replication with a t-based CI")
    p.add_argument("--config", default=None, help="JSON run config")
    p.add_argument("--seeds", default="42,0,1,2,3,4,5,6,7,8")
    p.add_argument("--out", default=None)
    p.add_argument("--checkpoints", default=None, help="directory for per-run checkpoints")
    _add_run_flags(p)
    _add_exp_flags(p)
    p.set_defaults(fn=cmd_seeds)

    p = sub.add_parser("sweep", help="accuracy versus per-class cap")
    p.add_argument("--config", default=None)
    p.add_argument("--caps", default="500,1000,2000,5000,10000,20000,50000")
    p.add_argument("--approaches", default="2b")
    p.add_argument("--seeds", default="42,0,1,2,3,4,5,6,7,8")
    p.add_argument("--out", default="sweep.csv")
    _add_run_flags(p)
    _add_exp_flags(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("factorial", help="2^4 grid over training factors, both tasks")
    p.add_argument("--config", default=None)
    p.add_argument("--factors", default=None, help='JSON {"name": [low, high], ...}')
    p.add_argument("--followup-seeds", default=None, help="multi-seed the winner against the baseline")
    p.add_argument("--out", default=None)
    _add_run_flags(p)
    _add_exp_flags(p)
    p.set_defaults(fn=cmd_factorial)

    p = sub.add_parser("synth", help="generate a synthetic capture, attack log and ground truth")
    p.add_argument("--config", default=None, help="JSON scenario config (default: built-in scenario)")
    p.add_argument("--mode", choices=("easy", "hard"), default="easy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0, help="time scale of the built-in scenario")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("stats", help="t-based statistics")
    ss = p.add_subparsers(dest="stats_cmd", required=True, parser_class=_Parser)
    w = ss.add_parser("welch", help="Welch's t-test from mean,std,n summaries")
    w.add_argument("--a", required=True)
    w.add_argument("--b", required=True)
    w.add_argument("--json", default=None)
    c = ss.add_parser("ci", help="t confidence interval from mean,std,n")
    c.add_argument("--summary", required=True)
    p.set_defaults(fn=cmd_stats)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"sphbi: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        print(f"sphbi: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ContractError, FileNotFoundError) as exc:
        print(f"sphbi: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RunFailure as exc:
        print(f"sphbi: run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
