"""Hybrid labelling: attack-log time windows combined with per-type packet signatures."""

from __future__ import annotations

import bisect
import csv
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import FormatError
from .pcap import MODBUS_PORT, PacketFields

log = logging.getLogger(__name__)

# multiclass label codes, fixed (also used by the record file)
CLASS_NAMES = (
    "Normal",
    "BruteForce",
    "FrameStacking",
    "QueryFlooding",
    "Recon",
    "Replay",
    "PayloadInjection",
    "FDI",
    "LengthManip",
)
CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}
NORMAL = 0
N_CLASSES = len(CLASS_NAMES)

# attack-log types; DelayResponse is parsed but never labelled
ATTACK_TYPES = CLASS_NAMES[1:] + ("DelayResponse",)

FDI_BYTE_CNT = 171
# windowed classes without a packet signature, in priority order
WINDOW_ONLY = ("QueryFlooding", "Recon", "Replay", "PayloadInjection")


@dataclass(frozen=True)
class Label:
    multiclass: int

    @property
    def binary(self) -> int:
        return int(self.multiclass != NORMAL)

    @property
    def name(self) -> str:
        return CLASS_NAMES[self.multiclass]


@dataclass(frozen=True)
class AttackWindow:
    start_ts: int  # microseconds
    end_ts: int | None  # None when the log never closed the window
    attack_type: str
    scenario: str = ""

    def __post_init__(self):
        if self.attack_type not in ATTACK_TYPES:
            raise FormatError(f"unknown attack type {self.attack_type!r}")
        if self.end_ts is not None and self.end_ts < self.start_ts:
            raise FormatError(f"window ends before it starts: {self}")


# ---------------------------------------------------------------------------
# attack log CSV: start_ts,end_ts,attack_type,scenario


def parse_ts(text: str) -> int | None:
    """ISO-8601 or epoch seconds -> integer microseconds (None for empty)."""
    s = text.strip()
    if not s:
        return None
    try:
        return int(round(float(s) * 1_000_000))
    except ValueError:
        pass
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(s)
    except ValueError:
        raise FormatError(f"unparseable timestamp {text!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - datetime(1970, 1, 1, tzinfo=timezone.utc)
    return (delta.days * 86_400 + delta.seconds) * 1_000_000 + delta.microseconds


def format_ts(us: int | None) -> str:
    if us is None:
        return ""
    sec, frac = divmod(us, 1_000_000)
    return f"{sec}.{frac:06d}"


def read_attack_log(path) -> list[AttackWindow]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"start_ts", "end_ts", "attack_type"} - set(reader.fieldnames or ())
        if missing:
            raise FormatError(f"attack log {path}: missing columns {sorted(missing)}")
        for row in reader:
            start = parse_ts(row["start_ts"])
            if start is None:
                raise FormatError(f"attack log {path}: row without start_ts: {row}")
            out.append(
                AttackWindow(start, parse_ts(row["end_ts"] or ""), row["attack_type"].strip(),
                             (row.get("scenario") or "").strip())
            )
    out.sort(key=lambda w: w.start_ts)
    return out


def write_attack_log(windows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start_ts", "end_ts", "attack_type", "scenario"])
        for win in sorted(windows, key=lambda x: x.start_ts):
            w.writerow([format_ts(win.start_ts), format_ts(win.end_ts), win.attack_type, win.scenario])


def close_windows(windows, end_ts: int) -> list[AttackWindow]:
    """Close unterminated windows at ``end_ts`` (the end of the capture)."""
    out = []
    for w in windows:
        if w.end_ts is None:
            log.warning("unclosed %s window at %d closed at capture end %d", w.attack_type, w.start_ts, end_ts)
            w = AttackWindow(w.start_ts, max(end_ts, w.start_ts), w.attack_type, w.scenario)
        out.append(w)
    return out


# ---------------------------------------------------------------------------
# expected MBAP lengths


def load_length_table(path=None) -> dict:
    if path is None:
        text = resources.files("sphbi").joinpath("data/expected_lengths.json").read_text()
    else:
        text = Path(path).read_text()
    raw = json.loads(text)
    return {int(k): v for k, v in raw.items() if not k.startswith("_")}


def _allowed(rule, byte_cnt):
    if isinstance(rule, list):
        return set(rule)
    if isinstance(rule, str) and rule.startswith("byte_cnt+"):
        if byte_cnt is None or byte_cnt < 0:
            return None
        return {byte_cnt + int(rule.split("+", 1)[1])}
    return None


def is_length_anomalous(func_code, mbap_length, is_response, byte_cnt, table) -> bool:
    """True when (func_code, mbap_length) is outside the canonical set.

    Function codes missing from the table are never flagged.
    """
    if func_code >= 0x80:
        return bool(is_response) and mbap_length != 3
    entry = table.get(int(func_code))
    if entry is None:
        return False
    allowed = _allowed(entry.get("response" if is_response else "request"), byte_cnt)
    if allowed is None:
        return False
    return int(mbap_length) not in allowed


# ---------------------------------------------------------------------------
# window lookup


class WindowIndex:
    """Merged, sorted intervals per attack type for membership queries."""

    def __init__(self, windows):
        per: dict[str, list[tuple[int, int]]] = {}
        for w in windows:
            if w.end_ts is None:
                raise FormatError("close windows (close_windows) before indexing")
            per.setdefault(w.attack_type, []).append((w.start_ts, w.end_ts))
        self.starts: dict[str, np.ndarray] = {}
        self.ends: dict[str, np.ndarray] = {}
        for kind, spans in per.items():
            spans.sort()
            merged = [list(spans[0])]
            for s, e in spans[1:]:
                if s <= merged[-1][1]:
                    merged[-1][1] = max(merged[-1][1], e)
                else:
                    merged.append([s, e])
            self.starts[kind] = np.array([m[0] for m in merged], dtype=np.int64)
            self.ends[kind] = np.array([m[1] for m in merged], dtype=np.int64)

    def contains(self, kind: str, ts: int) -> bool:
        s = self.starts.get(kind)
        if s is None:
            return False
        i = bisect.bisect_right(s, ts) - 1
        return i >= 0 and ts <= self.ends[kind][i]

    def mask(self, kind: str, ts: np.ndarray) -> np.ndarray:
        s = self.starts.get(kind)
        if s is None:
            return np.zeros(len(ts), dtype=bool)
        ts = ts.astype(np.int64)
        i = np.searchsorted(s, ts, side="right") - 1
        ok = i >= 0
        out = np.zeros(len(ts), dtype=bool)
        out[ok] = ts[ok] <= self.ends[kind][i[ok]]
        return out


# ---------------------------------------------------------------------------
# rules


def label_packet(f: PacketFields, windows, length_table=None, index: WindowIndex | None = None) -> Label:
    """Apply the labelling rules in priority order.

    1. FDI (byte count 171)  2. frame stacking (>1 ADU)  3. brute force window
    and fc 5  4. length-manipulation window and anomalous length  5. flooding,
    recon, replay, payload-injection windows  6. Normal.
    """
    if index is None:
        index = WindowIndex(windows)
    if length_table is None:
        length_table = _default_table()
    ts = f.capture_ts
    if f.byte_cnt == FDI_BYTE_CNT:
        return Label(CLASS_INDEX["FDI"])
    if f.frame_count > 1:
        return Label(CLASS_INDEX["FrameStacking"])
    if f.func_code == 5 and index.contains("BruteForce", ts):
        return Label(CLASS_INDEX["BruteForce"])
    if index.contains("LengthManip", ts) and is_length_anomalous(
        f.func_code, f.mbap_length, f.tcp_src_port == MODBUS_PORT, f.byte_cnt, length_table
    ):
        return Label(CLASS_INDEX["LengthManip"])
    for kind in WINDOW_ONLY:
        if index.contains(kind, ts):
            return Label(CLASS_INDEX[kind])
    return Label(NORMAL)


_TABLE_CACHE: dict | None = None


def _default_table() -> dict:
    global _TABLE_CACHE
    if _TABLE_CACHE is None:
        _TABLE_CACHE = load_length_table()
    return _TABLE_CACHE


def length_anomaly_mask(table: np.ndarray, length_table) -> np.ndarray:
    is_resp = table["tcp_src_port"] == MODBUS_PORT
    keys = np.stack(
        [table["func_code"].astype(np.int64), is_resp.astype(np.int64),
         table["mbap_length"].astype(np.int64), table["byte_cnt"].astype(np.int64)],
        axis=1,
    )
    if len(keys) == 0:
        return np.zeros(0, dtype=bool)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    flags = np.array(
        [is_length_anomalous(fc, ml, bool(r), None if bc < 0 else bc, length_table) for fc, r, ml, bc in uniq],
        dtype=bool,
    )
    return flags[inv.reshape(-1)]


def label_corpus(table: np.ndarray, windows, length_table=None, capture_end: int | None = None):
    """Label every row of a ``pcap.FIELD_DTYPE`` table.

    Returns ``(labels, summary)``: a uint8 multiclass array and per-class counts.
    """
    if length_table is None:
        length_table = _default_table()
    if capture_end is None:
        capture_end = int(table["capture_ts"].max()) if len(table) else 0
    windows = close_windows(windows, capture_end)
    index = WindowIndex(windows)
    ts = table["capture_ts"].astype(np.int64)
    labels = np.zeros(len(table), dtype=np.uint8)
    done = np.zeros(len(table), dtype=bool)

    def assign(mask, name):
        m = mask & ~done
        labels[m] = CLASS_INDEX[name]
        done[m] = True

    assign(table["byte_cnt"] == FDI_BYTE_CNT, "FDI")
    assign(table["frame_count"] > 1, "FrameStacking")
    assign((table["func_code"] == 5) & index.mask("BruteForce", ts), "BruteForce")
    lm = index.mask("LengthManip", ts)
    if lm.any():
        lm[lm] = length_anomaly_mask(table[lm], length_table)
    assign(lm, "LengthManip")
    for kind in WINDOW_ONLY:
        assign(index.mask(kind, ts), kind)
    return labels, summarize(labels)


def summarize(labels: np.ndarray) -> dict:
    counts = np.bincount(labels, minlength=N_CLASSES)
    per = {name: int(counts[i]) for i, name in enumerate(CLASS_NAMES)}
    return {
        "per_class": per,
        "normal": int(counts[NORMAL]),
        "attack": int(counts[1:].sum()),
        "total": int(counts.sum()),
    }


def binary_labels(multiclass: np.ndarray) -> np.ndarray:
    return (np.asarray(multiclass) != NORMAL).astype(np.uint8)


# ---------------------------------------------------------------------------
# timestamp alignment between captures and the attack log


def default_offset_grid(span_s: int = 7200, step_s: int = 60) -> np.ndarray:
    return np.arange(-span_s, span_s + 1, step_s, dtype=np.int64) * 1_000_000


def _coverage(ts_sorted: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> int:
    lo = np.searchsorted(ts_sorted, starts, side="left")
    hi = np.searchsorted(ts_sorted, ends, side="right")
    return int((hi - lo).sum())


def check_offset(file_ts: dict, windows, grid: np.ndarray | None = None) -> dict:
    """Per-file window overlap and best constant offset (µs, added to the log times).

    The best offset maximises the number of packets inside any attack window;
    ties go to the smallest absolute offset.
    """
    if grid is None:
        grid = default_offset_grid()
    grid = np.asarray(grid, dtype=np.int64)
    order = np.argsort(np.abs(grid), kind="stable")
    report = {}
    for name, ts in sorted(file_ts.items()):
        ts = np.sort(np.asarray(ts, dtype=np.int64))
        if len(ts) == 0:
            report[name] = {"windows": 0, "overlap_fraction": 0.0, "best_offset_us": 0,
                            "coverage_at_best": 0, "coverage_at_zero": 0, "warning": "no packets"}
            continue
        closed = close_windows(windows, int(ts[-1]))
        idx = WindowIndex(closed)
        starts = np.concatenate(list(idx.starts.values())) if idx.starts else np.zeros(0, np.int64)
        ends = np.concatenate(list(idx.ends.values())) if idx.ends else np.zeros(0, np.int64)
        lo, hi = ts[0], ts[-1]
        overlap = [(w.start_ts <= hi and w.end_ts >= lo) for w in closed]
        cov = np.array([_coverage(ts, starts + o, ends + o) for o in grid[order]])
        best = int(np.argmax(cov))
        entry = {
            "windows": len(closed),
            "overlap_fraction": float(np.mean(overlap)) if overlap else 0.0,
            "best_offset_us": int(grid[order][best]),
            "coverage_at_best": int(cov[best]),
            "coverage_at_zero": _coverage(ts, starts, ends),
            "warning": None,
        }
        if entry["coverage_at_best"] == 0:
            entry["warning"] = "no packet falls inside any window at any offset"
        report[name] = entry
    return report
