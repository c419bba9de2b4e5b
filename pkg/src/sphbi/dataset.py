"""Labelled record storage, stratified percent-rank splits, caps and class weights."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, FormatError
from .labeling import CLASS_NAMES, N_CLASSES

log = logging.getLogger(__name__)

MAGIC = b"SPB1"
VERSION = 1
UNLABELLED = 0xFF

_HEADER = struct.Struct("<4sHQ")
RECORD_DTYPE = np.dtype([("bytes", "u1", (30,)), ("label", "u1"), ("binary", "u1"), ("ts", "<u8")])


@dataclass
class RecordStore:
    """Columnar set of labelled 30-byte records, kept in stable (capture) order."""

    vectors: np.ndarray  # (n, 30) uint8
    labels: np.ndarray  # (n,) uint8 multiclass, UNLABELLED if not yet labelled
    binary: np.ndarray  # (n,) uint8
    ts: np.ndarray  # (n,) uint64 microseconds

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.uint8).reshape(-1, 30)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        self.binary = np.asarray(self.binary, dtype=np.uint8)
        self.ts = np.asarray(self.ts, dtype=np.uint64)
        n = len(self.vectors)
        if not (len(self.labels) == len(self.binary) == len(self.ts) == n):
            raise ContractError("record columns differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def empty(cls) -> "RecordStore":
        return cls(np.zeros((0, 30), np.uint8), np.zeros(0, np.uint8), np.zeros(0, np.uint8), np.zeros(0, np.uint64))

    def take(self, idx) -> "RecordStore":
        idx = np.asarray(idx, dtype=np.int64)
        return RecordStore(self.vectors[idx], self.labels[idx], self.binary[idx], self.ts[idx])

    def index(self) -> dict[int, np.ndarray]:
        """Per-class positions in stable order."""
        return {int(c): np.flatnonzero(self.labels == c) for c in np.unique(self.labels)}

    def counts(self) -> dict[str, int]:
        c = np.bincount(self.labels[self.labels != UNLABELLED], minlength=N_CLASSES)
        return {name: int(c[i]) for i, name in enumerate(CLASS_NAMES)}

    def targets(self, task: str) -> np.ndarray:
        return self.binary if task == "binary" else self.labels


def concat(stores) -> RecordStore:
    stores = list(stores)
    if not stores:
        return RecordStore.empty()
    return RecordStore(
        np.concatenate([s.vectors for s in stores]),
        np.concatenate([s.labels for s in stores]),
        np.concatenate([s.binary for s in stores]),
        np.concatenate([s.ts for s in stores]),
    )


# ---------------------------------------------------------------------------
# record file


def write_records(store: RecordStore, path) -> None:
    arr = np.zeros(len(store), dtype=RECORD_DTYPE)
    arr["bytes"] = store.vectors
    arr["label"] = store.labels
    arr["binary"] = store.binary
    arr["ts"] = store.ts
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(store)))
        fh.write(arr.tobytes())


def read_records(path) -> RecordStore:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: shorter than the record file header")
    magic, version, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported record file version {version}")
    body = memoryview(data)[_HEADER.size :]
    complete = len(body) // RECORD_DTYPE.itemsize
    if complete < count:
        raise FormatError(
            f"{path}: truncated at record {complete} of {count} "
            f"(byte offset {_HEADER.size + complete * RECORD_DTYPE.itemsize})"
        )
    arr = np.frombuffer(body, dtype=RECORD_DTYPE, count=count)
    return RecordStore(arr["bytes"].copy(), arr["label"].copy(), arr["binary"].copy(), arr["ts"].copy())


# ---------------------------------------------------------------------------
# split / cap / weights


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if len(self.ratios) != 3 or any(not 0 < r < 1 for r in self.ratios):
            raise ConfigError(f"split ratios must be three fractions in (0, 1): {self.ratios}")
        if abs(sum(Fraction(str(r)) for r in self.ratios) - 1) > Fraction(1, 10**9):
            raise ConfigError(f"split ratios must sum to 1: {self.ratios}")


def split_sizes(n: int, spec: SplitSpec = SplitSpec()) -> tuple[int, int, int]:
    """Sizes from percent rank ``k/(n-1)``: train below r1, val below r1+r2, rest test."""
    if n <= 1:
        return n, 0, 0
    r1 = Fraction(str(spec.ratios[0]))
    r12 = r1 + Fraction(str(spec.ratios[1]))
    train = min(n, math.ceil(r1 * (n - 1)))
    train_val = min(n, math.ceil(r12 * (n - 1)))
    return train, train_val - train, n - train_val


def split(store: RecordStore, spec: SplitSpec = SplitSpec()):
    """Stratified contiguous split by multiclass label, in stable store order."""
    parts: list[list[np.ndarray]] = [[], [], []]
    for c, pos in sorted(store.index().items()):
        n = len(pos)
        if n < 3:
            log.warning("class %s has %d records; all go to train", _name(c), n)
            parts[0].append(pos)
            continue
        a, b, _ = split_sizes(n, spec)
        parts[0].append(pos[:a])
        parts[1].append(pos[a : a + b])
        parts[2].append(pos[a + b :])
    out = []
    for p in parts:
        idx = np.sort(np.concatenate(p)) if p else np.zeros(0, np.int64)
        out.append(store.take(idx))
    return tuple(out)


def apply_cap(part: RecordStore, cap: int | None, task: str = "multiclass") -> RecordStore:
    """Keep the first ``cap`` records of every class (by ``task`` label)."""
    if cap is None:
        return part
    if cap < 1:
        raise ConfigError(f"cap must be >= 1, got {cap}")
    y = part.targets(task)
    keep = []
    for c in np.unique(y):
        keep.append(np.flatnonzero(y == c)[:cap])
    idx = np.sort(np.concatenate(keep)) if keep else np.zeros(0, np.int64)
    return part.take(idx)


@dataclass(frozen=True)
class ClassWeights:
    weights: np.ndarray
    n: int
    k: int
    counts: np.ndarray


def class_weights(labels, n_classes: int, names=None) -> ClassWeights:
    """weight_c = N / (K * N_c); every class must be present."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=n_classes)[:n_classes]
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        names = names or [str(i) for i in range(n_classes)]
        raise ContractError(f"class {names[empty[0]]!r} has no samples")
    n = int(counts.sum())
    w = n / (n_classes * counts.astype(np.float64))
    return ClassWeights(w, n, n_classes, counts)


def _name(c: int) -> str:
    return CLASS_NAMES[c] if c < N_CLASSES else str(c)
