"""Binary and multiclass CNN builders, parameter counting and checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .codec import Approach, get_approach
from .errors import FormatError, ShapeError
from .labeling import N_CLASSES
from .tinynn.layers import Activation, BatchNorm2D, Conv2D, Dense, Flatten, MaxPool2D, Sequential
from .tinynn.losses import softmax

# published multiclass sizes, used by tests and the acceptance report
MULTICLASS_PARAMS = {"1": 33_257, "2": 48_809, "2b": 56_873, "3": 14_825, "3b": 21_737}
BINARY_PARAMS_PUBLISHED = {"1": 51, "2": 63, "2b": 73, "3": 38, "3b": 39}


@dataclass
class Classifier:
    task: str  # "binary" or "multiclass"
    approach: Approach
    net: Sequential
    options: dict = field(default_factory=dict)

    @property
    def param_count(self) -> int:
        return self.net.n_params()

    def logits(self, x, batch_size=1024) -> np.ndarray:
        outs = [self.net.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        if not outs:
            return np.zeros((0,) + self.net.output_shape, dtype=self.net.dtype)
        return np.concatenate(outs)

    def predict(self, x, batch_size=1024) -> np.ndarray:
        z = self.logits(x, batch_size)
        if self.task == "binary":
            return (z[:, 0] > 0).astype(np.int64)  # sigmoid(z) > 0.5
        return z.argmax(axis=1)

    def proba(self, x, batch_size=1024) -> np.ndarray:
        z = self.logits(x, batch_size)
        if self.task == "binary":
            return 1.0 / (1.0 + np.exp(-z[:, 0].astype(np.float64)))
        return softmax(z.astype(np.float64))


def _flatten_width(layers, input_shape) -> int:
    # dummy forward pass through the feature extractor
    probe = Sequential(layers, input_shape)
    out = probe.forward(np.zeros((1,) + tuple(input_shape), dtype=np.float32))
    return int(np.prod(out.shape[1:]))


def build_multiclass(approach, *, activation="sigmoid", batchnorm=False, four_layer=False,
                     n_classes=N_CLASSES, seed=0, dtype=np.float32) -> Classifier:
    """conv(32, 3x3, pad 1) -> act -> conv(32, 2x2) -> act -> maxpool(2, s1) -> dense.

    ``four_layer`` swaps in a deeper four-conv stack (kept only to reproduce its
    vanishing-gradient failure on larger images).
    """
    a = get_approach(approach)
    rng = np.random.default_rng(seed)
    shape = (1, a.image_h, a.image_w)
    feats = []
    specs = [(1, 3, 1), (32, 2, 0)]
    if four_layer:
        specs = [(1, 3, 1), (32, 3, 1), (32, 3, 1), (32, 2, 0)]
    for in_ch, k, pad in specs:
        feats.append(Conv2D(in_ch, 32, k, pad=pad, rng=rng, dtype=dtype))
        if batchnorm:
            feats.append(BatchNorm2D(32, dtype=dtype))
        feats.append(Activation(activation))
    feats += [MaxPool2D(2, stride=1), Flatten()]
    width = _flatten_width(feats, shape)
    net = Sequential(feats + [Dense(width, n_classes, rng=rng, dtype=dtype)], shape)
    opts = {"activation": activation, "batchnorm": batchnorm, "four_layer": four_layer, "seed": seed}
    return Classifier("multiclass", a, net, opts)


def binary_kernels(h: int, w: int) -> tuple[int, int]:
    k1 = 3 if min(h, w) >= 10 else 2
    h1, w1 = h - k1 + 1, w - k1 + 1
    k2 = 3 if min(h1, w1) >= 6 else 2
    return k1, k2


def build_binary(approach, *, activation="tanh", batchnorm=False, seed=0, dtype=np.float32) -> Classifier:
    """conv(1, k1) -> act -> conv(1, k2) -> act -> maxpool(2, s2) -> dense(1 logit)."""
    a = get_approach(approach)
    rng = np.random.default_rng(seed)
    shape = (1, a.image_h, a.image_w)
    k1, k2 = binary_kernels(a.image_h, a.image_w)
    feats = []
    for in_ch, k in ((1, k1), (1, k2)):
        feats.append(Conv2D(in_ch, 1, k, rng=rng, dtype=dtype))
        if batchnorm:
            feats.append(BatchNorm2D(1, dtype=dtype))
        feats.append(Activation(activation))
    feats += [MaxPool2D(2, stride=2), Flatten()]
    try:
        width = _flatten_width(feats, shape)
    except ShapeError as exc:
        raise ShapeError(f"binary model does not fit approach {a.id}: {exc}") from None
    net = Sequential(feats + [Dense(width, 1, rng=rng, dtype=dtype)], shape)
    opts = {"activation": activation, "batchnorm": batchnorm, "seed": seed, "kernels": [k1, k2]}
    return Classifier("binary", a, net, opts)


def build(task, approach, **kw) -> Classifier:
    if task == "binary":
        kw.pop("four_layer", None)
        return build_binary(approach, **kw)
    if task == "multiclass":
        return build_multiclass(approach, **kw)
    raise ValueError(f"unknown task {task!r}")


def count_params(layers) -> int:
    """Sum of weight and bias elements over a layer list (or a built model)."""
    if isinstance(layers, Classifier):
        return layers.param_count
    if isinstance(layers, Sequential):
        return layers.n_params()
    return sum(layer.n_params() for layer in layers)


# ---------------------------------------------------------------------------
# checkpoint: "SPCK" | u16 version | u32 header length | JSON header | float32 LE arrays

CKPT_MAGIC = b"SPCK"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sHI")


def save_checkpoint(clf: Classifier, path, meta: dict | None = None) -> None:
    arrays = clf.net.named_arrays()
    header = {
        "task": clf.task,
        "approach": clf.approach.id,
        "input_shape": list(clf.net.input_shape),
        "options": clf.options,
        "layers": clf.net.config(),
        "arrays": [[name, list(a.shape)] for name, a in arrays],
        "param_count": clf.param_count,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def _read_checkpoint(path) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _CKPT_HEAD.size:
        raise FormatError(f"{path}: not a checkpoint")
    magic, version, hlen = _CKPT_HEAD.unpack_from(data)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    start = _CKPT_HEAD.size
    return json.loads(data[start : start + hlen]), data[start + hlen :]


def read_checkpoint_header(path) -> dict:
    return _read_checkpoint(path)[0]


def load_checkpoint(path) -> tuple[Classifier, dict]:
    header, payload = _read_checkpoint(path)
    opts = dict(header["options"])
    kw = {k: opts[k] for k in ("activation", "batchnorm", "four_layer") if k in opts}
    clf = build(header["task"], header["approach"], **kw)
    arrays = clf.net.named_arrays()
    if [n for n, _ in arrays] != [n for n, _ in header["arrays"]]:
        raise FormatError(f"{path}: layer layout does not match the rebuilt architecture")
    off = 0
    lookup = {}
    for name, shape in header["arrays"]:
        size = int(np.prod(shape)) * 4
        if off + size > len(payload):
            raise FormatError(f"{path}: truncated weight data in {name}")
        lookup[name] = np.frombuffer(payload, dtype="<f4", count=size // 4, offset=off).reshape(shape)
        off += size
    for i, layer in enumerate(clf.net.layers):
        for n in layer.param_names + layer.buffer_names:
            setattr(layer, n, lookup[f"{i}.{n}"].astype(np.float32).copy())
    clf.options = opts
    return clf, header["meta"]
