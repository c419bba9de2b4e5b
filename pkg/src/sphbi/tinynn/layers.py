"""Layers with explicit forward/backward passes on (N, C, H, W) arrays."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from . import kernels


class Layer:
    kind = "layer"
    param_names: tuple[str, ...] = ()
    buffer_names: tuple[str, ...] = ()

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError

    def params(self):
        return [getattr(self, n) for n in self.param_names]

    def grads(self):
        return [getattr(self, "d" + n) for n in self.param_names]

    def zero_grad(self):
        for n in self.param_names:
            getattr(self, "d" + n)[...] = 0

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def out_shape(self, shape):
        """Output (C, H, W) or (F,) for a per-sample input shape."""
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.kind}

    def astype(self, dtype):
        for n in self.param_names + self.buffer_names:
            setattr(self, n, getattr(self, n).astype(dtype))
        for n in self.param_names:
            setattr(self, "d" + n, np.zeros_like(getattr(self, n)))
        return self


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2D(Layer):
    """Cross-correlation with zero padding, one bias per output channel."""

    kind = "conv2d"
    param_names = ("w", "b")

    def __init__(self, in_ch, out_ch, kh, kw=None, pad=0, rng=None, dtype=np.float32):
        kw = kh if kw is None else kw
        self.in_ch, self.out_ch, self.kh, self.kw, self.pad = in_ch, out_ch, kh, kw, pad
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_ch * kh * kw)
        self.w = _uniform(rng, bound, (out_ch, in_ch, kh, kw), dtype)
        self.b = _uniform(rng, bound, (out_ch,), dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def out_shape(self, shape):
        c, h, w = shape
        if c != self.in_ch:
            raise ShapeError(f"conv2d expects {self.in_ch} input channels, got {c}")
        ho = h - self.kh + 2 * self.pad + 1
        wo = w - self.kw + 2 * self.pad + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d {self.kh}x{self.kw} pad {self.pad} does not fit input {h}x{w}")
        return (self.out_ch, ho, wo)

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        _, ho, wo = self.out_shape((c, h, w))
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else np.ascontiguousarray(x)
        cols = kernels.im2col(xp, self.kh, self.kw)
        out = np.matmul(self.w.reshape(self.out_ch, -1), cols)
        out += self.b[None, :, None]
        self._cache = (cols, xp.shape)
        return out.reshape(n, self.out_ch, ho, wo)

    def backward(self, g):
        cols, (n, c, hp, wp) = self._cache
        g2 = g.reshape(n, self.out_ch, -1)
        self.dw += np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(self.w.shape)
        self.db += g2.sum(axis=(0, 2))
        dcols = np.matmul(self.w.reshape(self.out_ch, -1).T, g2)
        dxp = kernels.col2im(dcols, n, c, hp, wp, self.kh, self.kw)
        p = self.pad
        return dxp[:, :, p : hp - p, p : wp - p] if p else dxp

    def config(self):
        return {"kind": self.kind, "in_ch": self.in_ch, "out_ch": self.out_ch,
                "kh": self.kh, "kw": self.kw, "pad": self.pad}


class MaxPool2D(Layer):
    """Max pooling; ties go to the first element in row-major order."""

    kind = "maxpool"

    def __init__(self, k=2, stride=None):
        self.k = k
        self.stride = k if stride is None else stride

    def out_shape(self, shape):
        c, h, w = shape
        if self.k > h or self.k > w:
            raise ShapeError(f"maxpool window {self.k} larger than input {h}x{w}")
        return (c, (h - self.k) // self.stride + 1, (w - self.k) // self.stride + 1)

    def forward(self, x, train=False):
        self.out_shape(x.shape[1:])
        out, arg = kernels.maxpool_forward(np.ascontiguousarray(x), self.k, self.stride)
        self._cache = (arg, x.shape[2], x.shape[3])
        return out

    def backward(self, g):
        arg, h, w = self._cache
        return kernels.maxpool_backward(np.ascontiguousarray(g), arg, h, w)

    def config(self):
        return {"kind": self.kind, "k": self.k, "stride": self.stride}


def sigmoid(x):
    # tanh form: overflow-free and vectorised
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


class Activation(Layer):
    kind = "activation"

    def __init__(self, fn="sigmoid"):
        if fn not in ("sigmoid", "tanh"):
            raise ValueError(f"unsupported activation {fn!r}")
        self.fn = fn

    def out_shape(self, shape):
        return shape

    def forward(self, x, train=False):
        y = sigmoid(x) if self.fn == "sigmoid" else np.tanh(x)
        self._y = y
        return y

    def backward(self, g):
        y = self._y
        return g * (y * (1 - y)) if self.fn == "sigmoid" else g * (1 - y * y)

    def config(self):
        return {"kind": self.kind, "fn": self.fn}


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)


class Dense(Layer):
    kind = "dense"
    param_names = ("w", "b")

    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        self.n_in, self.n_out = n_in, n_out
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(n_in)
        self.w = _uniform(rng, bound, (n_out, n_in), dtype)
        self.b = _uniform(rng, bound, (n_out,), dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def out_shape(self, shape):
        if shape != (self.n_in,):
            raise ShapeError(f"dense expects ({self.n_in},), got {shape}")
        return (self.n_out,)

    def forward(self, x, train=False):
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, g):
        self.dw += g.T @ self._x
        self.db += g.sum(axis=0)
        return g @ self.w

    def config(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out}


class BatchNorm2D(Layer):
    """Per-channel normalisation with learned scale and shift.

    Training uses batch statistics; inference uses running averages.
    """

    kind = "batchnorm"
    param_names = ("gamma", "beta")
    buffer_names = ("running_mean", "running_var")

    def __init__(self, ch, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.ch, self.momentum, self.eps = ch, momentum, eps
        self.gamma = np.ones(ch, dtype=dtype)
        self.beta = np.zeros(ch, dtype=dtype)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self.running_mean = np.zeros(ch, dtype=dtype)
        self.running_var = np.ones(ch, dtype=dtype)

    def out_shape(self, shape):
        if shape[0] != self.ch:
            raise ShapeError(f"batchnorm expects {self.ch} channels, got {shape[0]}")
        return shape

    def forward(self, x, train=False):
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            cnt = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var * cnt / max(cnt - 1, 1)
            self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(x.dtype)
            self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(x.dtype)
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        self._cache = (xhat, inv, train)
        return (self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]).astype(x.dtype)

    def backward(self, g):
        xhat, inv, train = self._cache
        self.dgamma += (g * xhat).sum(axis=(0, 2, 3))
        self.dbeta += g.sum(axis=(0, 2, 3))
        gx = g * self.gamma[None, :, None, None]
        if not train:
            return gx * inv[None, :, None, None]
        m = g.shape[0] * g.shape[2] * g.shape[3]
        s1 = gx.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (gx * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (inv[None, :, None, None] / m) * (m * gx - s1 - xhat * s2)

    def config(self):
        return {"kind": self.kind, "ch": self.ch, "momentum": self.momentum, "eps": self.eps}


class Sequential:
    """Ordered stack of layers with a fixed per-sample input shape.

    With ``check_finite`` set, every forward and backward output is checked for
    NaN/Inf and a FloatingPointError names the offending layer.
    """

    check_finite = False

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        self.output_shape = shape

    @property
    def dtype(self):
        for p in self.params():
            return p.dtype
        return np.dtype(np.float32)

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"model expects input {self.input_shape}, got {x.shape[1:]}")
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, train)
            if self.check_finite and not np.isfinite(x).all():
                raise FloatingPointError(f"non-finite output from layer {i} ({layer.kind}) in forward pass")
        return x

    __call__ = forward

    def backward(self, g):
        for i in range(len(self.layers) - 1, -1, -1):
            g = self.layers[i].backward(g)
            if self.check_finite and not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient from layer {i} ({self.layers[i].kind})")
        return g

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def named_arrays(self):
        """Parameters and buffers in a fixed order (checkpoint layout)."""
        out = []
        for i, layer in enumerate(self.layers):
            for n in layer.param_names + layer.buffer_names:
                out.append((f"{i}.{n}", getattr(layer, n)))
        return out

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def n_params(self) -> int:
        return sum(layer.n_params() for layer in self.layers)

    def astype(self, dtype):
        import copy

        m = copy.deepcopy(self)
        for layer in m.layers:
            layer.astype(dtype)
        return m

    def config(self):
        return [layer.config() for layer in self.layers]
