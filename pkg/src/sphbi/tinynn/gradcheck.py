"""Finite-difference gradient verification."""

import numpy as np

from .layers import MaxPool2D


def rel_error(analytic, numeric, floor=1e-6, atol=0.0):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` is scaled by the largest numeric gradient of the tensor so that
    entries many orders below the tensor's scale do not dominate. Differences
    at or below ``atol`` count as zero error.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(n).max(initial=0.0), np.abs(a).max(initial=0.0), 1e-12)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
    d = np.abs(a - n)
    return np.where(d <= atol, 0.0, d / den)


class GradReport(dict):
    """``{tensor name: max relative error}`` plus ``kinks``: entries skipped per tensor."""

    def __init__(self):
        super().__init__()
        self.kinks: dict[str, int] = {}
        self.checked: dict[str, int] = {}

    @property
    def kink_fraction(self) -> float:
        total = sum(self.checked.values())
        return sum(self.kinks.values()) / total if total else 0.0



def numeric_grad(f, arr, idx, h_rel=1e-6, branch=None):
    """Central differences of scalar ``f()`` wrt ``arr.flat[idx]`` (mutates and restores).

    ``branch()``, if given, fingerprints the piecewise branch taken by the last
    ``f()`` call. An entry whose +h or -h evaluation leaves the unperturbed
    branch straddles a kink; it comes back as NaN.
    """
    flat = arr.reshape(-1)
    out = np.empty(len(idx))
    base = None
    if branch is not None:
        f()
        base = branch()
    for j, i in enumerate(idx):
        old = flat[i]
        h = h_rel * max(1.0, abs(float(old)))
        flat[i] = old + h
        fp = f()
        kink = branch is not None and branch() != base
        flat[i] = old - h
        fm = f()
        kink = kink or (branch is not None and branch() != base)
        flat[i] = old
        out[j] = np.nan if kink else (fp - fm) / (2 * h)
    return out


def _pick(size, limit, rng):
    if limit is None or size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, size=limit, replace=False))


def grad_check(model, x, loss_fn, *, check_input=False, max_per_tensor=None, train=False, seed=0):
    """Compare ``model``'s analytic gradients with central differences.

    The finite differences run on a float64 copy of the model, so a float32
    model is checked against a double-precision oracle. ``loss_fn(out)`` must
    return ``(loss, grad_out)``. Returns a :class:`GradReport`.

    Differences below the resolution of either side are ignored: rounding of
    the model's dtype relative to the largest gradient, and cancellation in
    the central difference. Gradients that are exactly zero (a bias feeding a
    training-mode batchnorm) would otherwise compare noise with noise.

    Max-pool is not differentiable where two window entries tie. Entries whose
    perturbation changes any pooling argmax are skipped and counted in
    ``report.kinks``; callers should bound ``report.kink_fraction``.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x)
    model.zero_grad()
    out = model.forward(x.astype(model.dtype), train=train)
    loss0, g = loss_fn(out)
    gx = model.backward(g)
    analytic = [gr.copy() for gr in model.grads()]
    gscale = max((float(np.abs(a).max(initial=0.0)) for a in analytic), default=0.0)
    atol = max(10 * np.finfo(model.dtype).eps * gscale, 10 * np.finfo(np.float64).eps * max(abs(float(loss0)), 1.0) / 1e-6)

    shadow = model.astype(np.float64)
    x64 = x.astype(np.float64).copy()

    def f():
        return loss_fn(shadow.forward(x64, train=train))[0]

    pools = [layer for layer in shadow.layers if isinstance(layer, MaxPool2D)]

    def branch():
        return b"".join(layer._cache[0].tobytes() for layer in pools)

    names = [n for i, layer in enumerate(shadow.layers) for n in (f"{i}.{p}" for p in layer.param_names)]
    tensors = list(zip(names, shadow.params(), [a.reshape(-1) for a in analytic]))
    if check_input:
        tensors.append(("input", x64, gx.reshape(-1)))
    result = GradReport()
    for name, p, a in tensors:
        idx = _pick(p.size, max_per_tensor, rng)
        num = numeric_grad(f, p, idx, branch=branch if pools else None)
        ok = ~np.isnan(num)
        result.checked[name] = len(idx)
        result.kinks[name] = int((~ok).sum())
        result[name] = float(rel_error(a[idx][ok], num[ok], atol=atol).max(initial=0.0))
    return result
