"""Student-t distribution, confidence intervals and Welch / paired t-tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _betacf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 1e-15) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta function I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    lbeta = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    front = math.exp(lbeta + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|)."""
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def t_cdf(t: float, df: float) -> float:
    tail = 0.5 * t_sf2(t, df)
    return 1.0 - tail if t >= 0 else tail


def t_ppf(q: float, df: float) -> float:
    """Quantile of Student's t by bisection on the CDF (|error| < 1e-12)."""
    if not 0.0 < q < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return -t_ppf(1.0 - q, df)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, df) < q:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class StatSummary:
    n: int
    mean: float
    std: float  # sample standard deviation (ddof = 1)
    ci_low: float
    ci_high: float
    confidence: float = 0.95

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)

    @classmethod
    def from_moments(cls, mean: float, std: float, n: int, confidence: float = 0.95) -> "StatSummary":
        if n < 2:
            return cls(n, float(mean), float("nan"), float("nan"), float("nan"), confidence)
        half = t_ppf(0.5 + confidence / 2.0, n - 1) * std / math.sqrt(n)
        return cls(int(n), float(mean), float(std), mean - half, mean + half, confidence)

    @classmethod
    def from_values(cls, values, confidence: float = 0.95) -> "StatSummary":
        v = np.asarray(values, dtype=np.float64)
        std = float(v.std(ddof=1)) if len(v) > 1 else float("nan")
        return cls.from_moments(float(v.mean()) if len(v) else float("nan"), std, len(v), confidence)

    def to_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean, "std": self.std,
                "ci_low": self.ci_low, "ci_high": self.ci_high, "confidence": self.confidence}


def welch_t(a: StatSummary, b: StatSummary) -> tuple[float, float, float]:
    """Welch's unequal-variance t-test: (t, Welch-Satterthwaite df, two-sided p)."""
    if a.n < 2 or b.n < 2:
        raise ValueError("Welch's test needs n >= 2 in both samples")
    va, vb = a.std**2 / a.n, b.std**2 / b.n
    diff = a.mean - b.mean
    se2 = va + vb
    if se2 == 0.0:
        if diff == 0.0:
            return 0.0, float(a.n + b.n - 2), 1.0
        return math.copysign(math.inf, diff), float(a.n + b.n - 2), 0.0
    t = diff / math.sqrt(se2)
    df = se2**2 / (va**2 / (a.n - 1) + vb**2 / (b.n - 1))
    return t, df, t_sf2(t, df)


def paired_t(x, y) -> tuple[float, float, float]:
    """Paired t-test on matched samples: (t, df, two-sided p)."""
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    n = len(d)
    if n < 2:
        raise ValueError("paired test needs at least two pairs")
    sd = d.std(ddof=1)
    if sd == 0.0:
        m = d.mean()
        if m == 0.0:
            return 0.0, float(n - 1), 1.0
        return math.copysign(math.inf, m), float(n - 1), 0.0
    t = d.mean() / (sd / math.sqrt(n))
    return float(t), float(n - 1), t_sf2(t, n - 1)
