"""Paired one-sided t-test built on the regularized incomplete beta function."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

__all__ = ["betainc", "student_t_cdf", "paired_ttest", "ttest_decision"]

_EPS = 1e-15
_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for k in range(1, 10_000):
        k2 = 2 * k
        aa = k * (b - k) * x / ((qam + k2) * (a + k2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + k) * (qab + k) * x / ((a + k2) * (qap + k2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    return tail if t < 0 else 1.0 - tail


def paired_ttest(diffs: Sequence[float]) -> tuple[float, float]:
    """One-sided test of ``mean(diffs) < 0``: returns ``(t, p)``.

    ``p`` is ``nan`` when the differences have zero variance.
    """
    d = np.asarray(diffs, dtype=np.float64)
    if d.size < 2:
        raise ValueError("need at least two paired differences")
    sd = d.std(ddof=1)
    if sd == 0.0:
        return math.copysign(math.inf, d.mean()) if d.mean() != 0 else 0.0, math.nan
    t = d.mean() / (sd / math.sqrt(d.size))
    return float(t), student_t_cdf(t, d.size - 1)


def ttest_decision(candidate: Sequence[float], baseline: Sequence[float], alpha: float) -> tuple[bool, float]:
    """Whether the candidate's per-instance costs are significantly lower.

    Zero-variance differences fall back to a strict comparison of means.
    """
    diffs = np.asarray(candidate, dtype=np.float64) - np.asarray(baseline, dtype=np.float64)
    t, p = paired_ttest(diffs)
    if math.isnan(p):
        better = diffs.mean() < 0
        return bool(better), 0.0 if better else 1.0
    return bool(p < alpha and diffs.mean() < 0), p
