"""Regression agreement metrics and the significance test used by the
comparison harness.

Moments are population (divide-by-n) throughout; the choice cancels in the
correlation and keeps the concordance formula self-consistent. Degenerate
inputs (constant vectors) return the continuity-motivated values documented
on each function instead of dividing by zero.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError


def _pair(pred, truth, min_len):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise InputError(f"length mismatch: {pred.size} vs {truth.size}")
    if pred.size < min_len:
        raise InputError(f"need at least {min_len} values, got {pred.size}")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth, 1)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def pearson(pred, truth) -> float:
    """Linear correlation; 0 when either input is constant."""
    pred, truth = _pair(pred, truth, 2)
    px = pred - pred.mean()
    tx = truth - truth.mean()
    sx = np.sqrt(np.mean(px * px))
    sy = np.sqrt(np.mean(tx * tx))
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(np.mean(px * tx) / (sx * sy))


def ccc(pred, truth) -> float:
    """Concordance: 2*cov / (var_x + var_y + (mean_x - mean_y)^2).

    Penalizes scale and location bias on top of decorrelation. Constant
    inputs: 1 if both are constant and equal, else 0.
    """
    pred, truth = _pair(pred, truth, 2)
    mx = pred.mean()
    my = truth.mean()
    vx = np.mean((pred - mx) ** 2)
    vy = np.mean((truth - my) ** 2)
    if vx == 0.0 and vy == 0.0:
        return 1.0 if mx == my else 0.0
    if vx == 0.0 or vy == 0.0:
        return 0.0
    cov = np.mean((pred - mx) * (truth - my))
    return float(2.0 * cov / (vx + vy + (mx - my) ** 2))


@dataclass(frozen=True)
class MetricTriple:
    rmse: float
    pr: float
    ccc: float


def evaluate(pred, truth) -> MetricTriple:
    return MetricTriple(rmse=rmse(pred, truth), pr=pearson(pred, truth), ccc=ccc(pred, truth))


def domain_accuracy(probs, labels) -> float:
    """Fraction of rows whose argmax column matches the label; ties go to
    class 0 (argmax takes the first maximum)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise InputError("probability matrix must be 2-d and non-empty")
    if labels.shape != (probs.shape[0],):
        raise InputError("one label per probability row required")
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def _beta_cf(a, b, x):
    # Lentz continued fraction for the incomplete beta integral
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise InputError("incomplete beta continued fraction failed to converge")


def _betainc(a, b, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def student_t_sf(t, df) -> float:
    """P(T > t) for Student's t with df degrees of freedom."""
    if df <= 0.0:
        raise InputError(f"degrees of freedom must be positive, got {df}")
    x = df / (df + t * t)
    p = 0.5 * _betainc(0.5 * df, 0.5, x)
    return p if t >= 0.0 else 1.0 - p


def one_tailed_ttest(sample_a, sample_b) -> float:
    """Welch's unequal-variance t-test; p-value for mean(a) > mean(b)."""
    a = np.asarray(sample_a, dtype=np.float64).ravel()
    b = np.asarray(sample_b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise InputError("each sample needs at least 2 values")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    diff = a.mean() - b.mean()
    se2 = va / a.size + vb / b.size
    if se2 == 0.0:
        if diff == 0.0:
            return 0.5
        return 0.0 if diff > 0.0 else 1.0
    t = diff / np.sqrt(se2)
    df = se2**2 / ((va / a.size) ** 2 / (a.size - 1) + (vb / b.size) ** 2 / (b.size - 1))
    return student_t_sf(float(t), float(df))
