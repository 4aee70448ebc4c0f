"""Small Monte Carlo statistics helpers: means with standard errors, ratios, slopes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _sps

from .errors import DiagnosticError


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo mean with its standard error."""

    mean: float
    se: float
    n: int

    def within(self, target: float, n_se: float = 3.0, floor: float = 0.0) -> bool:
        return abs(self.mean - target) <= n_se * self.se + floor

    def to_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "n": self.n}


def mc_estimate(samples: np.ndarray) -> Estimate:
    """Sample mean and ``s / sqrt(n)``; equal to the delete-one jackknife for means."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise DiagnosticError("no samples")
    if not np.all(np.isfinite(x)):
        raise DiagnosticError("non-finite samples")
    n = x.size
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Estimate(float(x.mean()), se, n)


def ratio_estimate(num: np.ndarray, den: np.ndarray, n_blocks: int = 20) -> Estimate:
    """``mean(num) / mean(den)`` with a block-jackknife standard error."""
    num = np.asarray(num, dtype=float).ravel()
    den = np.asarray(den, dtype=float).ravel()
    n = num.size
    total_n, total_d = num.sum(), den.sum()
    if total_d == 0.0:
        return Estimate(math.inf if total_n > 0 else 0.0, 0.0, n)
    value = total_n / total_d
    blocks = min(n_blocks, n)
    if blocks < 2:
        return Estimate(float(value), 0.0, n)
    edges = np.linspace(0, n, blocks + 1).astype(int)
    reps = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        d = total_d - den[lo:hi].sum()
        reps.append((total_n - num[lo:hi].sum()) / d if d != 0 else value)
    reps = np.asarray(reps)
    se = math.sqrt((blocks - 1) / blocks * np.sum((reps - reps.mean()) ** 2))
    return Estimate(float(value), float(se), n)


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x`` over positive pairs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def ks_two_sample(a: np.ndarray, b: np.ndarray, level: float = 0.01) -> tuple[float, bool]:
    """KS statistic and whether it lies below the asymptotic critical value at ``level``."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    stat = float(_sps.ks_2samp(a, b).statistic)
    c_alpha = math.sqrt(-0.5 * math.log(level / 2.0))
    crit = c_alpha * math.sqrt((a.size + b.size) / (a.size * b.size))
    return stat, stat <= crit


def lp_moment(x: np.ndarray, p: float) -> np.ndarray:
    """Per-sample ``|x|^p`` with Euclidean norm over trailing axes."""
    x = np.asarray(x, dtype=float)
    if x.ndim > 1:
        x = np.sqrt(np.sum(x.reshape(x.shape[0], -1) ** 2, axis=1))
    return np.abs(x) ** p
