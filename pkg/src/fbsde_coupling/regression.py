"""Least-squares Monte Carlo projections on polynomial bases."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .errors import ConfigurationError, IllConditionedBasisError


@dataclass(frozen=True)
class RegressionConfig:
    """Polynomial basis of total degree ``degree`` in standardized regressors.

    ``include_brownian`` adds the current Brownian value to the state, which is
    needed when coefficients depend on the path and not only on ``X``.
    """

    degree: int = 2
    include_brownian: bool = False
    rank_tol: float = 1e-10

    def __post_init__(self):
        if self.degree < 0:
            raise ConfigurationError("regression degree must be non-negative")


def polynomial_basis(features: np.ndarray, degree: int) -> np.ndarray:
    """Monomials of total degree ``<= degree`` in standardized feature columns.

    Columns that are constant across samples carry no information and are
    dropped, so a deterministic state reduces the basis to the intercept.
    """
    feats = np.asarray(features, dtype=float)
    if feats.ndim == 1:
        feats = feats[:, None]
    n = feats.shape[0]
    cols = [np.ones(n)]
    if feats.shape[1] and degree > 0:
        mean = feats.mean(axis=0)
        std = feats.std(axis=0)
        live = std > 1e-12 * (1.0 + np.abs(mean))
        z = (feats[:, live] - mean[live]) / std[live]
        for deg in range(1, degree + 1):
            for combo in combinations_with_replacement(range(z.shape[1]), deg):
                cols.append(np.prod(z[:, list(combo)], axis=1))
    return np.stack(cols, axis=1)


class Projector:
    """Orthogonal projection onto the span of a fixed design matrix."""

    def __init__(self, design: np.ndarray, rank_tol: float = 1e-10):
        q, r = np.linalg.qr(design, mode="reduced")
        diag = np.abs(np.diag(r))
        if diag.size and diag.min() <= rank_tol * diag.max():
            raise IllConditionedBasisError(
                f"design matrix of shape {design.shape} is rank deficient "
                f"(min |R_ii| = {diag.min():.3e})")
        self.q = q
        self.r = r

    def project(self, targets: np.ndarray) -> np.ndarray:
        """Fitted values ``Q Q^T targets``; targets of shape ``(P,)`` or ``(P, k)``."""
        t = np.asarray(targets, dtype=float)
        flat = t.reshape(t.shape[0], -1)
        out = self.q @ (self.q.T @ flat)
        # Sample-constant targets are their own conditional expectation; keep them exact.
        const = np.all(flat == flat[:1], axis=0)
        if const.any():
            out[:, const] = flat[:, const]
        return out.reshape(t.shape)

    def coefficients(self, targets: np.ndarray) -> np.ndarray:
        t = np.asarray(targets, dtype=float)
        flat = t.reshape(t.shape[0], -1)
        return np.linalg.solve(self.r, self.q.T @ flat)


def conditional_expectation(features: np.ndarray, targets: np.ndarray,
                            cfg: RegressionConfig = RegressionConfig()) -> np.ndarray:
    """One-shot regression estimate of ``E[targets | features]``."""
    return Projector(polynomial_basis(features, cfg.degree), cfg.rank_tol).project(targets)


@dataclass
class PolynomialFit:
    """A fitted polynomial map ``x -> y`` with its standardization, serializable to JSON."""

    degree: int
    mean: np.ndarray
    std: np.ndarray
    live: np.ndarray
    coef: np.ndarray  # (n_basis, out_dim)

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray, degree: int, rank_tol: float = 1e-10) -> "PolynomialFit":
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(y, dtype=float).reshape(x.shape[0], -1)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        live = std > 1e-12 * (1.0 + np.abs(mean))
        obj = cls(degree, mean, np.where(live, std, 1.0), live, np.zeros((1, y.shape[1])))
        proj = Projector(obj.basis(x), rank_tol)
        obj.coef = proj.coefficients(y)
        const = np.all(y == y[:1], axis=0)
        if const.any():
            obj.coef[:, const] = 0.0
            obj.coef[0, const] = y[0, const]
        return obj

    def basis(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        z = ((x - self.mean) / self.std)[:, self.live]
        cols = [np.ones(x.shape[0])]
        for deg in range(1, self.degree + 1):
            for combo in combinations_with_replacement(range(z.shape[1]), deg):
                cols.append(np.prod(z[:, list(combo)], axis=1))
        return np.stack(cols, axis=1)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.basis(x) @ self.coef

    def to_dict(self) -> dict:
        return {"degree": self.degree, "mean": self.mean.tolist(), "std": self.std.tolist(),
                "live": self.live.tolist(), "coef": self.coef.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PolynomialFit":
        return cls(int(d["degree"]), np.asarray(d["mean"], dtype=float),
                   np.asarray(d["std"], dtype=float), np.asarray(d["live"], dtype=bool),
                   np.asarray(d["coef"], dtype=float))
