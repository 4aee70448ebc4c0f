"""Coupled FBSDEs with a split diffusion: coefficient pack, solvability gate and Picard solver.

The forward component is driven by ``mu = sigma(x, y) + A(z)`` with ``A``
linear in ``z``. Coefficients are vectorized callables that also receive the
global node index ``k`` and the driving :class:`DiscretePath`, so random
coefficients are ordinary path functionals and can be re-evaluated on a
coupled motion:

* ``b(k, path, x, y, z) -> (P, n)``
* ``sigma(k, path, x, y) -> (P, n, d)``
* ``A(k, path, z) -> (P, n, d)``
* ``f(k, path, x, y, z) -> (P, m)``
* ``g(path, x) -> (P, m)``

with ``x: (P, n)``, ``y: (P, m)`` and ``z: (P, m, d)``.

Solutions are stored on the nodes of a :class:`TimeGrid`. ``Z[:, k]`` for
``k >= 1`` is the value on the cell ``(u_{k-1}, u_k]`` and is measurable at
``u_{k-1}``; ``Z[:, 0]`` is the start-time value and is always zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import (ConfigurationError, DimensionError, IterationDivergenceError,
                     SolvabilityError, StructuralError, UnsupportedExponentError)
from .grid import CouplingFunction, DiscretePath, PathBundle, TimeGrid
from .regression import Projector, RegressionConfig, polynomial_basis


@dataclass(frozen=True)
class Lipschitz:
    """Declared Lipschitz constants in ``(x, y, z)`` for ``b``, ``mu`` and ``f``, and ``L_g``."""

    b: tuple[float, float, float] = (0.0, 0.0, 0.0)
    mu: tuple[float, float, float] = (0.0, 0.0, 0.0)
    f: tuple[float, float, float] = (0.0, 0.0, 0.0)
    g: float = 0.0

    def to_dict(self) -> dict:
        return {"b": list(self.b), "mu": list(self.mu), "f": list(self.f), "g": self.g}


def _zero_b(k, path, x, y, z):
    return np.zeros_like(x)


def _zero_f(k, path, x, y, z):
    return np.zeros_like(y)


@dataclass
class FbsdeSpec:
    """Coefficient pack ``(xi, b, sigma, A, f, g)`` with dimensions and Lipschitz data.

    ``initial`` is either a deterministic vector in ``R^n`` or a callable
    ``path -> (P, n)``. ``deterministic`` declares that no coefficient depends
    on the path, which lets the coupling-variance module assert that the
    coefficient potentials vanish.
    """

    n: int
    m: int
    d: int
    initial: np.ndarray | Callable
    sigma: Callable | None
    A: Callable | None
    g: Callable
    b: Callable = _zero_b
    f: Callable = _zero_f
    lipschitz: Lipschitz = field(default_factory=Lipschitz)
    deterministic: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if min(self.n, self.m, self.d) < 1:
            raise ConfigurationError("dimensions n, m, d must be positive")

    @property
    def has_split(self) -> bool:
        return self.sigma is not None and self.A is not None

    def require_split(self) -> None:
        if not self.has_split:
            raise StructuralError(f"spec {self.name!r} does not provide the sigma + A split")

    def mu(self, k: int, path: DiscretePath, x, y, z) -> np.ndarray:
        return self.sigma(k, path, x, y) + self.A(k, path, z)

    def initial_values(self, path: DiscretePath) -> np.ndarray:
        if callable(self.initial):
            x0 = np.asarray(self.initial(path), dtype=float)
        else:
            x0 = np.broadcast_to(np.asarray(self.initial, dtype=float), (path.n_paths, self.n)).copy()
        if x0.shape != (path.n_paths, self.n):
            raise DimensionError(f"initial value has shape {x0.shape}, expected {(path.n_paths, self.n)}")
        return x0

    def zeros(self, P: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.zeros((P, self.n)), np.zeros((P, self.m)), np.zeros((P, self.m, self.d))


@dataclass
class PicardConfig:
    max_iter: int = 50
    tol: float = 1e-6


@dataclass
class SolutionTriple:
    """Discrete ``(X, Y, Z)`` on ``grid``; ``offset`` is the first node's index on the path grid."""

    grid: TimeGrid
    X: np.ndarray  # (P, K+1, n)
    Y: np.ndarray  # (P, K+1, m)
    Z: np.ndarray  # (P, K+1, m, d)
    path: DiscretePath | None = None
    offset: int = 0
    residuals: list[float] = field(default_factory=list)

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    def z_energy(self) -> np.ndarray:
        """Per-path ``int |Z|^2 du`` as a cell sum."""
        return self.grid.step * np.sum(self.Z[:, 1:] ** 2, axis=(1, 2, 3))


@dataclass
class SolvabilityVerdict:
    p: float
    product: float
    value: float
    passed: bool
    recommended_delta: float | None = None
    picard_ratio: float | None = None

    def to_dict(self) -> dict:
        return dict(p=self.p, product=self.product, value=self.value, passed=self.passed,
                    recommended_delta=self.recommended_delta, picard_ratio=self.picard_ratio)


def condition_value(lip: Lipschitz, p: float, bdg: tuple[float, float] | None = None,
                    L_g: float | None = None) -> tuple[float, float]:
    """``(L_g * L_mu3, left-hand side of the p-dependent condition)``."""
    if p < 2:
        raise UnsupportedExponentError(f"solvability needs p >= 2, got {p}")
    lg = lip.g if L_g is None else L_g
    product = lg * lip.mu[2]
    if p == 2:
        return product, product
    if bdg is None:
        raise ConfigurationError("p > 2 needs the BDG constants (K_lower, K_upper)")
    k_lo, k_hi = bdg
    if not 0 < k_lo < k_hi:
        raise ConfigurationError(f"need 0 < K_lower < K_upper, got {bdg}")
    factor = k_hi ** (1 / p) * (p / (p - 1) + 2 * k_lo ** (-1 / p) * (2 * p - 1) / (p - 1))
    return product, factor * product


def check_solvability(spec: FbsdeSpec, p: float = 2, bdg: tuple[float, float] | None = None,
                      bundle: PathBundle | None = None, **probe) -> SolvabilityVerdict:
    """Evaluate the small-interval condition; with a bundle, also probe a Picard-contractive length."""
    product, value = condition_value(spec.lipschitz, p, bdg)
    verdict = SolvabilityVerdict(p, product, value, bool(value < 1.0))
    if verdict.passed and bundle is not None:
        verdict.recommended_delta, verdict.picard_ratio = recommend_delta(spec, bundle, **probe)
    return verdict


# --- solver -----------------------------------------------------------------

def _as_path(source: PathBundle | DiscretePath) -> DiscretePath:
    return source.path() if isinstance(source, PathBundle) else source


def _window(path_grid: TimeGrid, grid: TimeGrid) -> tuple[int, int]:
    i0 = path_grid.index_of(grid.t_start)
    i1 = path_grid.index_of(grid.t_end)
    if i1 - i0 != grid.n_steps:
        raise DimensionError(f"{grid} is not a window of the path grid {path_grid}")
    return i0, i1


def _forward(spec: FbsdeSpec, path: DiscretePath, i0: int, K: int, x0: np.ndarray,
             x_old: np.ndarray | None, Y: np.ndarray | None, Z: np.ndarray | None) -> np.ndarray:
    """Euler roll of ``X``; coefficients use ``x_old`` (the Picard input) when given."""
    P = x0.shape[0]
    dt = path.grid.step
    X = np.empty((P, K + 1, spec.n))
    X[:, 0] = x0
    _, y0, z0 = spec.zeros(P)
    for k in range(K):
        kg = i0 + k
        xs = X[:, k] if x_old is None else x_old[:, k]
        ys = y0 if Y is None else Y[:, k]
        zs = z0 if Z is None else Z[:, k + 1]
        dw = path.increments[:, kg]
        drift = spec.b(kg, path, xs, ys, zs)
        vol = spec.mu(kg, path, xs, ys, zs)
        X[:, k + 1] = X[:, k] + drift * dt + np.einsum("pnd,pd->pn", vol, dw)
    return X


def _backward(spec: FbsdeSpec, path: DiscretePath, i0: int, K: int, x: np.ndarray,
              terminal: Callable | None, reg: RegressionConfig) -> tuple[np.ndarray, np.ndarray]:
    P = x.shape[0]
    dt = path.grid.step
    Y = np.empty((P, K + 1, spec.m))
    Z = np.zeros((P, K + 1, spec.m, spec.d))
    Y[:, K] = terminal(path, x[:, K]) if terminal is not None else spec.g(path, x[:, K])
    for k in range(K - 1, -1, -1):
        kg = i0 + k
        feats = x[:, k]
        if reg.include_brownian:
            feats = np.concatenate([feats, path.values[:, kg]], axis=1)
        proj = Projector(polynomial_basis(feats, reg.degree), reg.rank_tol)
        y_next = Y[:, k + 1]
        ey = proj.project(y_next)
        dw = path.increments[:, kg]
        # Regress the centred increment: same conditional mean, far less noise.
        z = proj.project((y_next - ey)[:, :, None] * dw[:, None, :]) / dt
        Z[:, k + 1] = z
        Y[:, k] = ey + spec.f(kg, path, x[:, k], ey, z) * dt
    return Y, Z


def picard_iterates(spec: FbsdeSpec, path: DiscretePath, i0: int, K: int, x0: np.ndarray,
                    regression: RegressionConfig, terminal: Callable | None = None):
    """Generator of ``(X, Y, Z, residual)`` for successive Picard iterates."""
    x = _forward(spec, path, i0, K, x0, None, None, None)
    while True:
        Y, Z = _backward(spec, path, i0, K, x, terminal, regression)
        X = _forward(spec, path, i0, K, x0, x, Y, Z)
        res = float(np.max(np.abs(X - x))) if X.size else 0.0
        yield X, Y, Z, res
        x = X


def solve_small_interval(spec: FbsdeSpec, grid: TimeGrid | None, bundle: PathBundle | DiscretePath,
                         picard: PicardConfig = PicardConfig(),
                         regression: RegressionConfig = RegressionConfig(), *,
                         terminal: Callable | None = None, x0: np.ndarray | None = None,
                         delta: float | None = None, check: bool = True) -> SolutionTriple:
    """Solve the FBSDE on ``grid`` (a window of the path grid) by discrete Picard iteration.

    Each iterate solves the backward equation by least-squares regression
    given the previous forward path, then rolls the forward equation with the
    previous iterate inside the coefficients. Iteration stops when the sup
    change of ``X`` drops below ``picard.tol``.

    ``terminal`` replaces ``g`` (used by the decoupling field), ``x0`` replaces
    the initial value, and ``delta`` rejects windows longer than a given
    small-interval length.
    """
    path = _as_path(bundle)
    grid = path.grid if grid is None else grid
    if path.dim != spec.d:
        raise DimensionError(f"spec has d={spec.d} but the path has dimension {path.dim}")
    if check and terminal is None:
        verdict = check_solvability(spec, 2)
        if not verdict.passed:
            raise SolvabilityError(f"L_g * L_mu3 = {verdict.product:g} is not below 1")
    if delta is not None and grid.length > delta * (1 + 1e-12):
        raise SolvabilityError(f"interval length {grid.length:g} exceeds delta = {delta:g}")
    i0, _ = _window(path.grid, grid)
    K = grid.n_steps
    start = spec.initial_values(path) if x0 is None else np.asarray(x0, dtype=float)
    if start.shape != (path.n_paths, spec.n):
        raise DimensionError(f"initial state has shape {start.shape}")
    residuals: list[float] = []
    for X, Y, Z, res in picard_iterates(spec, path, i0, K, start, regression, terminal):
        residuals.append(res)
        if not math.isfinite(res):
            raise IterationDivergenceError("Picard iterate is not finite", residuals)
        if res < picard.tol:
            Z[:, 0] = 0.0
            return SolutionTriple(grid, X, Y, Z, path, i0, residuals)
        if len(residuals) >= picard.max_iter:
            raise IterationDivergenceError(
                f"no convergence after {picard.max_iter} Picard iterations "
                f"(last residual {res:.3e})", residuals)
    raise AssertionError("unreachable")


def contraction_ratio(residuals: Sequence[float]) -> float:
    """Geometric-mean decay factor of a residual history (first step skipped)."""
    r = [v for v in residuals[1:] if v > 0]
    if len(r) < 2:
        return 0.0
    return float((r[-1] / r[0]) ** (1.0 / (len(r) - 1)))


def recommend_delta(spec: FbsdeSpec, bundle: PathBundle | DiscretePath, *, n_probe: int = 2000,
                    target: float = 0.5, iterations: int = 5,
                    regression: RegressionConfig = RegressionConfig(),
                    tol: float = 1e-10) -> tuple[float, float]:
    """Halve the horizon until the measured Picard contraction ratio is below ``target``.

    A heuristic: the existence of a small-interval length is guaranteed, but
    its size is not specified, so it is measured on ``n_probe`` paths.
    Returns ``(delta, measured ratio)``.
    """
    path = _as_path(bundle)
    if path.n_paths > n_probe:
        path = DiscretePath(path.grid, path.increments[:n_probe])
    steps = path.grid.n_steps
    ratio = math.inf
    while True:
        x0 = spec.initial_values(path)
        res = []
        for _, _, _, r in picard_iterates(spec, path, 0, steps, x0, regression):
            res.append(r)
            if r < tol or len(res) >= iterations or not math.isfinite(r):
                break
        ratio = 0.0 if res[-1] < tol else contraction_ratio(res)
        if ratio < target or steps % 2 or steps == 1:
            return steps * path.grid.step, ratio
        steps //= 2


# --- norms and estimates ----------------------------------------------------

def _sup_norm_p(V: np.ndarray, p: float) -> np.ndarray:
    return np.max(np.sqrt(np.sum(V.reshape(V.shape[0], V.shape[1], -1) ** 2, axis=2)), axis=1) ** p


def theta_norm_samples(sol: SolutionTriple, p: float) -> np.ndarray:
    return (_sup_norm_p(sol.X, p) + _sup_norm_p(sol.Y, p) + sol.z_energy() ** (p / 2))


def theta_norm(sol: SolutionTriple, p: float) -> float:
    """``E[sup|X|^p + sup|Y|^p + (int |Z|^2)^{p/2}]`` with grid sups and cell sums."""
    if p < 1:
        raise UnsupportedExponentError(f"need p >= 1, got {p}")
    return float(np.mean(theta_norm_samples(sol, p)))


def _fro(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(a.reshape(a.shape[0], -1) ** 2, axis=1))


@dataclass
class AprioriReport:
    p: float
    norm: float
    potential: float
    ratio: float
    flagged: bool

    def to_dict(self) -> dict:
        return dict(p=self.p, norm=self.norm, potential=self.potential, ratio=self.ratio,
                    flagged=self.flagged)


def driver_potential_samples(spec: FbsdeSpec, sol: SolutionTriple, p: float) -> np.ndarray:
    """Per-path ``|xi|^p + |g(0)|^p + (int|b0|)^p + (int|mu0|^2)^{p/2} + (int|f0|)^p``."""
    path = sol.path
    P = sol.n_paths
    x0, y0, z0 = spec.zeros(P)
    dt = sol.grid.step
    ib = np.zeros(P)
    imu = np.zeros(P)
    i_f = np.zeros(P)
    for k in range(sol.grid.n_steps):
        kg = sol.offset + k
        ib += _fro(spec.b(kg, path, x0, y0, z0)) * dt
        imu += _fro(spec.mu(kg, path, x0, y0, z0)) ** 2 * dt
        i_f += _fro(spec.f(kg, path, x0, y0, z0)) * dt
    xi = _fro(sol.X[:, 0])
    g0 = _fro(spec.g(path, x0))
    return xi ** p + g0 ** p + ib ** p + imu ** (p / 2) + i_f ** p


def apriori_check(spec: FbsdeSpec, sol: SolutionTriple, p: float = 2) -> AprioriReport:
    """Compare ``||Theta||^p`` with the data potential; flag a zero potential under a nonzero norm."""
    norm = theta_norm(sol, p)
    pot = float(np.mean(driver_potential_samples(spec, sol, p)))
    if pot > 0:
        ratio = norm / pot
    else:
        ratio = 0.0 if norm == 0 else math.inf
    return AprioriReport(p, norm, pot, ratio, bool(pot == 0 and norm > 0))


def solution_l2_error(sol: SolutionTriple, X=None, Y=None, Z=None) -> dict:
    """Root-mean-square errors against reference node values; Z is compared on cells."""
    out = {}
    if X is not None:
        out["X"] = float(np.sqrt(np.mean(np.sum((sol.X - X) ** 2, axis=-1))))
    if Y is not None:
        out["Y"] = float(np.sqrt(np.mean(np.sum((sol.Y - Y) ** 2, axis=-1))))
    if Z is not None:
        diff = sol.Z[:, 1:] - np.asarray(Z)[:, 1:] if np.ndim(Z) == sol.Z.ndim else sol.Z[:, 1:] - Z
        out["Z"] = float(np.sqrt(np.mean(np.sum(diff ** 2, axis=(-2, -1)))))
    return out


# --- sampled structural checks ----------------------------------------------

def _random_args(spec: FbsdeSpec, P: int, rng: np.random.Generator, scale: float = 2.0):
    return (scale * rng.standard_normal((P, spec.n)), scale * rng.standard_normal((P, spec.m)),
            scale * rng.standard_normal((P, spec.m, spec.d)))


def a_linearity_residual(spec: FbsdeSpec, path: DiscretePath, n_samples: int = 1000,
                         seed: int = 0) -> float:
    """Max of ``|A(a z1 + b z2) - a A(z1) - b A(z2)|`` over random inputs and nodes."""
    spec.require_split()
    rng = np.random.default_rng(seed)
    P = path.n_paths
    worst = 0.0
    for _ in range(max(1, n_samples // P)):
        k = int(rng.integers(0, path.grid.n_steps + 1))
        _, _, z1 = _random_args(spec, P, rng)
        _, _, z2 = _random_args(spec, P, rng)
        a, b = rng.standard_normal(2)
        lhs = spec.A(k, path, a * z1 + b * z2)
        rhs = a * spec.A(k, path, z1) + b * spec.A(k, path, z2)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def lipschitz_excess(spec: FbsdeSpec, path: DiscretePath, n_samples: int = 1000,
                     seed: int = 0) -> dict[str, float]:
    """Largest ``|h(theta) - h(theta')| - (L1|dx| + L2|dy| + L3|dz|)`` per coefficient.

    Non-positive values mean the declared constants were respected.
    """
    rng = np.random.default_rng(seed)
    P = path.n_paths
    lip = spec.lipschitz
    out = {"b": -math.inf, "mu": -math.inf, "f": -math.inf, "g": -math.inf}
    for _ in range(max(1, n_samples // P)):
        k = int(rng.integers(0, path.grid.n_steps))
        x, y, z = _random_args(spec, P, rng)
        x2, y2, z2 = _random_args(spec, P, rng)
        dx, dy, dz = _fro(x - x2), _fro(y - y2), _fro(z - z2)
        for key, fn, L in (("b", spec.b, lip.b), ("mu", spec.mu, lip.mu), ("f", spec.f, lip.f)):
            gap = _fro(fn(k, path, x, y, z) - fn(k, path, x2, y2, z2))
            bound = L[0] * dx + L[1] * dy + L[2] * dz
            out[key] = max(out[key], float(np.max(gap - bound)))
        gap = _fro(spec.g(path, x) - spec.g(path, x2))
        out["g"] = max(out["g"], float(np.max(gap - lip.g * dx)))
    return out


# --- the augmented system over (W, W') --------------------------------------

def c_of_phi(phi_values: np.ndarray) -> np.ndarray:
    """``(1 - sqrt(1 - phi^2)) / phi`` where ``phi != 0`` and ``0`` elsewhere."""
    phi = np.asarray(phi_values, dtype=float)
    out = np.zeros_like(phi)
    nz = phi != 0
    out[nz] = (1.0 - np.sqrt(1.0 - phi[nz] ** 2)) / phi[nz]
    return out


def Sigma(spec: FbsdeSpec, k: int, path: DiscretePath, alpha, x, y, z1, z2) -> np.ndarray:
    """``(sqrt(1-alpha^2) sigma + A(z1), alpha sigma + A(z2))``, shape ``(P, n, 2d)``.

    ``alpha`` may be a scalar or one value per sample.
    """
    spec.require_split()
    a = np.asarray(alpha, dtype=float)
    if a.ndim:
        a = a.reshape(-1, 1, 1)
    s = spec.sigma(k, path, x, y)
    return np.concatenate([np.sqrt(1.0 - a * a) * s + spec.A(k, path, z1),
                           a * s + spec.A(k, path, z2)], axis=2)


def z_gap_identity(z: np.ndarray, z_phi: np.ndarray, phi) -> tuple[np.ndarray, np.ndarray]:
    """Both sides of the squared distance between ``(z, 0)`` and ``(sqrt(1-phi^2) z^phi, phi z^phi)``.

    Returns ``(lhs, rhs)`` with
    ``rhs = (1 - sqrt(1-phi^2)) (|z^phi|^2 + |z|^2) + sqrt(1-phi^2) |z^phi - z|^2``.
    """
    phi = np.asarray(phi, dtype=float).reshape(-1)
    s = np.sqrt(1.0 - phi * phi)
    sq = lambda a: np.sum(a.reshape(a.shape[0], -1) ** 2, axis=1)  # noqa: E731
    bshape = (-1,) + (1,) * (z.ndim - 1)
    lhs = sq(z - s.reshape(bshape) * z_phi) + sq(phi.reshape(bshape) * z_phi)
    rhs = (1.0 - s) * (sq(z_phi) + sq(z)) + s * sq(z_phi - z)
    return lhs, rhs


@dataclass
class AugmentedSystem:
    """Origin and coupled FBSDEs over the ``2d``-dimensional motion ``(W, W')``."""

    base: FbsdeSpec
    phi: CouplingFunction
    grid: TimeGrid
    phi_cells: np.ndarray
    c_cells: np.ndarray
    origin: FbsdeSpec
    coupled: FbsdeSpec

    def phi_at(self, k: int) -> float:
        return float(self.phi_cells[min(k, len(self.phi_cells) - 1)])


def _sub_path(path: DiscretePath, d: int) -> DiscretePath:
    if "W" not in path.cache:
        path.cache["W"] = path.with_increments(path.increments[:, :, :d], "W")
    return path.cache["W"]


def _coupled_sub_path(path: DiscretePath, d: int, phi_cells: np.ndarray) -> DiscretePath:
    key = ("W^phi", phi_cells.tobytes())
    if key not in path.cache:
        keep = np.sqrt(1.0 - phi_cells ** 2)[None, :, None]
        inc = keep * path.increments[:, :, :d] + phi_cells[None, :, None] * path.increments[:, :, d:]
        path.cache[key] = path.with_increments(inc, "W^phi")
    return path.cache[key]


def build_augmented_system(spec: FbsdeSpec, phi: CouplingFunction, grid: TimeGrid) -> AugmentedSystem:
    """Coefficients over state ``(x, y, (z1, z2))`` for the origin and the coupled system.

    The z-argument of ``b`` and ``f`` is ``z1 + c(u) z2``. The diffusion is
    ``Sigma(0, ...)`` for the origin system and ``Sigma^phi(phi(u), ...)`` for
    the coupled one, where the coupled coefficients are re-evaluated on
    ``W^phi = sqrt(1-phi^2) W + phi W'``. Both systems are driven by the joint
    path ``(W, W')`` of dimension ``2d``.
    """
    spec.require_split()
    d = spec.d
    phi_cells = phi.cell_values(grid)
    c_cells = c_of_phi(phi_cells)
    last = len(phi_cells) - 1

    def build(coupled: bool) -> FbsdeSpec:
        def base_path(path):
            return _coupled_sub_path(path, d, phi_cells) if coupled else _sub_path(path, d)

        def merge(k, z):
            return z[..., :d] + c_cells[min(k, last)] * z[..., d:]

        def b(k, path, x, y, z):
            return spec.b(k, base_path(path), x, y, merge(k, z))

        def f(k, path, x, y, z):
            return spec.f(k, base_path(path), x, y, merge(k, z))

        def sigma(k, path, x, y):
            alpha = phi_cells[min(k, last)] if coupled else 0.0
            s = spec.sigma(k, base_path(path), x, y)
            return np.concatenate([np.sqrt(1.0 - alpha ** 2) * s, alpha * s], axis=2)

        def A(k, path, z):
            bp = base_path(path)
            return np.concatenate([spec.A(k, bp, z[..., :d]), spec.A(k, bp, z[..., d:])], axis=2)

        def g(path, x):
            return spec.g(base_path(path), x)

        if callable(spec.initial):
            def initial(path):
                return spec.initial(base_path(path))
        else:
            initial = spec.initial
        lip = spec.lipschitz
        return FbsdeSpec(spec.n, spec.m, 2 * d, initial, sigma, A, g, b, f,
                         Lipschitz((lip.b[0], lip.b[1], math.sqrt(2) * lip.b[2]), lip.mu,
                                   (lip.f[0], lip.f[1], math.sqrt(2) * lip.f[2]), lip.g),
                         spec.deterministic, f"{spec.name}[{'coupled' if coupled else 'origin'}]")

    return AugmentedSystem(spec, phi, grid, phi_cells, c_cells, build(False), build(True))


def with_terminal_shift(spec: FbsdeSpec, kappa: float) -> FbsdeSpec:
    """Copy of ``spec`` with ``g`` replaced by ``g + kappa``."""
    g = spec.g
    return replace(spec, g=lambda path, x: g(path, x) + kappa, name=f"{spec.name}+{kappa:g}")
