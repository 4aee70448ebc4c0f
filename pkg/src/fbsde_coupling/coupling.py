"""Transfer of path functionals to the coupled motion, and windowed conditional expectations.

A random variable, process or random coefficient is represented by a
:class:`PathFunctional`, a deterministic map from a :class:`DiscretePath` to
values. Its coupled version is obtained by evaluating the same map on the
path of ``W^phi``. Since ``W^phi`` is again a Brownian motion, this preserves
laws, commutes with Borel maps, and leaves deterministic objects unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, ContractError
from .grid import LEG_INNER, CouplingFunction, DiscretePath, PathBundle, TimeGrid, standard_normals
from .stats import Estimate, ks_two_sample, mc_estimate

VARIABLE = "variable"
PROCESS = "process"
COEFFICIENT = "coefficient"

TERMINAL = "terminal"
ADAPTED = "adapted"
PREDICTABLE = "predictable"
PROGRESSIVE = "progressive"


@dataclass(frozen=True)
class PathFunctional:
    """A deterministic map from a discrete Brownian path to values.

    ``arity`` selects the calling convention of ``evaluator``:

    * ``variable``: ``evaluator(path) -> (P,)`` or ``(P, k)``
    * ``process``: ``evaluator(path) -> (P, N+1, ...)`` (node values)
    * ``coefficient``: ``evaluator(k, path, x) -> (P, ...)`` at node ``k``

    ``tag`` records measurability: ``terminal`` for variables, ``adapted`` or
    ``predictable`` for processes and coefficients.
    """

    arity: str
    evaluator: Callable
    tag: str = TERMINAL
    name: str = "F"
    deterministic: bool = False

    def __post_init__(self):
        if self.arity not in (VARIABLE, PROCESS, COEFFICIENT):
            raise ContractError(f"unknown arity {self.arity!r}")
        if self.tag not in (TERMINAL, ADAPTED, PREDICTABLE, PROGRESSIVE):
            raise ContractError(f"unknown adaptedness tag {self.tag!r}")

    def __call__(self, *args):
        return self.evaluator(*args)


@dataclass(frozen=True)
class SigmaAlgebraWindow:
    """The window ``(a, c]`` whose increments are integrated out."""

    a: float
    c: float

    def __post_init__(self):
        if not self.a < self.c:
            raise ConfigurationError(f"window needs a < c, got ({self.a}, {self.c}]")

    def cells(self, grid: TimeGrid) -> tuple[int, int]:
        """Node indices ``(ia, ic)``; the resampled cells are ``ia..ic-1`` (0-based)."""
        if not grid.t_start <= self.a < self.c <= grid.t_end:
            raise ConfigurationError(f"window ({self.a}, {self.c}] outside {grid}")
        return grid.index_of(self.a), grid.index_of(self.c)

    def coupling(self) -> CouplingFunction:
        return CouplingFunction.indicator(self.a, self.c)


def _require(F: PathFunctional, arity: str) -> None:
    if F.arity != arity:
        raise ContractError(f"{F.name} has arity {F.arity!r}, expected {arity!r}")


def transfer_variable(F: PathFunctional, bundle: PathBundle,
                      phi: CouplingFunction) -> tuple[np.ndarray, np.ndarray]:
    """Samples of ``xi = F(W)`` and ``xi^phi = F(W^phi)`` on the same draws."""
    _require(F, VARIABLE)
    xi = np.asarray(F(bundle.path()), dtype=float)
    xi_phi = np.asarray(F(bundle.coupled_path(phi)), dtype=float)
    return xi, xi_phi


def transfer_process(F: PathFunctional, bundle: PathBundle,
                     phi: CouplingFunction) -> tuple[np.ndarray, np.ndarray]:
    """Node values of ``H`` and ``H^phi`` for an adapted or predictable process."""
    _require(F, PROCESS)
    if F.tag not in (ADAPTED, PREDICTABLE):
        raise ContractError(
            f"{F.name} is tagged {F.tag!r}; only adapted or predictable processes transfer")
    H = np.asarray(F(bundle.path()), dtype=float)
    H_phi = np.asarray(F(bundle.coupled_path(phi)), dtype=float)
    return H, H_phi


def transfer_coefficient(h: PathFunctional, bundle: PathBundle,
                         phi: CouplingFunction) -> Callable[[int, np.ndarray], np.ndarray]:
    """Evaluator ``(k, x) -> h^phi(u_k, x)`` obtained by re-evaluation on ``W^phi``."""
    _require(h, COEFFICIENT)
    coupled = bundle.coupled_path(phi)

    def h_phi(k: int, x: np.ndarray) -> np.ndarray:
        return np.asarray(h(k, coupled, x), dtype=float)

    return h_phi


def adaptedness_violation(F: PathFunctional, bundle: PathBundle, k: int, seed: int = 0) -> float:
    """Largest change of node values ``0..k`` when increments after node ``k`` are redrawn."""
    _require(F, PROCESS)
    path = bundle.path()
    inc = path.increments.copy()
    rng = np.random.default_rng(seed)
    inc[:, k:] = rng.standard_normal(inc[:, k:].shape) * np.sqrt(bundle.grid.step)
    before = np.asarray(F(path))[:, : k + 1]
    after = np.asarray(F(path.with_increments(inc)))[:, : k + 1]
    return float(np.max(np.abs(before - after))) if before.size else 0.0


def law_preserved(F: PathFunctional, bundle: PathBundle, phi: CouplingFunction,
                  level: float = 0.01) -> tuple[float, bool]:
    """Two-sample KS comparison of ``xi`` and ``xi^phi``."""
    xi, xi_phi = transfer_variable(F, bundle, phi)
    return ks_two_sample(xi, xi_phi, level)


def conditional_expectation_window(F: PathFunctional, bundle: PathBundle,
                                   window: SigmaAlgebraWindow, n_inner: int = 256,
                                   antithetic: bool = True) -> np.ndarray:
    """Nested Monte Carlo estimate of ``E[xi | W on [t,a], W - W_c on [c,T]]`` per path.

    Increments outside the window are frozen; those inside are redrawn
    ``n_inner`` times from an independent substream and ``F`` is averaged.
    With ``antithetic`` the draws come in sign-flipped pairs, which makes the
    estimate exact for functionals that are linear in the window increments.
    Paths whose inner evaluations all coincide return ``xi`` itself.
    """
    _require(F, VARIABLE)
    if n_inner < 1:
        raise ConfigurationError("n_inner must be at least 1")
    ia, ic = window.cells(bundle.grid)
    base = bundle.increments_w
    inc = base.copy()
    width = ic - ia
    scale = np.sqrt(bundle.grid.step)
    n_draws = (n_inner + 1) // 2 if antithetic else n_inner
    total = None
    first = None
    same = None
    count = 0
    for j in range(n_draws):
        z = standard_normals(bundle.seed, (bundle.stream_id, LEG_INNER, j), bundle.n_paths,
                             (width, bundle.dim)) * scale
        for sign in ((1.0, -1.0) if antithetic else (1.0,)):
            if count == n_inner:
                break
            inc[:, ia:ic] = sign * z
            val = np.asarray(F(DiscretePath(bundle.grid, inc, seed=bundle.seed,
                                            stream_id=bundle.stream_id)), dtype=float)
            if total is None:
                total = val.copy()
                first = val.copy()
                same = np.ones(val.shape, dtype=bool)
            else:
                total += val
                same &= val == first
            count += 1
    est = total / count
    return np.where(same, first, est)


@dataclass
class SandwichReport:
    """The three sides of the window sandwich with Monte Carlo errors."""

    p: float
    window: SigmaAlgebraWindow
    lhs: Estimate
    mid: Estimate
    rhs: Estimate
    lower_ok: bool
    upper_ok: bool

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok

    def to_dict(self) -> dict:
        return {"p": self.p, "a": self.window.a, "c": self.window.c,
                "lhs": self.lhs.to_dict(), "mid": self.mid.to_dict(), "rhs": self.rhs.to_dict(),
                "pass": self.passed}


def sandwich_check(F: PathFunctional, bundle: PathBundle, window: SigmaAlgebraWindow, p: float,
                   n_inner: int = 256, n_se: float = 3.0) -> SandwichReport:
    """Estimate ``2^-p E|xi - xi^phi|^p``, ``E|xi - E[xi|G]|^p`` and ``E|xi - xi^phi|^p``.

    Each inequality of the chain is accepted when its paired difference is
    not significantly negative at ``n_se`` standard errors.
    """
    if p < 1:
        raise ConfigurationError(f"need p >= 1, got {p}")
    xi, xi_phi = transfer_variable(F, bundle, window.coupling())
    cond = conditional_expectation_window(F, bundle, window, n_inner)
    gap = _norm(xi - xi_phi) ** p
    proj = _norm(xi - cond) ** p
    lhs_s = gap / 2.0 ** p
    lhs, mid, rhs = mc_estimate(lhs_s), mc_estimate(proj), mc_estimate(gap)
    low = mc_estimate(proj - lhs_s)
    up = mc_estimate(gap - proj)
    return SandwichReport(p, window, lhs, mid, rhs,
                          low.mean >= -n_se * low.se, up.mean >= -n_se * up.se)


def _norm(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.abs(x)
    return np.sqrt(np.sum(x.reshape(x.shape[0], -1) ** 2, axis=1))


# --- built-in functionals ---------------------------------------------------

def _node(path: DiscretePath, t: float | None) -> int:
    return path.grid.n_steps if t is None else path.grid.index_of(t)


def brownian_value(t: float | None = None, coord: int = 0) -> PathFunctional:
    """``W_t`` (``W_T`` when ``t`` is None)."""
    return PathFunctional(VARIABLE, lambda path: path.values[:, _node(path, t), coord],
                          name="W_t" if t is not None else "W_T")


def brownian_square(t: float | None = None, coord: int = 0) -> PathFunctional:
    return PathFunctional(VARIABLE, lambda path: path.values[:, _node(path, t), coord] ** 2,
                          name="W_T^2")


def brownian_sign(t: float | None = None, coord: int = 0) -> PathFunctional:
    """Indicator ``1{W_t > 0}``; not Malliavin differentiable."""
    return PathFunctional(VARIABLE,
                          lambda path: (path.values[:, _node(path, t), coord] > 0).astype(float),
                          name="1{W_T>0}")


def running_max_value(coord: int = 0) -> PathFunctional:
    return PathFunctional(VARIABLE, lambda path: path.values[:, :, coord].max(axis=1),
                          name="max W")


def constant_variable(value: float) -> PathFunctional:
    return PathFunctional(VARIABLE, lambda path: np.full(path.n_paths, float(value)),
                          name="const", deterministic=True)


def brownian_process(coord: int = 0) -> PathFunctional:
    return PathFunctional(PROCESS, lambda path: path.values[:, :, coord], tag=ADAPTED, name="W")


def running_max_process(coord: int = 0) -> PathFunctional:
    return PathFunctional(PROCESS, lambda path: np.maximum.accumulate(path.values[:, :, coord], axis=1),
                          tag=ADAPTED, name="running max")


def constant_process(value: float = 1.0) -> PathFunctional:
    return PathFunctional(PROCESS,
                          lambda path: np.full((path.n_paths, path.grid.n_steps + 1), float(value)),
                          tag=ADAPTED, name="const", deterministic=True)


VARIABLES: dict[str, Callable[..., PathFunctional]] = {
    "W_T": brownian_value,
    "W_T^2": brownian_square,
    "sign": brownian_sign,
    "max": running_max_value,
    "constant": constant_variable,
}
