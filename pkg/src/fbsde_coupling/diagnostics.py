"""Regularity diagnostics: path regularity in time, Malliavin ratio curves, fractional potentials.

An estimated sup over ``r`` is always finite, so "bounded" is read as a
falsifiable statement about the ratio curve: its maximum must agree between
the first half of the sample and the full sample, and the curve must not
grow as ``r`` decreases. Growth is measured by the log-log slope over the
smallest ``r`` values of the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .coupling import VARIABLE, PathFunctional, transfer_variable
from .errors import ConfigurationError, DiagnosticError
from .fbsde import FbsdeSpec, PicardConfig, SolutionTriple, _fro, solve_small_interval
from .grid import CouplingFunction, DiscretePath, PathBundle
from .regression import RegressionConfig
from .stats import Estimate, loglog_slope, mc_estimate
from .variance import estimate_cv, estimate_potentials

DEFAULT_R_GRID = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0)


@dataclass
class Tolerances:
    """Thresholds used by the verdicts; every verdict cites one of these."""

    n_se: float = 3.0
    min_slope: float = -0.25
    n_small: int = 3
    spread_factor: float = 4.0


@dataclass
class RatioCurve:
    """A ratio statistic per ``r`` on the full sample and on its first half."""

    r: list[float]
    full: list[Estimate]
    half: list[Estimate]

    @property
    def values(self) -> np.ndarray:
        return np.array([e.mean for e in self.full])

    def sup(self) -> tuple[Estimate, Estimate]:
        i = int(np.argmax(self.values))
        j = int(np.argmax([e.mean for e in self.half]))
        return self.full[i], self.half[j]

    def small_r_slope(self, n_small: int) -> float:
        order = np.argsort(self.r)[:n_small]
        return loglog_slope(np.asarray(self.r)[order], self.values[order])

    def to_rows(self) -> list[dict]:
        return [{"r": r, "ratio": f.mean, "se": f.se, "ratio_half": h.mean, "se_half": h.se}
                for r, f, h in zip(self.r, self.full, self.half)]


def curve_verdict(curve: RatioCurve, tol: Tolerances) -> tuple[str, dict]:
    """``holds-trivially`` for a zero curve, ``holds`` when stable and not growing, else ``fails``."""
    vals = curve.values
    if np.all(vals == 0.0):
        return "holds-trivially", {"sup": 0.0, "stable": True, "slope": None}
    full, half = curve.sup()
    spread = math.sqrt(full.se ** 2 + half.se ** 2)
    stable = abs(full.mean - half.mean) <= tol.n_se * spread
    slope = curve.small_r_slope(tol.n_small)
    growing = math.isnan(slope) or slope < tol.min_slope
    info = {"sup": full.mean, "sup_se": full.se, "sup_half": half.mean, "stable": bool(stable),
            "slope": slope, "min_slope": tol.min_slope}
    return ("holds" if stable and not growing else "fails"), info


def _ratio_estimates(samples: np.ndarray, scale: float, power: float = 1.0) -> tuple[Estimate, Estimate]:
    """Estimates of ``mean(samples)^power / scale`` on all samples and the first half."""
    out = []
    for s in (samples, samples[: max(2, samples.size // 2)]):
        est = mc_estimate(s)
        if power == 1.0:
            out.append(Estimate(est.mean / scale, est.se / scale, est.n))
        else:
            m = est.mean ** power
            se = abs(power) * est.mean ** (power - 1) * est.se if est.mean > 0 else 0.0
            out.append(Estimate(m / scale, se / scale, est.n))
    return out[0], out[1]


# --- Malliavin ratio --------------------------------------------------------

@dataclass
class MalliavinReport:
    name: str
    curve: RatioCurve
    verdict: str
    info: dict
    hypothesis: list[dict] = field(default_factory=list)

    @property
    def bounded(self) -> bool:
        return self.verdict in ("holds", "holds-trivially")

    def label(self) -> str:
        return "bounded" if self.bounded else "unbounded"

    def to_dict(self) -> dict:
        return {"name": self.name, "verdict": self.label(), "info": self.info,
                "curve": self.curve.to_rows(), "hypothesis": self.hypothesis}


def malliavin_ratio(F: PathFunctional, bundle: PathBundle,
                    r_grid: Sequence[float] = DEFAULT_R_GRID,
                    tol: Tolerances = Tolerances()) -> MalliavinReport:
    """``r -> E|xi - xi^{phi_r}|^2 / r^2`` for a scalar path functional."""
    if F.arity != VARIABLE:
        raise ConfigurationError(f"{F.name} is not a random variable")
    _check_r_grid(r_grid)
    xi = np.asarray(F(bundle.path()), dtype=float)
    if not np.all(np.isfinite(xi)) or not math.isfinite(float(np.mean(xi ** 2))):
        raise DiagnosticError(f"{F.name} has non-finite second moment in the sample")
    full, half = [], []
    for r in r_grid:
        _, xi_r = transfer_variable(F, bundle, CouplingFunction.constant(r))
        gap = np.sum((xi - xi_r).reshape(xi.shape[0], -1) ** 2, axis=1)
        a, b = _ratio_estimates(gap, r * r)
        full.append(a)
        half.append(b)
    curve = RatioCurve(list(map(float, r_grid)), full, half)
    verdict, info = curve_verdict(curve, tol)
    return MalliavinReport(F.name, curve, verdict, info)


def malliavin_ratio_fbsde(spec: FbsdeSpec, bundle: PathBundle, t: float, component: str = "Y",
                          r_grid: Sequence[float] = DEFAULT_R_GRID, tol: Tolerances = Tolerances(),
                          picard: PicardConfig = PicardConfig(),
                          regression: RegressionConfig = RegressionConfig()) -> MalliavinReport:
    """Ratio curve for ``X_t`` or ``Y_t`` using coupled re-solves, with the terminal/potential term.

    Alongside the curve, the quantity ``(E|g^{phi_r}(X_T) - g(X_T)|^2 + E U_2) / r^2``
    is reported for every ``r``; its sup is an estimate of the hypothesis constant.
    """
    if component not in ("X", "Y"):
        raise ConfigurationError("component must be 'X' or 'Y'")
    _check_r_grid(r_grid)
    base = solve_small_interval(spec, None, bundle.path(), picard, regression)
    k = base.grid.index_of(t)
    ref = getattr(base, component)[:, k]
    full, half, hyp = [], [], []
    for r in r_grid:
        phi = CouplingFunction.constant(r)
        cpl = solve_small_interval(spec, None, bundle.coupled_path(phi), picard, regression)
        gap = np.sum((ref - getattr(cpl, component)[:, k]) ** 2, axis=1)
        a, b = _ratio_estimates(gap, r * r)
        full.append(a)
        half.append(b)
        pot = estimate_potentials(spec, phi, 2, bundle, base)
        hyp.append({"r": r, "M_r": (pot.terminal_gap.mean + pot.U.mean) / (r * r)})
    curve = RatioCurve(list(map(float, r_grid)), full, half)
    verdict, info = curve_verdict(curve, tol)
    info["M_estimate"] = max(h["M_r"] for h in hyp)
    return MalliavinReport(f"{component}_{t:g}", curve, verdict, info, hyp)


def _check_r_grid(r_grid: Sequence[float]) -> None:
    if not r_grid or any(not 0 < r <= 1 for r in r_grid):
        raise ConfigurationError(f"r-grid must lie in (0, 1], got {list(r_grid)}")


# --- path regularity --------------------------------------------------------

@dataclass
class PathRegularityReport:
    p: float
    rows: list[dict]
    y_slope: float
    x_slope: float
    z_within_cv: bool

    def to_dict(self) -> dict:
        return {"p": self.p, "rows": self.rows, "y_slope": self.y_slope, "x_slope": self.x_slope,
                "z_within_cv": self.z_within_cv}


def interval_I(spec: FbsdeSpec, base: SolutionTriple, i: int, j: int, p: float) -> dict[str, float]:
    """``I_{p,b}, I_{p,f}, I_{p,mu}`` over the nodes ``i..j`` of the base grid."""
    P = base.n_paths
    x0, y0, z0 = spec.zeros(P)
    dt = base.grid.step
    ib, i_f, imu = np.zeros(P), np.zeros(P), np.zeros(P)
    for k in range(i, j):
        kg = base.offset + k
        ib += _fro(spec.b(kg, base.path, x0, y0, z0)) * dt
        i_f += _fro(spec.f(kg, base.path, x0, y0, z0)) * dt
        imu += _fro(spec.mu(kg, base.path, x0, y0, z0)) ** 2 * dt
    return {"b": float(np.mean(ib ** p)), "f": float(np.mean(i_f ** p)),
            "mu": float(np.mean(imu ** (p / 2)))}


def run_path_regularity(spec: FbsdeSpec, bundle: PathBundle, pairs: Sequence[tuple[float, float]],
                        p: float = 2, tol: Tolerances = Tolerances(),
                        picard: PicardConfig = PicardConfig(),
                        regression: RegressionConfig = RegressionConfig()) -> PathRegularityReport:
    """Time increments of ``(X, Y, Z)`` over ``(s, r)`` pairs, with ``CV_p`` for ``phi = 1_(s, r]``."""
    base = solve_small_interval(spec, None, bundle.path(), picard, regression)
    grid = base.grid
    rows = []
    ok = True
    for s, r in pairs:
        i, j = grid.index_of(s), grid.index_of(r)
        if j < i:
            raise ConfigurationError(f"need s <= r, got ({s}, {r})")
        x_gap = mc_estimate(_fro(base.X[:, j] - base.X[:, i]) ** p)
        y_gap = mc_estimate(_fro(base.Y[:, j] - base.Y[:, i]) ** p)
        z_int = grid.step * np.sum(base.Z[:, i + 1:j + 1] ** 2, axis=(1, 2, 3))
        z_est = mc_estimate(z_int ** (p / 2))
        row = {"s": s, "r": r, "dt": r - s, "x_gap": x_gap.mean, "x_gap_se": x_gap.se,
               "y_gap": y_gap.mean, "y_gap_se": y_gap.se, "z_int": z_est.mean, "z_int_se": z_est.se}
        if j > i:
            rep = estimate_cv(spec, CouplingFunction.indicator(s, r), p, bundle,
                              picard=picard, regression=regression, base=base)
            I = interval_I(spec, base, i, j, p)
            row.update(cv=rep.cv.mean, cv_se=rep.cv.se, z_energy=rep.components["z_energy"].mean,
                       P_p=rep.P, I_b=I["b"], I_f=I["f"], I_mu=I["mu"], I_T=rep.I["T"],
                       dt_half_p=(r - s) ** (p / 2))
            within = z_est.mean <= rep.cv.mean + tol.n_se * math.hypot(z_est.se, rep.cv.se)
        else:
            row.update(cv=0.0, cv_se=0.0, z_energy=0.0, P_p=0.0, I_b=0.0, I_f=0.0, I_mu=0.0,
                       I_T=0.0, dt_half_p=0.0)
            within = z_est.mean == 0.0
        row["z_within_cv"] = bool(within)
        ok &= bool(within)
        rows.append(row)
    dts = [row["dt"] for row in rows]
    return PathRegularityReport(p, rows, loglog_slope(dts, [row["y_gap"] for row in rows]),
                                loglog_slope(dts, [row["x_gap"] for row in rows]), ok)


# --- fractional potential condition -----------------------------------------

@dataclass
class RateFunction:
    """Declared rate ``R_i``: ``bounded`` with a bound, or ``lipschitz`` (optionally z-dependent)."""

    kind: str
    bound: float | None = None
    z_dependent: bool = False
    fn: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("bounded", "lipschitz"):
            raise ConfigurationError(f"unknown rate kind {self.kind!r}")
        if self.kind == "bounded" and (self.bound is None or self.bound < 0):
            raise ConfigurationError("a bounded rate needs a non-negative bound")


@dataclass
class PotentialTerm:
    coefficient: str
    driver: PathFunctional
    beta: float
    rate: RateFunction


@dataclass
class FractionalPotentialSpec:
    case: str
    p: float
    terms: list[PotentialTerm]

    def validate(self, n_samples: int = 1000, seed: int = 0) -> None:
        if self.case not in ("I", "II"):
            raise ConfigurationError(f"case must be 'I' or 'II', got {self.case!r}")
        if self.case == "I" and not self.p > 2:
            raise ConfigurationError("Case I needs p > 2")
        if self.case == "II" and self.p < 2:
            raise ConfigurationError("Case II needs p >= 2")
        rng = np.random.default_rng(seed)
        for t in self.terms:
            if t.coefficient not in ("b", "mu", "f", "g"):
                raise ConfigurationError(f"unknown coefficient {t.coefficient!r}")
            if self.case == "I":
                if t.rate.kind != "lipschitz" or t.rate.z_dependent:
                    raise ConfigurationError(
                        f"Case I needs a z-independent Lipschitz rate for {t.coefficient}")
            else:
                if t.rate.kind != "bounded":
                    raise ConfigurationError(f"Case II needs a bounded rate for {t.coefficient}")
                if t.rate.fn is not None:
                    theta = rng.standard_normal((n_samples, 3)) * 10.0
                    vals = np.abs(np.asarray(t.rate.fn(*theta.T), dtype=float))
                    if np.any(vals > t.rate.bound * (1 + 1e-12)):
                        raise ConfigurationError(
                            f"rate for {t.coefficient} exceeds its declared bound on samples")
            if t.coefficient == "g" and t.driver.arity != VARIABLE:
                raise ConfigurationError("the terminal driver must be a random variable")
            if t.coefficient != "g" and t.driver.arity != "process":
                raise ConfigurationError(f"the driver of {t.coefficient} must be a process")


@dataclass
class FracpotReport:
    case: str
    verdicts: dict[str, str]
    curves: dict[str, RatioCurve]
    info: dict[str, dict]

    @property
    def verdict(self) -> str:
        vals = list(self.verdicts.values())
        if any(v == "fails" for v in vals):
            return "fails"
        if all(v == "holds-trivially" for v in vals):
            return "holds-trivially"
        return "holds"

    def to_dict(self) -> dict:
        return {"case": self.case, "verdict": self.verdict, "verdicts": self.verdicts,
                "info": self.info, "curves": {k: c.to_rows() for k, c in self.curves.items()}}


def run_fracpot_check(fp: FractionalPotentialSpec, bundle: PathBundle,
                      r_grid: Sequence[float] = DEFAULT_R_GRID, time_stride: int = 1,
                      tol: Tolerances = Tolerances()) -> FracpotReport:
    """Sup over ``u`` and ``r`` of the fractional-potential ratio for every declared driver.

    Case I uses ``(E|dV|^{2 beta p / (p - 2)})^{(p - 2)/p} / r^2``, Case II
    uses ``E|dV|^{2 beta} / r^2``, with ``dV = V^{phi_r}(u) - V(u)``.
    """
    fp.validate()
    _check_r_grid(r_grid)
    if fp.case == "I":
        q = lambda beta: 2 * beta * fp.p / (fp.p - 2)  # noqa: E731
        power = (fp.p - 2) / fp.p
    else:
        q = lambda beta: 2 * beta  # noqa: E731
        power = 1.0
    verdicts, curves, infos = {}, {}, {}
    base_path = bundle.path()
    for idx, term in enumerate(fp.terms):
        key = f"{term.coefficient}{idx}"
        V = np.asarray(term.driver(base_path), dtype=float)
        full, half = [], []
        for r in r_grid:
            Vr = np.asarray(term.driver(bundle.coupled_path(CouplingFunction.constant(r))), dtype=float)
            dV = np.abs(Vr - V)
            if dV.ndim == 1:
                dV = dV[:, None]
            else:
                dV = dV[:, ::time_stride]
            best_f, best_h = Estimate(0.0, 0.0, dV.shape[0]), Estimate(0.0, 0.0, dV.shape[0])
            for col in range(dV.shape[1]):
                a, b = _ratio_estimates(dV[:, col] ** q(term.beta), r * r, power)
                if a.mean > best_f.mean:
                    best_f = a
                if b.mean > best_h.mean:
                    best_h = b
            full.append(best_f)
            half.append(best_h)
        curve = RatioCurve(list(map(float, r_grid)), full, half)
        verdicts[key], infos[key] = curve_verdict(curve, tol)
        curves[key] = curve
    return FracpotReport(fp.case, verdicts, curves, infos)


def brownian_driver(coord: int = 0) -> PathFunctional:
    """``V(u) = W_u`` as an adapted process."""
    return PathFunctional("process", lambda path: path.values[:, :, coord], tag="adapted", name="W")


def deterministic_driver(fn: Callable[[np.ndarray], np.ndarray] = np.sin) -> PathFunctional:
    """``V(u) = fn(u)``, independent of the path."""
    def ev(path: DiscretePath):
        return np.broadcast_to(fn(path.grid.nodes), (path.n_paths, path.grid.n_steps + 1)).copy()
    return PathFunctional("process", ev, tag="adapted", name="deterministic", deterministic=True)
