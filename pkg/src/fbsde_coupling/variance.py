"""The p-coupling variance of an FBSDE solution and the ingredients of its upper bound.

The coupled triple is obtained by solving the same FBSDE against ``W^phi``
with every coefficient re-evaluated on the coupled path. Both solves use the
same ``(W, W')`` draws, so ``phi = 0`` gives bitwise-zero gaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DiagnosticError
from .fbsde import (FbsdeSpec, PicardConfig, SolutionTriple, _fro, solve_small_interval)
from .grid import CouplingFunction, PathBundle
from .regression import RegressionConfig
from .stats import Estimate, loglog_slope, mc_estimate

COMPONENTS = ("sup_x", "sup_y", "z_gap", "z_energy")


@dataclass
class VarianceReport:
    """CV_p components, bound ingredients and the empirical bound ratio for one ``phi``."""

    p: float
    phi: CouplingFunction
    interval: tuple[float, float]
    components: dict[str, Estimate]
    cv: Estimate
    initial_gap: Estimate
    terminal_gap: Estimate
    U: Estimate
    S: float
    I: dict[str, float]
    P: float
    denominator: float
    ratio: float
    ratio_se: float
    flags: list[str] = field(default_factory=list)

    @property
    def violation(self) -> bool:
        return "degenerate-denominator" in self.flags

    def row(self) -> dict:
        """Flat CSV row."""
        out = {"phi": self.phi.label(), "t1": self.interval[0], "t2": self.interval[1], "p": self.p}
        for k, est in self.components.items():
            out[k] = est.mean
            out[k + "_se"] = est.se
        out.update(cv=self.cv.mean, cv_se=self.cv.se, initial_gap=self.initial_gap.mean,
                   terminal_gap=self.terminal_gap.mean, U=self.U.mean, S=self.S, P=self.P,
                   I_b=self.I["b"], I_f=self.I["f"], I_mu=self.I["mu"], I_T=self.I["T"],
                   denominator=self.denominator, ratio=self.ratio, ratio_se=self.ratio_se)
        return out

    def to_dict(self) -> dict:
        return {"p": self.p, "phi": self.phi.to_dict(), "interval": list(self.interval),
                "components": {k: v.to_dict() for k, v in self.components.items()},
                "cv": self.cv.to_dict(), "initial_gap": self.initial_gap.to_dict(),
                "terminal_gap": self.terminal_gap.to_dict(), "U": self.U.to_dict(), "S": self.S,
                "I": self.I, "P": self.P, "denominator": self.denominator, "ratio": self.ratio,
                "ratio_se": self.ratio_se, "flags": self.flags}


@dataclass
class Potentials:
    U: Estimate
    S: float
    I: dict[str, float]
    P: float
    terminal_gap: Estimate
    initial_gap: Estimate


def _node_range(sol: SolutionTriple, interval: tuple[float, float] | None) -> tuple[int, int]:
    if interval is None:
        return 0, sol.grid.n_steps
    return sol.grid.index_of(interval[0]), sol.grid.index_of(interval[1])


def cv_samples(base: SolutionTriple, coupled: SolutionTriple, phi: CouplingFunction, p: float,
               interval: tuple[float, float] | None = None) -> dict[str, np.ndarray]:
    """Per-path values of the four CV_p summands on ``interval`` (grid sups, cell sums)."""
    j1, j2 = _node_range(base, interval)
    dt = base.grid.step
    sl = slice(j1, j2 + 1)
    cells = slice(j1 + 1, j2 + 1)
    dx = np.sqrt(np.sum((base.X[:, sl] - coupled.X[:, sl]) ** 2, axis=2)).max(axis=1)
    dy = np.sqrt(np.sum((base.Y[:, sl] - coupled.Y[:, sl]) ** 2, axis=2)).max(axis=1)
    dz = dt * np.sum((base.Z[:, cells] - coupled.Z[:, cells]) ** 2, axis=(1, 2, 3))
    phis = phi.cell_values(base.grid)[j1:j2]
    weight = 1.0 - np.sqrt(1.0 - phis ** 2)
    ez = dt * np.sum(weight[None, :] * np.sum(base.Z[:, cells] ** 2, axis=(2, 3)), axis=1)
    return {"sup_x": dx ** p, "sup_y": dy ** p, "z_gap": dz ** (p / 2), "z_energy": ez ** (p / 2)}


def estimate_potentials(spec: FbsdeSpec, phi: CouplingFunction, p: float, bundle: PathBundle,
                        base: SolutionTriple) -> Potentials:
    """``U_p`` along the base solution, ``S_p``, the ``I`` terms and ``P_p``.

    Coefficient gaps ``h - h^phi`` are evaluated at the base state
    ``(X_u, Y_u, Z_u)`` with ``h^phi`` read on ``W^phi``.
    """
    path = base.path
    coupled_path = bundle.coupled_path(phi)
    P = base.n_paths
    dt = base.grid.step
    K = base.grid.n_steps
    x0, y0, z0 = spec.zeros(P)
    phis = phi.cell_values(path.grid)[base.offset:base.offset + K]
    ub = np.zeros(P)
    umu = np.zeros(P)
    uf = np.zeros(P)
    ib = np.zeros(P)
    imu = np.zeros(P)
    i_f = np.zeros(P)
    s_sigma = np.zeros(P)
    for k in range(K):
        kg = base.offset + k
        x, y, z = base.X[:, k], base.Y[:, k], base.Z[:, k + 1]
        ub += _fro(spec.b(kg, path, x, y, z) - spec.b(kg, coupled_path, x, y, z)) * dt
        dmu = (spec.sigma(kg, path, x, y) - spec.sigma(kg, coupled_path, x, y)
               + spec.A(kg, path, z) - spec.A(kg, coupled_path, z))
        umu += _fro(dmu) ** 2 * dt
        uf += _fro(spec.f(kg, path, x, y, z) - spec.f(kg, coupled_path, x, y, z)) * dt
        ib += _fro(spec.b(kg, path, x0, y0, z0)) * dt
        imu += _fro(spec.mu(kg, path, x0, y0, z0)) ** 2 * dt
        i_f += _fro(spec.f(kg, path, x0, y0, z0)) * dt
        s_sigma += phis[k] ** 2 * _fro(spec.sigma(kg, path, x0, y0)) ** 2 * dt
    U = mc_estimate(ub ** p + umu ** (p / 2) + uf ** p)
    xT = base.X[:, -1]
    term = mc_estimate(_fro(spec.g(path, xT) - spec.g(coupled_path, xT)) ** p)
    if callable(spec.initial):
        init = mc_estimate(_fro(spec.initial(path) - spec.initial(coupled_path)) ** p)
    else:
        init = Estimate(0.0, 0.0, P)
    lip = spec.lipschitz
    phi_int = float(np.sum(phis ** 2) * dt)
    sup_x = np.sqrt(np.sum(base.X ** 2, axis=2)).max(axis=1) ** p
    sup_y = np.sqrt(np.sum(base.Y ** 2, axis=2)).max(axis=1) ** p
    S = phi_int ** (p / 2) * float(np.mean(lip.mu[0] ** p * sup_x + lip.mu[1] ** p * sup_y)) \
        + float(np.mean(s_sigma ** (p / 2)))
    I = {"b": float(np.mean(ib ** p)), "f": float(np.mean(i_f ** p)),
         "mu": float(np.mean(imu ** (p / 2)))}
    I["T"] = (float(np.mean(_fro(base.X[:, 0]) ** p)) + float(np.mean(_fro(spec.g(path, x0)) ** p))
              + I["b"] + I["f"] + I["mu"])
    return Potentials(U, S, I, term.mean + U.mean, term, init)


def estimate_cv(spec: FbsdeSpec, phi: CouplingFunction, p: float, bundle: PathBundle,
                interval: tuple[float, float] | None = None,
                picard: PicardConfig = PicardConfig(),
                regression: RegressionConfig = RegressionConfig(),
                base: SolutionTriple | None = None) -> VarianceReport:
    """Solve base and coupled systems on ``bundle`` and assemble a :class:`VarianceReport`."""
    if p < 1:
        raise DiagnosticError(f"need p >= 1, got {p}")
    if base is None:
        base = solve_small_interval(spec, None, bundle.path(), picard, regression)
    coupled = solve_small_interval(spec, None, bundle.coupled_path(phi), picard, regression)
    parts = cv_samples(base, coupled, phi, p, interval)
    total = sum(parts.values())
    comps = {k: mc_estimate(v) for k, v in parts.items()}
    cv = mc_estimate(total)
    pot = estimate_potentials(spec, phi, p, bundle, base)
    den = pot.initial_gap.mean + pot.terminal_gap.mean + pot.U.mean + pot.S
    flags = []
    if spec.deterministic:
        # Deterministic coefficients are invariant under the coupling, so the
        # right-hand side must reduce to the S_p term alone.
        if pot.U.mean != 0.0 or pot.terminal_gap.mean != 0.0:
            raise DiagnosticError("deterministic spec produced nonzero coefficient potentials")
        if not callable(spec.initial) and den != pot.S:
            raise DiagnosticError("bound denominator does not reduce to S_p")
    if den > 0:
        ratio, ratio_se = cv.mean / den, cv.se / den
    elif cv.mean > 0:
        ratio, ratio_se = math.inf, 0.0
        flags.append("degenerate-denominator")
    else:
        ratio, ratio_se = 0.0, 0.0
        flags.append("vacuous")
    span = interval if interval is not None else (base.grid.t_start, base.grid.t_end)
    return VarianceReport(p, phi, (float(span[0]), float(span[1])), comps, cv, pot.initial_gap,
                          pot.terminal_gap, pot.U, pot.S, pot.I, pot.P, den, ratio, ratio_se, flags)


@dataclass
class BoundStudy:
    ratios: list[float]
    spread: float
    spread_factor: float
    r_slope: float | None
    passed: bool
    violations: list[int]
    vacuous: bool

    def to_dict(self) -> dict:
        return {"ratios": self.ratios, "spread": self.spread, "spread_factor": self.spread_factor,
                "r_slope": self.r_slope, "pass": self.passed, "violations": self.violations,
                "vacuous": self.vacuous}


def verify_bound(reports: list[VarianceReport], spread_factor: float = 4.0) -> BoundStudy:
    """Check that ``CV_p / (gap terms + U_p + S_p)`` stays within a constant factor across reports.

    Constant-``phi`` reports also yield the log-log slope of ``CV_p`` in ``r``.
    """
    if len(reports) < 3 and not all("vacuous" in r.flags for r in reports):
        raise DiagnosticError("a bound study needs at least three reports")
    violations = [i for i, r in enumerate(reports) if r.violation]
    finite = [r.ratio for r in reports if r.denominator > 0]
    vacuous = not finite and not violations
    spread = max(finite) / min(finite) if finite and min(finite) > 0 else (1.0 if not finite else math.inf)
    const = [(r.phi.r, r.cv.mean) for r in reports if r.phi.kind == "constant" and r.phi.r > 0]
    slope = loglog_slope(*zip(*const)) if len(const) >= 2 else None
    passed = not violations and (vacuous or spread <= spread_factor)
    return BoundStudy([r.ratio for r in reports], spread, spread_factor, slope, passed,
                      violations, vacuous)
