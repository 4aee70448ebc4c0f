"""Decoupling fields on a partition and long-horizon solves by stitching.

The field ``w(t_i, .)`` is built backwards over the partition. At the last node
it is ``g`` itself. On each sub-interval the FBSDE is solved from a cloud of
probe initial states with terminal data ``w(t_{i+1}, .)``, and a polynomial is
fitted to the map ``x0 -> Y_{t_i}``. For path-dependent coefficients the fit
also takes the current Brownian value, so the field is random.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, RegularityLossError
from .fbsde import (FbsdeSpec, PicardConfig, SolutionTriple, _as_path, _forward,
                    solve_small_interval)
from .grid import LEG_PROBE, DiscretePath, PathBundle, TimeGrid, standard_normals
from .regression import PolynomialFit, RegressionConfig
from .stats import ks_two_sample, loglog_slope

FIELD_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Partition:
    """Partition nodes ``t_0 < ... < t_N`` given as indices into a master grid."""

    grid: TimeGrid
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) < 2 or any(b <= a for a, b in zip(idx, idx[1:])):
            raise ConfigurationError(f"partition indices must increase, got {idx}")
        if idx[0] < 0 or idx[-1] > self.grid.n_steps:
            raise ConfigurationError("partition indices outside the grid")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def uniform(cls, grid: TimeGrid, n_intervals: int) -> "Partition":
        if n_intervals < 1 or grid.n_steps % n_intervals:
            raise ConfigurationError(f"{grid.n_steps} steps cannot be split into {n_intervals} parts")
        width = grid.n_steps // n_intervals
        return cls(grid, tuple(range(0, grid.n_steps + 1, width)))

    @classmethod
    def from_times(cls, grid: TimeGrid, times: Sequence[float]) -> "Partition":
        return cls(grid, tuple(grid.index_of(t) for t in times))

    @property
    def n_intervals(self) -> int:
        return len(self.indices) - 1

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes[list(self.indices)]

    @property
    def mesh(self) -> float:
        return float(np.max(np.diff(self.times)))

    def sub_grid(self, i: int) -> TimeGrid:
        return self.grid.sub(self.indices[i], self.indices[i + 1])

    def check_mesh(self, delta: float) -> None:
        if self.mesh > delta * (1 + 1e-12):
            raise ConfigurationError(f"partition mesh {self.mesh:g} exceeds delta {delta:g}")


@dataclass
class FieldConfig:
    """Probe design, surrogate degree and solver settings for field construction."""

    degree: int = 3
    spread: float = 1.5
    min_scale: float = 0.25
    lipschitz_margin: float = 0.9
    picard: PicardConfig = field(default_factory=PicardConfig)
    regression: RegressionConfig = field(default_factory=RegressionConfig)
    n_lipschitz_pairs: int = 4096


@dataclass
class DecouplingFieldModel:
    """Fitted maps ``x -> w(t_i, x)`` for the non-terminal partition nodes."""

    partition: Partition
    spec: FbsdeSpec
    fits: list[PolynomialFit | None]
    lip_hat: list[float]
    hull: list[tuple[np.ndarray, np.ndarray] | None]
    include_brownian: bool

    @property
    def n_nodes(self) -> int:
        return len(self.partition.indices)

    def evaluate(self, i: int, path: DiscretePath, x: np.ndarray, clamp: bool = True) -> np.ndarray:
        """``w(t_i, x)`` per path; ``x`` has shape ``(P, n)``."""
        x = np.asarray(x, dtype=float)
        if i == self.n_nodes - 1:
            return self.spec.g(path, x)
        lo, hi = self.hull[i]
        if clamp:
            clipped = np.clip(x, lo, hi)
            if np.any(clipped != x):
                warnings.warn(f"field evaluated outside the probe hull at node {i}; clamped",
                              RuntimeWarning, stacklevel=2)
            x = clipped
        feats = x
        if self.include_brownian:
            feats = np.concatenate([x, path.values[:, self.partition.indices[i]]], axis=1)
        return self.fits[i](feats)

    def terminal(self, i: int):
        """Callable ``(path, x) -> w(t_i, x)`` usable as terminal data for a sub-solve."""
        if i == self.n_nodes - 1:
            return None
        return lambda path, x: self.evaluate(i, path, x)

    def to_dict(self) -> dict:
        return {
            "schema": FIELD_SCHEMA_VERSION,
            "spec": self.spec.name,
            "spec_params": self.spec.params,
            "grid": {"t_start": self.partition.grid.t_start, "t_end": self.partition.grid.t_end,
                     "n_steps": self.partition.grid.n_steps},
            "node_indices": list(self.partition.indices),
            "node_times": self.partition.times.tolist(),
            "include_brownian": self.include_brownian,
            "lip_hat": [None if math.isnan(v) else v for v in self.lip_hat],
            "nodes": [None if f is None else {"fit": f.to_dict(), "hull": [h[0].tolist(), h[1].tolist()]}
                      for f, h in zip(self.fits, self.hull)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict, spec: FbsdeSpec) -> "DecouplingFieldModel":
        g = d["grid"]
        part = Partition(TimeGrid(g["t_start"], g["t_end"], g["n_steps"]), tuple(d["node_indices"]))
        fits, hull = [], []
        for node in d["nodes"]:
            if node is None:
                fits.append(None)
                hull.append(None)
            else:
                fits.append(PolynomialFit.from_dict(node["fit"]))
                hull.append((np.asarray(node["hull"][0]), np.asarray(node["hull"][1])))
        lip = [math.nan if v is None else float(v) for v in d["lip_hat"]]
        return cls(part, spec, fits, lip, hull, bool(d["include_brownian"]))


def _probe_states(spec: FbsdeSpec, path: DiscretePath, partition: Partition, cfg: FieldConfig,
                  pilot: np.ndarray, i: int) -> np.ndarray:
    k = partition.indices[i]
    mean = pilot[:, k].mean(axis=0)
    std = pilot[:, k].std(axis=0)
    scale = np.maximum(cfg.spread * std, cfg.min_scale)
    seed = path.seed if path.seed is not None else 0
    stream = path.stream_id if path.stream_id is not None else 0
    z = standard_normals(seed, (stream, LEG_PROBE, i), path.n_paths, (spec.n,))
    return mean + scale * z


def _lipschitz_hat(fit: PolynomialFit, x: np.ndarray, extra: np.ndarray | None,
                   n_pairs: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    P = x.shape[0]
    i = rng.integers(0, P, n_pairs)
    j = rng.integers(0, P, n_pairs)
    dx = np.sqrt(np.sum((x[i] - x[j]) ** 2, axis=1))
    keep = dx > 1e-3 * (1.0 + np.abs(x).max())
    i, j, dx = i[keep], j[keep], dx[keep]
    if extra is None:
        fi, fj = fit(x[i]), fit(x[j])
    else:
        # Same path, two states: the random part of the field is held fixed.
        fi = fit(np.concatenate([x[i], extra[i]], axis=1))
        fj = fit(np.concatenate([x[j], extra[i]], axis=1))
    dy = np.sqrt(np.sum((fi - fj) ** 2, axis=1))
    return float(np.max(dy / dx)) if dx.size else 0.0


def build_field(spec: FbsdeSpec, partition: Partition, source: PathBundle | DiscretePath,
                cfg: FieldConfig = FieldConfig()) -> DecouplingFieldModel:
    """Backward recursion ``w(t_N) = g``, then fit ``w(t_i)`` from probe solves on ``[t_i, t_{i+1}]``."""
    path = _as_path(source)
    if partition.grid != path.grid:
        raise ConfigurationError("partition and path live on different grids")
    N = partition.n_intervals
    L_mu3 = spec.lipschitz.mu[2]
    if spec.lipschitz.g * L_mu3 >= cfg.lipschitz_margin:
        raise RegularityLossError(
            f"L_g * L_mu3 = {spec.lipschitz.g * L_mu3:g} is not below {cfg.lipschitz_margin:g}")
    pilot = _forward(spec, path, 0, path.grid.n_steps, spec.initial_values(path), None, None, None)
    fits: list[PolynomialFit | None] = [None] * (N + 1)
    hull: list = [None] * (N + 1)
    lip = [math.nan] * (N + 1)
    lip[N] = spec.lipschitz.g
    model = DecouplingFieldModel(partition, spec, fits, lip, hull, cfg.regression.include_brownian)
    for i in range(N - 1, -1, -1):
        probes = _probe_states(spec, path, partition, cfg, pilot, i)
        sol = solve_small_interval(spec, partition.sub_grid(i), path, cfg.picard, cfg.regression,
                                   terminal=model.terminal(i + 1), x0=probes, check=False)
        extra = path.values[:, partition.indices[i]] if model.include_brownian else None
        feats = probes if extra is None else np.concatenate([probes, extra], axis=1)
        fits[i] = PolynomialFit.fit(feats, sol.Y[:, 0], cfg.degree, cfg.regression.rank_tol)
        hull[i] = (probes.min(axis=0), probes.max(axis=0))
        lip[i] = _lipschitz_hat(fits[i], probes, extra, cfg.n_lipschitz_pairs, seed=i)
        if lip[i] * L_mu3 >= cfg.lipschitz_margin:
            raise RegularityLossError(
                f"field slope {lip[i]:.4g} at t = {partition.times[i]:g} gives "
                f"L_w * L_mu3 = {lip[i] * L_mu3:.4g} >= {cfg.lipschitz_margin:g}")
    return model


@dataclass
class LongHorizonSolution:
    solution: SolutionTriple
    pieces: list[SolutionTriple]
    residuals: list[float]  # E|Y_{t_i} - w(t_i, X_{t_i})|^2 per partition node


def solve_long_horizon(spec: FbsdeSpec, partition: Partition, source: PathBundle | DiscretePath,
                       model: DecouplingFieldModel | None = None,
                       cfg: FieldConfig = FieldConfig()) -> LongHorizonSolution:
    """Solve forward sub-interval by sub-interval with ``w(t_{i+1}, .)`` as terminal data.

    At interior partition nodes the stitched ``Y`` takes the start value of the
    following piece. With one sub-interval this is exactly the direct solve.
    """
    path = _as_path(source)
    N = partition.n_intervals
    if model is None and N > 1:
        model = build_field(spec, partition, path, cfg)
    x_start = spec.initial_values(path)
    pieces = []
    for i in range(N):
        terminal = model.terminal(i + 1) if model is not None else None
        sol = solve_small_interval(spec, partition.sub_grid(i), path, cfg.picard, cfg.regression,
                                   terminal=terminal, x0=x_start, check=terminal is None)
        pieces.append(sol)
        x_start = sol.X[:, -1]
    if N == 1:
        return LongHorizonSolution(pieces[0], pieces, [0.0, 0.0])
    i0, i1 = partition.indices[0], partition.indices[-1]
    grid = partition.grid.sub(i0, i1)
    P = path.n_paths
    X = np.empty((P, grid.n_steps + 1, spec.n))
    Y = np.empty((P, grid.n_steps + 1, spec.m))
    Z = np.zeros((P, grid.n_steps + 1, spec.m, spec.d))
    for i, sol in enumerate(pieces):
        a = partition.indices[i] - i0
        b = partition.indices[i + 1] - i0
        X[:, a:b + 1] = sol.X
        Y[:, a:b + 1] = sol.Y
        Z[:, a + 1:b + 1] = sol.Z[:, 1:]
    for i in range(1, N):
        Y[:, partition.indices[i] - i0] = pieces[i].Y[:, 0]
    residuals = []
    for i in range(N + 1):
        k = partition.indices[i] - i0
        w = model.evaluate(i, path, X[:, k])
        residuals.append(float(np.mean(np.sum((Y[:, k] - w) ** 2, axis=1))))
    iters = [r for sol in pieces for r in sol.residuals]
    return LongHorizonSolution(SolutionTriple(grid, X, Y, Z, path, i0, iters), pieces, residuals)


@dataclass
class FieldTimeRegularity:
    p: float
    pairs: list[tuple[float, float]]
    gaps: list[float]
    slope: float

    def to_dict(self) -> dict:
        return {"p": self.p, "pairs": self.pairs, "gaps": self.gaps, "slope": self.slope}


def field_time_regularity(model: DecouplingFieldModel, x: np.ndarray | float, p: float = 2,
                          path: DiscretePath | None = None, n_paths: int = 1) -> FieldTimeRegularity:
    """``E|w(r, x) - w(s, x)|^p`` over all node pairs and its log-log slope in ``r - s``.

    For path-dependent fields ``path`` supplies the randomness; otherwise a
    single evaluation per node suffices. The terminal node is excluded when
    ``g`` needs a path that is not supplied.
    """
    spec = model.spec
    if path is None:
        if model.include_brownian or not spec.deterministic:
            raise ConfigurationError("a random field needs a path to evaluate on")
        grid = model.partition.grid
        path = DiscretePath(grid, np.zeros((n_paths, grid.n_steps, spec.d)))
    xs = np.broadcast_to(np.asarray(x, dtype=float).reshape(1, -1), (path.n_paths, spec.n)).copy()
    times = model.partition.times
    vals = [model.evaluate(i, path, xs, clamp=False) for i in range(model.n_nodes)]
    pairs, gaps = [], []
    for i in range(model.n_nodes):
        for j in range(i + 1, model.n_nodes):
            pairs.append((float(times[i]), float(times[j])))
            diff = np.sqrt(np.sum((vals[j] - vals[i]) ** 2, axis=1))
            gaps.append(float(np.mean(diff ** p)))
    dts = [b - a for a, b in pairs]
    return FieldTimeRegularity(p, pairs, gaps, loglog_slope(dts, gaps))


def field_transference_check(spec: FbsdeSpec, partition: Partition, bundle: PathBundle, phi,
                             x: float, node: int = 0, cfg: FieldConfig = FieldConfig(),
                             level: float = 0.01) -> tuple[float, bool]:
    """Compare the field built on ``W^phi`` with the original field re-evaluated on ``W^phi``.

    Both are sampled at the probe point ``x`` and node ``node``; returns the
    KS statistic and whether the two laws are indistinguishable at ``level``.
    """
    base = build_field(spec, partition, bundle.path(), cfg)
    coupled_path = bundle.coupled_path(phi)
    rebuilt = build_field(spec, partition, coupled_path, cfg)
    xs = np.full((bundle.n_paths, spec.n), float(x))
    transferred = base.evaluate(node, coupled_path, xs)
    direct = rebuilt.evaluate(node, coupled_path, xs)
    return ks_two_sample(transferred[:, 0], direct[:, 0], level)
