"""Time grids, reproducible Brownian pairs, coupled motions and Haar coordinates.

Every Monte Carlo object in the package is built on a :class:`PathBundle`:
two independent batches of Brownian increments ``dW`` and ``dW'`` on a shared
:class:`TimeGrid`. The coupled motion for a coupling function ``phi`` is

    dW^phi = sqrt(1 - phi^2) dW + phi dW'

with ``phi`` frozen on each grid cell at the cell's right endpoint, so an
indicator of ``(a, c]`` with grid-node endpoints is represented exactly.

Random numbers come from Philox streams keyed by
``(seed, stream_id, leg, chunk)``. A path's draws therefore depend only on its
index and the seed, never on the batch size or on how many workers were used.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, DomainError, UnsupportedGridError

CHUNK_PATHS = 2048

# Stream legs; keep stable, changing them changes every golden value.
LEG_W = 0
LEG_WPRIME = 1
LEG_INNER = 2
LEG_PROBE = 3


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of ``[t_start, t_end]`` into ``n_steps`` cells."""

    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)):
            raise ConfigurationError("grid endpoints must be finite")
        if not self.t_start < self.t_end:
            raise ConfigurationError(f"need t_start < t_end, got {self.t_start} >= {self.t_end}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def length(self) -> float:
        return self.t_end - self.t_start

    @property
    def step(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @cached_property
    def nodes(self) -> np.ndarray:
        u = self.t_start + self.step * np.arange(self.n_steps + 1)
        u[-1] = self.t_end
        return u

    @property
    def is_dyadic(self) -> bool:
        return self.n_steps & (self.n_steps - 1) == 0

    def index_of(self, t: float, *, tol: float = 1e-9) -> int:
        """Index of the node equal to ``t``; raises if ``t`` is not a node."""
        pos = (t - self.t_start) / self.step
        k = int(round(pos))
        if not 0 <= k <= self.n_steps or abs(pos - k) > tol * max(1.0, abs(pos)):
            raise ConfigurationError(f"time {t} is not a node of {self}")
        return k

    def sub(self, i0: int, i1: int) -> "TimeGrid":
        """Grid restricted to nodes ``i0..i1``."""
        if not 0 <= i0 < i1 <= self.n_steps:
            raise ConfigurationError(f"invalid node window ({i0}, {i1})")
        return TimeGrid(float(self.nodes[i0]), float(self.nodes[i1]), i1 - i0)

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t_start, self.t_end, self.n_steps * factor)


class CouplingFunction:
    """A coupling function ``phi: [t_start, t_end] -> [0, 1]``.

    Three forms are supported: a constant ``r``, the indicator of a left-open
    interval ``(a, c]`` whose endpoints are grid nodes, and a table of one
    value per grid cell.
    """

    def __init__(self, kind: str, *, r: float | None = None, a: float | None = None,
                 c: float | None = None, values: Sequence[float] | None = None,
                 grid: TimeGrid | None = None):
        self.kind = kind
        if kind == "constant":
            if r is None:
                raise ConfigurationError("constant coupling needs r")
            _check_unit(np.asarray([r], dtype=float))
            self.r = float(r)
        elif kind == "indicator":
            if a is None or c is None or not a < c:
                raise ConfigurationError(f"indicator coupling needs a < c, got ({a}, {c}]")
            self.a, self.c = float(a), float(c)
        elif kind == "tabulated":
            if values is None or grid is None:
                raise ConfigurationError("tabulated coupling needs values and a grid")
            vals = np.asarray(values, dtype=float)
            if vals.shape != (grid.n_steps,):
                raise DimensionError(f"need {grid.n_steps} cell values, got shape {vals.shape}")
            _check_unit(vals)
            self.values = vals
            self.grid = grid
        else:
            raise ConfigurationError(f"unknown coupling kind {kind!r}")

    @classmethod
    def constant(cls, r: float) -> "CouplingFunction":
        return cls("constant", r=r)

    @classmethod
    def indicator(cls, a: float, c: float) -> "CouplingFunction":
        return cls("indicator", a=a, c=c)

    @classmethod
    def tabulated(cls, values: Sequence[float], grid: TimeGrid) -> "CouplingFunction":
        return cls("tabulated", values=values, grid=grid)

    @classmethod
    def zero(cls) -> "CouplingFunction":
        return cls("constant", r=0.0)

    def cell_values(self, grid: TimeGrid) -> np.ndarray:
        """Value of phi on each cell ``(u_{k-1}, u_k]``, read at ``u_k``."""
        if self.kind == "constant":
            return np.full(grid.n_steps, self.r)
        if self.kind == "indicator":
            if not grid.t_start <= self.a < self.c <= grid.t_end:
                raise ConfigurationError(f"({self.a}, {self.c}] not inside {grid}")
            ia, ic = grid.index_of(self.a), grid.index_of(self.c)
            vals = np.zeros(grid.n_steps)
            vals[ia:ic] = 1.0
            return vals
        if grid != self.grid:
            raise DimensionError("tabulated coupling evaluated on a foreign grid")
        return self.values.copy()

    def __call__(self, u: float) -> float:
        if self.kind == "constant":
            return self.r
        if self.kind == "indicator":
            return 1.0 if self.a < u <= self.c else 0.0
        k = int(np.searchsorted(self.grid.nodes, u, side="left"))
        k = min(max(k, 1), self.grid.n_steps)
        return float(self.values[k - 1])

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "r": self.r}
        if self.kind == "indicator":
            return {"kind": "indicator", "a": self.a, "c": self.c}
        return {"kind": "tabulated", "values": self.values.tolist()}

    def label(self) -> str:
        if self.kind == "constant":
            return f"const({self.r:g})"
        if self.kind == "indicator":
            return f"ind({self.a:g},{self.c:g}]"
        return "tabulated"

    def __repr__(self) -> str:
        return f"CouplingFunction<{self.label()}>"


def _check_unit(vals: np.ndarray) -> None:
    if not np.all(np.isfinite(vals)) or np.any(vals < 0.0) or np.any(vals > 1.0):
        raise DomainError("coupling values must lie in [0, 1]")


class DiscretePath:
    """Brownian increments on a grid, shape ``(n_paths, n_steps, dim)``.

    ``values`` holds the motion itself with ``W_{t_start} = 0``. Coefficient
    functions receive a ``DiscretePath`` and a node index; evaluating the same
    functional on a different path is how the coupling operator is realised.
    """

    def __init__(self, grid: TimeGrid, increments: np.ndarray, *, seed: int | None = None,
                 stream_id: int | None = None, label: str = "W"):
        if increments.ndim != 3 or increments.shape[1] != grid.n_steps:
            raise DimensionError(
                f"increments must be (paths, {grid.n_steps}, dim), got {increments.shape}")
        self.grid = grid
        self.increments = increments
        self.seed = seed
        self.stream_id = stream_id
        self.label = label
        self.cache: dict = {}

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def dim(self) -> int:
        return self.increments.shape[2]

    @cached_property
    def values(self) -> np.ndarray:
        out = np.zeros((self.n_paths, self.grid.n_steps + 1, self.dim))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out

    def at(self, k: int) -> np.ndarray:
        """``W_{u_k}`` for every path, shape ``(n_paths, dim)``."""
        return self.values[:, k]

    def time(self, k: int) -> float:
        return float(self.grid.nodes[k])

    def with_increments(self, increments: np.ndarray, label: str | None = None) -> "DiscretePath":
        return DiscretePath(self.grid, increments, seed=self.seed, stream_id=self.stream_id,
                            label=label or self.label)


@dataclass
class PathBundle:
    """A batch of paired, independent Brownian paths ``(W, W')``."""

    grid: TimeGrid
    dim: int
    n_paths: int
    increments_w: np.ndarray
    increments_wprime: np.ndarray
    seed: int
    stream_id: int
    _paths: dict = field(default_factory=dict, repr=False, compare=False)

    def path(self) -> DiscretePath:
        if "w" not in self._paths:
            self._paths["w"] = DiscretePath(self.grid, self.increments_w, seed=self.seed,
                                            stream_id=self.stream_id, label="W")
        return self._paths["w"]

    def prime_path(self) -> DiscretePath:
        if "wprime" not in self._paths:
            self._paths["wprime"] = DiscretePath(self.grid, self.increments_wprime, seed=self.seed,
                                                 stream_id=self.stream_id, label="W'")
        return self._paths["wprime"]

    def coupled_path(self, phi: CouplingFunction) -> DiscretePath:
        return DiscretePath(self.grid, build_coupled_path(self, phi), seed=self.seed,
                            stream_id=self.stream_id, label=f"W^{phi.label()}")

    def joint_path(self) -> DiscretePath:
        """The ``2d``-dimensional motion ``(W, W')``."""
        inc = np.concatenate([self.increments_w, self.increments_wprime], axis=2)
        return DiscretePath(self.grid, inc, seed=self.seed, stream_id=self.stream_id, label="(W,W')")

    def head(self, n: int) -> "PathBundle":
        """The first ``n`` paths; identical to sampling ``n`` paths directly."""
        if not 1 <= n <= self.n_paths:
            raise ConfigurationError(f"cannot take {n} of {self.n_paths} paths")
        return PathBundle(self.grid, self.dim, n, self.increments_w[:n], self.increments_wprime[:n],
                          self.seed, self.stream_id)

    def coarsen(self, factor: int) -> "PathBundle":
        """Same Brownian paths observed on a grid with ``factor``-times fewer cells."""
        if factor < 1 or self.grid.n_steps % factor:
            raise ConfigurationError(f"cannot coarsen {self.grid.n_steps} steps by {factor}")
        grid = TimeGrid(self.grid.t_start, self.grid.t_end, self.grid.n_steps // factor)

        def merge(inc):
            return inc.reshape(self.n_paths, grid.n_steps, factor, self.dim).sum(axis=2)

        return PathBundle(grid, self.dim, self.n_paths, merge(self.increments_w),
                          merge(self.increments_wprime), self.seed, self.stream_id)


def stream_generator(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for the substream ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def standard_normals(seed: int, key: tuple[int, ...], n_paths: int, shape: tuple[int, ...],
                     workers: int = 1) -> np.ndarray:
    """Standard normals of shape ``(n_paths, *shape)``, path-indexed reproducibly.

    Paths are split into fixed chunks of ``CHUNK_PATHS``; each chunk draws from
    its own substream, so the result does not depend on ``workers``.
    """
    out = np.empty((n_paths, *shape))
    starts = range(0, n_paths, CHUNK_PATHS)

    def fill(start):
        stop = min(start + CHUNK_PATHS, n_paths)
        rng = stream_generator(seed, *key, start // CHUNK_PATHS)
        out[start:stop] = rng.standard_normal((stop - start, *shape))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(fill, starts))
    else:
        for s in starts:
            fill(s)
    return out


def sample_paths(grid: TimeGrid, dim: int, n_paths: int, seed: int, stream_id: int = 0,
                 *, workers: int = 1) -> PathBundle:
    """Sample the Brownian pair ``(W, W')`` on ``grid``."""
    if not isinstance(grid, TimeGrid):
        raise ConfigurationError("grid must be a TimeGrid")
    if n_paths < 1 or dim < 1:
        raise ConfigurationError(f"need n_paths >= 1 and dim >= 1, got {n_paths}, {dim}")
    if seed < 0 or stream_id < 0:
        raise ConfigurationError("seed and stream_id must be non-negative")
    scale = math.sqrt(grid.step)
    shape = (grid.n_steps, dim)
    dw = standard_normals(seed, (stream_id, LEG_W), n_paths, shape, workers)
    dwp = standard_normals(seed, (stream_id, LEG_WPRIME), n_paths, shape, workers)
    dw *= scale
    dwp *= scale
    return PathBundle(grid, dim, n_paths, dw, dwp, seed, stream_id)


def build_coupled_path(bundle: PathBundle, phi: CouplingFunction) -> np.ndarray:
    """Increments of ``W^phi`` on each cell: ``sqrt(1-phi^2) dW + phi dW'``."""
    vals = phi.cell_values(bundle.grid)
    _check_unit(vals)
    keep = np.sqrt(1.0 - vals * vals)[None, :, None]
    mix = vals[None, :, None]
    return keep * bundle.increments_w + mix * bundle.increments_wprime


# --- Haar coordinates -------------------------------------------------------

@dataclass
class HaarCoefficients:
    """Haar integrals ``int h_l dW`` for ``l < level``, shape ``(paths, level, dim)``."""

    grid: TimeGrid
    level: int
    coeffs: np.ndarray


def haar_matrix(grid: TimeGrid, level: int) -> np.ndarray:
    """Haar functions ``h_0..h_{level-1}`` sampled on the cells, shape ``(level, n_steps)``.

    ``h_0 = 1/sqrt(T)``; ``h_{2^j + k}`` is ``+-2^{j/2}/sqrt(T)`` on the two halves
    of the ``k``-th dyadic interval of generation ``j``.
    """
    if not grid.is_dyadic:
        raise UnsupportedGridError(f"Haar coordinates need 2^k steps, got {grid.n_steps}")
    if level < 1 or level & (level - 1) or level > grid.n_steps:
        raise DimensionError(f"level must be a power of two <= {grid.n_steps}, got {level}")
    n = grid.n_steps
    norm = 1.0 / math.sqrt(grid.length)
    mid = (np.arange(n) + 0.5) / n  # cell midpoints on [0, 1]
    rows = [np.full(n, norm)]
    j = 0
    while len(rows) < level:
        width = 2.0 ** -j
        amp = norm * 2.0 ** (j / 2)
        for k in range(2 ** j):
            rel = (mid - k * width) / width
            h = np.where((rel >= 0) & (rel < 0.5), amp, 0.0)
            h = np.where((rel >= 0.5) & (rel < 1.0), -amp, h)
            rows.append(h)
        j += 1
    return np.array(rows[:level])


def haar_analyze(bundle: PathBundle | DiscretePath, level: int) -> HaarCoefficients:
    """Discrete stochastic integrals of the first ``level`` Haar functions against W."""
    grid = bundle.grid
    inc = bundle.increments_w if isinstance(bundle, PathBundle) else bundle.increments
    H = haar_matrix(grid, level)
    return HaarCoefficients(grid, level, np.einsum("ln,pnd->pld", H, inc))


def haar_synthesize(coeffs: HaarCoefficients, grid: TimeGrid) -> np.ndarray:
    """Increments whose Haar coordinates are ``coeffs``; needs a full-resolution level."""
    if coeffs.level != grid.n_steps:
        raise DimensionError(f"level {coeffs.level} does not resolve {grid.n_steps} cells")
    H = haar_matrix(grid, coeffs.level)
    return grid.step * np.einsum("ln,pld->pnd", H, coeffs.coeffs)
