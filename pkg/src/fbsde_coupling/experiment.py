"""Experiment configuration, dispatch and report persistence.

A run reads one JSON document, dispatches on ``kind`` and writes three files
into the output directory:

``results.csv``
    one row per estimate; floats are written with ``repr`` so a rerun in
    deterministic mode is byte-identical.
``report.json``
    the full breakdown with Monte Carlo errors and verdicts.
``manifest.json``
    seed, config hash, package version and wall time.

CSV schema version: see ``CSV_SCHEMA``. The column set depends on ``kind``
and is listed in the README.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import os
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .coupling import VARIABLES, SigmaAlgebraWindow, sandwich_check
from .diagnostics import (DEFAULT_R_GRID, FractionalPotentialSpec, PotentialTerm, RateFunction,
                          Tolerances, brownian_driver, deterministic_driver, malliavin_ratio,
                          malliavin_ratio_fbsde, run_fracpot_check, run_path_regularity)
from .errors import ConfigurationError
from .fbsde import (PicardConfig, apriori_check, check_solvability, solution_l2_error,
                    solve_small_interval, theta_norm)
from .field import FieldConfig, Partition, solve_long_horizon
from .grid import CouplingFunction, PathBundle, TimeGrid, sample_paths
from .library import build_spec
from .regression import RegressionConfig
from .stats import mc_estimate
from .variance import estimate_cv, verify_bound

KINDS = ("paths", "solve", "cv", "sandwich", "malliavin", "regularity", "fracpot")
CSV_SCHEMA = 1

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VIOLATION = 2

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "stream_id": 0,
    "dim": 1,
    "paths": 10000,
    "grid": {"t_start": 0.0, "t_end": 1.0, "n_steps": 64},
    "spec": {"name": "martingale", "params": {}},
    "p": [2],
    "workers": 1,
    "picard": {"max_iter": 50, "tol": 1e-6},
    "regression": {"degree": 2, "include_brownian": False},
    "tolerances": {"n_se": 3.0, "min_slope": -0.25, "n_small": 3, "spread_factor": 4.0},
}


@dataclass
class ExperimentConfig:
    """Validated experiment configuration; ``raw`` keeps the merged JSON document."""

    kind: str
    raw: dict
    grid: TimeGrid
    seed: int
    stream_id: int
    n_paths: int
    dim: int
    p_list: list[float]
    tolerances: Tolerances
    picard: PicardConfig
    regression: RegressionConfig
    workers: int = 1
    deterministic: bool = False
    out: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _positive(name: str, value, integer: bool = False) -> None:
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and value > 0
    if integer:
        ok = ok and float(value).is_integer()
    if not ok:
        raise ConfigurationError(f"{name} must be a positive {'integer' if integer else 'number'}, got {value!r}")


def parse_config(doc: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Merge defaults, the JSON document and CLI overrides, then validate."""
    if not isinstance(doc, dict):
        raise ConfigurationError("config must be a JSON object")
    raw = _merge(DEFAULTS, doc)
    if overrides:
        raw = _merge(raw, {k: v for k, v in overrides.items() if v is not None})
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigurationError(f"unknown experiment kind {kind!r}; choose from {KINDS}")
    for name in ("paths", "dim"):
        _positive(name, raw[name], integer=True)
    if not isinstance(raw["seed"], int) or raw["seed"] < 0:
        raise ConfigurationError("seed must be a non-negative integer")
    g = raw["grid"]
    _positive("grid.n_steps", g["n_steps"], integer=True)
    grid = TimeGrid(float(g["t_start"]), float(g["t_end"]), int(g["n_steps"]))
    p_list = raw["p"] if isinstance(raw["p"], list) else [raw["p"]]
    for p in p_list:
        _positive("p", p)
    for key in ("phi",):
        for decl in raw.get(key, []):
            parse_phi(decl, grid)
    if "spec" in raw and raw["spec"] is not None:
        build_spec(raw["spec"]["name"], **raw["spec"].get("params", {}))
    if "functional" in raw:
        parse_functional(raw["functional"])
    try:
        tol = Tolerances(**raw["tolerances"])
        picard = PicardConfig(**raw["picard"])
        reg = RegressionConfig(**raw["regression"])
    except TypeError as exc:
        raise ConfigurationError(f"bad solver or tolerance settings: {exc}") from None
    return ExperimentConfig(kind, raw, grid, int(raw["seed"]), int(raw["stream_id"]),
                            int(raw["paths"]), int(raw["dim"]), [float(p) for p in p_list], tol,
                            picard, reg, int(raw.get("workers", 1)),
                            bool(raw.get("deterministic", False)), raw.get("out"))


def load_config(path: str | os.PathLike, overrides: dict | None = None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(doc, overrides)


def parse_phi(decl: dict, grid: TimeGrid) -> CouplingFunction:
    kind = decl.get("kind")
    if kind == "constant":
        return CouplingFunction.constant(float(decl["r"]))
    if kind == "indicator":
        phi = CouplingFunction.indicator(float(decl["a"]), float(decl["c"]))
        phi.cell_values(grid)
        return phi
    if kind == "tabulated":
        return CouplingFunction.tabulated(decl["values"], grid)
    raise ConfigurationError(f"unknown phi kind {kind!r}")


def parse_functional(decl: dict):
    name = decl.get("name")
    if name not in VARIABLES:
        raise ConfigurationError(f"unknown functional {name!r}; choose from {sorted(VARIABLES)}")
    return VARIABLES[name](**decl.get("params", {}))


def parse_fracpot(decl: dict) -> FractionalPotentialSpec:
    drivers = {"W": brownian_driver, "deterministic": deterministic_driver}
    terms = []
    for t in decl.get("terms", []):
        if t.get("driver") not in drivers:
            raise ConfigurationError(f"unknown driver {t.get('driver')!r}; choose from {sorted(drivers)}")
        rate = t.get("rate", {})
        terms.append(PotentialTerm(t["coefficient"], drivers[t["driver"]](), float(t["beta"]),
                                   RateFunction(rate.get("kind", "bounded"), rate.get("bound"),
                                                bool(rate.get("z_dependent", False)))))
    if not terms:
        raise ConfigurationError("a fractional-potential check needs at least one term")
    fp = FractionalPotentialSpec(str(decl.get("case", "II")), float(decl.get("p", 2)), terms)
    fp.validate()
    return fp


def package_version() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# --- runners ----------------------------------------------------------------

@dataclass
class RunResult:
    rows: list[dict]
    report: dict
    violation: bool = False


def _bundle(cfg: ExperimentConfig) -> PathBundle:
    workers = 1 if cfg.deterministic else cfg.workers
    return sample_paths(cfg.grid, cfg.dim, cfg.n_paths, cfg.seed, cfg.stream_id, workers=workers)


def _spec(cfg: ExperimentConfig):
    s = cfg.raw["spec"]
    return build_spec(s["name"], **s.get("params", {}))


def _phis(cfg: ExperimentConfig, default: list[dict]) -> list[CouplingFunction]:
    return [parse_phi(d, cfg.grid) for d in cfg.raw.get("phi", default)]


def run_paths(cfg: ExperimentConfig) -> RunResult:
    bundle = _bundle(cfg)
    w = bundle.path().values[:, -1, 0]
    inc = bundle.increments_w
    rows = []
    for phi in _phis(cfg, [{"kind": "constant", "r": r} for r in (0.0, 0.25, 0.5, 0.9, 1.0)]):
        wp = bundle.coupled_path(phi).values[:, -1, 0]
        var = mc_estimate((wp - wp.mean()) ** 2)
        cov = mc_estimate((w - w.mean()) * (wp - wp.mean()))
        corr = float(np.corrcoef(w, wp)[0, 1]) if np.std(wp) > 0 else math.nan
        rows.append({"phi": phi.label(), "var_w": float(np.var(w, ddof=1)), "var_wphi": var.mean,
                     "var_wphi_se": var.se, "cov": cov.mean, "cov_se": cov.se, "corr": corr})
    report = {"increment_mean": float(inc.mean()), "increment_var": float(inc.var()),
              "step": cfg.grid.step, "rows": rows}
    return RunResult(rows, report)


def run_solve(cfg: ExperimentConfig) -> RunResult:
    spec = _spec(cfg)
    bundle = _bundle(cfg)
    verdict = check_solvability(spec, 2)
    n_parts = int(cfg.raw.get("partition", 1))
    if n_parts > 1:
        part = Partition.uniform(cfg.grid, n_parts)
        fcfg = FieldConfig(picard=cfg.picard, regression=cfg.regression)
        long = solve_long_horizon(spec, part, bundle, cfg=fcfg)
        sol = long.solution
        residuals = long.residuals
    else:
        sol = solve_small_interval(spec, cfg.grid, bundle, cfg.picard, cfg.regression)
        residuals = []
    rows = []
    for p in cfg.p_list:
        ap = apriori_check(spec, sol, p)
        rows.append({"p": p, "theta_norm": theta_norm(sol, p), "potential": ap.potential,
                     "apriori_ratio": ap.ratio, "flagged": ap.flagged})
    report = {"solvability": verdict.to_dict(), "iterations": sol.iterations,
              "picard_residuals": sol.residuals, "Y0": float(sol.Y[:, 0].mean()),
              "decoupling_residuals": residuals, "rows": rows}
    if spec.name == "martingale":
        W = bundle.path().values
        report["oracle_l2_error"] = solution_l2_error(sol, W + spec.params["x0"],
                                                      W + spec.params["x0"], 1.0)
    return RunResult(rows, report, violation=any(r["flagged"] for r in rows))


def run_cv(cfg: ExperimentConfig) -> RunResult:
    spec = _spec(cfg)
    bundle = _bundle(cfg)
    base = solve_small_interval(spec, cfg.grid, bundle, cfg.picard, cfg.regression)
    default = [{"kind": "indicator", "a": a, "c": a + 0.25 * cfg.grid.length}
               for a in cfg.grid.t_start + cfg.grid.length * np.array([0.0, 0.25, 0.5, 0.75])]
    default += [{"kind": "constant", "r": r} for r in (0.1, 0.2, 0.4)]
    phis = _phis(cfg, default)
    rows, reports, studies = [], [], {}
    for p in cfg.p_list:
        reps = [estimate_cv(spec, phi, p, bundle, picard=cfg.picard, regression=cfg.regression,
                            base=base) for phi in phis]
        reports += [r.to_dict() for r in reps]
        rows += [r.row() for r in reps]
        if len(reps) >= 3:
            studies[str(p)] = verify_bound(reps, cfg.tolerances.spread_factor).to_dict()
    violation = any(not s["pass"] for s in studies.values())
    return RunResult(rows, {"reports": reports, "bound_studies": studies}, violation)


def run_sandwich(cfg: ExperimentConfig) -> RunResult:
    F = parse_functional(cfg.raw.get("functional", {"name": "W_T"}))
    bundle = _bundle(cfg)
    windows = cfg.raw.get("windows", [[0.25, 0.75]])
    n_inner = int(cfg.raw.get("n_inner", 256))
    rows, reports = [], []
    for a, c in windows:
        for p in cfg.p_list:
            rep = sandwich_check(F, bundle, SigmaAlgebraWindow(float(a), float(c)), p, n_inner,
                                 cfg.tolerances.n_se)
            reports.append(rep.to_dict())
            rows.append({"functional": F.name, "a": a, "c": c, "p": p, "lhs": rep.lhs.mean,
                         "lhs_se": rep.lhs.se, "mid": rep.mid.mean, "mid_se": rep.mid.se,
                         "rhs": rep.rhs.mean, "rhs_se": rep.rhs.se, "pass": rep.passed})
    return RunResult(rows, {"reports": reports}, violation=not all(r["pass"] for r in rows))


def run_malliavin(cfg: ExperimentConfig) -> RunResult:
    bundle = _bundle(cfg)
    r_grid = cfg.raw.get("r_grid", list(DEFAULT_R_GRID))
    target = cfg.raw.get("target", {"functional": {"name": "W_T"}})
    if "functional" in target:
        rep = malliavin_ratio(parse_functional(target["functional"]), bundle, r_grid, cfg.tolerances)
    else:
        rep = malliavin_ratio_fbsde(_spec(cfg), bundle, float(target["time"]),
                                    target.get("component", "Y"), r_grid, cfg.tolerances,
                                    cfg.picard, cfg.regression)
    rows = [dict(name=rep.name, **row, verdict=rep.label()) for row in rep.curve.to_rows()]
    expect = cfg.raw.get("expect")
    return RunResult(rows, rep.to_dict(), violation=expect is not None and expect != rep.label())


def run_regularity(cfg: ExperimentConfig) -> RunResult:
    spec = _spec(cfg)
    bundle = _bundle(cfg)
    T, L = cfg.grid.t_end, cfg.grid.length
    # Default: windows ending at T of length L / 2^j, as far as the grid resolves them.
    depth = min(4, (cfg.grid.n_steps & -cfg.grid.n_steps).bit_length() - 1)
    pairs = cfg.raw.get("pairs", [[T - L / 2 ** j, T] for j in range(0, depth + 1)])
    rows, reports = [], []
    for p in cfg.p_list:
        rep = run_path_regularity(spec, bundle, [tuple(x) for x in pairs], p, cfg.tolerances,
                                  cfg.picard, cfg.regression)
        reports.append(rep.to_dict())
        rows += [dict(p=p, **row) for row in rep.rows]
    return RunResult(rows, {"reports": reports},
                     violation=not all(r["z_within_cv"] for r in reports))


def run_fracpot(cfg: ExperimentConfig) -> RunResult:
    bundle = _bundle(cfg)
    fp = parse_fracpot(cfg.raw.get("fracpot", DEFAULT_FRACPOT))
    r_grid = cfg.raw.get("r_grid", list(DEFAULT_R_GRID))
    rep = run_fracpot_check(fp, bundle, r_grid, int(cfg.raw.get("time_stride", 1)), cfg.tolerances)
    rows = []
    for key, curve in rep.curves.items():
        rows += [dict(term=key, **row, verdict=rep.verdicts[key]) for row in curve.to_rows()]
    expect = cfg.raw.get("expect")
    return RunResult(rows, rep.to_dict(), violation=expect is not None and expect != rep.verdict)


DEFAULT_FRACPOT = {"case": "II", "p": 2, "terms": [
    {"coefficient": "b", "driver": "W", "beta": 1.0, "rate": {"kind": "bounded", "bound": 1.0}}]}


RUNNERS = {
    "paths": run_paths,
    "solve": run_solve,
    "cv": run_cv,
    "sandwich": run_sandwich,
    "malliavin": run_malliavin,
    "regularity": run_regularity,
    "fracpot": run_fracpot,
}


# --- persistence --------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    cols: list[str] = []
    for row in rows:
        for k in row:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in cols])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _clean(o):
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def run_experiment(cfg: ExperimentConfig, out_dir: str | os.PathLike | None = None) -> tuple[int, RunResult]:
    """Dispatch on ``cfg.kind`` and write ``results.csv``, ``report.json`` and ``manifest.json``."""
    out = Path(out_dir or cfg.out or f"results/{cfg.kind}")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigurationError(f"output directory {out} is not writable")
    t0 = time.perf_counter()
    result = RUNNERS[cfg.kind](cfg)
    wall = time.perf_counter() - t0
    code = EXIT_VIOLATION if result.violation else EXIT_OK
    (out / "results.csv").write_text(rows_to_csv(result.rows))
    report = {"kind": cfg.kind, "csv_schema": CSV_SCHEMA, "exit_code": code,
              "tolerances": cfg.raw["tolerances"], "result": result.report}
    (out / "report.json").write_text(json.dumps(_clean(report), indent=2, sort_keys=True,
                                                default=_json_default) + "\n")
    manifest = {"kind": cfg.kind, "seed": cfg.seed, "stream_id": cfg.stream_id,
                "config_sha256": cfg.config_hash, "version": package_version(),
                "deterministic": cfg.deterministic, "paths": cfg.n_paths,
                "n_steps": cfg.grid.n_steps, "wall_time_s": wall, "config": cfg.raw}
    (out / "manifest.json").write_text(json.dumps(_clean(manifest), indent=2, sort_keys=True,
                                                  default=_json_default) + "\n")
    return code, result
