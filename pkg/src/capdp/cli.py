"""Command-line front end.

    capdp --config run.json [--jobs N] [--out DIR] [--seed K] [--verbose]

The run is described by one JSON document; flags override top-level keys.
Each run writes ``<command>.json`` and ``<command>.csv`` into the output
directory (``--out``, then the config's ``out_dir``, then ``$CAPDP_OUT``,
then the working directory).

Exit codes: 0 all checks passed, 1 some check failed, 2 a solve did not
converge or output could not be written, 3 invalid configuration (nothing
is written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import capsolve, experiments, grid, verify
from .field_ops import ScalarField, lipschitz_bump_family, load_field, log_wedge_family
from .integrand import DoublePhaseIntegrand, admissible_m_range, parse_coefficient

log = logging.getLogger("capdp")

COMMANDS = ("capacity", "fatness", "mazya", "hardy", "poincare", "pointwise-hardy", "counterexample",
            "whitney", "dirichlet", "higher-int", "self-improve", "optimality")

EXIT_OK, EXIT_FAIL, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"config error at '{key}': {msg}")
        self.key = key


# ---------------------------------------------------------------------------
# config parsing

def _get(d: dict, key: str, path: str, kind: Callable | None = None, default: Any = ...):
    if key not in d:
        if default is ...:
            raise ConfigError(f"{path}.{key}" if path else key, "missing")
        return default
    val = d[key]
    if kind is None:
        return val
    try:
        return kind(val)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.{key}" if path else key, f"bad value {val!r} ({exc})") from None


def _floats(v) -> list[float]:
    if not isinstance(v, (list, tuple)):
        raise ValueError("expected a list of numbers")
    return [float(x) for x in v]


def _section(cfg: dict, key: str) -> dict:
    sec = cfg.get(key, {})
    if not isinstance(sec, dict):
        raise ConfigError(key, "expected an object")
    return sec


def _existing(path: str, key: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(key, f"file {path!r} does not exist")
    return p


def parse_domain(sec: dict) -> Callable[[], grid.DiscreteDomain]:
    """Validate a domain section and return a builder."""
    if "mask" in sec:
        path = _existing(str(sec["mask"]), "domain.mask")
        return lambda: grid.load_mask(path)
    kind = _get(sec, "shape", "domain", str)
    res = _get(sec, "resolution", "domain", int)
    if res < 8:
        raise ConfigError("domain.resolution", "must be at least 8")
    c = _get(sec, "center", "domain", _floats, [0.0, 0.0])
    try:
        if kind == "ball":
            shape = grid.ball(c, _get(sec, "radius", "domain", float))
        elif kind == "annulus":
            shape = grid.annulus(c, _get(sec, "r_in", "domain", float), _get(sec, "r_out", "domain", float))
        elif kind == "box":
            shape = grid.box(_get(sec, "lo", "domain", _floats), _get(sec, "hi", "domain", _floats))
        elif kind == "halfspace":
            shape = grid.complement_halfspace(_get(sec, "dim", "domain", int, 2),
                                              _get(sec, "extent", "domain", float, 1.0))
        elif kind == "ball_minus_point_cluster":
            pts = [_floats(p) for p in _get(sec, "points", "domain", list)]
            shape = grid.ball_minus_point_cluster(c, _get(sec, "radius", "domain", float), pts)
        elif kind == "ball_minus_segment":
            shape = grid.ball_minus_segment(c, _get(sec, "radius", "domain", float),
                                            _get(sec, "start", "domain", _floats),
                                            _get(sec, "end", "domain", _floats))
        else:
            raise ConfigError("domain.shape", f"unknown shape {kind!r}")
    except grid.InvalidShapeError as exc:
        raise ConfigError("domain", str(exc)) from None
    return lambda: grid.make_shape(shape, res)


def parse_shape(sec: dict) -> grid.Shape:
    """Shape without a resolution (for multi-level commands)."""
    sec = dict(sec)
    sec.setdefault("resolution", 8)
    builder = parse_domain(sec)
    return builder().shape_spec


@dataclass
class IntegrandSpec:
    p: float
    q: float
    coefficient: Any
    alpha: float | None

    def on(self, dom: grid.DiscreteDomain) -> DoublePhaseIntegrand:
        return DoublePhaseIntegrand.on(dom, self.p, self.q, self.coefficient, self.alpha)


def parse_integrand(sec: dict) -> IntegrandSpec:
    p = _get(sec, "p", "integrand", float, 2.0)
    q = _get(sec, "q", "integrand", float, p)
    if not p > 1:
        raise ConfigError("integrand.p", "must exceed 1")
    if q < p:
        raise ConfigError("integrand.q", "must be at least p")
    coef = sec.get("coefficient", 0.0)
    if isinstance(coef, str):
        try:
            coef = parse_coefficient(coef)
        except ValueError as exc:
            raise ConfigError("integrand.coefficient", str(exc)) from None
    elif isinstance(coef, (int, float)):
        if coef < 0:
            raise ConfigError("integrand.coefficient", "must be nonnegative")
        coef = float(coef)
    else:
        raise ConfigError("integrand.coefficient", "expected a number or a recipe string")
    alpha = _get(sec, "alpha", "integrand", float, None)
    if alpha is not None and not 0 < alpha <= 1:
        raise ConfigError("integrand.alpha", "must lie in (0, 1]")
    return IntegrandSpec(p, q, coef, alpha)


def parse_solver(sec: dict) -> capsolve.SolveSpec:
    kw = {}
    for key, kind in (("tol", float), ("max_iter", int), ("window", int)):
        if key in sec:
            kw[key] = _get(sec, key, "solver", kind)
    if "deltas" in sec:
        kw["deltas"] = tuple(_get(sec, "deltas", "solver", _floats))
    if "t_search" in sec:
        ts = sec["t_search"]
        if not isinstance(ts, dict):
            raise ConfigError("solver.t_search", "expected an object")
        try:
            kw["t_search"] = capsolve.TSearch(
                _get(ts, "t_min", "solver.t_search", float, 2.0 ** -20),
                _get(ts, "t_max", "solver.t_search", float, 2.0 ** 20),
                _get(ts, "refine_tol", "solver.t_search", float, 1e-4))
        except ValueError as exc:
            raise ConfigError("solver.t_search", str(exc)) from None
    unknown = set(sec) - {"tol", "max_iter", "window", "deltas", "t_search"}
    if unknown:
        raise ConfigError("solver", f"unknown key(s) {sorted(unknown)}")
    try:
        return capsolve.SolveSpec(**kw)
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from None


def parse_obstacle(sec: dict, key: str = "params.set") -> verify.ObstacleSet:
    kind = _get(sec, "type", key, str)
    if kind == "ball_complement":
        return verify.BallComplement(tuple(_get(sec, "center", key, _floats, [0.0, 0.0])),
                                     _get(sec, "radius", key, float, 1.0))
    if kind == "ball":
        return verify.ClosedBall(tuple(_get(sec, "center", key, _floats, [0.0, 0.0])),
                                 _get(sec, "radius", key, float, 1.0))
    if kind == "halfspace":
        return verify.HalfspaceSet(tuple(_get(sec, "normal", key, _floats, [1.0, 0.0])),
                                   _get(sec, "offset", key, float, 0.0))
    if kind == "points":
        pts = _get(sec, "points", key, list)
        return verify.PointSet(tuple(tuple(_floats(p)) for p in pts))
    if kind == "mask":
        dom = grid.load_mask(_existing(str(_get(sec, "file", key, str)), f"{key}.file"))
        return verify.MaskSet(dom, dom.obstacle | (dom.roles == grid.Role.EXTERIOR))
    raise ConfigError(f"{key}.type", f"unknown set type {kind!r}")


def parse_data(spec, key: str) -> Callable[[np.ndarray], np.ndarray]:
    """Boundary data: ``"const:c"``, ``"affine:c0,v1,...,vn"``, ``"quadratic:c"`` (``c |x|^2``)."""
    if isinstance(spec, (int, float)):
        return lambda x: np.full(x.shape[:-1], float(spec))
    if not isinstance(spec, str) or ":" not in spec:
        raise ConfigError(key, f"expected a data recipe, got {spec!r}")
    kind, _, args = spec.partition(":")
    try:
        vals = [float(a) for a in args.split(",")]
    except ValueError:
        raise ConfigError(key, f"bad numbers in {spec!r}") from None
    if kind == "const" and len(vals) == 1:
        return lambda x: np.full(x.shape[:-1], vals[0])
    if kind == "affine" and len(vals) >= 2:
        return lambda x: vals[0] + x @ np.asarray(vals[1:1 + x.shape[-1]])
    if kind == "quadratic" and len(vals) == 1:
        return lambda x: vals[0] * (x ** 2).sum(axis=-1)
    raise ConfigError(key, f"unknown data recipe {spec!r}")


@dataclass
class RunConfig:
    command: str
    raw: dict
    out_dir: Path
    seed: int
    jobs: int
    solver: capsolve.SolveSpec
    thresholds: verify.Thresholds
    integrand: IntegrandSpec | None
    domain: Callable[[], grid.DiscreteDomain] | None
    params: dict = field(default_factory=dict)


def parse_config(raw: dict, overrides: dict | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    raw = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    command = _get(raw, "command", "", str)
    if command not in COMMANDS:
        raise ConfigError("command", f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    seed = _get(raw, "seed", "", int, 0)
    jobs = _get(raw, "jobs", "", int, 1)
    if jobs < 1:
        raise ConfigError("jobs", "must be at least 1")
    out = raw.get("out_dir") or os.environ.get("CAPDP_OUT") or "."
    solver = parse_solver(_section(raw, "solver"))
    try:
        thr = verify.Thresholds.from_dict(_section(raw, "thresholds"))
    except (TypeError, ValueError) as exc:
        raise ConfigError("thresholds", str(exc)) from None
    itg = parse_integrand(_section(raw, "integrand")) if "integrand" in raw else None
    dom = parse_domain(_section(raw, "domain")) if "domain" in raw else None
    params = _section(raw, "params")
    cfg = RunConfig(command, raw, Path(out), seed, jobs, solver, thr, itg, dom, params)
    _validate_command(cfg)
    return cfg


_NEEDS_DOMAIN = {"capacity", "hardy", "poincare", "pointwise-hardy", "whitney", "dirichlet", "mazya"}
_NEEDS_INTEGRAND = {"capacity", "fatness", "mazya", "hardy", "poincare", "pointwise-hardy", "dirichlet",
                    "higher-int", "self-improve"}


def _validate_command(cfg: RunConfig) -> None:
    """Checks that need no solving, so config errors surface before any output."""
    if cfg.command in _NEEDS_DOMAIN and cfg.domain is None:
        raise ConfigError("domain", f"command {cfg.command!r} needs a domain")
    if cfg.command in _NEEDS_INTEGRAND and cfg.integrand is None:
        raise ConfigError("integrand", f"command {cfg.command!r} needs an integrand")
    P = cfg.params
    if cfg.command == "capacity":
        kind = _get(P, "kind", "params", str, "p")
        if kind not in ("p", "level", "infimal"):
            raise ConfigError("params.kind", f"unknown capacity kind {kind!r}")
        if kind == "level" and not _get(P, "t", "params", float) > 0:
            raise ConfigError("params.t", "must be positive")
    if cfg.command in ("fatness", "self-improve"):
        if "set" not in P or not isinstance(P["set"], dict):
            raise ConfigError("params.set", "missing obstacle set description")
        parse_obstacle(P["set"])
        try:
            verify._check_radii(_get(P, "radii", "params", _floats))
        except ValueError as exc:
            raise ConfigError("params.radii", str(exc)) from None
        if cfg.command == "fatness":
            kind = _get(P, "kind", "params", str, "p")
            if kind not in ("p", "q", "infimal"):
                raise ConfigError("params.kind", f"unknown kind {kind!r}")
        else:
            _get(P, "epsilons", "params", _floats)
    if cfg.command == "mazya":
        m = _get(P, "m", "params", float, cfg.integrand.p)
        rng = admissible_m_range(2, cfg.integrand.p, cfg.integrand.q, cfg.integrand.alpha or 1.0)
        if m not in rng:
            raise ConfigError("params.m", f"m = {m} is not admissible ({rng.note})")
        _get(P, "radii", "params", _floats)
        _get(P, "center", "params", _floats)
        if "field" in P:
            _existing(str(P["field"]), "params.field")
    if cfg.command == "dirichlet" or cfg.command == "higher-int":
        parse_data(P.get("data", "const:0"), "params.data")
    if cfg.command == "higher-int":
        parse_shape(_get(P, "shape", "params", dict))
        res = _get(P, "resolutions", "params", _floats)
        if len(res) < 2:
            raise ConfigError("params.resolutions", "need at least two levels")
        _get(P, "sigma_grid", "params", _floats)
    if cfg.command == "counterexample":
        _get(P, "radii", "params", _floats, [0.25, 0.125, 0.0625, 0.03125])
    if cfg.command == "optimality":
        _get(P, "resolutions", "params", _floats)
    if cfg.command in ("hardy", "poincare", "pointwise-hardy"):
        if _get(P, "family_size", "params", int, 10) < 1:
            raise ConfigError("params.family_size", "must be positive")
        if "concentration" in P:
            conc = _get(P, "concentration", "params", dict)
            _get(conc, "point", "params.concentration", _floats)
            eps = _get(conc, "epsilons", "params.concentration", _floats)
            rho = _get(conc, "rho", "params.concentration", float, 0.25)
            if len(eps) < 2 or not all(0 < e < rho for e in eps):
                raise ConfigError("params.concentration.epsilons",
                                  "need at least two values in (0, rho)")


# ---------------------------------------------------------------------------
# outcomes and emission

@dataclass
class Outcome:
    """Uniform result of a command: tabular rows, a JSON summary and a status."""

    columns: list[str]
    rows: list[list]
    summary: dict
    passed: bool
    converged: bool = True


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def emit_plot_data(outcome: Outcome, path: str | Path) -> Path:
    """One CSV with a fixed column order; header only when there are no rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(outcome.columns)
    for row in outcome.rows:
        w.writerow([_fmt(v) for v in row])
    path = Path(path)
    path.write_bytes(buf.getvalue().encode("utf-8"))
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _ineq_outcome(reports: list[verify.InequalityReport], extra: dict | None = None,
                  passed: bool | None = None) -> Outcome:
    rows = [r.csv_row() for r in reports]
    ok = all(r.verdict in ("PASS", "SKIP") for r in reports) if passed is None else passed
    summary = {"reports": [r.to_dict() for r in reports]}
    summary.update(extra or {})
    return Outcome(verify.CSV_COLUMNS, rows, summary, ok,
                   all("NOT_CONVERGED" not in r.flags for r in reports))


# ---------------------------------------------------------------------------
# commands

def _cmd_capacity(cfg: RunConfig) -> Outcome:
    dom = cfg.domain()
    P = cfg.params
    kind = P.get("kind", "p")
    itg = cfg.integrand.on(dom)
    if kind == "p":
        res = capsolve.p_capacity(dom, itg.p, cfg.solver)
    elif kind == "level":
        res = capsolve.level_t_capacity(dom, itg, float(P["t"]), cfg.solver)
    else:
        res = capsolve.infimal_capacity(dom, itg, cfg.solver)
    passed = True
    summary = dict(kind=kind, value=res.value, level_t=res.level_t, iterations=res.iterations,
                   final_relative_decrease=res.final_relative_decrease, delta_used=res.delta_used,
                   status=res.status.value, flags=list(res.flags), curve=res.curve)
    if "expected" in P:
        rel = abs(res.value / float(P["expected"]) - 1)
        passed = rel <= float(P.get("rel_tol", 0.02))
        summary["relative_error"] = rel
    rows = [[kind, res.value, "" if res.level_t is None else res.level_t, res.iterations,
             res.status.value, "PASS" if passed else "FAIL"]]
    return Outcome(["kind", "value", "level_t", "iterations", "status", "verdict"], rows, summary,
                   passed, res.converged)


def _scan_kw(cfg: RunConfig) -> dict:
    P = cfg.params
    return dict(nodes_per_radius=int(P.get("nodes_per_radius", 16)), refine=float(P.get("refine", 0.0)),
                max_centers=int(P.get("max_centers", 64)), jobs=cfg.jobs)


def _scan_itg(cfg: RunConfig) -> DoublePhaseIntegrand:
    # the scans resample the coefficient recipe on each condenser lattice
    return cfg.integrand.on(grid.make_condenser((0.0, 0.0), 1.0, 4))


def _centers(P: dict):
    return None if "centers" not in P else [tuple(_floats(c)) for c in P["centers"]]


def _cmd_fatness(cfg: RunConfig) -> Outcome:
    P = cfg.params
    E = parse_obstacle(P["set"])
    rep = verify.fatness_scan(E, P.get("kind", "p"), _scan_itg(cfg), _centers(P), _floats(P["radii"]),
                              cfg.solver, **_scan_kw(cfg))
    passed = rep.min_ratio >= cfg.thresholds.fat_ratio
    summary = dict(kind=rep.kind, min_ratio=rep.min_ratio, centers=rep.centers, radii=rep.radii,
                   flagged=rep.flagged, threshold=cfg.thresholds.fat_ratio,
                   entries=[e.__dict__ for e in rep.entries])
    return Outcome(verify.FATNESS_COLUMNS, rep.csv_rows(), summary, passed, not rep.flagged)


def _load_or_build_field(cfg: RunConfig, dom: grid.DiscreteDomain) -> ScalarField:
    P = cfg.params
    if "field" in P:
        return load_field(P["field"], dom)
    x = dom.coords()
    c = np.asarray(P.get("cone_center", [0.0] * dom.dim), float)
    rad = float(P.get("cone_radius", 1.0))
    return ScalarField(dom, np.maximum(0.0, 1.0 - np.linalg.norm(x - c, axis=-1) / rad))


def _cmd_mazya(cfg: RunConfig) -> Outcome:
    dom = cfg.domain()
    P = cfg.params
    itg = cfg.integrand.on(dom)
    u = _load_or_build_field(cfg, dom)
    m = float(P.get("m", itg.p))
    reps = [verify.mazya_check(u, _floats(P["center"]), r, itg, m, spec=cfg.solver,
                               thresholds=cfg.thresholds, test_id=f"r={r:g}")
            for r in _floats(P["radii"])]
    consts = [r.implied_constant for r in reps if r.verdict == "PASS"]
    cv = verify.coefficient_of_variation(consts) if len(consts) > 1 else 0.0
    ok = all(r.verdict == "PASS" for r in reps) and cv <= cfg.thresholds.scale_cv
    return _ineq_outcome(reps, {"coefficient_of_variation": cv, "m": m}, ok)


def _family(cfg: RunConfig, dom):
    conc = cfg.params.get("concentration")
    if conc is not None:
        eps = _floats(conc["epsilons"])
        fam = log_wedge_family(dom, _floats(conc["point"]), float(conc.get("rho", 0.25)), eps)
        return fam, [f"eps={e!r}" for e in eps]
    n = int(cfg.params.get("family_size", 10))
    fam = lipschitz_bump_family(dom, n, cfg.seed)
    return fam, [f"bump{i}" for i in range(n)]


def _trend_outcome(cfg: RunConfig, reps: list[verify.InequalityReport], ids: list[str]) -> Outcome:
    """Bump family: all PASS and span within bounds.  Concentration: constants must grow."""
    span = verify.family_span(reps)
    if "concentration" in cfg.params:
        per = verify.per_test_max(reps)
        seq = [per[i] for i in ids]
        growth = seq[-1] / seq[0] if seq[0] > 0 else math.inf
        ok = growth >= cfg.thresholds.concentration_growth
        return _ineq_outcome(reps, {"family_span": span, "sequence": seq, "growth": growth}, ok)
    ok = all(r.verdict in ("PASS", "SKIP") for r in reps) and span <= cfg.thresholds.family_span
    return _ineq_outcome(reps, {"family_span": span}, ok)


def _cmd_hardy(cfg: RunConfig) -> Outcome:
    dom = cfg.domain()
    itg = cfg.integrand.on(dom)
    fam, ids = _family(cfg, dom)
    reps = verify.hardy_integral_check(dom, itg, fam, cfg.thresholds, ids)
    return _trend_outcome(cfg, reps, ids)


def _boundary_centers(dom: grid.DiscreteDomain, count: int) -> list[tuple[float, ...]]:
    """Non-interior nodes adjacent to the interior, farthest-point subsampled."""
    from .grid import _neighbourhood
    bnd = ~dom.interior & _neighbourhood(dom.interior) & (dom.roles != grid.Role.EXTERIOR)
    pts = dom.coords()[bnd]
    return [tuple(p) for p in verify.farthest_point_sample(pts, count)]


def _cmd_poincare(cfg: RunConfig) -> Outcome:
    dom = cfg.domain()
    P = cfg.params
    itg = cfg.integrand.on(dom)
    fam, ids = _family(cfg, dom)
    centers = _centers(P) or _boundary_centers(dom, int(P.get("max_centers", 8)))
    radii = _floats(P.get("radii", [0.25, 0.125, 0.0625]))
    reps = verify.boundary_poincare_check(dom, itg, fam, centers, radii, thresholds=cfg.thresholds, ids=ids)
    return _trend_outcome(cfg, reps, ids)


def _sample_interior(dom: grid.DiscreteDomain, count: int, seed: int) -> list[tuple[int, ...]]:
    idx = np.argwhere(dom.interior)
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(idx), size=min(count, len(idx)), replace=False)
    return [tuple(int(i) for i in idx[k]) for k in sorted(pick)]


def _cmd_pointwise(cfg: RunConfig) -> Outcome:
    dom = cfg.domain()
    itg = cfg.integrand.on(dom)
    fam, ids = _family(cfg, dom)
    nodes = _sample_interior(dom, int(cfg.params.get("samples", 32)), cfg.seed)
    nodes = sorted(set(nodes) | set(verify.peak_nodes(fam)))
    reps = verify.pointwise_hardy_check(dom, itg, fam, nodes, thresholds=cfg.thresholds, ids=ids)
    return _trend_outcome(cfg, reps, ids)


def _cmd_counterexample(cfg: RunConfig) -> Outcome:
    P = cfg.params
    rep = verify.counterexample_report(int(P.get("n", 2)), float(P.get("p", 2.0)), float(P.get("q", 3.0)),
                                       float(P.get("a_o", 1.0)),
                                       _floats(P.get("radii", [0.25, 0.125, 0.0625, 0.03125])),
                                       int(P.get("cells_per_radius", 128)))
    growth = rep.growth_q()
    ok = (all(row.sandwich_holds for row in rep.rows) and all(g >= 1.5 for g in growth)
          and rep.spread_p() <= 0.3)
    summary = dict(n=rep.n, p=rep.p, q=rep.q, a_o=rep.a_o, rows=[row.__dict__ for row in rep.rows],
                   growth_q=growth, spread_p=rep.spread_p())
    return Outcome(verify.COUNTEREXAMPLE_COLUMNS, rep.csv_rows(), summary, ok)


def _cmd_whitney(cfg: RunConfig) -> Outcome:
    dom = cfg.domain()
    dec = grid.whitney_decompose(dom)
    sandwich = dec.sandwich_holds()
    try:
        dec.labels(dom.shape)
        disjoint = True
    except grid.DecompositionError:
        disjoint = False
    overlap = dec.max_overlap(5)
    bound = 5 ** dom.dim * 2 ** dom.dim
    rows = []
    for g in sorted({c.generation for c in dec.cubes}):
        sel = [i for i, c in enumerate(dec.cubes) if c.generation == g]
        rows.append([g, len(sel), bool(np.all(sandwich[sel])), overlap.get(g, 0)])
    ok = bool(np.all(sandwich)) and disjoint and all(v <= bound for v in overlap.values())
    summary = dict(cubes=len(dec.cubes), covered=dec.covered, uncovered_nodes=int(dec.uncovered.sum()),
                   sandwich_fraction=float(np.mean(sandwich)) if len(sandwich) else 1.0,
                   disjoint=disjoint, overlap=overlap, overlap_bound=bound)
    return Outcome(["generation", "count", "sandwich", "max_overlap"], rows, summary, ok)


def _cmd_dirichlet(cfg: RunConfig) -> Outcome:
    dom = cfg.domain()
    itg = cfg.integrand.on(dom)
    f = parse_data(cfg.params.get("data", "const:0"), "params.data")
    res = capsolve.dirichlet_solve(dom, itg, ScalarField(dom, f(dom.coords())), cfg.solver)
    summary = dict(energy=res.energy, iterations=res.iterations, status=res.status.value,
                   final_relative_decrease=res.final_relative_decrease)
    if "dump_field" in cfg.params:
        from .field_ops import save_field
        save_field(res.minimizer, cfg.out_dir / str(cfg.params["dump_field"]))
    rows = [[res.energy, res.iterations, res.status.value]]
    return Outcome(["energy", "iterations", "status"], rows, summary, True, res.converged)


def _cmd_higher_int(cfg: RunConfig) -> Outcome:
    P = cfg.params
    shape = parse_shape(P["shape"])
    it = cfg.integrand
    rep = experiments.higher_integrability_report(
        shape, it.p, it.q, it.coefficient, parse_data(P.get("data", "const:0"), "params.data"),
        _floats(P["sigma_grid"]), [int(r) for r in _floats(P["resolutions"])], cfg.solver,
        float(P.get("sigma0", math.inf)), P.get("r_a"), float(P.get("r_hat0", 1.0)))
    rows = [[s, res, rep.energies[s][res]] for s in rep.sigma_grid for res in rep.resolutions]
    thm = rep.bound_rhs
    summary = dict(sigma_star=rep.sigma_star, base_stable=rep.base_stable, sigma0=rep.sigma0,
                   energies=rep.energies, power_means=rep.power_means, flags=list(rep.flags),
                   bound_rhs=dict(a_P=thm.a_P, a_P_infinite=thm.a_P_infinite, rho=thm.rho,
                                    P_node_count=thm.P_node_count, diam=thm.diam, r_a=thm.r_a,
                                    rhs=thm.rhs))
    ok = rep.sigma_star is not None and rep.sigma_star > 1
    return Outcome(["sigma", "resolution", "energy"], rows, summary, ok, not rep.flags)


def _cmd_self_improve(cfg: RunConfig) -> Outcome:
    P = cfg.params
    E = parse_obstacle(P["set"])
    rep = verify.self_improvement_scan(E, P.get("kind", "p"), _floats(P["epsilons"]), _scan_itg(cfg),
                                       _centers(P), _floats(P["radii"]), cfg.solver, **_scan_kw(cfg))
    rows = [[eps, rep.min_ratios.get(eps, math.nan)] for eps in rep.epsilons]
    base = rep.min_ratios.get(0.0, math.nan)
    ok = all(v >= cfg.thresholds.self_improvement_factor * base for v in rep.min_ratios.values())
    flagged = any(s.flagged for s in rep.scans.values())
    summary = dict(kind=rep.kind, min_ratios=rep.min_ratios, rejected=rep.rejected)
    return Outcome(["epsilon", "min_ratio"], rows, summary, ok, not flagged)


def _cmd_optimality(cfg: RunConfig) -> Outcome:
    P = cfg.params
    rep = experiments.optimality_demo(2, float(P.get("p", 2.0)), float(P.get("q", 2.2)),
                                      P.get("puncture", "point"),
                                      [int(r) for r in _floats(P["resolutions"])],
                                      _floats(P.get("deltas", [0.1, 0.2])), cfg.solver)
    rows = []
    for label, levels in (("punctured", rep.punctured), ("control", rep.control)):
        for lv in levels:
            for d in rep.deltas:
                rows.append([label, lv.resolution, d, lv.integrals[d], lv.max_gradient, lv.pointwise_bound])
    growth = {d: rep.growth(d) for d in rep.deltas}
    ctrl = {d: rep.control_growth(d) for d in rep.deltas}
    ok = all(g >= 1.3 for g in growth[max(rep.deltas)]) and all(
        abs(g - 1) <= 0.05 for gs in ctrl.values() for g in gs)
    summary = dict(growth=growth, control_growth=ctrl, pointwise_constant=rep.pointwise_constant,
                   puncture=rep.puncture)
    return Outcome(["case", "resolution", "delta", "integral", "max_gradient", "pointwise_bound"],
                   rows, summary, ok)


DISPATCH: dict[str, Callable[[RunConfig], Outcome]] = {
    "capacity": _cmd_capacity, "fatness": _cmd_fatness, "mazya": _cmd_mazya, "hardy": _cmd_hardy,
    "poincare": _cmd_poincare, "pointwise-hardy": _cmd_pointwise, "counterexample": _cmd_counterexample,
    "whitney": _cmd_whitney, "dirichlet": _cmd_dirichlet, "higher-int": _cmd_higher_int,
    "self-improve": _cmd_self_improve, "optimality": _cmd_optimality,
}


def run(cfg: RunConfig) -> int:
    """Execute a parsed config, write the reports and return the exit code."""
    try:
        outcome = DISPATCH[cfg.command](cfg)
    except (ValueError, grid.NoBoundaryError) as exc:
        log.error("%s failed: %s", cfg.command, exc)
        return EXIT_CONFIG
    try:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        emit_plot_data(outcome, cfg.out_dir / f"{cfg.command}.csv")
        doc = dict(command=cfg.command, seed=cfg.seed, passed=outcome.passed,
                   converged=outcome.converged, summary=outcome.summary)
        text = json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"
        (cfg.out_dir / f"{cfg.command}.json").write_bytes(text.encode("utf-8"))
    except OSError as exc:
        log.error("cannot write output: %s", exc)
        return EXIT_SOLVER
    if not outcome.converged:
        return EXIT_SOLVER
    return EXIT_OK if outcome.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="capdp", description=__doc__.split("\n\n")[0])
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--jobs", type=int, default=None, help="concurrent solves (default 1)")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="seed for sampled families")
    ap.add_argument("--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        try:
            raw = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError("--config", f"file {args.config!r} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON: {exc}") from None
        cfg = parse_config(raw, {"jobs": args.jobs, "out_dir": args.out, "seed": args.seed})
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    log.info("running %s", cfg.command)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
