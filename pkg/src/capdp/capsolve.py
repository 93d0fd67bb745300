"""Constrained convex minimization of double-phase energies on grids.

All problems share one engine: fixed nodes are eliminated, the remaining
values minimize

    sum over cells of  h**n * (w_p |grad u|**p + A |grad u|**q)

by preconditioned nonlinear conjugate gradients (Polak-Ribière+) with a
bracketing line search on the convex one-dimensional restriction.  For
exponents below 2 the norm is smoothed to ``sqrt(|v|**2 + delta**2) - delta``
and ``delta`` is decreased stagewise; reported energies are unsmoothed.

Level-t capacities are solved for the profile ``v = u / t`` in ``[0, 1]``:

    int phi(x, t|grad v|) / phi_-(t) = int (|grad v|**p + a t**(q-p) |grad v|**q) / (1 + a_- t**(q-p)),

which keeps every level on the same numerical scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy import integrate, special

from .field_ops import ScalarField, corner_average, energy
from .grid import DiscreteDomain, Role, _corner_slice, _corners, distance_to_set
from .integrand import DoublePhaseIntegrand


class InfeasibleConstraintsError(ValueError):
    """Raised when one node is prescribed two different values."""


class InvalidCondenserError(ValueError):
    """Raised for radial condensers with ``r >= R``."""


class SolveStatus(str, Enum):
    CONVERGED = "CONVERGED"
    NOT_CONVERGED = "NOT_CONVERGED"


@dataclass(frozen=True)
class TSearch:
    t_min: float = 2.0 ** -20
    t_max: float = 2.0 ** 20
    refine_tol: float = 1e-4

    def __post_init__(self):
        if not 0 < self.t_min < self.t_max:
            raise ValueError("t-search needs 0 < t_min < t_max")


@dataclass(frozen=True)
class SolveSpec:
    """Solver settings.

    Attributes:
        tol: relative energy decrease regarded as stagnation.
        max_iter: iteration budget across all smoothing stages.
        deltas: smoothing schedule used when an exponent is below 2.
        t_search: level grid and refinement tolerance for infimal capacities.
        window: consecutive stagnating iterations required to stop.
        record_history: keep the accepted energies (for monotonicity checks).
    """

    tol: float = 1e-10
    max_iter: int = 50_000
    deltas: tuple[float, ...] = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    t_search: TSearch = field(default_factory=TSearch)
    window: int = 10
    record_history: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass
class CapacityResult:
    """Outcome of a capacity or Dirichlet solve.

    ``value`` is the normalized capacity (or the energy for Dirichlet
    problems), ``energy`` the raw energy of ``minimizer``.
    """

    value: float
    level_t: float | None
    minimizer: ScalarField
    iterations: int
    final_relative_decrease: float
    delta_used: float
    status: SolveStatus
    energy: float
    flags: tuple[str, ...] = ()
    curve: list[tuple[float, float]] = field(default_factory=list)
    history: list[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == SolveStatus.CONVERGED


# ---------------------------------------------------------------------------
# energy model on compressed cell arrays

class _Model:
    """Energy, gradient and line restrictions over a fixed set of cells."""

    def __init__(self, dom: DiscreteDomain, p: float, q: float, cell_coef: np.ndarray,
                 p_weight: float = 1.0, region: np.ndarray | None = None):
        self.dom = dom
        self.p, self.q = float(p), float(q)
        cells = dom.active_cells() if region is None else (region & dom.active_cells())
        flat_cells = np.flatnonzero(cells)
        cell_idx = np.unravel_index(flat_cells, dom.cell_shape)
        strides = np.array([int(np.prod(dom.shape[k + 1:])) for k in range(dom.dim)])
        self.lo = np.ravel_multi_index(cell_idx, dom.shape)
        self.hi = [self.lo + strides[k] for k in range(dom.dim)]
        self.size = int(np.prod(dom.shape))
        self.h = dom.spacing
        vol = dom.cell_volume
        coef = np.broadcast_to(np.asarray(cell_coef, float), dom.cell_shape)[cells]
        self.wp = np.full(len(self.lo), vol * p_weight)
        self.wq = vol * coef
        self.has_q = bool(np.any(self.wq > 0)) and self.q != self.p
        if self.q == self.p:
            self.wp = self.wp + self.wq
            self.wq = np.zeros_like(self.wq)

    def diffs(self, x: np.ndarray) -> list[np.ndarray]:
        base = x[self.lo]
        return [(x[hk] - base) / self.h for hk in self.hi]

    def density(self, sq: np.ndarray, delta: float, need_coef: bool):
        s = np.sqrt(sq + delta * delta) if delta else np.sqrt(sq)
        g = s - delta if delta else s
        p, q = self.p, self.q
        if p == 2.0:
            gp = g * g
        else:
            gp = g ** p
        val = self.wp * gp
        if self.has_q:
            gq = g ** q
            val = val + self.wq * gq
        if not need_coef:
            return float(val.sum()), None
        with np.errstate(divide="ignore", invalid="ignore"):
            if delta == 0 and p == 2.0:
                coef = 2.0 * self.wp
                if self.has_q:
                    coef = coef + np.where(s > 0, q * self.wq * gq / (g * s), 0.0)
            else:
                num = p * self.wp * gp / np.where(g > 0, g, 1.0)
                if self.has_q:
                    num = num + q * self.wq * gq / np.where(g > 0, g, 1.0)
                coef = np.where(s > 0, num / np.where(s > 0, s, 1.0), 0.0)
                coef = np.where(g > 0, coef, 0.0) if p > 2 or delta == 0 else coef
        return float(val.sum()), coef

    def value(self, x: np.ndarray, delta: float = 0.0) -> float:
        d = self.diffs(x)
        return self.density(sum(v * v for v in d), delta, False)[0]

    def value_grad(self, x: np.ndarray, delta: float = 0.0):
        d = self.diffs(x)
        val, coef = self.density(sum(v * v for v in d), delta, True)
        grad = np.zeros(self.size)
        for k, v in enumerate(d):
            w = coef * v / self.h
            grad += np.bincount(self.hi[k], w, minlength=self.size)
            grad -= np.bincount(self.lo, w, minlength=self.size)
        return val, grad

    def laplace_diagonal(self) -> np.ndarray:
        vol = self.dom.cell_volume
        w = np.full(len(self.lo), 2.0 * vol / self.h ** 2)
        diag = np.zeros(self.size)
        for hk in self.hi:
            diag += np.bincount(hk, w, minlength=self.size)
            diag += np.bincount(self.lo, w, minlength=self.size)
        return diag


def _line_search(model: _Model, v0, w, e0: float, slope0: float, a0: float, delta: float):
    """Approximately minimize the convex restriction ``a -> E(x + a d)``.

    Returns ``(a, E)`` with ``E < e0``, or ``(0, e0)`` when no decrease was found.
    """
    def phi(a):
        sq = sum((x + a * y) ** 2 for x, y in zip(v0, w))
        val, coef = model.density(sq, delta, True)
        dval = float(sum(((x + a * y) * y * coef).sum() for x, y in zip(v0, w)))
        return val, dval

    c1 = 1e-4
    best_a, best_f = 0.0, e0
    lo, g_lo = 0.0, slope0
    hi, g_hi = None, None
    a = a0
    for _ in range(40):
        f, g = phi(a)
        if f < best_f:
            best_a, best_f = a, f
        if g < 0 and f <= e0 + c1 * a * slope0:
            lo, g_lo = a, g
            if hi is None:
                a *= 4.0
                continue
        else:
            hi, g_hi = a, g
        if hi is not None and best_a > 0 and abs(g) <= 0.1 * abs(slope0) and f <= e0 + c1 * a * slope0:
            break
        if hi is None:
            continue
        # regula falsi on the increasing derivative, kept inside the bracket
        if g_hi is not None and g_hi > g_lo:
            cand = lo - g_lo * (hi - lo) / (g_hi - g_lo)
        else:
            cand = 0.5 * (lo + hi)
        span = hi - lo
        a = min(max(cand, lo + 0.05 * span), hi - 0.05 * span)
        if span <= 1e-14 * max(hi, 1e-300):
            break
    return best_a, best_f


def _ncg(model: _Model, x: np.ndarray, free: np.ndarray, spec: SolveSpec, delta: float,
         budget: int, history: list | None):
    """Run nonlinear CG at one smoothing level.  Returns (x, iters, rel, converged)."""
    diag = model.laplace_diagonal()
    diag = np.where(free & (diag > 0), diag, 1.0)
    e, g = model.value_grad(x, delta)
    g[~free] = 0.0
    s = g / diag
    d = -s
    gs = float(g @ s)
    a_guess = 1.0
    streak = 0
    rel = math.inf
    it = 0
    restarted = False
    while it < budget:
        if gs <= 0.0 or not np.isfinite(gs):
            return x, it, 0.0, True
        slope = float(g @ d)
        if slope >= 0:
            d = -s
            slope = -gs
        w = model.diffs(d)
        v0 = model.diffs(x)
        a, _ = _line_search(model, v0, w, e, slope, a_guess, delta)
        it += 1
        if a == 0.0:
            if restarted:
                return x, it, 0.0, True
            restarted = True
            d = -s
            a_guess = 1.0
            continue
        x_new = x + a * d
        e_new, g_new = model.value_grad(x_new, delta)
        if not e_new <= e:
            if restarted:
                return x, it, 0.0, True
            restarted = True
            d = -s
            continue
        restarted = False
        g_new[~free] = 0.0
        rel = (e - e_new) / max(abs(e), 1e-300)
        x, e = x_new, e_new
        if history is not None:
            history.append(e)
        streak = streak + 1 if rel < spec.tol else 0
        if streak >= spec.window:
            return x, it, rel, True
        s_new = g_new / diag
        gs_new = float(g_new @ s_new)
        beta = max(0.0, float(g_new @ (s_new - s)) / gs)
        d = -s_new + beta * d
        new_slope = float(g_new @ d)
        if new_slope >= 0:
            d = -s_new
            new_slope = -gs_new
        a_guess = min(max(a * slope / new_slope, 1e-8), 1e8) if new_slope < 0 else 1.0
        g, s, gs = g_new, s_new, gs_new
    return x, it, rel, False


def _needs_smoothing(p: float, q: float, model: _Model) -> bool:
    return p < 2 or (model.has_q and q < 2)


def _minimize(model: _Model, x0: np.ndarray, free: np.ndarray, spec: SolveSpec,
              delta_scale: float = 1.0):
    x = x0.astype(float).copy()
    history = [] if spec.record_history else None
    if not free.any():
        return x, dict(iterations=0, rel=0.0, delta=0.0, converged=True, history=history or [])
    if _needs_smoothing(model.p, model.q, model):
        deltas = [d * delta_scale for d in spec.deltas]
    else:
        deltas = [0.0]
    total = 0
    rel = math.inf
    converged = False
    for delta in deltas:
        x, it, rel, converged = _ncg(model, x, free, spec, delta, spec.max_iter - total, history)
        total += it
        if total >= spec.max_iter:
            converged = converged and delta == deltas[-1]
            break
    return x, dict(iterations=total, rel=rel, delta=deltas[-1], converged=converged,
                   history=history or [])


# ---------------------------------------------------------------------------
# constraints

def _collect_fixed(dom: DiscreteDomain, fixed) -> tuple[np.ndarray, np.ndarray]:
    """Normalize a fixed-value description to ``(mask, values)`` arrays.

    Accepts a mapping ``node index -> value``, a pair ``(mask, values)`` or a
    list of such pieces.  Conflicting prescriptions raise
    :class:`InfeasibleConstraintsError`.
    """
    mask = np.zeros(dom.shape, dtype=bool)
    vals = np.zeros(dom.shape)
    pieces = fixed if isinstance(fixed, list) else [fixed]
    for piece in pieces:
        if isinstance(piece, Mapping):
            pm = np.zeros(dom.shape, dtype=bool)
            pv = np.zeros(dom.shape)
            for idx, v in piece.items():
                pm[tuple(idx)] = True
                pv[tuple(idx)] = v
        else:
            pm, pv = piece
            pm = np.asarray(pm, bool)
            pv = np.broadcast_to(np.asarray(pv, float), dom.shape)
        clash = mask & pm & (vals != pv)
        if clash.any():
            where = tuple(int(i) for i in np.argwhere(clash)[0])
            raise InfeasibleConstraintsError(f"node {where} is prescribed two different values")
        vals = np.where(pm, pv, vals)
        mask |= pm
    needed = dom.mask(Role.DIRICHLET, Role.OBSTACLE)
    if np.any(needed & ~mask):
        raise ValueError("every DIRICHLET and OBSTACLE node needs a prescribed value")
    return mask, vals


def _harmonic_guess(dom: DiscreteDomain, high: np.ndarray, low: np.ndarray) -> np.ndarray:
    """``d_low / (d_low + d_high)``: 1 on ``high``, 0 on ``low``."""
    d_high = distance_to_set(dom, high)
    d_low = distance_to_set(dom, low)
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.where(np.isinf(d_high), 0.0, d_low / (d_low + d_high))
    return np.nan_to_num(v, nan=0.0, posinf=0.0)


def solve_constrained_min(dom: DiscreteDomain, itg: DoublePhaseIntegrand, fixed,
                          spec: SolveSpec | None = None, init: np.ndarray | None = None
                          ) -> CapacityResult:
    """Minimize ``int phi(x, |grad u|)`` with prescribed node values.

    ``fixed`` must prescribe every DIRICHLET and OBSTACLE node (see
    :func:`_collect_fixed` for the accepted forms).  EXTERIOR nodes never enter.
    """
    spec = spec or SolveSpec()
    mask, vals = _collect_fixed(dom, fixed)
    free = (~mask) & (dom.roles == Role.INTERIOR)
    model = _Model(dom, itg.p, itg.q, itg.cell_coefficient())
    if init is None:
        scale = float(np.abs(vals[mask]).max()) if mask.any() else 0.0
        x0 = np.where(free, 0.0, vals)
        if scale > 0:
            hi_nodes = mask & (vals == scale)
            lo_nodes = mask & ~hi_nodes
            x0 = np.where(free, scale * _harmonic_guess(dom, hi_nodes, lo_nodes), vals)
    else:
        x0 = np.where(mask, vals, np.asarray(init, float))
    x0 = np.where(dom.roles == Role.EXTERIOR, 0.0, x0)
    scale = max(float(np.abs(vals).max()) if mask.any() else 1.0, 1e-300)
    x, info = _minimize(model, x0.ravel(), free.ravel(), spec, delta_scale=scale)
    u = ScalarField(dom, x.reshape(dom.shape))
    e = energy(u, itg).total
    status = SolveStatus.CONVERGED if info["converged"] else SolveStatus.NOT_CONVERGED
    flags = () if info["converged"] else ("NOT_CONVERGED",)
    return CapacityResult(e, None, u, info["iterations"], info["rel"], info["delta"], status, e,
                          flags, history=info["history"])


# ---------------------------------------------------------------------------
# capacities

def open_set_measure(dom: DiscreteDomain) -> float:
    """``|O|``: total volume of the cells with a corner in ``O``."""
    return float(dom.open_cells().sum()) * dom.cell_volume


def coefficient_floor(dom: DiscreteDomain, itg: DoublePhaseIntegrand) -> float:
    """``a_O^-``: minimum of ``a`` over the corners of the cells meeting ``O``.

    Every cell coefficient in the energy is an average of such corners, so it
    is never below this value.
    """
    return itg.a_bounds(dom.closure_nodes())[0]


def _profile_solve(dom: DiscreteDomain, p: float, q: float, cell_coef: np.ndarray,
                   spec: SolveSpec, init: np.ndarray | None, p_weight: float = 1.0):
    """Minimize the normalized energy of a profile equal to 1 on E and 0 off O."""
    if not dom.obstacle.any():
        raise ValueError("condenser has no obstacle node")
    free = dom.roles == Role.INTERIOR
    if init is None:
        x0 = _harmonic_guess(dom, dom.obstacle, dom.mask(Role.DIRICHLET, Role.EXTERIOR))
    else:
        x0 = np.clip(np.asarray(init, float), 0.0, 1.0)
    x0 = np.where(dom.obstacle, 1.0, np.where(free, x0, 0.0))
    model = _Model(dom, p, q, cell_coef, p_weight)
    x, info = _minimize(model, x0.ravel(), free.ravel(), spec)
    v = np.clip(x, 0.0, 1.0)
    e = model.value(v)
    return v.reshape(dom.shape), e, info


def _result(dom, v, t, e_raw, norm, info, flags=()):
    status = SolveStatus.CONVERGED if info["converged"] else SolveStatus.NOT_CONVERGED
    if not info["converged"]:
        flags = tuple(flags) + ("NOT_CONVERGED",)
    u = ScalarField(dom, v if t is None or not math.isfinite(t) or t == 0 else t * v)
    return CapacityResult(e_raw / norm, t, u, info["iterations"], info["rel"], info["delta"],
                          status, e_raw, tuple(flags), history=info["history"])


def p_capacity(dom: DiscreteDomain, p: float, spec: SolveSpec | None = None,
               init: np.ndarray | None = None) -> CapacityResult:
    """``cp_p(E; O)`` with ``E`` the OBSTACLE nodes and ``O = INTERIOR | OBSTACLE``."""
    spec = spec or SolveSpec()
    v, e, info = _profile_solve(dom, p, p, 0.0, spec, init)
    return _result(dom, v, 1.0, e, 1.0, info)


def level_t_capacity(dom: DiscreteDomain, itg: DoublePhaseIntegrand, t: float,
                     spec: SolveSpec | None = None, init: np.ndarray | None = None
                     ) -> CapacityResult:
    """``cp^t(E; O)``: minimal ``int phi(x,|grad u|) / phi_O^-(t)`` with ``u = t`` on ``E``.

    ``init`` is an optional starting profile (values in ``[0, 1]``).
    """
    if not t > 0:
        raise ValueError("level t must be positive")
    spec = spec or SolveSpec()
    s = t ** (itg.q - itg.p)
    a_min = coefficient_floor(dom, itg)
    v, e, info = _profile_solve(dom, itg.p, itg.q, itg.cell_coefficient() * s, spec, init)
    # e is int |grad v|^p + a s |grad v|^q; the raw energy of u = t v is t^p e
    norm = 1.0 + a_min * s
    res = _result(dom, v, t, e, norm, info)
    res.energy = t ** itg.p * e
    return res


def _limit_large_t(dom, itg, spec, init):
    """Limit of ``cp^t`` as ``t -> inf``: ``min int a |grad v|^q / a_-``."""
    a_min = coefficient_floor(dom, itg)
    if a_min <= 0:
        return None
    v, e, info = _profile_solve(dom, itg.q, itg.q, itg.cell_coefficient(), spec, init, p_weight=0.0)
    return _result(dom, v, math.inf, e, a_min, info, ("LIMIT_T_INF",))


def infimal_capacity(dom: DiscreteDomain, itg: DoublePhaseIntegrand,
                     spec: SolveSpec | None = None) -> CapacityResult:
    """``inf_t cp^t(E; O)``.

    Scans ``t = 2**k`` over the configured range with warm starts, refines by
    golden-section search in ``log t`` around the best grid level, and also
    evaluates the two limits ``t -> 0`` (the p-capacity) and ``t -> inf``,
    since the infimum over ``t > 0`` includes them.  ``BOUNDARY_MINIMUM`` is
    flagged when the best grid level is an endpoint.  The sampled curve is
    returned in ``curve``.
    """
    spec = spec or SolveSpec()
    ts = spec.t_search
    k0 = int(math.ceil(math.log2(ts.t_min) - 1e-12))
    k1 = int(math.floor(math.log2(ts.t_max) + 1e-12))
    results: dict[float, CapacityResult] = {}
    prof = None
    for k in range(k0, k1 + 1):
        t = 2.0 ** k
        r = level_t_capacity(dom, itg, t, spec, prof)
        results[float(k)] = r
        prof = r.minimizer.values / t
    best_k = min(results, key=lambda k: (results[k].value, k))
    flags = []
    if best_k in (float(k0), float(k1)):
        flags.append("BOUNDARY_MINIMUM")
    else:
        invphi = (math.sqrt(5) - 1) / 2
        a, b = best_k - 1.0, best_k + 1.0

        def evaluate(k):
            if k not in results:
                near = min(results, key=lambda j: abs(j - k))
                results[k] = level_t_capacity(dom, itg, 2.0 ** k, spec,
                                              results[near].minimizer.values / 2.0 ** near)
            return results[k].value

        c, d = b - invphi * (b - a), a + invphi * (b - a)
        fc, fd = evaluate(c), evaluate(d)
        prev = min(fc, fd)
        for _ in range(60):
            if fc <= fd:
                b, d, fd = d, c, fc
                c = b - invphi * (b - a)
                fc = evaluate(c)
            else:
                a, c, fc = c, d, fd
                d = a + invphi * (b - a)
                fd = evaluate(d)
            cur = min(fc, fd)
            if abs(prev - cur) <= ts.refine_tol * abs(cur) and b - a < 0.5:
                break
            prev = cur
        best_k = min(results, key=lambda k: (results[k].value, k))
    best = results[best_k]
    curve = sorted((2.0 ** k, r.value) for k, r in results.items())
    limits = []
    if np.any(itg.a > 0):
        low = level_t_capacity(dom, itg.without_coefficient(), 1.0, spec,
                               results[float(k0)].minimizer.values / 2.0 ** k0)
        low.level_t = 0.0
        low.flags = low.flags + ("LIMIT_T_ZERO",)
        limits.append(low)
        high = _limit_large_t(dom, itg, spec, results[float(k1)].minimizer.values / 2.0 ** k1)
        if high is not None:
            limits.append(high)
    for lim in limits:
        if lim.value < best.value:
            best = lim
            if "BOUNDARY_MINIMUM" not in flags:
                flags.append("BOUNDARY_MINIMUM")
    all_converged = all(r.converged for r in results.values()) and all(l.converged for l in limits)
    out = CapacityResult(best.value, best.level_t, best.minimizer, sum(r.iterations for r in results.values()),
                         best.final_relative_decrease, best.delta_used,
                         SolveStatus.CONVERGED if all_converged else SolveStatus.NOT_CONVERGED,
                         best.energy, tuple(flags) + tuple(f for f in best.flags if f not in flags),
                         curve)
    return out


def dirichlet_solve(dom: DiscreteDomain, itg: DoublePhaseIntegrand, f: ScalarField,
                    spec: SolveSpec | None = None, init: np.ndarray | None = None) -> CapacityResult:
    """Minimize ``int phi(x, |grad u|)`` with ``u = f`` on DIRICHLET and OBSTACLE nodes."""
    fixed_mask = dom.mask(Role.DIRICHLET, Role.OBSTACLE)
    if init is None:
        # nearest-boundary extension of the data
        from scipy import ndimage
        _, idx = ndimage.distance_transform_edt(~fixed_mask, return_indices=True)
        init = f.values[tuple(idx)]
    return solve_constrained_min(dom, itg, (fixed_mask, f.values), spec, init)


# ---------------------------------------------------------------------------
# radial oracles

def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in ``R^n``."""
    return 2.0 * math.pi ** (n / 2) / special.gamma(n / 2)


def radial_condenser_oracle(n: int, p: float, r: float, R: float) -> float:
    """Closed-form p-capacity of ``B(0,r)`` closed in ``B(0,R)``.

    The radial Euler-Lagrange equation gives ``|u'| = C rho**((1-n)/(p-1))``;
    with ``gamma = (p-n)/(p-1)`` the capacity is
    ``sphere_area(n) * |gamma|**(p-1) * |R**gamma - r**gamma|**(1-p)`` and
    ``sphere_area(n) * log(R/r)**(1-n)`` when ``p = n``.
    """
    if not 0 < r < R:
        raise InvalidCondenserError("need 0 < r < R")
    if not p > 1:
        raise ValueError("p must exceed 1")
    w = sphere_area(n)
    if p == n:
        return w * math.log(R / r) ** (1 - n)
    g = (p - n) / (p - 1)
    return w * abs(g) ** (p - 1) * abs(R ** g - r ** g) ** (1 - p)


def radial_quadrature_oracle(n: int, p: float, r: float, R: float) -> float:
    """Same capacity from the dual form ``w (int_r^R (w rho^(n-1))^(-1/(p-1)))^(1-p)``.

    Among radial profiles dropping from 1 to 0, Hölder's inequality gives
    ``min int weight |u'|^p = (int weight^(-1/(p-1)))^(1-p)``, evaluated here by
    adaptive quadrature.
    """
    if not 0 < r < R:
        raise InvalidCondenserError("need 0 < r < R")
    w = sphere_area(n)
    val, _ = integrate.quad(lambda s: (w * s ** (n - 1)) ** (-1.0 / (p - 1)), r, R,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return val ** (1 - p)


def radial_condenser_limit(n: int, p: float, r: float) -> float:
    """``R -> inf`` limit of the radial capacity for ``p < n``."""
    if not 1 < p < n:
        raise ValueError("finite limit needs 1 < p < n")
    return sphere_area(n) * ((n - p) / (p - 1)) ** (p - 1) * r ** (n - p)
