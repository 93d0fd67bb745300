"""Verification harness: both sides of each inequality, implied constants, fatness scans.

Every check reduces to ``lhs <= C * rhs_raw`` and reports the implied
constant ``C = lhs / rhs_raw``.  Structural constants are never asserted;
verdicts compare implied constants with thresholds from :class:`Thresholds`,
and trend checks (spread across a family, variation across scales, growth
along a concentration sequence) are summarized by the helpers at the end.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.spatial import ConvexHull, QhullError

from . import capsolve
from .field_ops import (ScalarField, ball_cells, cell_values, corner_average,
                        energy, gradient_norm, restricted_maximal, zero_set)
from .grid import (DiscreteDomain, Role, _assign_collar, distance_to_boundary, make_condenser,
                   make_shape, ball as ball_shape)
from .integrand import (DoublePhaseIntegrand, admissible_m_range,
                        classify_phase, Phase, phi)


class SupportViolationError(ValueError):
    """A test function does not vanish where the boundary distance is zero."""


@dataclass(frozen=True)
class Thresholds:
    """Every configurable pass/fail threshold, with defaults.

    Attributes:
        constant_cap: an inequality report passes when its implied constant is
            at most this value.
        capacity_tol: relative slack for the capacity bound checks.
        fat_ratio: a fatness scan passes when ``min_ratio`` is at least this.
        family_span: allowed ``max/min`` of implied constants over a family.
        scale_cv: allowed coefficient of variation across scales.
        concentration_growth: required growth of implied constants along a
            concentration sequence (non-fat witness).
        self_improvement_factor: required ``min_ratio(eps) / min_ratio(0)``.
        phase_factor: allowed ratio between phase-specialized and generic
            right-hand sides.
    """

    constant_cap: float = 1e4
    capacity_tol: float = 0.02
    fat_ratio: float = 0.1
    family_span: float = 100.0
    scale_cv: float = 0.5
    concentration_growth: float = 2.0
    self_improvement_factor: float = 0.5
    phase_factor: float = 3.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ValueError(f"threshold {k} must be a positive number, got {v!r}")

    @classmethod
    def from_dict(cls, data: dict) -> Thresholds:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown threshold key(s): {', '.join(sorted(unknown))}")
        return cls(**{k: float(v) for k, v in data.items()})


# ---------------------------------------------------------------------------
# right-hand sides, kept as pure functions of stored scalars

def _rhs_hardy(diam, alpha, n, p, q, seminorm, grad_lp, energy):
    expo = alpha + n * (p - q) / p
    return (1.0 + diam ** expo * seminorm * grad_lp ** (q - p)) ** (p / (p - 1)) * energy


def _rhs_poincare(a_pm, grad_mean, p, q):
    """``(1 + a (r grad u)_{B,p}^(q-p)) * mean |r grad u|^p`` from ``(r grad u)_{B,p}``."""
    return (1.0 + a_pm * grad_mean ** (q - p)) * grad_mean ** p


def _rhs_mazya(a_pm, cap, m, p, q, grad_mean):
    return (1.0 + a_pm * cap ** ((p - q) / m) * grad_mean ** (q - p)) * cap ** (-p / m) * grad_mean ** p


def _rhs_pointwise(a_pm, maximal, p, q):
    return (1.0 + a_pm * maximal ** ((q - p) / p)) * maximal


def _rhs_identity(value):
    return value


def _rhs_reverse_holder(seminorm, grad_lp, p, q, theta_mean, theta):
    return (1.0 + seminorm * grad_lp ** (q - p)) * theta_mean ** (1.0 / theta)


def _rhs_caccioppoli(outer_mean):
    return outer_mean


RHS_FORMULAS: dict[str, Callable[..., float]] = {
    "hardy": _rhs_hardy,
    "poincare": _rhs_poincare,
    "mean_value_hardy": _rhs_poincare,
    "mazya": _rhs_mazya,
    "pointwise_hardy": _rhs_pointwise,
    "capacity_upper": _rhs_identity,
    "capacity_lower": _rhs_identity,
    "reverse_holder": _rhs_reverse_holder,
    "caccioppoli": _rhs_caccioppoli,
}


@dataclass
class InequalityReport:
    """Both sides of one instance of ``lhs <= C * rhs_raw``."""

    name: str
    lhs: float
    rhs_raw: float
    implied_constant: float
    verdict: str
    threshold: float
    z: tuple[float, ...] | None = None
    r: float | None = None
    t: float | None = None
    test_id: str = ""
    inputs: dict = field(default_factory=dict)
    flags: tuple[str, ...] = ()
    notes: str = ""

    def recompute_rhs(self) -> float:
        return float(RHS_FORMULAS[self.name](**self.inputs))

    def csv_row(self) -> list:
        z = "" if self.z is None else " ".join(repr(float(c)) for c in self.z)
        return [self.name, z, "" if self.r is None else repr(float(self.r)),
                "" if self.t is None else repr(float(self.t)), repr(float(self.lhs)),
                repr(float(self.rhs_raw)), repr(float(self.implied_constant)), self.verdict]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


CSV_COLUMNS = ["check", "z", "r", "t", "lhs", "rhs_raw", "constant", "verdict"]


def implied_constant(lhs: float, rhs: float) -> float:
    if rhs > 0:
        return lhs / rhs
    return 0.0 if lhs == 0 else math.inf


def make_report(name: str, lhs: float, inputs: dict, threshold: float, **meta) -> InequalityReport:
    """Evaluate the registered right-hand side and attach a verdict."""
    rhs = float(RHS_FORMULAS[name](**inputs))
    c = implied_constant(float(lhs), rhs)
    verdict = "PASS" if math.isfinite(c) and c <= threshold else "FAIL"
    return InequalityReport(name, float(lhs), rhs, c, verdict, float(threshold),
                            inputs=dict(inputs), **meta)


# ---------------------------------------------------------------------------
# obstacle sets for fatness scans

class ObstacleSet:
    """A closed set ``E`` that can be rasterized into any condenser lattice.

    Subclasses provide a vectorized membership predicate and/or a list of
    isolated points, plus boundary samples used as scan centers.
    """

    points: tuple[tuple[float, ...], ...] = ()

    def contains(self, x: np.ndarray) -> np.ndarray | None:
        return None

    def boundary_samples(self, count: int) -> list[tuple[float, ...]]:
        raise NotImplementedError

    def on_boundary(self, z: Sequence[float], tol: float = 1e-9) -> bool:
        raise NotImplementedError


@dataclass(frozen=True)
class BallComplement(ObstacleSet):
    """``R^n`` minus the open ball ``B(center, radius)``."""

    center: tuple[float, ...] = (0.0, 0.0)
    radius: float = 1.0

    def contains(self, x):
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) >= self.radius

    def boundary_samples(self, count):
        if len(self.center) != 2:
            raise ValueError("boundary sampling is implemented for n = 2")
        ang = 2 * np.pi * np.arange(count) / count
        c = np.asarray(self.center)
        return [tuple(c + self.radius * np.array([math.cos(a), math.sin(a)])) for a in ang]

    def on_boundary(self, z, tol=1e-9):
        return abs(float(np.linalg.norm(np.asarray(z) - np.asarray(self.center))) - self.radius) <= tol


@dataclass(frozen=True)
class ClosedBall(ObstacleSet):
    center: tuple[float, ...] = (0.0, 0.0)
    radius: float = 1.0

    def contains(self, x):
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) <= self.radius

    def boundary_samples(self, count):
        return BallComplement(self.center, self.radius).boundary_samples(count)

    def on_boundary(self, z, tol=1e-9):
        return BallComplement(self.center, self.radius).on_boundary(z, tol)


@dataclass(frozen=True)
class HalfspaceSet(ObstacleSet):
    """``{x : x . normal <= offset}`` with a unit normal."""

    normal: tuple[float, ...] = (1.0, 0.0)
    offset: float = 0.0

    def contains(self, x):
        return x @ np.asarray(self.normal) <= self.offset

    def boundary_samples(self, count):
        nvec = np.asarray(self.normal, float)
        tang = np.array([-nvec[1], nvec[0]])
        base = self.offset * nvec
        return [tuple(base + s * tang) for s in np.linspace(-0.5, 0.5, count)]

    def on_boundary(self, z, tol=1e-9):
        return abs(float(np.asarray(z) @ np.asarray(self.normal)) - self.offset) <= tol


@dataclass(frozen=True)
class PointSet(ObstacleSet):
    """A finite set of points; each rasterizes to its nearest lattice node."""

    points: tuple[tuple[float, ...], ...] = ((0.0, 0.0),)

    def boundary_samples(self, count):
        return list(self.points[:count])

    def on_boundary(self, z, tol=1e-9):
        return any(np.linalg.norm(np.asarray(z) - np.asarray(p)) <= tol for p in self.points)


@dataclass(frozen=True, eq=False)
class MaskSet(ObstacleSet):
    """Node set of a domain, extended to space by nearest-node lookup."""

    dom: DiscreteDomain = None
    mask: np.ndarray = None

    def contains(self, x):
        idx = np.rint((x - np.asarray(self.dom.origin)) / self.dom.spacing).astype(int)
        inside = np.all((idx >= 0) & (idx < np.array(self.dom.shape)), axis=-1)
        clipped = np.clip(idx, 0, np.array(self.dom.shape) - 1)
        hit = self.mask[tuple(np.moveaxis(clipped, -1, 0))]
        return inside & hit

    def _boundary_nodes(self) -> np.ndarray:
        from .grid import _neighbourhood
        edge = self.mask & _neighbourhood(~self.mask)
        return np.argwhere(edge)

    def boundary_samples(self, count):
        pts = self.dom.coords()[tuple(self._boundary_nodes().T)]
        return [tuple(p) for p in farthest_point_sample(pts, count)]

    def on_boundary(self, z, tol=1e-9):
        pts = self.dom.coords()[tuple(self._boundary_nodes().T)]
        return bool(len(pts)) and float(np.min(np.linalg.norm(pts - np.asarray(z), axis=-1))) <= tol


def farthest_point_sample(points: np.ndarray, count: int) -> np.ndarray:
    """Deterministic farthest-point subsample, starting from the lexicographically first point."""
    points = np.asarray(points, float)
    if len(points) <= count:
        return points
    order = np.lexsort(points.T[::-1])
    chosen = [order[0]]
    dist = np.linalg.norm(points - points[order[0]], axis=-1)
    while len(chosen) < count:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=-1))
    return points[np.array(chosen)]


# ---------------------------------------------------------------------------
# fatness

@dataclass
class FatnessEntry:
    center: tuple[float, ...]
    r: float
    cap_set: float
    cap_ball: float
    ratio: float
    converged: bool
    nodes_per_radius: int


@dataclass
class FatnessReport:
    """Capacity density ratios ``cap(E n B(z,r/2); B(z,r)) / cap(B(z,r/2); B(z,r))``."""

    kind: str
    centers: list[tuple[float, ...]]
    radii: list[float]
    entries: list[FatnessEntry]
    min_ratio: float
    flagged: list[tuple[tuple[float, ...], float]] = field(default_factory=list)

    @property
    def ratios(self) -> dict[tuple[tuple[float, ...], float], float]:
        return {(e.center, e.r): e.ratio for e in self.entries}

    def min_ratio_at(self, r: float) -> float:
        vals = [e.ratio for e in self.entries if e.r == r and e.converged]
        return min(vals) if vals else math.nan

    def csv_rows(self) -> list[list]:
        return [[" ".join(repr(float(c)) for c in e.center), repr(float(e.r)), repr(float(e.ratio))]
                for e in self.entries]


FATNESS_COLUMNS = ["center", "r", "ratio"]


def _check_radii(radii: Sequence[float]) -> list[float]:
    radii = [float(r) for r in radii]
    if not radii:
        raise ValueError("radii list is empty")
    for r in radii:
        k = -math.log2(r)
        if r > 1 or abs(k - round(k)) > 1e-12:
            raise ValueError(f"radius {r} is not a dyadic value 2**-k <= 1")
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly decreasing")
    return radii


def _capacity(dom: DiscreteDomain, kind: str, itg: DoublePhaseIntegrand, spec) -> capsolve.CapacityResult:
    if kind == "p":
        return capsolve.p_capacity(dom, itg.p, spec)
    if kind == "q":
        return capsolve.p_capacity(dom, itg.q, spec)
    if kind == "infimal":
        return capsolve.infimal_capacity(dom, itg.resample(dom), spec)
    raise ValueError(f"unknown capacity kind {kind!r}")


def _run(tasks: list[Callable], jobs: int) -> list:
    if jobs <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda t: t(), tasks))


def _predicate(E: ObstacleSet) -> Callable[[np.ndarray], np.ndarray]:
    if type(E).contains is ObstacleSet.contains:
        return lambda x: np.zeros(x.shape[:-1], dtype=bool)
    return E.contains


def fatness_scan(E: ObstacleSet, kind: str, itg: DoublePhaseIntegrand,
                 centers: Sequence[Sequence[float]] | None, radii: Sequence[float],
                 spec: capsolve.SolveSpec | None = None, nodes_per_radius: int = 16,
                 refine: float = 0.0, max_centers: int = 64, jobs: int = 1,
                 check_centers: bool = True) -> FatnessReport:
    """Capacity density ratios of ``E`` over centers on its boundary and dyadic radii.

    Each ``(z, r)`` gets its own condenser lattice with ``z`` as a node and
    ``nodes_per_radius * (r_max / r)**refine`` nodes per radius, so
    ``refine = 0`` gives scale-free lattices and ``refine = 1`` a fixed
    absolute spacing.  ``itg`` supplies the exponents and, for the infimal
    kind, the coefficient recipe.  Solves that do not converge are flagged
    and left out of ``min_ratio``.
    """
    radii = _check_radii(radii)
    if centers is None:
        centers = E.boundary_samples(max_centers)
    centers = [tuple(float(c) for c in z) for z in centers]
    if check_centers:
        for z in centers:
            if not E.on_boundary(z):
                raise ValueError(f"center {z} is not on the boundary of the set")

    def task(z, r):
        def run():
            npr = int(round(nodes_per_radius * (radii[0] / r) ** refine))
            ball_dom = make_condenser(z, r, npr)
            set_dom = make_condenser(z, r, npr, inner=_predicate(E), inner_points=E.points)
            cb = _capacity(ball_dom, kind, itg, spec)
            if not set_dom.obstacle.any():
                return FatnessEntry(z, r, 0.0, cb.value, 0.0, cb.converged, npr)
            if np.array_equal(set_dom.roles, ball_dom.roles):
                return FatnessEntry(z, r, cb.value, cb.value, 1.0, cb.converged, npr)
            cs = _capacity(set_dom, kind, itg, spec)
            return FatnessEntry(z, r, cs.value, cb.value, cs.value / cb.value,
                                cs.converged and cb.converged, npr)
        return run

    keys = [(z, r) for z in centers for r in radii]
    entries = _run([task(z, r) for z, r in keys], jobs)
    good = [e.ratio for e in entries if e.converged]
    flagged = [(e.center, e.r) for e in entries if not e.converged]
    return FatnessReport(kind, centers, radii, entries, min(good) if good else math.nan, flagged)


@dataclass
class EquivalenceReport:
    p_scan: FatnessReport
    infimal_scan: FatnessReport
    threshold: float

    @property
    def p_fat(self) -> bool:
        return self.p_scan.min_ratio >= self.threshold

    @property
    def infimal_fat(self) -> bool:
        return self.infimal_scan.min_ratio >= self.threshold

    @property
    def consistent(self) -> bool:
        return self.p_fat == self.infimal_fat

    @property
    def max_pair_difference(self) -> float:
        return max(abs(a.ratio - b.ratio) for a, b in zip(self.p_scan.entries, self.infimal_scan.entries))


def equivalence_probe(E: ObstacleSet, itg: DoublePhaseIntegrand, centers, radii,
                      spec: capsolve.SolveSpec | None = None, thresholds: Thresholds | None = None,
                      **scan_kw) -> EquivalenceReport:
    """Paired p and infimal fatness scans on the same centers and radii."""
    thresholds = thresholds or Thresholds()
    ps = fatness_scan(E, "p", itg, centers, radii, spec, **scan_kw)
    inf = fatness_scan(E, "infimal", itg, centers, radii, spec, **scan_kw)
    return EquivalenceReport(ps, inf, thresholds.fat_ratio)


# ---------------------------------------------------------------------------
# capacity bounds

def lower_bound_constant(p: float, q: float) -> float:
    """``c(p, q) = 2**(1 - q/p)`` in ``cp_inf >= c min{cp_p, |O| (cp_p/|O|)**(q/p)}``.

    With ``u = t v`` the normalized density is a convex combination of
    ``|grad v|**p`` and ``|grad v|**q``, hence at least the smaller one.
    Splitting ``cp_p`` into the parts ``A`` from ``|grad v| >= 1`` and ``B``
    from ``|grad v| < 1``, Jensen gives ``A + |O| (B/|O|)**(q/p)``, and with
    ``lam = A/cp_p``, ``lam + (1-lam)**s >= lam**s + (1-lam)**s >= 2**(1-s)``.
    """
    return 2.0 ** (1.0 - q / p)


@dataclass
class CapacityBounds:
    upper: InequalityReport
    lower: InequalityReport
    cp_inf: float
    cp_p: float
    measure: float
    active_branch: str


def capacity_bounds_check(dom: DiscreteDomain, itg: DoublePhaseIntegrand,
                          spec: capsolve.SolveSpec | None = None,
                          thresholds: Thresholds | None = None) -> CapacityBounds:
    """``cp_inf <= cp_p`` and ``cp_inf >= c(p,q) min{cp_p, |O| (cp_p/|O|)**(q/p)}``."""
    thresholds = thresholds or Thresholds()
    tol = thresholds.capacity_tol
    cp = capsolve.p_capacity(dom, itg.p, spec).value
    ci = capsolve.infimal_capacity(dom, itg, spec)
    meas = capsolve.open_set_measure(dom)
    branch_p = cp
    branch_q = meas * (cp / meas) ** (itg.q / itg.p)
    active = "p" if branch_p <= branch_q else "measure"
    c = lower_bound_constant(itg.p, itg.q)
    bound = c * min(branch_p, branch_q)
    up = make_report("capacity_upper", ci.value, {"value": cp}, 1.0 + tol, t=ci.level_t,
                     flags=ci.flags)
    lo = make_report("capacity_lower", bound, {"value": ci.value}, 1.0 + tol, t=ci.level_t,
                     notes=f"active branch: {active}")
    return CapacityBounds(up, lo, ci.value, cp, meas, active)


# ---------------------------------------------------------------------------
# shared helpers for the inequality checks

def coefficient_extreme(itg: DoublePhaseIntegrand, y: Sequence[float], R: float, sign: str) -> float:
    """``a^+`` (max) or ``a^-`` (min) of ``a`` over the nodes of ``B(y, R)``."""
    x = itg.dom.coords()
    region = np.linalg.norm(x - np.asarray(y, float), axis=-1) < R
    if not region.any():
        region = np.zeros(itg.dom.shape, bool)
        region[itg.dom.nearest_index(y)] = True
    lo, hi = itg.a_bounds(region)
    if sign not in "+-":
        raise ValueError("sign must be '+' or '-'")
    return hi if sign == "+" else lo


def domain_diameter(dom: DiscreteDomain) -> float:
    pts = dom.coords()[dom.interior]
    if len(pts) < 2:
        return 0.0
    try:
        pts = pts[ConvexHull(pts).vertices]
    except (QhullError, ValueError):
        pass
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
    return float(math.sqrt(d2.max()))


def _check_support(u: ScalarField, d: np.ndarray):
    bad = (d <= 0) & (u.values != 0)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise SupportViolationError(f"test function is nonzero at node {idx} where dist = 0")


def _family_ids(family, ids):
    return list(ids) if ids is not None else [f"u{i}" for i in range(len(family))]


# ---------------------------------------------------------------------------
# integral Hardy

def hardy_integral_check(dom: DiscreteDomain, itg: DoublePhaseIntegrand,
                         family: Sequence[ScalarField], thresholds: Thresholds | None = None,
                         ids: Sequence[str] | None = None) -> list[InequalityReport]:
    """``int phi(x, |u|/d) <= C (1 + diam^(alpha+n(p-q)/p) [a] ||grad u||_p^(q-p))^(p/(p-1)) int phi(x,|grad u|)``.

    ``|u|/d`` is formed at nodes (zero where ``u`` vanishes) and averaged to
    cells like any other node field.
    """
    thresholds = thresholds or Thresholds()
    d = distance_to_boundary(dom).values
    diam = domain_diameter(dom)
    active = dom.active_cells()
    vol = dom.cell_volume
    a_cell = itg.cell_coefficient()
    out = []
    for uid, u in zip(_family_ids(family, ids), family):
        _check_support(u, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(u.values != 0, np.abs(u.values) / d, 0.0)
        wc = corner_average(w)
        lhs = float(np.where(active, wc ** itg.p + a_cell * wc ** itg.q, 0.0).sum() * vol)
        e = energy(u, itg)
        grad_lp = float((gradient_norm(u) ** itg.p).sum() * vol) ** (1.0 / itg.p)
        inputs = dict(diam=diam, alpha=itg.alpha, n=dom.dim, p=itg.p, q=itg.q,
                      seminorm=itg.holder_seminorm, grad_lp=grad_lp, energy=e.total)
        out.append(make_report("hardy", lhs, inputs, thresholds.constant_cap, test_id=uid))
    return out


# ---------------------------------------------------------------------------
# boundary Poincaré, mean-value and pointwise Hardy

def _lattice_ball_count(dom: DiscreteDomain, z: Sequence[float], r: float) -> int:
    """Cells of the infinite lattice extending the grid whose centers lie in ``B(z, r)``.

    Cells past the grid are outside the domain, where every admissible field
    and its gradient vanish, so means over a ball divide by this count.
    """
    h = dom.spacing
    z = np.asarray(z, float)
    org = np.asarray(dom.origin, float)
    axes = []
    for k in range(dom.dim):
        lo = int(np.floor((z[k] - r - org[k]) / h)) - 1
        hi = int(np.ceil((z[k] + r - org[k]) / h)) + 1
        axes.append(org[k] + (np.arange(lo, hi + 1) + 0.5) * h - z[k])
    grids = np.meshgrid(*axes, indexing="ij", sparse=True)
    return int((sum(g * g for g in grids) < r * r).sum())


def _ball_phi_mean(u: ScalarField, cells: np.ndarray, count: int, a_pm: float, p: float, q: float) -> float:
    uc = np.abs(cell_values(u))[cells]
    return float(np.sum(uc ** p + a_pm * uc ** q) / count)


def _scaled_grad_mean(u: ScalarField, cells: np.ndarray, count: int, r: float, m: float) -> float:
    g = gradient_norm(u)[cells]
    return float((np.sum((r * g) ** m) / count) ** (1.0 / m))


def boundary_poincare_check(dom: DiscreteDomain, itg: DoublePhaseIntegrand,
                            family: Sequence[ScalarField], centers: Sequence[Sequence[float]],
                            radii: Sequence[float], y: Sequence[float] | None = None,
                            R_ball: float | None = None, sign: str = "+",
                            thresholds: Thresholds | None = None,
                            ids: Sequence[str] | None = None) -> list[InequalityReport]:
    """``mean_B phi^pm(|u|) <= C (1 + a^pm (r grad u)_{B,p}^(q-p)) mean_B |r grad u|^p``.

    ``B = B(z, r)`` with ``z`` outside the domain.  ``(y, R_ball)`` default
    to ``(z, r)``.  Parts of a ball past the grid count as zero; balls
    without any grid cell are skipped with a note.
    """
    thresholds = thresholds or Thresholds()
    p, q = itg.p, itg.q
    out = []
    for uid, u in zip(_family_ids(family, ids), family):
        for z in centers:
            z = tuple(float(c) for c in z)
            for r in radii:
                yy, RR = (z, r) if y is None else (tuple(y), R_ball)
                cells = ball_cells(dom, z, r)
                if not cells.any():
                    out.append(InequalityReport("poincare", 0.0, 0.0, math.nan, "SKIP", 0.0, z, r,
                                                test_id=uid, notes="empty ball"))
                    continue
                a_pm = coefficient_extreme(itg, yy, RR, sign)
                count = _lattice_ball_count(dom, z, r)
                lhs = _ball_phi_mean(u, cells, count, a_pm, p, q)
                G = _scaled_grad_mean(u, cells, count, r, p)
                out.append(make_report("poincare", lhs, dict(a_pm=a_pm, grad_mean=G, p=p, q=q),
                                       thresholds.constant_cap, z=z, r=r, test_id=uid))
    return out


def phase_specialized_ratio(itg: DoublePhaseIntegrand, rep: InequalityReport) -> tuple[Phase, float]:
    """Ratio of the phase-specialized to the generic Poincaré right-hand side.

    In the p-phase ``a^+`` is replaced by ``3 [a] r**alpha``, in the
    (p,q)-phase by ``3 a^-``; both dominate ``a^+`` on ``B(z, r)``, so the
    ratio lies in ``[1, 3]``.
    """
    tag = classify_phase(itg, rep.z, rep.r)
    inp = dict(rep.inputs)
    if tag.tag == Phase.P_PHASE:
        inp["a_pm"] = 3.0 * itg.holder_seminorm * rep.r ** itg.alpha
    else:
        inp["a_pm"] = 3.0 * tag.a_minus
    spec_rhs = _rhs_poincare(**inp)
    gen = dict(rep.inputs)
    gen["a_pm"] = tag.a_plus
    base = _rhs_poincare(**gen)
    return tag.tag, spec_rhs / base if base > 0 else math.nan


def mean_value_hardy_check(dom: DiscreteDomain, itg: DoublePhaseIntegrand,
                           family: Sequence[ScalarField], nodes: Sequence[tuple[int, ...]],
                           sign: str = "+", thresholds: Thresholds | None = None,
                           ids: Sequence[str] | None = None) -> list[InequalityReport]:
    """``phi^pm((u)_{B(z,r_z)}) <= C (1 + a^pm (r_z grad u)_{B(z,2r_z),p}^(q-p)) mean_{B(z,2r_z)} |r_z grad u|^p``.

    ``r_z`` is the boundary distance of the interior node ``z``; ``(y, R)``
    is ``(z, 2 r_z)``.
    """
    thresholds = thresholds or Thresholds()
    p, q = itg.p, itg.q
    d = distance_to_boundary(dom).values
    x = dom.coords()
    out = []
    for uid, u in zip(_family_ids(family, ids), family):
        uc = cell_values(u)
        for idx in nodes:
            idx = tuple(int(i) for i in idx)
            rz = float(d[idx])
            z = tuple(x[idx])
            inner = ball_cells(dom, z, rz)
            outer = ball_cells(dom, z, 2 * rz)
            if rz <= 0 or not inner.any():
                continue
            a_pm = coefficient_extreme(itg, z, 2 * rz, sign)
            mean = abs(float(uc[inner].sum())) / _lattice_ball_count(dom, z, rz)
            lhs = float(phi(mean, a_pm, p, q))
            G = _scaled_grad_mean(u, outer, _lattice_ball_count(dom, z, 2 * rz), rz, p)
            out.append(make_report("mean_value_hardy", lhs, dict(a_pm=a_pm, grad_mean=G, p=p, q=q),
                                   thresholds.constant_cap, z=z, r=rz, test_id=uid))
    return out


def peak_nodes(family: Sequence[ScalarField]) -> list[tuple[int, ...]]:
    """Node of largest ``|u|`` for each field, so sparse node samples never miss a bump."""
    return [tuple(int(i) for i in np.unravel_index(np.argmax(np.abs(u.values)), u.values.shape))
            for u in family]


def pointwise_hardy_check(dom: DiscreteDomain, itg: DoublePhaseIntegrand,
                          family: Sequence[ScalarField], nodes: Sequence[tuple[int, ...]],
                          sign: str = "+", thresholds: Thresholds | None = None,
                          ids: Sequence[str] | None = None) -> list[InequalityReport]:
    """``phi^pm(u(z)) <= C [1 + a^pm M^((q-p)/p)] M`` with ``M = M_{2 r_z}(|r_z grad u|^p)(z)``.

    ``(y, R)`` is ``(z, 2 r_z)``.
    """
    thresholds = thresholds or Thresholds()
    p, q = itg.p, itg.q
    d = distance_to_boundary(dom).values
    x = dom.coords()
    nodes = [tuple(int(i) for i in idx) for idx in nodes]
    out = []
    for uid, u in zip(_family_ids(family, ids), family):
        gp = gradient_norm(u) ** p
        maxes = restricted_maximal(gp, 2.0 * d, nodes=nodes, dom=dom)
        for idx, mval in zip(nodes, maxes):
            rz = float(d[idx])
            z = tuple(x[idx])
            a_pm = coefficient_extreme(itg, z, 2 * rz, sign)
            M = rz ** p * float(mval)
            lhs = float(phi(abs(u.values[idx]), a_pm, p, q))
            out.append(make_report("pointwise_hardy", lhs, dict(a_pm=a_pm, maximal=M, p=p, q=q),
                                   thresholds.constant_cap, z=z, r=rz, test_id=uid))
    return out


# ---------------------------------------------------------------------------
# Maz'ya

def zero_set_capacity(u: ScalarField, z: Sequence[float], r: float, m: float,
                      spec: capsolve.SolveSpec | None = None) -> tuple[float, bool]:
    """``cap_m(Z; B(0,1))`` for ``Z`` the rescaled zero set of ``u`` in ``closed B(z, r/2)``.

    Solved natively on the field's nodes in ``B(z, r)`` and rescaled by
    ``r**(m-n)``.  Returns ``(capacity, converged)``.
    """
    dom = u.dom
    h = dom.spacing
    zc = np.asarray(z, float)
    org = np.asarray(dom.origin)
    lo = np.floor((zc - r - org) / h).astype(int) - 2
    hi = np.ceil((zc + r - org) / h).astype(int) + 2
    if np.any(lo < 0) or np.any(hi >= np.array(dom.shape)):
        raise ValueError("ball B(z, r) plus a collar must lie inside the field's grid")
    crop = tuple(slice(int(a), int(b) + 1) for a, b in zip(lo, hi))
    x = dom.coords()[crop]
    d2 = ((x - zc) ** 2).sum(axis=-1)
    roles = np.where(d2 < r * r, Role.INTERIOR, Role.EXTERIOR).astype(np.int8)
    zeros = zero_set(u)[crop] & (4 * d2 <= r * r)
    roles[zeros] = Role.OBSTACLE
    sub = DiscreteDomain(_assign_collar(roles), h, tuple(x.reshape(-1, dom.dim)[0]))
    if not sub.obstacle.any():
        return 0.0, True
    res = capsolve.p_capacity(sub, m, spec)
    return res.value * r ** (m - dom.dim), res.converged


def mazya_check(u: ScalarField, z: Sequence[float], r: float, itg: DoublePhaseIntegrand,
                m: float, y: Sequence[float] | None = None, R_ball: float | None = None,
                sign: str = "+", spec: capsolve.SolveSpec | None = None,
                thresholds: Thresholds | None = None, cap_floor: float = 1e-12,
                test_id: str = "") -> InequalityReport:
    """``mean_B phi^pm(|u|) <= C [1 + a^pm cap^((p-q)/m) G^(q-p)] cap^(-p/m) G^p``.

    ``G = (r grad u)_{B(z,r),m}`` and ``cap = cap_m(Z; B(0,1))``.  A capacity
    below ``cap_floor`` is flagged DEGENERATE (the zero set is too small).
    """
    thresholds = thresholds or Thresholds()
    dom = u.dom
    n, p, q = dom.dim, itg.p, itg.q
    rng = admissible_m_range(n, p, q, itg.alpha)
    if m not in rng:
        raise ValueError(f"m = {m} is not admissible ({rng.note})")
    z = tuple(float(c) for c in z)
    yy, RR = (z, r) if y is None else (tuple(y), R_ball)
    cells = ball_cells(dom, z, r)
    count = _lattice_ball_count(dom, z, r)
    a_pm = coefficient_extreme(itg, yy, RR, sign)
    lhs = _ball_phi_mean(u, cells, count, a_pm, p, q)
    if not np.any(u.values):
        return InequalityReport("mazya", 0.0, math.inf, 0.0, "PASS", thresholds.constant_cap, z, r,
                                test_id=test_id, notes="u vanishes identically")
    cap, ok = zero_set_capacity(u, z, r, m, spec)
    G = _scaled_grad_mean(u, cells, count, r, m)
    flags = () if ok else ("NOT_CONVERGED",)
    if cap < cap_floor:
        return InequalityReport("mazya", lhs, math.inf, 0.0, "DEGENERATE", thresholds.constant_cap,
                                z, r, test_id=test_id, flags=flags + ("DEGENERATE",),
                                inputs=dict(a_pm=a_pm, cap=cap, m=m, p=p, q=q, grad_mean=G))
    rep = make_report("mazya", lhs, dict(a_pm=a_pm, cap=cap, m=float(m), p=p, q=q, grad_mean=G),
                      thresholds.constant_cap, z=z, r=r, test_id=test_id, flags=flags)
    return rep


# ---------------------------------------------------------------------------
# the double-phase Maz'ya counterexample

def radial_power_integral(n: int, p: float, r: float) -> float:
    """``I(r) = int_{r/2}^r (s - r/2)**p s**(n-1) ds`` by adaptive quadrature."""
    val, _ = integrate.quad(lambda s: (s - r / 2) ** p * s ** (n - 1), r / 2, r,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def unit_ball_volume(n: int) -> float:
    return capsolve.sphere_area(n) / n


@dataclass
class CounterexampleRow:
    r: float
    mean_phi_u: float
    mean_phi_u_grid: float
    energy_grid: float
    energy_exact: float
    energy_rel_error: float
    sandwich_low: float
    sandwich_value: float
    sandwich_high: float
    sandwich_holds: bool
    Q: float
    Q_scaled_p: float
    Q_scaled_q: float


@dataclass
class CounterexampleReport:
    n: int
    p: float
    q: float
    a_o: float
    rows: list[CounterexampleRow]

    def growth_q(self) -> list[float]:
        v = [row.Q_scaled_q for row in self.rows]
        return [b / a for a, b in zip(v, v[1:])]

    def spread_p(self) -> float:
        """Largest relative deviation of ``Q r^(n-p)`` from its mean."""
        v = np.array([row.Q_scaled_p for row in self.rows])
        return float(np.max(np.abs(v / v.mean() - 1.0)))

    def csv_rows(self) -> list[list]:
        return [[repr(float(getattr(row, k))) for k in COUNTEREXAMPLE_COLUMNS] for row in self.rows]


COUNTEREXAMPLE_COLUMNS = ["r", "mean_phi_u", "energy_grid", "energy_exact", "Q", "Q_scaled_p",
                          "Q_scaled_q"]


def counterexample_report(n: int, p: float, q: float, a_o: float, radii: Sequence[float],
                          cells_per_radius: int = 128) -> CounterexampleReport:
    """Divergence table for ``u_r = (|x| - r/2)_+`` on ``B(0, r)`` with constant ``a = a_o``.

    ``Q(r) = mean_{B_r} phi(u_r) / int_{B_r} phi(|grad u_r|)`` behaves like
    ``r**(p-n)`` while the double-phase capacity of the half ball scales
    like ``r**(n-q)``, so ``Q r**(n-q)`` is unbounded as ``r -> 0``.  Means of
    ``phi(u_r)`` come from radial quadrature; the gradient energy is also
    computed on a grid with ``h = r / cells_per_radius``.
    """
    if not (p <= n and a_o > 0):
        raise ValueError("needs p <= n and a_o > 0")
    if any(not 0 < r <= 1 for r in radii):
        raise ValueError("radii must lie in (0, 1]")
    w = capsolve.sphere_area(n)
    rows = []
    for r in radii:
        Ip = radial_power_integral(n, p, r)
        Iq = radial_power_integral(n, q, r)
        vol = unit_ball_volume(n) * r ** n
        mean_phi = w * (Ip + a_o * Iq) / vol
        exact = (1 + a_o) * unit_ball_volume(n) * r ** n * (1 - 2.0 ** -n)
        dom = make_shape(ball_shape((0.0,) * n, r), int(round(cells_per_radius / r)))
        x = dom.coords()
        u = ScalarField(dom, np.maximum(np.linalg.norm(x, axis=-1) - r / 2, 0.0))
        itg = DoublePhaseIntegrand.on(dom, p, q, a_o)
        cells = ball_cells(dom, (0.0,) * n, r)
        e_grid = energy(u, itg, region=cells).total
        uc = cell_values(u)[cells]
        mean_grid = float(np.mean(uc ** p + a_o * uc ** q))
        low = 1.0 / (2 ** (n + p) * (p + 1))
        high = 1.0 / (2 ** (p + 1) * (p + 1))
        sval = Ip / r ** (n + p)
        Q = mean_phi / exact
        rows.append(CounterexampleRow(r, mean_phi, mean_grid, e_grid, exact, abs(e_grid / exact - 1),
                                      low, sval, high, low <= sval <= high, Q,
                                      Q * r ** (n - p), Q * r ** (n - q)))
    return CounterexampleReport(n, p, q, a_o, rows)


# ---------------------------------------------------------------------------
# self-improvement

@dataclass
class SelfImprovementReport:
    kind: str
    epsilons: list[float]
    min_ratios: dict[float, float]
    scans: dict[float, FatnessReport]
    rejected: dict[float, str]

    def factor(self, eps: float) -> float:
        return self.min_ratios[eps] / self.min_ratios[0.0]


def self_improvement_scan(E: ObstacleSet, kind: str, epsilons: Sequence[float],
                          itg: DoublePhaseIntegrand, centers, radii,
                          spec: capsolve.SolveSpec | None = None, **scan_kw) -> SelfImprovementReport:
    """Fatness scans at lowered exponents.

    For ``kind="p"`` the exponent is ``p - eps``.  For ``kind="infimal"`` the
    integrand is ``t**(p(1-d)) + a**(1-d) t**(q(1-d))`` with ``d = eps/p``,
    which is comparable to ``phi**(1-d)`` within the factors ``1/2`` and ``2``.
    ``eps = 0`` is always included.
    """
    eps_list = sorted(set([0.0] + [float(e) for e in epsilons]))
    ratios, scans, rejected = {}, {}, {}
    for eps in eps_list:
        if itg.p - eps <= 1:
            rejected[eps] = f"p - eps = {itg.p - eps} is not above 1"
            continue
        if kind == "p":
            lowered = itg.without_coefficient(itg.p - eps)
            scan = fatness_scan(E, "p", lowered, centers, radii, spec, **scan_kw)
        elif kind == "infimal":
            s = 1.0 - eps / itg.p
            lowered = itg.with_exponents(itg.p * s, itg.q * s, s) if eps else itg
            scan = fatness_scan(E, "infimal", lowered, centers, radii, spec, **scan_kw)
        else:
            raise ValueError(f"unknown kind {kind!r}")
        scans[eps] = scan
        ratios[eps] = scan.min_ratio
    return SelfImprovementReport(kind, eps_list, ratios, scans, rejected)


def auxiliary_sandwich(p: float, q: float, delta: float, t: np.ndarray, a: np.ndarray) -> dict:
    """Pointwise check of ``1/2 S <= (t^p + a t^q)**(1-d) <= 2 S`` on a ``(t, a)`` grid.

    ``S = t**(p(1-d)) + a**(1-d) t**(q(1-d))``.  Returns the extreme ratios and
    whether both inequalities hold at every grid point.
    """
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    T, A = np.meshgrid(np.asarray(t, float), np.asarray(a, float), indexing="ij")
    s = 1.0 - delta
    mid = (T ** p + A * T ** q) ** s
    S = T ** (p * s) + A ** s * T ** (q * s)
    low_ok = 0.5 * S <= mid
    high_ok = mid <= 2.0 * S
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(S > 0, mid / S, 1.0)
    return dict(holds=bool(low_ok.all() and high_ok.all()), min_ratio=float(ratio.min()),
                max_ratio=float(ratio.max()), points=int(T.size))


# ---------------------------------------------------------------------------
# trend summaries

def family_span(reports: Sequence[InequalityReport], by_test: bool = True) -> float:
    """``max/min`` of implied constants; with ``by_test`` first take each test function's maximum."""
    vals = list(per_test_max(reports).values()) if by_test else [r.implied_constant for r in reports
                                                    if r.verdict in ("PASS", "FAIL")]
    vals = [v for v in vals if v > 0 and math.isfinite(v)]
    if not vals:
        return math.nan
    return max(vals) / min(vals)


def per_test_max(reports: Sequence[InequalityReport]) -> dict[str, float]:
    """Largest implied constant per test function, ignoring skipped reports."""
    best: dict[str, float] = {}
    for r in reports:
        if r.verdict in ("PASS", "FAIL"):
            best[r.test_id] = max(best.get(r.test_id, 0.0), r.implied_constant)
    return best


def coefficient_of_variation(values: Sequence[float]) -> float:
    v = np.asarray(values, float)
    return float(v.std() / v.mean())


def growth_factors(values: Sequence[float]) -> list[float]:
    return [b / a for a, b in zip(values, values[1:])]
