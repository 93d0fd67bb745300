"""Higher-integrability experiments on discrete double-phase minimizers.

Reverse Hölder and Caccioppoli diagnostics report both sides as
:class:`~capdp.verify.InequalityReport` objects.  The "empirical
higher-integrability exponent" is a refinement-stability notion: the largest
``sigma`` for which ``int phi**sigma(x, |grad u|)`` changes by at most a
factor 1.5 between the two finest grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import capsolve
from .field_ops import ScalarField, ball_cells, cell_values, gradient_norm
from .grid import (DiscreteDomain, Role, Shape, _neighbourhood, annulus, ball_minus_point_cluster,
                   ball_minus_segment, distance_to_set, make_shape)
from .integrand import Coefficient, DoublePhaseIntegrand, phi
from .verify import InequalityReport, Thresholds, make_report


def _phi_cells(u: ScalarField, itg: DoublePhaseIntegrand) -> np.ndarray:
    """Cellwise ``phi(x, |grad u|)``, zero on inactive cells."""
    g = gradient_norm(u)
    return np.where(u.dom.active_cells(), g ** itg.p + itg.cell_coefficient() * g ** itg.q, 0.0)


def _grad_lp(u: ScalarField, p: float) -> float:
    return float((gradient_norm(u) ** p).sum() * u.dom.cell_volume) ** (1.0 / p)


def domain_cells(dom: DiscreteDomain) -> np.ndarray:
    """Active cells with at least one INTERIOR corner (the cells of ``Omega``)."""
    from .grid import _corner_slice, _corners
    inter = dom.interior
    touch = np.zeros(dom.cell_shape, dtype=bool)
    for c in _corners(dom.dim):
        touch |= inter[_corner_slice(c)]
    return touch & dom.active_cells()


# ---------------------------------------------------------------------------
# reverse Hölder and Caccioppoli

def interior_reverse_holder_check(u: ScalarField, itg: DoublePhaseIntegrand,
                                  balls: Sequence[tuple[Sequence[float], float]],
                                  theta_grid: Sequence[float],
                                  thresholds: Thresholds | None = None) -> list[InequalityReport]:
    """``mean_{B(z,r/2)} phi(|grad u|) <= C (1 + [a] ||grad u||_p^(q-p)) (mean_{B(z,r)} phi^theta)^(1/theta)``.

    Balls whose nodes are not all INTERIOR are skipped.
    """
    thresholds = thresholds or Thresholds()
    dom = u.dom
    dens = _phi_cells(u, itg)
    glp = _grad_lp(u, itg.p)
    x = dom.coords()
    out = []
    for z, r in balls:
        z = tuple(float(c) for c in z)
        nodes = ((x - np.asarray(z)) ** 2).sum(axis=-1) <= r * r
        outer = ball_cells(dom, z, r)
        inner = ball_cells(dom, z, r / 2)
        if not inner.any() or np.any(dom.roles[nodes] != Role.INTERIOR):
            continue
        lhs = float(dens[inner].mean())
        for th in theta_grid:
            if not 0 < th <= 1:
                raise ValueError("theta must lie in (0, 1]")
            tmean = float((dens[outer] ** th).mean())
            inputs = dict(seminorm=itg.holder_seminorm, grad_lp=glp, p=itg.p, q=itg.q,
                          theta_mean=tmean, theta=float(th))
            out.append(make_report("reverse_holder", lhs, inputs, thresholds.constant_cap,
                                   z=z, r=r, test_id=f"theta={th:g}"))
    return out


def smallest_theta(reports: Sequence[InequalityReport], cap: float) -> float | None:
    """Smallest ``theta`` whose implied constants stay below ``cap`` on every ball."""
    by_theta: dict[float, float] = {}
    for rep in reports:
        th = rep.inputs["theta"]
        by_theta[th] = max(by_theta.get(th, 0.0), rep.implied_constant)
    ok = [th for th, c in by_theta.items() if c <= cap]
    return min(ok) if ok else None


def boundary_caccioppoli_check(u: ScalarField, f: ScalarField, itg: DoublePhaseIntegrand,
                               balls: Sequence[tuple[Sequence[float], float]],
                               thresholds: Thresholds | None = None) -> list[InequalityReport]:
    """``|B_{r/2}|^-1 int_{B_{r/2} n Omega} phi(|grad u|) <= C |B_r|^-1 int_{B_r n Omega} [phi(|u-f|/r) + phi(|grad f|)]``.

    Ball volumes are cell counts times the cell volume; the ball must reach
    outside the domain, otherwise it is skipped.
    """
    thresholds = thresholds or Thresholds()
    dom = u.dom
    if f.dom.shape != dom.shape:
        raise ValueError("u and f live on different grids")
    omega = domain_cells(dom)
    dens_u = _phi_cells(u, itg)
    dens_f = _phi_cells(f, itg)
    a_cell = itg.cell_coefficient()
    out = []
    x = dom.coords()
    for z, r in balls:
        z = tuple(float(c) for c in z)
        nodes = ((x - np.asarray(z)) ** 2).sum(axis=-1) < r * r
        if not np.any(nodes & ~dom.interior):
            continue
        outer = ball_cells(dom, z, r)
        inner = ball_cells(dom, z, r / 2)
        if not inner.any():
            continue
        diff = np.abs(cell_values(u.values - f.values)) / r
        zero_order = diff ** itg.p + a_cell * diff ** itg.q
        lhs = float(dens_u[inner & omega].sum() / inner.sum())
        rhs_mean = float((zero_order + dens_f)[outer & omega].sum() / outer.sum())
        out.append(make_report("caccioppoli", lhs, dict(outer_mean=rhs_mean), thresholds.constant_cap,
                               z=z, r=r))
    return out


# ---------------------------------------------------------------------------
# higher integrability

@dataclass
class GlobalBoundRHS:
    """Quantities entering the global higher-integrability bound, up to its constant."""

    a_P: float            # math.inf encodes the empty-boundary convention
    a_P_infinite: bool
    rho: float
    P_node_count: int
    diam: float
    r_a: float
    rhs: dict[float, float]


@dataclass
class HigherIntReport:
    sigma_grid: list[float]
    resolutions: list[int]
    energies: dict[float, dict[int, float]]
    power_means: dict[float, dict[int, float]]
    sigma_star: float | None
    base_stable: bool
    sigma0: float
    bound_rhs: GlobalBoundRHS
    flags: tuple[str, ...] = ()

    def stability_ratio(self, sigma: float) -> float:
        e = self.energies[sigma]
        a, b = e[self.resolutions[-2]], e[self.resolutions[-1]]
        return max(a, b) / min(a, b) if min(a, b) > 0 else math.inf


def _boundary_nodes(dom: DiscreteDomain) -> np.ndarray:
    """Non-interior nodes next to an interior node (the discrete ``partial Omega``)."""
    return ~dom.interior & _neighbourhood(dom.interior)


def boundary_coefficient_quantities(dom: DiscreteDomain, itg: DoublePhaseIntegrand, r_a: float, r_hat0: float,
                       diam: float) -> tuple[float, bool, float, int]:
    """``(a_P, a_P is infinite, rho, |P(r_a)| in nodes)``.

    ``P(r_a)`` holds the non-interior nodes within ``r_a`` of a boundary node
    where ``a = 0``; ``a_P`` is the infimum of ``a`` over boundary nodes
    outside ``P(r_a/2)``.
    """
    bnd = _boundary_nodes(dom)
    zeros = bnd & (itg.a == 0)
    dist = distance_to_set(dom, zeros)
    P = (dist <= r_a) & ~dom.interior
    P_half = (dist <= r_a / 2) & ~dom.interior
    rest = bnd & ~P_half
    if rest.any():
        a_P = float(itg.a[rest].min())
        inf_flag = False
    else:
        a_P, inf_flag = math.inf, True
    if inf_flag:
        rho = r_hat0
    else:
        rho = min(r_hat0, (a_P / (1.0 + itg.holder_seminorm)) ** (1.0 / itg.alpha))
    return a_P, inf_flag, rho, int(P.sum())


def _diameter(dom: DiscreteDomain) -> float:
    from .verify import domain_diameter
    return domain_diameter(dom)


def higher_integrability_report(shape: Shape, p: float, q: float, coefficient: Coefficient | float,
                                f: Callable[[np.ndarray], np.ndarray], sigma_grid: Sequence[float],
                                resolutions: Sequence[int], spec: capsolve.SolveSpec | None = None,
                                sigma0: float = math.inf, r_a: float | None = None,
                                r_hat0: float = 1.0, stability: float = 1.5) -> HigherIntReport:
    """Dirichlet minimizers on refining grids and the integrals of ``phi**sigma``.

    ``f`` maps node coordinates (shape ``(..., n)``) to boundary data.  Exponents
    above ``sigma0`` are dropped.  ``sigma_star`` is the largest ``sigma`` in
    the grid with every smaller exponent also stable, provided ``sigma = 1``
    itself is stable within 5%; otherwise it is ``None``.
    """
    resolutions = sorted(int(r) for r in resolutions)
    if len(resolutions) < 2:
        raise ValueError("need at least two grid levels")
    sigmas = sorted(set([1.0] + [float(s) for s in sigma_grid if s <= sigma0]))
    if any(s < 1 for s in sigmas):
        raise ValueError("sigma values must be at least 1")
    energies = {s: {} for s in sigmas}
    means = {s: {} for s in sigmas}
    flags = []
    last = None
    for res in resolutions:
        dom = make_shape(shape, res)
        itg = DoublePhaseIntegrand.on(dom, p, q, coefficient)
        fv = ScalarField(dom, np.asarray(f(dom.coords()), float))
        sol = capsolve.dirichlet_solve(dom, itg, fv, spec)
        if not sol.converged:
            flags.append(f"NOT_CONVERGED@{res}")
        dens = _phi_cells(sol.minimizer, itg)
        omega = domain_cells(dom)
        for s in sigmas:
            energies[s][res] = float((dens[omega] ** s).sum() * dom.cell_volume)
            means[s][res] = float((dens[omega] ** s).mean() ** (1.0 / s))
        last = (dom, itg, sol, fv)
    fine, coarse = resolutions[-1], resolutions[-2]

    def ratio(s):
        a, b = energies[s][coarse], energies[s][fine]
        return max(a, b) / min(a, b) if min(a, b) > 0 else math.inf

    base_stable = ratio(1.0) <= 1.05
    sigma_star = None
    if base_stable:
        sigma_star = 1.0
        for s in sigmas:
            if ratio(s) <= stability:
                sigma_star = s
            else:
                break
    dom, itg, sol, fv = last
    r_a = 4.0 / resolutions[0] if r_a is None else r_a
    diam = _diameter(dom)
    a_P, inf_flag, rho, P_count = boundary_coefficient_quantities(dom, itg, r_a, r_hat0, diam)
    dens_u = _phi_cells(sol.minimizer, itg)
    dens_f = _phi_cells(fv, itg)
    omega = domain_cells(dom)
    vol = dom.cell_volume
    n = dom.dim
    rhs = {}
    for s in sigmas:
        tail = 0.0 if inf_flag else a_P ** (-n / (p * itg.alpha))
        rhs[s] = (1 + diam / rho) ** n * (rho ** ((1 - s) * n / s) * float(dens_u[omega].sum() * vol)
                                          + float((dens_f[omega] ** s).sum() * vol) ** (1 / s) + tail)
    thm = GlobalBoundRHS(a_P, inf_flag, rho, P_count, diam, r_a, rhs)
    return HigherIntReport(sigmas, resolutions, energies, means, sigma_star, base_stable,
                           sigma0, thm, tuple(flags))


# ---------------------------------------------------------------------------
# optimality of the fatness assumption

@dataclass
class OptimalityLevel:
    resolution: int
    max_gradient: float
    pointwise_bound: float
    p_energy: float
    integrals: dict[float, float]


@dataclass
class OptimalityReport:
    p: float
    deltas: list[float]
    punctured: list[OptimalityLevel]
    control: list[OptimalityLevel]
    puncture: str

    @staticmethod
    def _growth(levels, delta):
        v = [lv.integrals[delta] for lv in levels]
        return [b / a for a, b in zip(v, v[1:])]

    def growth(self, delta: float) -> list[float]:
        return self._growth(self.punctured, delta)

    def control_growth(self, delta: float) -> list[float]:
        return self._growth(self.control, delta)

    @property
    def pointwise_constant(self) -> float:
        return max(lv.pointwise_bound for lv in self.punctured)


def _optimality_level(shape: Shape, res: int, p: float, high: Callable[[DiscreteDomain], np.ndarray],
                      deltas: Sequence[float], spec, K_of: Callable[[DiscreteDomain], np.ndarray]
                      ) -> OptimalityLevel:
    dom = make_shape(shape, res)
    itg = DoublePhaseIntegrand.on(dom, p)
    data = np.where(high(dom), 1.0, 0.0)
    sol = capsolve.dirichlet_solve(dom, itg, ScalarField(dom, data), spec)
    g = gradient_norm(sol.minimizer)
    active = dom.active_cells()
    vol = dom.cell_volume
    p_energy = float((g[active] ** p).sum() * vol)
    ints = {float(d): float((g[active] ** (p + d)).sum() * vol) for d in deltas}
    # pointwise bound |grad u|^p dist(x,K)^n / ||grad u||_p^p on cells of B(0,1) \ K
    K = K_of(dom)
    kpts = dom.coords()[K]
    centers = dom.cell_centers()
    dK = np.full(dom.cell_shape, np.inf)
    for kp in kpts:
        dK = np.minimum(dK, np.linalg.norm(centers - kp, axis=-1))
    region = active & (np.linalg.norm(centers, axis=-1) < 1.0)
    bound = float(np.max(g[region] ** p * dK[region] ** dom.dim) / p_energy)
    return OptimalityLevel(res, float(g[active].max()), bound, p_energy, ints)


def optimality_demo(n: int, p: float, q: float, puncture: str | Sequence[Sequence[float]],
                    resolutions: Sequence[int], deltas: Sequence[float] = (0.1, 0.2),
                    spec: capsolve.SolveSpec | None = None, control_radius: float = 0.25
                    ) -> OptimalityReport:
    """p-harmonic function in ``B(0,2) \\ K`` equal to 1 on a small puncture ``K``.

    ``puncture`` is ``"point"`` (the origin), ``"segment"`` (a short segment
    through the origin) or an explicit list of points.  The control replaces
    ``K`` by the fat obstacle ``closed B(0, control_radius)``.  ``q`` only
    labels the double-phase context of the demonstration; the solve uses the
    p-energy.
    """
    if n != 2:
        raise ValueError("the demonstration is two-dimensional")
    if not q >= p:
        raise ValueError("q must be at least p")
    if puncture == "point":
        shape = ball_minus_point_cluster((0.0, 0.0), 2.0, [(0.0, 0.0)])
        label = "point"
    elif puncture == "segment":
        shape = ball_minus_segment((0.0, 0.0), 2.0, (-1 / 16, 0.0), (1 / 16, 0.0))
        label = "segment"
    else:
        pts = [tuple(map(float, pt)) for pt in puncture]
        shape = ball_minus_point_cluster((0.0, 0.0), 2.0, pts)
        label = f"{len(pts)} points"

    def puncture_nodes(dom):
        return (dom.roles == Role.DIRICHLET) & (np.linalg.norm(dom.coords(), axis=-1) < 1.0)

    ctrl_shape = annulus((0.0, 0.0), control_radius, 2.0)

    def obstacle_nodes(dom):
        return dom.obstacle

    punct, ctrl = [], []
    for res in sorted(resolutions):
        punct.append(_optimality_level(shape, res, p, puncture_nodes, deltas, spec, puncture_nodes))
        ctrl.append(_optimality_level(ctrl_shape, res, p, obstacle_nodes, deltas, spec, obstacle_nodes))
    return OptimalityReport(p, [float(d) for d in deltas], punct, ctrl, label)


# ---------------------------------------------------------------------------
# iteration lemma arithmetic

def iteration_constant(alpha: float, theta: float) -> float:
    """Explicit ``c(alpha, theta)`` for the iteration lemma.

    If ``phi(t) <= theta phi(s) + A (s-t)**-alpha + B`` for ``a <= t < s <= b``,
    iterate along ``t_{i+1} = t_i + (1-lam) lam**i (b-a)`` with
    ``lam**alpha = (1+theta)/2``; summing the geometric series gives
    ``phi(a) <= c [A (b-a)**-alpha + B]`` with the value returned here.
    """
    if not 0 <= theta < 1 or not alpha > 0:
        raise ValueError("needs 0 <= theta < 1 and alpha > 0")
    lam = ((1 + theta) / 2) ** (1 / alpha)
    ratio = theta / lam ** alpha
    return max((1 - lam) ** -alpha / (1 - ratio), 1 / (1 - theta))


def iteration_bound(alpha: float, theta: float, A: float, B: float, a: float, b: float) -> float:
    if not a < b:
        raise ValueError("needs a < b")
    return iteration_constant(alpha, theta) * (A / (b - a) ** alpha + B)
