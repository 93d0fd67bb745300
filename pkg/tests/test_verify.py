import math

import numpy as np
import pytest

from capdp import capsolve, grid, integrand, verify
from capdp.field_ops import ScalarField, lipschitz_bump_family
from capdp.integrand import DoublePhaseIntegrand, Phase


@pytest.fixture(scope="module")
def annulus32():
    dom = grid.make_shape(grid.annulus((0, 0), 0.5, 1.0), 32)
    # the annulus domain keeps the hole as obstacle; inequality checks want
    # the hole outside the domain, so turn OBSTACLE nodes into DIRICHLET ones
    roles = dom.roles.copy()
    roles[roles == grid.Role.OBSTACLE] = grid.Role.DIRICHLET
    out = grid.DiscreteDomain(grid._assign_collar(np.where(roles == grid.Role.INTERIOR, 0, 2)),
                              dom.spacing, dom.origin)
    return out


@pytest.fixture(scope="module")
def itg32(annulus32):
    return DoublePhaseIntegrand.on(annulus32, 2.0, 2.5, integrand.radial_coefficient((0, 0), 1.0))


@pytest.fixture(scope="module")
def family(annulus32):
    return lipschitz_bump_family(annulus32, 10, seed=0)


# ---------------------------------------------------------------------------
# reports

def test_thresholds():
    t = verify.Thresholds.from_dict({"family_span": 50})
    assert t.family_span == 50.0 and t.constant_cap == 1e4
    with pytest.raises(ValueError):
        verify.Thresholds.from_dict({"nonsense": 1})
    with pytest.raises(ValueError):
        verify.Thresholds(fat_ratio=-1)


def test_implied_constant_edge_cases():
    assert verify.implied_constant(0.0, 0.0) == 0.0
    assert verify.implied_constant(1.0, 0.0) == math.inf
    rep = verify.make_report("capacity_upper", 2.0, {"value": 1.0}, 1.5)
    assert rep.verdict == "FAIL" and rep.implied_constant == 2.0


def test_csv_row_layout():
    rep = verify.make_report("poincare", 1.0, dict(a_pm=0.0, grad_mean=1.0, p=2.0, q=2.5), 10.0,
                             z=(0.5, 0.25), r=0.125)
    row = rep.csv_row()
    assert len(row) == len(verify.CSV_COLUMNS)
    assert row[:3] == ["poincare", "0.5 0.25", "0.125"]
    assert row[-1] == "PASS"


def test_mazya_rhs_at_m_equal_p_reduces_to_poincare():
    for a, cap, G, p, q in [(0.3, 2.0, 0.7, 2.0, 2.5), (1.5, 0.1, 3.0, 1.8, 2.4), (0.0, 5.0, 1.1, 3.0, 3.6)]:
        lhs = verify._rhs_mazya(a, cap, p, p, q, G)
        rhs = verify._rhs_poincare(a * cap ** ((p - q) / p), G, p, q) / cap
        assert lhs == pytest.approx(rhs, rel=1e-13)


def test_reports_recompute_their_rhs(annulus32, itg32, family):
    reps = verify.hardy_integral_check(annulus32, itg32, family[:3])
    centers = [(0.5, 0.0), (0.0, -1.0)]
    reps += verify.boundary_poincare_check(annulus32, itg32, family[:3], centers, [0.25, 0.125])
    nodes = [tuple(i) for i in np.argwhere(annulus32.interior)[::97][:5]]
    reps += verify.pointwise_hardy_check(annulus32, itg32, family[:3], nodes)
    reps += verify.mean_value_hardy_check(annulus32, itg32, family[:3], nodes)
    checked = 0
    for rep in reps:
        if rep.verdict in ("PASS", "FAIL"):
            assert rep.recompute_rhs() == pytest.approx(rep.rhs_raw, rel=1e-12)
            checked += 1
    assert checked > 20


# ---------------------------------------------------------------------------
# obstacle sets and fatness

def test_obstacle_sets():
    bc = verify.BallComplement((0.0, 0.0), 1.0)
    assert bc.contains(np.array([[2.0, 0.0], [0.5, 0.0]])).tolist() == [True, False]
    assert all(bc.on_boundary(z) for z in bc.boundary_samples(8))
    hs = verify.HalfspaceSet((1.0, 0.0), 0.0)
    assert hs.contains(np.array([[-1.0, 3.0]]))[0]
    assert hs.on_boundary((0.0, 0.3)) and not hs.on_boundary((0.1, 0.0))
    ps = verify.PointSet(((0.0, 0.0),))
    assert ps.contains(np.zeros((1, 2))) is None
    assert ps.on_boundary((0.0, 0.0))
    pts = np.random.default_rng(0).uniform(size=(50, 2))
    sample = verify.farthest_point_sample(pts, 5)
    assert len(sample) == 5 and len({tuple(p) for p in sample}) == 5


def test_radii_validation():
    with pytest.raises(ValueError):
        verify._check_radii([0.5, 0.3])
    with pytest.raises(ValueError):
        verify._check_radii([0.25, 0.5])
    with pytest.raises(ValueError):
        verify._check_radii([2.0, 1.0])


def test_ball_complement_ratio_is_scale_free():
    E = verify.BallComplement((0.0, 0.0), 1.0)
    itg = DoublePhaseIntegrand.on(grid.make_shape(grid.ball((0, 0), 1.0), 8), 2.0)
    rep = verify.fatness_scan(E, "p", itg, [(1.0, 0.0)], [0.25, 0.125, 0.0625])
    ratios = [rep.min_ratio_at(r) for r in rep.radii]
    assert min(ratios) > 0.5
    assert max(ratios) - min(ratios) < 0.05


def test_center_off_the_boundary_rejected():
    E = verify.BallComplement((0.0, 0.0), 1.0)
    itg = DoublePhaseIntegrand.on(grid.make_shape(grid.ball((0, 0), 1.0), 8), 2.0)
    with pytest.raises(ValueError):
        verify.fatness_scan(E, "p", itg, [(0.5, 0.0)], [0.25])


def test_nested_sets_have_ordered_ratios():
    # {x_1 <= 0} lies inside the complement of B((1,0), 1); both touch the origin
    itg = DoublePhaseIntegrand.on(grid.make_shape(grid.ball((0, 0), 1.0), 8), 2.0)
    small = verify.fatness_scan(verify.HalfspaceSet((1.0, 0.0), 0.0), "p", itg, [(0.0, 0.0)], [0.5, 0.25])
    big = verify.fatness_scan(verify.BallComplement((1.0, 0.0), 1.0), "p", itg, [(0.0, 0.0)], [0.5, 0.25])
    for r in (0.5, 0.25):
        assert small.min_ratio_at(r) <= big.min_ratio_at(r) * (1 + 1e-9)


def test_point_ratio_decays_with_fixed_spacing():
    E = verify.PointSet(((0.0, 0.0),))
    itg = DoublePhaseIntegrand.on(grid.make_shape(grid.ball((0, 0), 1.0), 8), 2.0)
    rep = verify.fatness_scan(E, "p", itg, None, [0.5, 0.25, 0.125], nodes_per_radius=8, refine=1.0)
    ratios = [rep.min_ratio_at(r) for r in rep.radii]
    assert ratios[0] > ratios[1] > ratios[2]


def test_equivalence_probe_on_fat_set():
    E = verify.BallComplement((0.0, 0.0), 1.0)
    dom = grid.make_shape(grid.ball((0, 0), 1.0), 8)
    itg = DoublePhaseIntegrand.on(dom, 2.0, 2.5, 1.0)
    rep = verify.equivalence_probe(E, itg, [(1.0, 0.0)], [0.25, 0.125], nodes_per_radius=8)
    assert rep.p_fat and rep.infimal_fat and rep.consistent


# ---------------------------------------------------------------------------
# capacity bounds

def test_lower_bound_constant_is_sharp_for_two_point_split():
    # lam + (1 - lam)**s >= 2**(1 - s) with equality only in the limit; check on a grid
    for s in (1.1, 1.5, 2.0, 3.0):
        lam = np.linspace(0, 1, 10001)
        assert np.all(lam + (1 - lam) ** s >= 2 ** (1 - s) - 1e-15)
        assert verify.lower_bound_constant(2.0, 2.0 * s) == pytest.approx(2 ** (1 - s))


def test_capacity_bounds_check_annulus():
    dom = grid.make_shape(grid.annulus((0, 0), 0.5, 1.0), 16)
    itg = DoublePhaseIntegrand.on(dom, 2.0, 2.6, integrand.linear_coefficient((1.0, 0.5)))
    b = verify.capacity_bounds_check(dom, itg)
    assert b.upper.verdict == "PASS" and b.lower.verdict == "PASS"
    assert b.cp_inf <= b.cp_p * 1.02
    assert b.active_branch in ("p", "measure")


# ---------------------------------------------------------------------------
# inequality checks

def test_hardy_rejects_unsupported_field(annulus32, itg32):
    bad = ScalarField(annulus32, np.ones(annulus32.shape))
    with pytest.raises(verify.SupportViolationError):
        verify.hardy_integral_check(annulus32, itg32, [bad])


def test_hardy_family_span_is_moderate(annulus32, itg32, family):
    reps = verify.hardy_integral_check(annulus32, itg32, family)
    assert all(r.verdict == "PASS" for r in reps)
    assert verify.family_span(reps) <= 100


def test_poincare_skips_empty_balls(annulus32, itg32, family):
    reps = verify.boundary_poincare_check(annulus32, itg32, family[:1], [(5.0, 5.0), (1.0, 0.0)], [0.25])
    assert reps[0].verdict == "SKIP"
    assert reps[1].verdict == "PASS"


def test_lattice_ball_count(annulus32):
    h = annulus32.spacing
    inside = verify._lattice_ball_count(annulus32, (0.5, 0.0), 0.25)
    assert inside == verify.ball_cells(annulus32, (0.5, 0.0), 0.25).sum()
    # a ball straddling the grid edge still counts its full lattice area
    edge = verify._lattice_ball_count(annulus32, (1.0, 0.0), 0.25)
    assert edge * h * h == pytest.approx(np.pi / 16, rel=0.05)  # eight cells per radius
    assert edge > verify.ball_cells(annulus32, (1.0, 0.0), 0.25).sum()


def test_phase_specialized_ratio_bounds(annulus32, itg32, family):
    reps = verify.boundary_poincare_check(annulus32, itg32, family[:2], [(0.5, 0.0), (1.0, 0.0)],
                                          [0.25, 0.125])
    tags = set()
    for rep in reps:
        if rep.verdict == "SKIP":
            continue
        tag, ratio = verify.phase_specialized_ratio(itg32, rep)
        if rep.rhs_raw == 0:
            assert np.isnan(ratio)
            continue
        tags.add(tag)
        assert 1.0 - 1e-12 <= ratio <= 3.0 + 1e-12
    assert Phase.PQ_PHASE in tags


def test_mazya_on_tent_function():
    dom = grid.make_shape(grid.box((-1.5, -1.5), (1.5, 1.5)), 64)
    r = np.linalg.norm(dom.coords(), axis=-1)
    u = ScalarField(dom, np.maximum(1 - r, 0))
    itg = DoublePhaseIntegrand.on(dom, 2.0, 2.5, integrand.radial_coefficient((0, 0)))
    consts = [verify.mazya_check(u, (1.0, 0.0), rr, itg, 2.0).implied_constant for rr in (0.25, 0.125)]
    assert all(0 < c < 10 for c in consts)
    with pytest.raises(ValueError):
        verify.mazya_check(u, (1.0, 0.0), 0.25, itg, 1.0)


def test_mazya_degenerate_and_zero_cases():
    dom = grid.make_shape(grid.box((-1, -1), (1, 1)), 32)
    vals = np.where(dom.interior, 1.0, 0.0)
    u = ScalarField(dom, vals)
    itg = DoublePhaseIntegrand.on(dom, 2.0, 2.5, 1.0)
    # u has no zeros near the center, so the zero-set capacity vanishes
    rep = verify.mazya_check(u, (0.0, 0.0), 0.25, itg, 2.0)
    assert rep.verdict == "DEGENERATE" and "DEGENERATE" in rep.flags
    zero = verify.mazya_check(ScalarField(dom, np.zeros(dom.shape)), (0.0, 0.0), 0.25, itg, 2.0)
    assert zero.verdict == "PASS" and zero.lhs == 0.0


# ---------------------------------------------------------------------------
# counterexample, self-improvement and the auxiliary integrand

def test_counterexample_table():
    rep = verify.counterexample_report(2, 2.0, 3.0, 1.0, [0.25, 0.125, 0.0625], cells_per_radius=64)
    for row in rep.rows:
        assert row.sandwich_holds
        assert row.energy_rel_error < 0.01
        assert row.energy_exact == pytest.approx(2.0 * math.pi * row.r ** 2 * 0.75)
    assert all(g >= 1.5 for g in rep.growth_q())
    assert rep.spread_p() <= 0.3
    with pytest.raises(ValueError):
        verify.counterexample_report(2, 3.0, 3.5, 1.0, [0.25])


def test_radial_power_integral_closed_form():
    # n = 1: int_{r/2}^r (s - r/2)^p ds = (r/2)^(p+1)/(p+1)
    assert verify.radial_power_integral(1, 2.0, 0.5) == pytest.approx(0.25 ** 3 / 3)


def test_self_improvement_scan_rejects_low_exponents():
    E = verify.BallComplement((0.0, 0.0), 1.0)
    itg = DoublePhaseIntegrand.on(grid.make_shape(grid.ball((0, 0), 1.0), 8), 1.5)
    rep = verify.self_improvement_scan(E, "p", [0.2, 0.6], itg, [(1.0, 0.0)], [0.25], nodes_per_radius=8)
    assert 0.6 in rep.rejected
    assert rep.factor(0.2) >= 0.5


def test_auxiliary_sandwich():
    t = np.logspace(-4, 4, 100)
    a = np.concatenate([[0.0], np.logspace(-4, 4, 99)])
    res = verify.auxiliary_sandwich(2.0, 3.0, 0.3, t, a)
    assert res["holds"] and res["points"] == 10000
    assert 0.5 <= res["min_ratio"] <= res["max_ratio"] <= 2.0
    with pytest.raises(ValueError):
        verify.auxiliary_sandwich(2.0, 3.0, 1.0, t, a)


def test_trend_helpers():
    reps = [verify.make_report("capacity_upper", c, {"value": 1.0}, 1e4, test_id=tid)
            for c, tid in [(1.0, "a"), (4.0, "a"), (2.0, "b")]]
    assert verify.per_test_max(reps) == {"a": 4.0, "b": 2.0}
    assert verify.family_span(reps) == 2.0
    assert verify.family_span(reps, by_test=False) == 4.0
    assert verify.coefficient_of_variation([1, 1, 1]) == 0.0
    assert verify.growth_factors([1, 2, 6]) == [2.0, 3.0]
