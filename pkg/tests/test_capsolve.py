import math

import numpy as np
import pytest

from capdp import capsolve, grid, integrand, verify
from capdp.field_ops import ScalarField, energy
from capdp.grid import DiscreteDomain, Role
from capdp.integrand import DoublePhaseIntegrand


@pytest.fixture(scope="module")
def annulus64():
    return grid.make_shape(grid.annulus((0, 0), 0.5, 1.0), 64)


# ---------------------------------------------------------------------------
# radial oracles

@pytest.mark.parametrize("n, p", [(2, 1.5), (2, 2.0), (2, 3.0), (3, 2.0), (3, 3.0), (3, 4.5)])
def test_closed_form_matches_quadrature(n, p):
    a = capsolve.radial_condenser_oracle(n, p, 0.5, 1.0)
    b = capsolve.radial_quadrature_oracle(n, p, 0.5, 1.0)
    assert a == pytest.approx(b, rel=1e-10)


def test_oracle_reference_values():
    assert capsolve.radial_condenser_oracle(2, 2.0, 0.5, 1.0) == pytest.approx(2 * math.pi / math.log(2))
    # n = 3, p = 2: 4 pi r R / (R - r)
    assert capsolve.radial_condenser_oracle(3, 2.0, 0.5, 1.0) == pytest.approx(4 * math.pi)
    assert capsolve.sphere_area(3) == pytest.approx(4 * math.pi)


def test_oracle_limit_and_monotonicity():
    lim = capsolve.radial_condenser_limit(3, 2.0, 0.5)
    assert lim == pytest.approx(2 * math.pi)
    vals = [capsolve.radial_condenser_oracle(3, 2.0, 0.5, R) for R in (1, 2, 4, 8, 64)]
    # capacity of a fixed ball decreases as the surrounding ball grows
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(lim, rel=0.01)
    with pytest.raises(ValueError):
        capsolve.radial_condenser_limit(2, 2.0, 0.5)


def test_oracle_rejects_bad_condenser():
    with pytest.raises(capsolve.InvalidCondenserError):
        capsolve.radial_condenser_oracle(2, 2.0, 1.0, 1.0)
    with pytest.raises(capsolve.InvalidCondenserError):
        capsolve.radial_quadrature_oracle(2, 2.0, 1.5, 1.0)


# ---------------------------------------------------------------------------
# capacity solves

def test_p_capacity_annulus_res64(annulus64):
    res = capsolve.p_capacity(annulus64, 2.0)
    assert res.converged
    assert res.value == pytest.approx(2 * math.pi / math.log(2), rel=0.03)
    assert res.minimizer.values.min() >= 0 and res.minimizer.values.max() <= 1


def test_minimizer_matches_log_profile():
    dom = grid.make_shape(grid.annulus((0, 0), 0.5, 1.0), 128)
    res = capsolve.p_capacity(dom, 2.0)
    r = np.maximum(np.linalg.norm(dom.coords(), axis=-1), 1e-12)
    exact = np.clip(np.log(1.0 / r) / math.log(2.0), 0.0, 1.0)
    inside = dom.interior
    assert np.max(np.abs(res.minimizer.values[inside] - exact[inside])) <= 0.02


def test_refinement_converges():
    exact = capsolve.radial_condenser_oracle(2, 3.0, 0.5, 1.0)
    errs = []
    for res in (16, 32, 64):
        dom = grid.make_shape(grid.annulus((0, 0), 0.5, 1.0), res)
        errs.append(abs(capsolve.p_capacity(dom, 3.0).value - exact) / exact)
    assert errs[0] > errs[1] > errs[2]


def test_clamped_minimizer_is_stationary(annulus64):
    res = capsolve.p_capacity(annulus64, 2.0)
    more = capsolve.p_capacity(annulus64, 2.0, capsolve.SolveSpec(max_iter=100),
                               init=res.minimizer.values)
    # restarting from the clamped minimizer finds no meaningful decrease
    assert more.value <= res.value * (1 + 1e-12)
    assert res.value - more.value <= 1e-6 * res.value


def test_history_is_monotone(annulus64):
    itg = DoublePhaseIntegrand.on(annulus64, 1.6, 2.2, integrand.radial_coefficient((0, 0)))
    res = capsolve.level_t_capacity(annulus64, itg, 1.0, capsolve.SolveSpec(record_history=True))
    h = np.array(res.history)
    assert len(h) > 10
    # accepted energies never increase within one smoothing level; the
    # smoothed energy can only jump up where delta shrinks
    jumps = np.flatnonzero(np.diff(h) > 0)
    assert len(jumps) <= len(capsolve.SolveSpec().deltas) - 1


def test_history_monotone_without_smoothing(annulus64):
    res = capsolve.p_capacity(annulus64, 3.0, capsolve.SolveSpec(record_history=True))
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 0)


def test_fixed_nodes_are_bit_exact():
    dom = grid.make_shape(grid.box((0, 0), (1, 1)), 16)
    rng = np.random.default_rng(7)
    vals = rng.normal(size=dom.shape)
    mask = dom.mask(Role.DIRICHLET)
    extra = {(5, 5): 0.123456789, (9, 3): -2.5}
    itg = DoublePhaseIntegrand.on(dom, 2.5)
    res = capsolve.solve_constrained_min(dom, itg, [(mask, vals), extra])
    out = res.minimizer.values
    assert np.array_equal(out[mask], vals[mask])
    assert out[5, 5] == 0.123456789 and out[9, 3] == -2.5


def test_conflicting_constraints_raise():
    dom = grid.make_shape(grid.box((0, 0), (1, 1)), 8)
    mask = dom.mask(Role.DIRICHLET)
    itg = DoublePhaseIntegrand.on(dom, 2.0)
    with pytest.raises(capsolve.InfeasibleConstraintsError):
        capsolve.solve_constrained_min(dom, itg, [(mask, 0.0), {(0, 0): 1.0}])
    with pytest.raises(ValueError):
        capsolve.solve_constrained_min(dom, itg, {(0, 0): 0.0})


def test_dirichlet_affine_data_is_reproduced():
    dom = grid.make_shape(grid.box((0, 0), (1, 1)), 16)
    x = dom.coords()
    f = ScalarField(dom, 0.3 + 2.0 * x[..., 0] - x[..., 1])
    itg = DoublePhaseIntegrand.on(dom, 3.0, 3.5, 1.0)
    res = capsolve.dirichlet_solve(dom, itg, f)
    assert res.converged
    # the energy is quadratic near its minimum, so a relative energy tolerance
    # of 1e-10 leaves node errors of order 1e-5
    assert np.max(np.abs(res.minimizer.values - f.values)) < 1e-5


def test_model_gradient_matches_finite_differences(annulus64):
    itg = DoublePhaseIntegrand.on(annulus64, 2.3, 3.1, integrand.radial_coefficient((0, 0), 2.0))
    model = capsolve._Model(annulus64, itg.p, itg.q, itg.cell_coefficient())
    rng = np.random.default_rng(11)
    x = rng.uniform(0, 1, model.size)
    _, g = model.value_grad(x)
    step = 1e-6
    for _ in range(20):
        d = rng.normal(size=model.size)
        d /= np.linalg.norm(d)
        fd = (model.value(x + step * d) - model.value(x - step * d)) / (2 * step)
        assert g @ d == pytest.approx(fd, rel=1e-5)


def test_model_energy_agrees_with_field_energy(annulus64):
    itg = DoublePhaseIntegrand.on(annulus64, 1.7, 2.4, integrand.radial_coefficient((0, 0)))
    model = capsolve._Model(annulus64, itg.p, itg.q, itg.cell_coefficient())
    rng = np.random.default_rng(12)
    x = rng.uniform(0, 1, annulus64.shape)
    assert model.value(x.ravel()) == pytest.approx(energy(ScalarField(annulus64, x), itg).total, rel=1e-12)


# ---------------------------------------------------------------------------
# level and infimal capacities

def test_level_capacity_constant_coefficient_formula():
    # with a constant the normalized profile problem has weight A = a t^(q-p)
    dom = grid.make_shape(grid.annulus((0, 0), 0.5, 1.0), 32)
    itg = DoublePhaseIntegrand.on(dom, 2.0, 2.0, 3.0)
    cp = capsolve.p_capacity(dom, 2.0).value
    # q = p: phi = (1 + a) t^p, normalization (1 + a) t^p, so cp^t = cp_p
    assert capsolve.level_t_capacity(dom, itg, 0.37).value == pytest.approx(cp, rel=1e-8)


def test_infimal_collapses_without_coefficient():
    dom = grid.make_shape(grid.annulus((0, 0), 0.25, 1.0), 32)
    itg = DoublePhaseIntegrand.on(dom, 2.0, 2.6, 0.0)
    ci = capsolve.infimal_capacity(dom, itg)
    cp = capsolve.p_capacity(dom, 2.0).value
    assert ci.value == pytest.approx(cp, rel=1e-6)


def test_infimal_reports_limit_at_large_levels():
    dom = grid.make_shape(grid.annulus((0, 0), 0.75, 3.0), 16)
    itg = DoublePhaseIntegrand.on(dom, 2.0, 2.8, 0.3)
    ci = capsolve.infimal_capacity(dom, itg)
    assert "LIMIT_T_INF" in ci.flags and "BOUNDARY_MINIMUM" in ci.flags
    assert ci.value <= min(v for _, v in ci.curve) * (1 + 1e-9)
    assert ci.value < capsolve.p_capacity(dom, 2.0).value


def test_infimal_is_below_every_sampled_level():
    dom = grid.make_shape(grid.annulus((0, 0), 0.5, 2.0), 16)
    itg = DoublePhaseIntegrand.on(dom, 2.0, 2.5, integrand.radial_coefficient((0, 0), 0.5))
    ci = capsolve.infimal_capacity(dom, itg)
    for t in (0.25, 1.0, 4.0):
        assert ci.value <= capsolve.level_t_capacity(dom, itg, t).value * (1 + 1e-6)


def _three_node(a_vals, h):
    roles = np.array([Role.DIRICHLET, Role.OBSTACLE, Role.DIRICHLET], dtype=np.int8)
    dom = DiscreteDomain(roles, h, (0.0,))
    return dom, DoublePhaseIntegrand.on(dom, 2.0, 3.0, np.asarray(a_vals, float), seminorm=1.0)


@pytest.mark.parametrize("a_vals, h", [((1.0, 2.0, 0.5), 2.0), ((0.0, 1.0, 1.0), 0.5),
                                      ((3.0, 3.0, 3.0), 1.5)])
def test_three_node_brute_force(a_vals, h):
    dom, itg = _three_node(a_vals, h)
    a = np.asarray(a_vals)
    cells = 0.5 * (a[:-1] + a[1:])
    a_min = a.min()

    def level(t):
        g = t / h
        e = h * sum(g ** 2 + c * g ** 3 for c in cells)
        return e / (t ** 2 + a_min * t ** 3)

    ts = np.logspace(-8, 8, 4001)
    brute = min(min(level(t) for t in ts), level(1e-12),
                (h * sum(c * h ** -3 for c in cells) / a_min) if a_min > 0 else math.inf)
    ci = capsolve.infimal_capacity(dom, itg)
    assert ci.value == pytest.approx(brute, rel=1e-6)
    cp = capsolve.p_capacity(dom, 2.0).value
    assert cp == pytest.approx(2.0 / h)
    meas = capsolve.open_set_measure(dom)
    bound = verify.lower_bound_constant(2.0, 3.0) * min(cp, meas * (cp / meas) ** 1.5)
    assert bound <= ci.value <= cp * (1 + 1e-9)


def test_coefficient_floor_uses_closure(annulus64):
    itg = DoublePhaseIntegrand.on(annulus64, 2.0, 2.5, integrand.linear_coefficient((1.0, 0.0)))
    assert capsolve.coefficient_floor(annulus64, itg) == 0.0
    assert capsolve.open_set_measure(annulus64) > math.pi


def test_solve_spec_validation():
    with pytest.raises(ValueError):
        capsolve.SolveSpec(tol=0)
    with pytest.raises(ValueError):
        capsolve.TSearch(t_min=2.0, t_max=1.0)
    dom = grid.make_shape(grid.annulus((0, 0), 0.5, 1), 16)
    with pytest.raises(ValueError):
        capsolve.level_t_capacity(dom, DoublePhaseIntegrand.on(dom, 2.0), 0.0)
