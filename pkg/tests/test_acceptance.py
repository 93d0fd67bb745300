"""Acceptance suite: one ``CRITERION k PASS/FAIL`` line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are printed
even when output capture is on.  The whole file takes a few minutes.
"""

import json
import math
import time

import numpy as np
import pytest

from capdp import capsolve, cli, experiments, field_ops, grid, integrand, verify
from capdp.grid import Role
from capdp.integrand import DoublePhaseIntegrand

pytestmark = pytest.mark.slow


def _verdict(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {k} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def _obstacle_instance(seed, coefficient=None):
    """Ball of radius in [0.5, 1] with 1 to 3 random disk obstacles, h = 1/32."""
    rng = np.random.default_rng(seed)
    R = rng.uniform(0.5, 1.0)
    base = grid.make_shape(grid.ball((0, 0), R), 32)
    x = base.coords()
    roles = base.roles.copy()
    for _ in range(rng.integers(1, 4)):
        c = rng.uniform(-0.4 * R, 0.4 * R, 2)
        rr = rng.uniform(0.05, 0.3) * R
        roles[(np.linalg.norm(x - c, axis=-1) <= rr) & (roles == Role.INTERIOR)] = Role.OBSTACLE
    dom = grid.DiscreteDomain(roles, base.spacing, base.origin)
    p = rng.uniform(1.5, 3.0)
    q = p * rng.uniform(1.05, 1.5)
    if coefficient is None:
        coefficient = [integrand.constant_coefficient(rng.uniform(0.1, 10)),
                       integrand.linear_coefficient(rng.uniform(-3, 3, 2)),
                       integrand.radial_coefficient((0, 0), rng.uniform(0.5, 5))][seed % 3]
    return dom, DoublePhaseIntegrand.on(dom, p, q, coefficient)


def _large_annulus_instance(seed):
    """Annulus with outer radius in [2, 3]: large |O| pushes the minimizing level to infinity."""
    rng = np.random.default_rng(1000 + seed)
    R = float(rng.choice([2.0, 2.5, 3.0]))
    dom = grid.make_shape(grid.annulus((0, 0), R / 4, R), 32)
    p = rng.uniform(1.6, 2.5)
    q = p * rng.uniform(1.1, 1.4)
    coef = [integrand.constant_coefficient(rng.uniform(0.2, 2)),
            integrand.radial_coefficient((0, 0), rng.uniform(0.3, 1))][seed % 2]
    return dom, DoublePhaseIntegrand.on(dom, p, q, coef)


def _annulus_interior(res):
    """The open annulus ``0.5 < |x| < 1`` with the hole outside the domain."""
    ann = grid.make_shape(grid.annulus((0, 0), 0.5, 1.0), res)
    roles = np.where(ann.roles == Role.INTERIOR, Role.INTERIOR, Role.EXTERIOR).astype(np.int8)
    return grid.DiscreteDomain(grid._assign_collar(roles), ann.spacing, ann.origin)


# ---------------------------------------------------------------------------

def test_criterion_01_radial_condenser(capsys):
    dom = grid.make_shape(grid.annulus((0, 0), 0.5, 1.0), 256)
    details, ok = [], True
    for p, tol in ((2.0, 0.02), (3.0, 0.03)):
        t0 = time.time()
        res = capsolve.p_capacity(dom, p)
        took = time.time() - t0
        oracle = capsolve.radial_condenser_oracle(2, p, 0.5, 1.0)
        assert oracle == pytest.approx(capsolve.radial_quadrature_oracle(2, p, 0.5, 1.0), rel=1e-10)
        err = abs(res.value / oracle - 1)
        ok &= err <= tol and took <= 60 and res.converged
        details.append(f"p={p:g} cap={res.value:.4f} oracle={oracle:.4f} err={err:.2%} {took:.0f}s")
    assert capsolve.radial_condenser_oracle(2, 2.0, 0.5, 1.0) == pytest.approx(2 * math.pi / math.log(2))
    _verdict(capsys, 1, ok, "; ".join(details))


def test_criterion_02_degenerate_coefficient(capsys):
    worst = 0.0
    for seed in range(10):
        dom, itg = _obstacle_instance(seed, coefficient=0.0)
        cp = capsolve.p_capacity(dom, itg.p).value
        ci = capsolve.infimal_capacity(dom, itg).value
        worst = max(worst, abs(ci / cp - 1))
    _verdict(capsys, 2, worst <= 1e-6, f"10 instances, max relative gap {worst:.2e}")


def test_criterion_03_capacity_bounds(capsys):
    fails, worst_up, worst_lo, limit_hits = [], 0.0, 0.0, 0
    cases = [_obstacle_instance(s) for s in range(14)] + [_large_annulus_instance(s) for s in range(6)]
    for k, (dom, itg) in enumerate(cases):
        b = verify.capacity_bounds_check(dom, itg)
        worst_up = max(worst_up, b.upper.implied_constant)
        worst_lo = max(worst_lo, b.lower.implied_constant)
        limit_hits += "LIMIT_T_INF" in b.upper.flags
        if b.upper.verdict != "PASS" or b.lower.verdict != "PASS":
            fails.append(k)
    _verdict(capsys, 3, not fails,
             f"20 instances, failures {fails}, max cp_inf/cp_p {worst_up:.4f}, "
             f"max bound/cp_inf {worst_lo:.4f}, t->inf minima {limit_hits}")


def test_criterion_04_counterexample(capsys):
    rep = verify.counterexample_report(2, 2.0, 3.0, 1.0, [0.25, 0.125, 0.0625, 0.03125], cells_per_radius=128)
    energy_ok = all(row.energy_rel_error <= 0.01 for row in rep.rows if row.r in (0.25, 0.125))
    sandwich_ok = all(row.sandwich_holds for row in rep.rows)
    growth = rep.growth_q()
    ok = energy_ok and sandwich_ok and all(g >= 1.5 for g in growth) and rep.spread_p() <= 0.3
    errs = ", ".join(f"{row.energy_rel_error:.1e}" for row in rep.rows)
    _verdict(capsys, 4, ok, f"energy errors [{errs}], sandwich {sandwich_ok}, "
             f"q-growth {[round(float(g), 2) for g in growth]}, p-spread {rep.spread_p():.3f}")


def test_criterion_05_scaling_identity(capsys):
    z = (0.3, -0.2)
    worst_resc, worst_ref = 0.0, 0.0
    for p in (1.5, 2.0, 3.0):
        unit = capsolve.p_capacity(grid.make_shape(grid.annulus((0, 0), 0.5, 1.0), 64), p).value
        for r in (0.25, 0.125, 0.0625):
            dom = grid.make_shape(grid.annulus(z, r / 2, r), 512)
            native = capsolve.p_capacity(dom, p).value
            scaled_dom, _ = grid.rescale_to_unit(dom, z, r)
            rescaled = capsolve.p_capacity(scaled_dom, p).value * r ** (2 - p)
            worst_resc = max(worst_resc, abs(native / rescaled - 1))
            worst_ref = max(worst_ref, abs(native / (unit * r ** (2 - p)) - 1))
    ok = worst_resc <= 0.05 and worst_ref <= 0.05
    _verdict(capsys, 5, ok, f"p in 1.5/2/3, 3 scales: native vs rescaled {worst_resc:.1e}, "
             f"native vs unit reference times r^(n-p) {worst_ref:.2%}")


def test_criterion_06_whitney(capsys):
    shapes = [grid.ball((0, 0), 1.0), grid.annulus((0, 0), 0.25, 1.0), grid.box((0, 0), (1, 1)),
              grid.ball_minus_point_cluster((0, 0), 1.0, [(0, 0), (0.5, 0)]),
              grid.complement_halfspace(2, 1.0)]
    ok, notes = True, []
    for shape in shapes:
        dom = grid.make_shape(shape, 64)
        dec = grid.whitney_decompose(dom)
        sandwich = float(np.mean(dec.sandwich_holds()))
        try:
            lab = dec.labels(dom.shape)
            exact = np.array_equal((lab >= 0) | dec.uncovered, dom.interior)
        except grid.DecompositionError:
            exact = False
        overlap = max(dec.max_overlap(5).values())
        ok &= sandwich == 1.0 and exact and overlap <= 5 ** 2 * 2 ** 2
        notes.append(f"{len(dec.cubes)} cubes, sandwich {sandwich:.0%}, exact cover {exact}, overlap {overlap}")
    _verdict(capsys, 6, ok, f"5 domains, overlap bound {5 ** 2 * 2 ** 2}: {'; '.join(notes)}")


def test_criterion_07_mazya_scale_free(capsys):
    dom = grid.make_shape(grid.box((-1.5, -1.5), (1.5, 1.5)), 128)
    r = np.linalg.norm(dom.coords(), axis=-1)
    u = field_ops.ScalarField(dom, np.maximum(1 - r, 0))
    itg = DoublePhaseIntegrand.on(dom, 2.0, 2.5, integrand.radial_coefficient((0, 0)))
    mid = integrand.admissible_m_range(2, 2.0, 2.5, itg.alpha).midpoint
    cvs, ok = {}, True
    for m in (2.0, mid):
        reps = [verify.mazya_check(u, (1.0, 0.0), rr, itg, m) for rr in (1 / 4, 1 / 8, 1 / 16, 1 / 32)]
        ok &= all(rep.verdict == "PASS" for rep in reps)
        cvs[m] = verify.coefficient_of_variation([rep.implied_constant for rep in reps])
    ok &= all(cv <= 0.5 for cv in cvs.values())
    _verdict(capsys, 7, ok, ", ".join(f"m={m:g} CV={cv:.3f}" for m, cv in cvs.items()))


def test_criterion_08_trend_suite(capsys):
    t0 = time.time()
    fat = _annulus_interior(64)
    itg = DoublePhaseIntegrand.on(fat, 2.0, 2.5, integrand.radial_coefficient((0, 0)))
    fam = field_ops.lipschitz_bump_family(fat, 10, seed=0)
    hardy = verify.hardy_integral_check(fat, itg, fam)
    poinc = verify.boundary_poincare_check(fat, itg, fam, cli._boundary_centers(fat, 8), [0.25, 0.125, 0.0625])
    nodes = sorted(set(cli._sample_interior(fat, 32, 0)) | set(verify.peak_nodes(fam)))
    point = verify.pointwise_hardy_check(fat, itg, fam, nodes)
    spans = {name: verify.family_span(reps) for name, reps in
             (("hardy", hardy), ("poincare", poinc), ("pointwise", point))}
    verdicts_ok = all(r.verdict in ("PASS", "SKIP") for r in hardy + poinc + point)

    disk = grid.make_shape(grid.ball_minus_point_cluster((0, 0), 1.0, [(0, 0)]), 256)
    itg2 = DoublePhaseIntegrand.on(disk, 2.0, 2.5, integrand.radial_coefficient((0, 0)))
    eps = [1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 128]
    ids = [f"eps={e}" for e in eps]
    wedges = field_ops.log_wedge_family(disk, (0, 0), 0.25, eps)
    growth = {}
    for name, reps in (
            ("hardy", verify.hardy_integral_check(disk, itg2, wedges, ids=ids)),
            ("poincare", verify.boundary_poincare_check(disk, itg2, wedges, [(0.0, 0.0)],
                                                        [0.25, 0.125, 0.0625], ids=ids)),
            ("pointwise", verify.pointwise_hardy_check(disk, itg2, wedges,
                                                       cli._sample_interior(disk, 64, 0), ids=ids))):
        per = verify.per_test_max(reps)
        growth[name] = per[ids[-1]] / per[ids[0]]
    took = time.time() - t0
    ok = (verdicts_ok and all(s <= 100 for s in spans.values())
          and all(g >= 2.0 for g in growth.values()) and took <= 1800)
    _verdict(capsys, 8, ok,
             "fat spans " + ", ".join(f"{k} {v:.1f}" for k, v in spans.items())
             + "; punctured growth " + ", ".join(f"{k} {v:.2f}x" for k, v in growth.items())
             + f"; {took:.0f}s")


def test_criterion_09_self_improvement(capsys):
    E = verify.BallComplement((0.0, 0.0), 1.0)
    itg = DoublePhaseIntegrand.on(grid.make_shape(grid.ball((0, 0), 1.0), 16), 2.0, 2.5, 1.0)
    rep = verify.self_improvement_scan(E, "p", [0.2], itg, E.boundary_samples(4), [0.5, 0.25, 0.125])
    factor = rep.factor(0.2)
    t = np.logspace(-6, 6, 100)
    a = np.concatenate([[0.0], np.logspace(-6, 6, 99)])
    sand = verify.auxiliary_sandwich(2.0, 2.5, 0.1, t, a)
    ok = factor >= 0.5 and sand["holds"] and sand["points"] == 100 * 100
    _verdict(capsys, 9, ok, f"eps=0.2 factor {factor:.3f}; sandwich ratios in "
             f"[{sand['min_ratio']:.3f}, {sand['max_ratio']:.3f}] on 100x100")


def test_criterion_10_numerics_hygiene(capsys, tmp_path):
    dom = grid.make_shape(grid.annulus((0, 0), 0.5, 1.0), 64)
    itg = DoublePhaseIntegrand.on(dom, 2.3, 3.1, integrand.radial_coefficient((0, 0), 2.0))
    model = capsolve._Model(dom, itg.p, itg.q, itg.cell_coefficient())
    rng = np.random.default_rng(11)
    x = rng.uniform(0, 1, model.size)
    _, g = model.value_grad(x)
    worst = 0.0
    for _ in range(20):
        d = rng.normal(size=model.size)
        d /= np.linalg.norm(d)
        step = 1e-6
        fd = (model.value(x + step * d) - model.value(x - step * d)) / (2 * step)
        worst = max(worst, abs(g @ d - fd) / abs(fd))

    trunc_ok = True
    for _ in range(100):
        u = field_ops.ScalarField(dom, np.where(dom.interior, rng.normal(0, 1, dom.shape), 0.0))
        level = rng.uniform(0.1, 2.0)
        trunc_ok &= field_ops.energy(field_ops.truncate(u, level), itg).total <= field_ops.energy(u, itg).total

    cfg = {"command": "hardy", "seed": 7, "integrand": {"p": 2, "q": 2.5, "coefficient": "radial:1.0"},
           "domain": {"shape": "annulus", "center": [0, 0], "r_in": 0.5, "r_out": 1.0, "resolution": 32}}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    for tag in ("a", "b"):
        cli.main(["--config", str(path), "--out", str(tmp_path / tag)])
    same = (tmp_path / "a" / "hardy.csv").read_bytes() == (tmp_path / "b" / "hardy.csv").read_bytes()
    ok = worst <= 1e-5 and trunc_ok and same
    _verdict(capsys, 10, ok, f"FD max rel error {worst:.1e} over 20 directions; truncation ok on 100 "
             f"fields: {trunc_ok}; identical CSV: {same}")


def test_criterion_11_optimality(capsys):
    rep = experiments.optimality_demo(2, 2.0, 2.2, "point", [16, 32, 64, 128], deltas=(0.2,))
    growth = rep.growth(0.2)
    control = rep.control_growth(0.2)
    bounds = [lv.pointwise_bound for lv in rep.punctured]
    ok = all(g >= 1.3 for g in growth) and all(abs(c - 1) <= 0.05 for c in control)
    _verdict(capsys, 11, ok,
             f"punctured growth {[round(g, 3) for g in growth]} (need >= 1.3), control "
             f"{[round(c, 3) for c in control]}, pointwise constant {max(bounds):.3f} "
             f"(levels {[round(b, 3) for b in bounds]})")
