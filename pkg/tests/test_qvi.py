import dataclasses

import numpy as np
import pytest
from scipy.integrate import quad

import growth_frictions as gf
from growth_frictions.market import EPS

FIG2_L_LOW = 0.016    # f(1): lower bound on the growth excess
FIG2_L_HIGH = 0.0288  # f(hhat): upper bound


def test_slope_anchor_zero(mp):
    for x0, l in ((0.55, 0.025), (0.3, 0.02), (0.7, 0.028)):
        assert gf.slope_g(mp, x0, x0, l) == pytest.approx(0.0, abs=1e-15)


def test_slope_anchor_zero_knife_edge():
    mp_half = gf.MarketParams(r=0.02, mu=0.10, sigma=0.4)  # hhat = 1/2, f(1) ~ 0
    assert gf.slope_g(mp_half, 0.55, 0.55, 0.02) == pytest.approx(0.0, abs=1e-15)


def test_slope_solves_continuation_ode(mp):
    x0, l = 0.55, 0.025
    x = 0.5
    h = 1e-6
    g_val = gf.slope_g(mp, x, x0, l)
    g_fd = (gf.slope_g(mp, x + h, x0, l) - gf.slope_g(mp, x - h, x0, l)) / (2 * h)
    resid = gf.apply_generator(mp, 0.0, g_val, g_fd, x) + gf.growth_integrand(mp, x) - l
    assert abs(resid) <= 1e-6


@pytest.mark.parametrize("params", [
    dict(r=0.0, mu=0.096, sigma=0.4),    # exponent 0.2
    dict(r=0.02, mu=0.10, sigma=0.4),    # knife edge, exponent ~ 0
    dict(r=0.02, mu=0.1 + 8e-10, sigma=0.4),  # just off the knife edge
])
def test_slope_integral_matches_quadrature(params):
    mp = gf.MarketParams(**params)
    x0, l = 0.55, 0.02
    val, _ = quad(lambda y: gf.slope_g(mp, y, x0, l), 0.3, 0.7,
                  epsabs=1e-13, epsrel=1e-13)
    closed = gf.slope_g_integral(mp, 0.3, 0.7, x0, l)
    assert closed == pytest.approx(val, abs=1e-12)


def test_slope_dx_at_anchor(mp):
    x0, l = 0.55, 0.025
    expected = (l - gf.growth_integrand(mp, x0)) / (
        0.5 * mp.sigma**2 * x0**2 * (1 - x0) ** 2)
    assert gf.slope_g_dx(mp, x0, x0, l) == pytest.approx(expected, rel=1e-12)


def test_slope_dx_matches_finite_difference(mp):
    x, x0, l = 0.5, 0.55, 0.025
    h = 1e-6
    fd = (gf.slope_g(mp, x + h, x0, l) - gf.slope_g(mp, x - h, x0, l)) / (2 * h)
    assert gf.slope_g_dx(mp, x, x0, l) == pytest.approx(fd, abs=1e-6)


def test_slope_domain_rejection(mp):
    with pytest.raises(ValueError):
        gf.slope_g(mp, 0.0, 0.5, 0.02)
    with pytest.raises(ValueError):
        gf.slope_g(mp, 0.5, 1.0, 0.02)


def test_residuals_vanish_at_solution(mp, cp, sol):
    res = gf.residual_system(mp, cp, sol.candidate)
    assert np.max(np.abs(res)) <= 1e-10


def test_residuals_react_to_perturbation(mp, cp, sol):
    cand = dataclasses.replace(sol.candidate, b=sol.candidate.b + 1e-3)
    res = gf.residual_system(mp, cp, cand)
    assert abs(res[3]) + abs(res[5]) > 1e-12


def test_residuals_reject_bad_ordering(mp, cp, sol):
    cand = dataclasses.replace(sol.candidate, alpha=sol.candidate.beta + 0.01)
    with pytest.raises(gf.ParameterDegeneracy):
        gf.residual_system(mp, cp, cand)


def test_tiny_gamma_closes_target_gap(mp):
    sol = gf.solve_boundaries(mp, gf.CostParams(delta=1e-3, gamma=1e-8))
    assert sol.candidate.beta - sol.candidate.alpha < 1e-3


def test_solution_bounds_and_ordering(mp, cp, sol):
    c = sol.candidate
    assert sol.residual_norm <= 1e-10
    assert 0 < c.a < c.alpha < c.x0 < c.beta < c.b < 1
    assert FIG2_L_LOW < c.l < FIG2_L_HIGH
    assert sol.original_cost_optimal == (c.a <= c.alpha * (1 - cp.delta))
    assert sol.original_cost_optimal


def test_growth_excess_monotone_in_delta(mp, cp, sol):
    coarse = gf.solve_boundaries(mp, gf.CostParams(delta=1e-2, gamma=cp.gamma))
    assert sol.candidate.l > coarse.candidate.l


def test_multi_start_agreement(mp, cp, sol):
    rng = np.random.default_rng(5)
    base = sol.candidate
    results = []
    for _ in range(5):
        jitter = rng.uniform(-1.0, 1.0, size=4)
        init = gf.BoundaryCandidate(
            l=base.l * (1 + 0.1 * rng.uniform(-1, 1)),
            x0=base.x0 + 0.02 * rng.uniform(-1, 1),
            a=base.a + 0.02 * jitter[0],
            alpha=base.alpha + 0.005 * jitter[1],
            beta=base.beta + 0.005 * jitter[2],
            b=base.b + 0.02 * jitter[3],
        )
        results.append(gf.solve_boundaries(mp, cp, init=init).candidate.as_vector())
    results = np.array(results)
    assert np.max(results.max(axis=0) - results.min(axis=0)) <= 1e-8


def test_degenerate_inputs_rejected(mp):
    with pytest.raises(gf.ParameterDegeneracy):
        gf.solve_boundaries(mp, gf.CostParams(delta=0.0, gamma=0.003))
    with pytest.raises(gf.ParameterDegeneracy):
        gf.solve_boundaries(mp, gf.CostParams(delta=1e-3, gamma=0.0))


def test_value_anchors(mp, cp, sol, vf):
    c = sol.candidate
    assert vf.u(c.a) == pytest.approx(gf.trade_cost_gamma(cp, c.a, c.alpha), abs=1e-15)
    # smooth pasting at b: interior slope meets the cost slope
    assert vf.du(c.b) == pytest.approx(-cp.gamma / (1 - cp.delta - cp.gamma * c.b), abs=1e-8)


def test_value_one_sided_derivatives(mp, cp, sol, vf):
    c = sol.candidate
    eps = 1e-9
    for kink in (c.a, c.alpha, c.beta, c.b):
        assert vf.du(kink - eps) == pytest.approx(vf.du(kink + eps), abs=1e-8)


def test_value_maximum_near_anchor(sol, vf):
    grid = np.arange(EPS, 1.0, 1e-4)
    k = int(np.argmax(vf.u(grid)))
    assert abs(grid[k] - sol.candidate.x0) <= 1e-3


def test_value_second_derivative_matches_differences(sol, vf):
    c = sol.candidate
    h = 1e-6
    grid = np.linspace(0.05, 0.95, 301)
    kinks = np.array([c.a, c.alpha, c.beta, c.b])
    keep = np.min(np.abs(grid[:, None] - kinks[None, :]), axis=1) > 1e-3
    grid = grid[keep]
    fd = (vf.du(grid + h) - vf.du(grid - h)) / (2 * h)
    assert np.max(np.abs(fd - vf.ddu(grid))) <= 1e-5


def test_verification_passes(mp, cp, vf):
    report = gf.verify_qvi(mp, cp, vf, 2001, tol=1e-6)
    assert report.passed
    assert report.max_interior_residual <= 1e-6
    assert report.max_obstacle_excess <= 1e-6
    # the obstacle equality at b is achieved at beta (and at a at alpha)
    assert report.equality_target_high == pytest.approx(vf.candidate.beta, abs=1e-3)
    assert report.equality_target_low == pytest.approx(vf.candidate.alpha, abs=1e-3)


def test_verification_detects_corrupted_growth_rate(mp, cp, sol, vf):
    corrupted = dataclasses.replace(
        vf, candidate=dataclasses.replace(sol.candidate, l=sol.candidate.l + 1e-4))
    report = gf.verify_qvi(mp, cp, corrupted, 501, tol=1e-6)
    assert report.max_interior_residual > 5e-5
    assert not report.passed


def test_exterior_slope_domination(mp, cp, sol):
    c = sol.candidate
    gm, dl = cp.gamma, cp.delta
    xs = np.linspace(EPS, c.a - 1e-6, 200)
    g_lo = gf.slope_g(mp, xs, c.x0, c.l)
    assert np.all(g_lo < gm / (1 - dl + gm * xs))
    xs = np.linspace(c.b + 1e-6, 1 - EPS, 200)
    g_hi = gf.slope_g(mp, xs, c.x0, c.l)
    assert np.all(g_hi > -gm / (1 - dl - gm * xs))


def test_strict_second_order_margins(mp, cp, sol):
    c = sol.candidate
    gm, dl = cp.gamma, cp.delta
    margin = 1e-12
    assert gf.slope_g_dx(mp, c.beta, c.x0, c.l) < -gm**2 / (1 - gm * c.beta) ** 2 - margin
    assert gf.slope_g_dx(mp, c.b, c.x0, c.l) > -gm**2 / (1 - dl - gm * c.b) ** 2 + margin
    assert gf.slope_g_dx(mp, c.alpha, c.x0, c.l) < -gm**2 / (1 + gm * c.alpha) ** 2 - margin
    assert gf.slope_g_dx(mp, c.a, c.x0, c.l) > -gm**2 / (1 - dl + gm * c.a) ** 2 + margin


def test_continuation_trace_recorded(mp, cp, sol):
    deltas = [d for d, _ in sol.continuation_trace]
    assert deltas[0] == pytest.approx(1e-2)
    assert deltas[-1] == pytest.approx(cp.delta)
    assert all(d2 <= d1 for d1, d2 in zip(deltas, deltas[1:]))


def test_continuation_walks_upward_for_large_delta(mp):
    sol = gf.solve_boundaries(mp, gf.CostParams(delta=0.05, gamma=0.003))
    assert sol.residual_norm <= 1e-10
    c = sol.candidate
    assert 0 < c.a < c.alpha < c.x0 < c.beta < c.b < 1
    deltas = [d for d, _ in sol.continuation_trace]
    assert deltas[0] == pytest.approx(1e-2)
    assert deltas[-1] == pytest.approx(0.05)
