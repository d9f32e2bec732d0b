import dataclasses
import math

import numpy as np
import pytest
from scipy.integrate import quad

import growth_frictions as gf
from mc_reference import exit_mc

GAMMA = 0.003


def test_exit_probability_symmetric_driftless():
    # zero drift: exit split from the midpoint is exactly one half
    p = gf.exit_prob_up(0.0, 0.4, -0.7, 0.3, -0.2)
    assert p == pytest.approx(0.5, abs=1e-10)
    mp_half = gf.MarketParams(r=0.02, mu=0.10, sigma=0.4)
    c = mp_half.mu - mp_half.r - 0.5 * mp_half.sigma**2  # ~1e-17
    assert gf.exit_prob_up(c, 0.4, -0.7, 0.3, -0.2) == pytest.approx(0.5, abs=1e-10)


def test_exit_time_branches_agree():
    # the series branch and the direct formula agree across the switch
    vol, lo, hi, y = 0.4, -0.3, 0.4, 0.05
    for theta_w in (9e-4, 1.1e-3):
        drift = theta_w * vol**2 / (2 * (hi - lo))
        m = gf.expected_exit_time(drift, vol, lo, hi, y)
        # reference by downward Richardson from a clearly-safe drift scale
        p = gf.exit_prob_up(drift, vol, lo, hi, y)
        direct = (p * (hi - lo) - (y - lo)) / drift
        assert m == pytest.approx(direct, rel=1e-9)
    assert gf.expected_exit_time(0.0, vol, lo, hi, y) == pytest.approx(
        (y - lo) * (hi - y) / vol**2, rel=1e-12)


def test_exit_helpers_vs_monte_carlo(mp):
    c = mp.mu - mp.r - 0.5 * mp.sigma**2
    lo, hi, y0 = -0.3, 0.4, 0.05
    up, t_exit = exit_mc(c, mp.sigma, lo, hi, y0, 20000, 1e-3, 424242)
    p_hat = up.mean()
    se_p = up.std(ddof=1) / math.sqrt(up.size)
    m_hat = t_exit.mean()
    se_m = t_exit.std(ddof=1) / math.sqrt(t_exit.size)
    assert abs(p_hat - gf.exit_prob_up(c, mp.sigma, lo, hi, y0)) <= 3 * se_p
    assert abs(m_hat - gf.expected_exit_time(c, mp.sigma, lo, hi, y0)) <= 3 * se_m + 1e-3


def test_running_reward_of_one_is_exit_time(mp):
    c = mp.mu - mp.r - 0.5 * mp.sigma**2
    lo, hi = -0.5, 0.9
    for y in (-0.3, 0.0, 0.6):
        w = gf.expected_running_reward(lambda z: np.ones_like(z), c, mp.sigma, lo, hi, y)
        assert w == pytest.approx(gf.expected_exit_time(c, mp.sigma, lo, hi, y), abs=1e-12)


def test_running_reward_against_quadrature_reference(mp):
    # independent reference: integrate the Green kernel with adaptive
    # quadrature instead of fixed Gauss-Legendre
    c = mp.mu - mp.r - 0.5 * mp.sigma**2
    s2 = mp.sigma**2
    theta = 2 * c / s2
    lo, hi, y = -0.6, 1.1, 0.2
    fbar = lambda z: gf.growth_integrand_transformed(mp, z)
    ee = lambda u: -math.expm1(-theta * u) / theta
    low, _ = quad(lambda z: ee(z - lo) * math.exp(theta * (z - y)) * fbar(z),
                  lo, y, epsabs=1e-13, epsrel=1e-13)
    high, _ = quad(lambda z: ee(hi - z) * fbar(z), y, hi, epsabs=1e-13, epsrel=1e-13)
    reference = (2 / s2) * (low * ee(hi - y) + high * ee(y - lo)) / ee(hi - lo)
    w = gf.expected_running_reward(fbar, c, mp.sigma, lo, hi, y)
    assert w == pytest.approx(reference, abs=1e-10)


def test_renewal_matches_solver_value(mp, cp, sol):
    value = gf.evaluate_policy_renewal(mp, cp, sol.candidate)
    assert abs(value - (mp.r + sol.candidate.l)) <= 1e-8


def test_renewal_matches_monte_carlo(mp, cp, sol):
    cfg = gf.SimConfig(horizon=50.0, dt=1e-3, n_paths=200, base_seed=2)
    est = gf.estimate_growth_impulse(mp, cp, sol.candidate, cfg)
    value = gf.evaluate_policy_renewal(mp, cp, sol.candidate)
    assert abs(est.mean_growth - value) <= 3 * est.std_error


def test_renewal_decreases_with_delta(mp, cp, sol):
    heavier = gf.CostParams(delta=2e-3, gamma=cp.gamma)
    v1 = gf.evaluate_policy_renewal(mp, cp, sol.candidate)
    v2 = gf.evaluate_policy_renewal(mp, heavier, sol.candidate)
    assert v2 < v1


def test_renewal_rejects_degenerate_chain(mp, cp):
    cand = gf.BoundaryCandidate(l=0.02, x0=0.3, a=0.2, alpha=0.2 + 1e-13,
                                beta=0.3, b=0.9)
    with pytest.raises(gf.DegenerateChain):
        gf.evaluate_policy_renewal(mp, cp, cand)


def test_renewal_rejects_bad_ordering(mp, cp):
    cand = gf.BoundaryCandidate(l=0.02, x0=0.3, a=0.5, alpha=0.4, beta=0.6, b=0.9)
    with pytest.raises(ValueError):
        gf.evaluate_policy_renewal(mp, cp, cand)


def test_brute_force_finds_solver_candidate(mp, cp, sol):
    res = gf.brute_force_boundaries(mp, cp, sol.candidate, radius=4e-3, step=2e-3)
    c, b = sol.candidate, res.best
    step = 2e-3 * (1 + 1e-9)
    assert abs(b.a - c.a) <= step and abs(b.alpha - c.alpha) <= step
    assert abs(b.beta - c.beta) <= step and abs(b.b - c.b) <= step
    assert res.best_value >= res.values[:, 4].max() - 1e-15


def test_brute_force_grid_refinement_stable(mp, cp, sol):
    coarse = gf.brute_force_boundaries(mp, cp, sol.candidate, radius=4e-3, step=2e-3)
    fine = gf.brute_force_boundaries(mp, cp, sol.candidate, radius=4e-3, step=1e-3)
    for u, v in zip((coarse.best.a, coarse.best.alpha, coarse.best.beta, coarse.best.b),
                    (fine.best.a, fine.best.alpha, fine.best.beta, fine.best.b)):
        assert abs(u - v) <= 2e-3 * (1 + 1e-9)


def test_brute_force_rejects_bad_grid(mp, cp, sol):
    with pytest.raises(ValueError):
        gf.brute_force_boundaries(mp, cp, sol.candidate, radius=0.2, step=0.05)


def test_sweep_monotone(sweep, mp):
    rows = sweep.rows
    assert all(r2.gap_lo < r1.gap_lo for r1, r2 in zip(rows, rows[1:]))
    assert all(r2.gap_hi < r1.gap_hi for r1, r2 in zip(rows, rows[1:]))
    assert all(r2.rho > r1.rho for r1, r2 in zip(rows, rows[1:]))
    limit_rho = mp.r + sweep.limit.candidate.l0
    assert all(r.rho < limit_rho for r in rows)
    assert rows[-1].dist_A < 1e-2 and rows[-1].dist_B < 1e-2


def test_sweep_rows_satisfy_candidate_invariants(sweep):
    for row in sweep.rows:
        assert 0 < row.a < row.alpha < row.beta < row.b < 1
        assert 0.016 < row.l < 0.0288
        assert row.gap_lo > 0 and row.gap_hi > 0


def test_sweep_input_validation(mp):
    with pytest.raises(ValueError):
        gf.sweep_delta(mp, GAMMA, [1e-3, 1e-2])
    with pytest.raises(ValueError):
        gf.sweep_delta(mp, GAMMA, [0.9999])
    with pytest.raises(ValueError):
        gf.sweep_delta(mp, GAMMA, [])


def test_report_clean_sweep_has_no_flags(sweep):
    report = gf.convergence_report(sweep)
    assert report.flags == ()
    assert report.slope_l_gap > 0
    assert report.slope_gap_lo > 0 and report.slope_gap_hi > 0
    assert "flags                : 0" in report.text()


def test_report_flags_swapped_rows(sweep):
    rows = list(sweep.rows)
    rows[2], rows[3] = rows[3], rows[2]
    swapped = dataclasses.replace(sweep, rows=tuple(rows))
    report = gf.convergence_report(swapped)
    assert len(report.flags) == 1
