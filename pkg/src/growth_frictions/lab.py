"""Experiment layer: semi-analytic policy evaluation, brute-force search,
the delta sweep and its convergence report.

``evaluate_policy_renewal`` prices a constant boundary strategy exactly and
independently of the boundary solver.  In transformed coordinates the
fraction process is a Brownian motion with drift c = mu - r - sigma^2/2
between trades, so each excursion from a restart point to the region edge
is a classical two-boundary exit problem: the exit split comes from the
scale function, the mean duration from the usual closed form, and the
accumulated growth integrand from a Green-function quadrature for the
two-point boundary value problem sigma^2 w''/2 + c w' = -fbar, w = 0 at
both edges.  Chaining the two restart states through their stationary law
turns (reward per cycle)/(length per cycle) into the long-run growth rate.

The brute-force search scans (a, alpha, beta, b) boxes with that evaluator,
giving a noise-free oracle for the solver's output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import limit as _limit
from . import qvi as _qvi
from ._slope import NonConvergence
from .market import (CostParams, MarketParams, growth_integrand_transformed,
                     to_centered, wealth_factor)

__all__ = [
    "DegenerateChain", "SweepRow", "SweepTable", "BruteForceResult",
    "ConvergenceReport", "exit_prob_up", "expected_exit_time",
    "expected_running_reward", "evaluate_policy_renewal",
    "brute_force_boundaries", "sweep_delta", "convergence_report",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(96)


class DegenerateChain(RuntimeError):
    """The two-state restart chain has a numerically absorbing state."""


def _scale_increment(u, theta):
    """(1 - exp(-theta u))/theta, the scale-function increment; -> u as
    theta -> 0."""
    u = np.asarray(u, dtype=float)
    if theta == 0.0:
        return u.copy()
    return -np.expm1(-theta * u) / theta


def exit_prob_up(drift: float, vol: float, lo, hi, y):
    """P(Brownian motion with the given drift hits hi before lo | start y)."""
    theta = 2.0 * drift / (vol * vol)
    out = _scale_increment(np.asarray(y) - lo, theta) / _scale_increment(hi - lo, theta)
    return out if out.ndim else float(out)


def expected_exit_time(drift: float, vol: float, lo, hi, y):
    """Mean exit time of (lo, hi); series branch when theta*(hi-lo) is tiny.

    The direct formula (p (hi-lo) - (y-lo))/drift cancels badly as the
    drift vanishes, so below |theta (hi-lo)| = 1e-3 a five-term expansion
    around the driftless parabola is used; both branches agree to about
    1e-12 relative at the switch.
    """
    scalar = np.ndim(lo) == 0 and np.ndim(hi) == 0 and np.ndim(y) == 0
    lo, hi, y = np.broadcast_arrays(np.atleast_1d(np.asarray(lo, dtype=float)),
                                    np.asarray(hi, dtype=float),
                                    np.asarray(y, dtype=float))
    s2 = vol * vol
    theta = 2.0 * drift / s2
    width = hi - lo
    dy = y - lo
    out = np.empty_like(dy)
    big = np.abs(theta * width) >= 1e-3
    if big.any():
        p = _scale_increment(dy[big], theta) / _scale_increment(width[big], theta)
        out[big] = (p * width[big] - dy[big]) / drift
    small = ~big
    if small.any():
        w_s, dy_s = width[small], dy[small]
        series = np.zeros_like(dy_s)
        coeff = (0.5, -1.0 / 6.0, 1.0 / 24.0, -1.0 / 120.0, 1.0 / 720.0)
        for k, ck in enumerate(coeff):
            series += ck * theta ** k * (w_s ** (k + 1) - dy_s ** (k + 1))
        out[small] = 2.0 * w_s * dy_s * series / (s2 * _scale_increment(w_s, theta))
    return float(out[0]) if scalar else out


def expected_running_reward(fn, drift: float, vol: float, lo, hi, y, n_nodes: int = 96):
    """E[ integral of fn(path) until exit of (lo, hi) ], start y.

    Green-function solution of sigma^2 w''/2 + drift w' = -fn with
    w(lo) = w(hi) = 0, by Gauss-Legendre quadrature on each side of y.
    Exact to quadrature accuracy (far below 1e-10 for smooth fn on the
    region widths that arise here).  lo, hi, y may be arrays of equal
    shape; fn must accept arrays.
    """
    scalar = np.ndim(lo) == 0 and np.ndim(hi) == 0 and np.ndim(y) == 0
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lo, hi, y = np.broadcast_arrays(lo, hi, y)
    if n_nodes == _GL_NODES.size:
        nodes, weights = _GL_NODES, _GL_WEIGHTS
    else:
        nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    theta = 2.0 * drift / (vol * vol)

    def half_integral(za, zb, transform):
        mid = 0.5 * (za + zb)[:, None]
        hw = 0.5 * (zb - za)[:, None]
        z = mid + hw * nodes[None, :]
        return hw[:, 0] * np.sum(weights[None, :] * transform(z), axis=1)

    low_part = half_integral(
        lo, y,
        lambda z: _scale_increment(z - lo[:, None], theta)
        * np.exp(theta * (z - y[:, None])) * fn(z))
    high_part = half_integral(
        y, hi,
        lambda z: _scale_increment(hi[:, None] - z, theta) * fn(z))
    out = (2.0 / (vol * vol)) * (
        low_part * _scale_increment(hi - y, theta)
        + high_part * _scale_increment(y - lo, theta)
    ) / _scale_increment(hi - lo, theta)
    return float(out[0]) if scalar else out


def _renewal_batch(mp: MarketParams, cp: CostParams, a, al, be, b) -> np.ndarray:
    """Growth rates of constant boundary strategies, vectorised over
    candidate arrays (all shape (n,))."""
    a_y, al_y, be_y, b_y = (to_centered(v) for v in (a, al, be, b))
    c = mp.mu - mp.r - 0.5 * mp.sigma * mp.sigma
    p_low = exit_prob_up(c, mp.sigma, a_y, b_y, al_y)
    p_high = exit_prob_up(c, mp.sigma, a_y, b_y, be_y)
    bad = (p_low <= 1e-12) | (p_low >= 1.0 - 1e-12) | (p_high <= 1e-12) | (p_high >= 1.0 - 1e-12)
    if np.any(bad):
        raise DegenerateChain(
            "restart chain numerically absorbing: exit probabilities "
            f"p(alpha)={np.atleast_1d(p_low)[np.argmax(np.atleast_1d(bad))]:.3e}, "
            f"p(beta)={np.atleast_1d(p_high)[np.argmax(np.atleast_1d(bad))]:.3e}")
    m_low = expected_exit_time(c, mp.sigma, a_y, b_y, al_y)
    m_high = expected_exit_time(c, mp.sigma, a_y, b_y, be_y)
    fbar = lambda z: growth_integrand_transformed(mp, z)
    w_low = expected_running_reward(fbar, c, mp.sigma, a_y, b_y, al_y)
    w_high = expected_running_reward(fbar, c, mp.sigma, a_y, b_y, be_y)
    cost_low = np.log(wealth_factor(cp, a, al))
    cost_high = np.log(wealth_factor(cp, b, be))
    # stationary split of the restart chain on {alpha, beta}
    pi_low = (1.0 - p_high) / (1.0 - p_high + p_low)
    pi_high = p_low / (1.0 - p_high + p_low)
    reward = (pi_low * (w_low + p_low * cost_high + (1.0 - p_low) * cost_low)
              + pi_high * (w_high + p_high * cost_high + (1.0 - p_high) * cost_low))
    length = pi_low * m_low + pi_high * m_high
    return mp.r + reward / length


def evaluate_policy_renewal(mp: MarketParams, cp: CostParams, cand) -> float:
    """Exact long-run growth of the constant boundary strategy given by
    cand's (a, alpha, beta, b), under the original cost convention."""
    if not cand.ordering_ok():
        raise ValueError("candidate ordering a < alpha <= beta < b violated")
    out = _renewal_batch(
        mp, cp,
        np.array([cand.a]), np.array([cand.alpha]),
        np.array([cand.beta]), np.array([cand.b]))
    return float(out[0])


@dataclass(frozen=True)
class BruteForceResult:
    best: "_qvi.BoundaryCandidate"
    best_value: float
    values: np.ndarray  # columns a, alpha, beta, b, growth


def brute_force_boundaries(mp: MarketParams, cp: CostParams, center,
                           radius: float, step: float,
                           chunk: int = 20000) -> BruteForceResult:
    """Exhaustive renewal evaluation on a 4-d box around center.

    The grid must stay inside (0, 1) with the ordering preserved at the
    extreme corners; l and x0 are not searched (the evaluator does not
    need them) and are copied from center into the reported argmax.
    """
    k = int(round(radius / step))
    offs = np.arange(-k, k + 1) * step
    if center.a - radius <= 0 or center.b + radius >= 1:
        raise ValueError("grid leaves (0, 1)")
    if (center.alpha - radius <= center.a + radius
            or center.beta - radius < center.alpha - radius
            or center.b - radius <= center.beta + radius):
        raise ValueError("grid breaks the ordering a < alpha <= beta < b")
    aa, al, be, bb = np.meshgrid(center.a + offs, center.alpha + offs,
                                 center.beta + offs, center.b + offs, indexing="ij")
    aa, al, be, bb = (v.ravel() for v in (aa, al, be, bb))
    growth = np.empty(aa.size)
    for i in range(0, aa.size, chunk):
        sl = slice(i, min(i + chunk, aa.size))
        growth[sl] = _renewal_batch(mp, cp, aa[sl], al[sl], be[sl], bb[sl])
    kbest = int(np.argmax(growth))
    best = _qvi.BoundaryCandidate(
        l=center.l, x0=center.x0,
        a=float(aa[kbest]), alpha=float(al[kbest]),
        beta=float(be[kbest]), b=float(bb[kbest]))
    return BruteForceResult(
        best=best, best_value=float(growth[kbest]),
        values=np.column_stack([aa, al, be, bb, growth]))


@dataclass(frozen=True)
class SweepRow:
    delta: float
    a: float
    alpha: float
    beta: float
    b: float
    l: float
    rho: float
    gap_lo: float
    gap_hi: float
    dist_A: float
    dist_B: float


@dataclass(frozen=True)
class SweepTable:
    market: MarketParams
    gamma: float
    rows: tuple
    limit: "_limit.LimitSolution"


def sweep_delta(mp: MarketParams, gamma: float, deltas) -> SweepTable:
    """Solve the boundary system along a decreasing delta grid.

    Each row warm starts from the previous one (falling back to full
    continuation if that stalls).  A failed row aborts the sweep; the
    raised NonConvergence carries the completed rows as .partial.
    """
    deltas = [float(d) for d in deltas]
    if not deltas or any(d <= 0 for d in deltas):
        raise ValueError("deltas must be positive")
    if any(d2 >= d1 for d1, d2 in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be sorted in decreasing order")
    if any(d >= 1.0 - gamma for d in deltas):
        raise ValueError("every delta must stay below 1 - gamma")
    lim = _limit.solve_limit(mp, gamma)
    A, B, l0 = lim.candidate.A, lim.candidate.B, lim.candidate.l0
    rows = []
    prev = None
    for delta in deltas:
        cp = CostParams(delta=delta, gamma=gamma)
        try:
            try:
                sol = _qvi.solve_boundaries(mp, cp, init=prev)
            except NonConvergence:
                if prev is None:
                    raise
                sol = _qvi.solve_boundaries(mp, cp)
        except NonConvergence as err:
            err.partial = SweepTable(market=mp, gamma=gamma, rows=tuple(rows), limit=lim)
            raise
        cand = sol.candidate
        prev = cand
        rows.append(SweepRow(
            delta=delta, a=cand.a, alpha=cand.alpha, beta=cand.beta, b=cand.b,
            l=cand.l, rho=mp.r + cand.l,
            gap_lo=cand.alpha - cand.a, gap_hi=cand.b - cand.beta,
            dist_A=abs(cand.a - A), dist_B=abs(cand.b - B),
        ))
    return SweepTable(market=mp, gamma=gamma, rows=tuple(rows), limit=lim)


@dataclass(frozen=True)
class ConvergenceReport:
    slope_gap_lo: float
    slope_gap_hi: float
    slope_l_gap: float
    flags: tuple
    limit_rho: float

    def text(self) -> str:
        lines = [
            "delta sweep convergence report",
            f"  log-log slope of gap_lo vs delta : {self.slope_gap_lo:+.4f}",
            f"  log-log slope of gap_hi vs delta : {self.slope_gap_hi:+.4f}",
            f"  log-log slope of (l0 - l) vs delta: {self.slope_l_gap:+.4f}",
            f"  limit growth rate r + l0          : {self.limit_rho:.10f}",
            f"  monotonicity flags                : {len(self.flags)}",
        ]
        lines.extend(f"    {flag}" for flag in self.flags)
        return "\n".join(lines)

    def csv_text(self) -> str:
        rows = [
            "metric,value",
            f"slope_gap_lo,{self.slope_gap_lo!r}",
            f"slope_gap_hi,{self.slope_gap_hi!r}",
            f"slope_l_gap,{self.slope_l_gap!r}",
            f"limit_rho,{self.limit_rho!r}",
            f"n_flags,{len(self.flags)}",
        ]
        return "\n".join(rows) + "\n"


def convergence_report(table: SweepTable) -> ConvergenceReport:
    """Descriptive log-log slopes plus monotonicity flags, one per bad
    adjacent pair of rows."""
    rows = table.rows
    if len(rows) < 3:
        raise ValueError("report needs at least 3 sweep rows")
    l0 = table.limit.candidate.l0
    flags = []
    for i, (r1, r2) in enumerate(zip(rows, rows[1:])):
        problems = []
        if not r2.delta < r1.delta:
            problems.append("delta not decreasing")
        if not r2.rho > r1.rho:
            problems.append("rho not increasing")
        if not r2.gap_lo < r1.gap_lo:
            problems.append("gap_lo not decreasing")
        if not r2.gap_hi < r1.gap_hi:
            problems.append("gap_hi not decreasing")
        if problems:
            flags.append(f"rows {i}-{i + 1}: " + "; ".join(problems))
    for i, row in enumerate(rows):
        if not row.rho < table.market.r + l0:
            flags.append(f"row {i}: rho does not stay below the limit value")
    ld = np.log([r.delta for r in rows])
    slope_lo = float(np.polyfit(ld, np.log([r.gap_lo for r in rows]), 1)[0])
    slope_hi = float(np.polyfit(ld, np.log([r.gap_hi for r in rows]), 1)[0])
    lgap = np.array([l0 - r.l for r in rows])
    slope_l = float(np.polyfit(ld, np.log(np.maximum(lgap, 1e-300)), 1)[0])
    return ConvergenceReport(
        slope_gap_lo=slope_lo, slope_gap_hi=slope_hi, slope_l_gap=slope_l,
        flags=tuple(flags), limit_rho=table.market.r + l0,
    )
