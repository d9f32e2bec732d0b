"""Optimal rebalancing boundaries under fixed plus proportional costs.

The optimal strategy waits until the risky fraction leaves (a, b) and then
rebalances to alpha (after a low exit) or beta (after a high exit).  The six
unknowns (l, x0, a, alpha, beta, b), with l the excess growth rate over the
interest rate and x0 the zero of the slope function, solve a square system
of smooth-pasting and value-matching equations:

    g(alpha) =  gamma/(1 + gamma alpha)          first-order optimality of
    g(beta)  = -gamma/(1 - gamma beta)           the restart targets
    g(a)     =  gamma/(1 - delta + gamma a)      C1 pasting at the
    g(b)     = -gamma/(1 - delta - gamma b)      trade triggers
    int_a^alpha g + cost(a, alpha) = 0           value matching across
    int_beta^b g - cost(b, beta)   = 0           the rebalancing jumps

solved by damped Newton with numerical continuation in delta.  The value
function u is then assembled piecewise from the trade cost outside [a, b]
and the integral of g inside, and checked against the variational
inequality max{Du + f - l, Mu - u} = 0 on a grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import limit as _limit
from ._slope import (NonConvergence, ParameterDegeneracy, damped_newton,
                     slope_g, slope_g_dx, slope_g_integral)
from .market import (EPS, CostParams, MarketParams, ParameterError,
                     apply_generator, from_centered, growth_integrand,
                     merton_fraction, to_centered, trade_cost_gamma)

__all__ = [
    "BoundaryCandidate", "BoundarySolution", "ValueFunction", "VerificationReport",
    "slope_g", "slope_g_dx", "slope_g_integral", "residual_system",
    "solve_boundaries", "build_value", "verify_qvi",
    "NonConvergence", "ParameterDegeneracy",
]

CONTINUATION_DELTA_START = 1e-2
RESIDUAL_TOL = 1e-10
PASTING_TOL = 1e-8


@dataclass(frozen=True)
class BoundaryCandidate:
    """The six unknowns of the fixed-plus-proportional problem.

    At a solution: 0 < a < alpha <= x0 <= beta < b < 1 (strictly
    alpha < x0 < beta when gamma > 0) and max{f(0), f(1)} < l < f(hhat).
    Intermediate Newton iterates need not satisfy any of this.
    """

    l: float
    x0: float
    a: float
    alpha: float
    beta: float
    b: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.l, self.x0, self.a, self.alpha, self.beta, self.b])

    @classmethod
    def from_vector(cls, v) -> "BoundaryCandidate":
        return cls(*(float(c) for c in v))

    def ordering_ok(self) -> bool:
        return (0.0 < self.a < self.alpha <= self.beta < self.b < 1.0
                and 0.0 < self.x0 < 1.0)

    def check_invariants(self, mp: MarketParams, cp: CostParams) -> None:
        """Full solution invariants; raises ParameterError naming the breach."""
        if not self.ordering_ok():
            raise ParameterError("0 < a < alpha <= beta < b < 1")
        if not self.alpha <= self.x0 <= self.beta:
            raise ParameterError("alpha <= x0 <= beta")
        if cp.gamma > 0 and not self.alpha < self.x0 < self.beta:
            raise ParameterError("alpha < x0 < beta for gamma > 0")
        lo = max(growth_integrand(mp, 0.0), growth_integrand(mp, 1.0))
        hi = growth_integrand(mp, merton_fraction(mp))
        if not lo < self.l < hi:
            raise ParameterError("max{f(0), f(1)} < l < f(hhat)")


@dataclass(frozen=True)
class BoundarySolution:
    candidate: BoundaryCandidate
    residual_norm: float
    newton_iters: int
    continuation_trace: tuple = ()
    original_cost_optimal: bool = False


def residual_system(mp: MarketParams, cp: CostParams, cand: BoundaryCandidate) -> np.ndarray:
    """The six smooth-pasting/value-matching residuals at a candidate.

    Only the ordering a < alpha <= beta < b inside (0, 1) is required;
    x0 may sit anywhere inside (0, 1) while the solver iterates.
    """
    if not cand.ordering_ok():
        raise ParameterDegeneracy("candidate ordering a < alpha <= beta < b violated")
    l, x0 = cand.l, cand.x0
    a, al, be, b = cand.a, cand.alpha, cand.beta, cand.b
    gm, dl = cp.gamma, cp.delta
    return np.array([
        slope_g(mp, al, x0, l) - gm / (1.0 + gm * al),
        slope_g(mp, be, x0, l) + gm / (1.0 - gm * be),
        slope_g(mp, a, x0, l) - gm / (1.0 - dl + gm * a),
        slope_g(mp, b, x0, l) + gm / (1.0 - dl - gm * b),
        slope_g_integral(mp, a, al, x0, l) + trade_cost_gamma(cp, a, al),
        slope_g_integral(mp, be, b, x0, l) - trade_cost_gamma(cp, b, be),
    ])


def _newton_on_candidate(mp, cp, cand0):
    def residual(v):
        return residual_system(mp, cp, BoundaryCandidate.from_vector(v))

    v, iters, norm = damped_newton(residual, cand0.as_vector(), tol=RESIDUAL_TOL)
    return BoundaryCandidate.from_vector(v), iters, norm


def _heuristic_initializer(mp, cp_delta, lim_cand):
    """Seed the delta-start solve from the pure-proportional limits.

    Boundary gaps open like a fractional power of delta; the 1/3 exponent
    is only an initializer choice.  The seed growth excess l0 - delta is
    clamped into the admissible band (max{f(0), f(1)}, l0), since it goes
    below the floor whenever delta is comparable to the attainable excess.
    """
    A, B, l0 = lim_cand.A, lim_cand.B, lim_cand.l0
    c = (B - A) / 4.0
    off = c * cp_delta ** (1.0 / 3.0)
    a, al = A - off, A + off
    be, b = B - off, B + off
    while not (EPS < a and b < 1.0 - EPS and al < be):
        off *= 0.5
        a, al, be, b = A - off, A + off, B - off, B + off
    floor = max(growth_integrand(mp, 0.0), growth_integrand(mp, 1.0))
    l = max(l0 - cp_delta, floor + 0.25 * (l0 - floor))
    hhat = merton_fraction(mp)
    span = be - al
    x0 = min(max(hhat, al + 1e-3 * span), be - 1e-3 * span)
    return BoundaryCandidate(l=l, x0=x0, a=a, alpha=al, beta=be, b=b)


def _oracle_seed(mp, cp, lim_cand):
    """Seed Newton by maximising the exact renewal value of the policy over
    log-spaced widening/inset offsets around the reflecting limits.

    The plain heuristic assumes the no-trade region opens symmetrically,
    which fails badly for lopsided Merton fractions; searching the policy
    value directly (cheap: the evaluator is closed-form plus quadrature)
    lands inside the Newton basin regardless of the region's shape.
    """
    from .lab import _renewal_batch  # deferred: lab imports this module

    a_lim = to_centered(lim_cand.A)
    b_lim = to_centered(lim_cand.B)
    widen = np.geomspace(5e-3, 4.0, 14)
    inset = np.geomspace(2e-3, 2.0, 12)
    best = None
    for _ in range(2):
        u1, u2, v1, v2 = (g.ravel() for g in np.meshgrid(widen, widen, inset, inset,
                                                         indexing="ij"))
        a_y, b_y = a_lim - u1, b_lim + u2
        al_y, be_y = a_y + v1, b_y - v2
        keep = al_y < be_y
        a = from_centered(a_y[keep])
        al = from_centered(al_y[keep])
        be = from_centered(be_y[keep])
        b = from_centered(b_y[keep])
        keep2 = (a > EPS) & (b < 1.0 - EPS)
        a, al, be, b = a[keep2], al[keep2], be[keep2], b[keep2]
        values = np.full(a.shape, -np.inf)
        chunk = 40000
        for i in range(0, a.size, chunk):
            sl = slice(i, min(i + chunk, a.size))
            try:
                values[sl] = _renewal_batch(mp, cp, a[sl], al[sl], be[sl], b[sl])
            except (ValueError, RuntimeError):
                pass
        k = int(np.argmax(values))
        best = (float(a[k]), float(al[k]), float(be[k]), float(b[k]), float(values[k]))
        widen = np.unique(np.concatenate([
            (a_lim - to_centered(best[0])) * np.geomspace(0.5, 2.0, 7),
            (to_centered(best[3]) - b_lim) * np.geomspace(0.5, 2.0, 7)]))
        inset = np.unique(np.concatenate([
            (to_centered(best[1]) - to_centered(best[0])) * np.geomspace(0.5, 2.0, 7),
            (to_centered(best[3]) - to_centered(best[2])) * np.geomspace(0.5, 2.0, 7)]))
    a, al, be, b, value = best
    floor = max(growth_integrand(mp, 0.0), growth_integrand(mp, 1.0))
    l = max(value - mp.r, floor + 1e-3 * (lim_cand.l0 - floor))
    x0 = from_centered(0.5 * (to_centered(al) + to_centered(be)))
    x0 = min(max(x0, al + 1e-3 * (be - al)), be - 1e-3 * (be - al))
    return BoundaryCandidate(l=l, x0=x0, a=a, alpha=al, beta=be, b=b)


def _perturbed(cand, k):
    """Deterministic retry initializers: progressively widen the targets."""
    shift = 0.2 * (k + 1)
    al = cand.alpha - shift * (cand.alpha - cand.a) * 0.5
    be = cand.beta + shift * (cand.b - cand.beta) * 0.5
    x0 = 0.5 * (al + be)
    return BoundaryCandidate(l=cand.l * (1.0 - 0.02 * (k + 1)), x0=x0,
                             a=cand.a, alpha=al, beta=be, b=cand.b)


def _solve_at_delta(mp, cp, init, trace):
    last_err = None
    cand0 = init
    for attempt in range(4):
        try:
            cand, iters, norm = _newton_on_candidate(mp, cp, cand0)
        except (ValueError, ParameterDegeneracy) as err:
            last_err = err
            cand0 = _perturbed(init, attempt)
            continue
        collapsed = cp.gamma > 0 and not cand.alpha < cand.beta
        if norm <= RESIDUAL_TOL and not collapsed:
            return cand, iters, norm
        last_err = NonConvergence(
            f"residual {norm:.3e} at delta={cp.delta:g}"
            + (" (alpha = beta collapse)" if collapsed else ""), trace)
        cand0 = _perturbed(init, attempt)
    raise last_err if last_err is not None else NonConvergence("newton failed", trace)


def _continuation_walk(mp, gamma, cand, d_from, d_to, trace):
    """Track the root family from d_from to d_to along geometric legs
    (factor 1/2 down, 2 up), bisecting a leg toward its warm start when it
    fails to converge."""
    total = 0
    cur = d_from
    norm = float("nan")
    while cur != d_to:
        nxt = max(cur / 2.0, d_to) if d_to < cur else min(cur * 2.0, d_to)
        for _ in range(12):
            try:
                cand_new, iters, norm = _solve_at_delta(
                    mp, CostParams(delta=nxt, gamma=gamma), cand, trace)
                break
            except (NonConvergence, ValueError):
                nxt = float(np.sqrt(cur * nxt))
                if abs(nxt / cur - 1.0) < 1e-3:
                    raise
        else:
            raise NonConvergence(f"continuation stalled near delta={cur:g}", trace)
        total += iters
        trace.append((nxt, cand_new))
        cand, cur = cand_new, nxt
    return cand, total, norm


def solve_boundaries(mp: MarketParams, cp: CostParams,
                     init: BoundaryCandidate | None = None) -> BoundarySolution:
    """Solve the six-unknown system; requires delta > 0 and gamma > 0.

    Without an initial guess the solver first computes the pure-proportional
    limits, solves at delta = 1e-2 from a heuristic seed, then walks delta
    geometrically (factor 1/2 down, factor 2 up) to the target, warm
    starting each leg and bisecting legs that stall.  If the delta = 1e-2
    start itself is out of reach (it can exceed the attainable excess
    growth l0 for lopsided Merton fractions), the start is retried at
    l0/4 and l0/16.  Raises NonConvergence (with the continuation trace)
    or ParameterDegeneracy.
    """
    if cp.delta <= 0.0:
        raise ParameterDegeneracy("impulse boundary solver requires delta > 0")
    if cp.gamma <= 0.0:
        raise ParameterDegeneracy("impulse boundary solver requires gamma > 0")

    trace: list = []
    total_iters = 0
    if init is not None:
        cand, iters, norm = _solve_at_delta(mp, cp, init, trace)
        total_iters += iters
        trace.append((cp.delta, cand))
    else:
        lim = _limit.solve_limit(mp, cp.gamma)
        floor = max(growth_integrand(mp, 0.0), growth_integrand(mp, 1.0))
        headroom = lim.candidate.l0 - floor
        starts = []
        for d0 in (CONTINUATION_DELTA_START, headroom / 4.0, headroom / 16.0):
            d0 = min(CONTINUATION_DELTA_START, d0)
            if d0 > 0 and not any(abs(d0 / s0 - 1.0) < 1e-9 for s0, _ in starts):
                starts.append((d0, _heuristic_initializer))
        starts.append((cp.delta, _oracle_seed))
        starts.append((CONTINUATION_DELTA_START, _oracle_seed))
        last_err: Exception | None = None
        for d0, seed_of in starts:
            attempt_trace: list = []
            try:
                seed = seed_of(mp, CostParams(delta=d0, gamma=cp.gamma), lim.candidate) \
                    if seed_of is _oracle_seed else seed_of(mp, d0, lim.candidate)
                cand, iters, norm = _solve_at_delta(
                    mp, CostParams(delta=d0, gamma=cp.gamma), seed, attempt_trace)
                attempt_trace.append((d0, cand))
                cand, walk_iters, walk_norm = _continuation_walk(
                    mp, cp.gamma, cand, d0, cp.delta, attempt_trace)
                total_iters += iters + walk_iters
                if cp.delta != d0:
                    norm = walk_norm
                trace = attempt_trace
                break
            except (NonConvergence, ValueError) as err:
                last_err = err
                trace.extend(attempt_trace)
        else:
            raise NonConvergence(
                f"continuation failed from every start: {last_err}", trace)

    try:
        cand.check_invariants(mp, cp)
    except ParameterError as err:
        raise NonConvergence(f"converged to an invalid candidate: {err}", trace) from err
    return BoundarySolution(
        candidate=cand,
        residual_norm=norm,
        newton_iters=total_iters,
        continuation_trace=tuple(trace),
        original_cost_optimal=bool(cand.a <= cand.alpha * (1.0 - cp.delta)),
    )


@dataclass(frozen=True)
class ValueFunction:
    """Piecewise variational-inequality solution with u, u', u''.

    Evaluation is anchored to the parameters captured at build time (the
    spec of the candidate the function was built from); mutating or
    replacing the ``candidate`` field afterwards does not re-derive the
    curve, which is exactly what lets a verification pass detect an
    inconsistent (u, l) pair.
    """

    market: MarketParams
    costs: CostParams
    candidate: BoundaryCandidate
    anchor: tuple = field(repr=False, default=())
    u_at_a: float = 0.0
    u_at_beta: float = 0.0

    def _pieces(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0.0) or np.any(x > 1.0):
            raise ValueError("value function is defined on [0, 1]")
        _, _, a, _, _, b = self.anchor
        low = x < a
        high = x > b
        mid = ~(low | high)
        return x, low, mid, high

    def u(self, x):
        l, x0, a, al, be, b = self.anchor
        x, low, mid, high = self._pieces(x)
        out = np.empty_like(x)
        if low.any():
            out[low] = trade_cost_gamma(self.costs, x[low], al)
        if mid.any():
            out[mid] = self.u_at_a + slope_g_integral(self.market, a, x[mid], x0, l)
        if high.any():
            out[high] = self.u_at_beta + trade_cost_gamma(self.costs, x[high], be)
        return out if out.ndim else float(out)

    def du(self, x):
        l, x0, a, al, be, b = self.anchor
        gm, dl = self.costs.gamma, self.costs.delta
        x, low, mid, high = self._pieces(x)
        out = np.empty_like(x)
        out[low] = gm / (1.0 - dl + gm * x[low])
        if mid.any():
            out[mid] = slope_g(self.market, x[mid], x0, l)
        out[high] = -gm / (1.0 - dl - gm * x[high])
        return out if out.ndim else float(out)

    def ddu(self, x):
        l, x0, a, al, be, b = self.anchor
        gm, dl = self.costs.gamma, self.costs.delta
        x, low, mid, high = self._pieces(x)
        out = np.empty_like(x)
        out[low] = -gm * gm / (1.0 - dl + gm * x[low]) ** 2
        if mid.any():
            out[mid] = slope_g_dx(self.market, x[mid], x0, l)
        out[high] = -gm * gm / (1.0 - dl - gm * x[high]) ** 2
        return out if out.ndim else float(out)


def build_value(mp: MarketParams, cp: CostParams, sol: BoundarySolution) -> ValueFunction:
    """Assemble the piecewise value function from a converged solution.

    Checks the C1 pasting implied by the first four residuals to 1e-8
    before returning.
    """
    cand = sol.candidate
    res = residual_system(mp, cp, cand)
    pasting = float(np.max(np.abs(res[:4])))
    if pasting > PASTING_TOL:
        raise ParameterError(
            f"candidate does not paste to C1: max boundary-slope residual {pasting:.3e}")
    u_a = trade_cost_gamma(cp, cand.a, cand.alpha)
    u_beta = u_a + slope_g_integral(mp, cand.a, cand.beta, cand.x0, cand.l)
    return ValueFunction(
        market=mp, costs=cp, candidate=cand,
        anchor=(cand.l, cand.x0, cand.a, cand.alpha, cand.beta, cand.b),
        u_at_a=float(u_a), u_at_beta=float(u_beta),
    )


@dataclass(frozen=True)
class VerificationReport:
    """Grid check of the variational inequality; all fields finite."""

    grid_n: int
    tol: float
    max_interior_residual: float
    interior_worst_x: float
    max_exterior_excess: float
    exterior_worst_x: float
    max_obstacle_excess: float
    obstacle_worst_x: float
    equality_gap_low: float
    equality_gap_high: float
    equality_target_low: float
    equality_target_high: float
    pasting_mismatch: float
    passed: bool

    def summary(self) -> str:
        lines = [
            f"grid_n={self.grid_n} tol={self.tol:g} passed={self.passed}",
            f"  interior |Du+f-l|      {self.max_interior_residual:.3e} at x={self.interior_worst_x:.6f}",
            f"  exterior (Du+f-l)+     {self.max_exterior_excess:.3e} at x={self.exterior_worst_x:.6f}",
            f"  obstacle (Mu-u)+       {self.max_obstacle_excess:.3e} at x={self.obstacle_worst_x:.6f}",
            f"  equality gaps at a,b   {self.equality_gap_low:.3e}, {self.equality_gap_high:.3e}",
            f"  argmax targets at a,b  {self.equality_target_low:.6f}, {self.equality_target_high:.6f}",
            f"  C1 pasting mismatch    {self.pasting_mismatch:.3e}",
        ]
        return "\n".join(lines)


def verify_qvi(mp: MarketParams, cp: CostParams, vf: ValueFunction,
               grid_n: int, tol: float = 1e-6) -> VerificationReport:
    """Check the variational inequality for (u, l) on a uniform grid.

    The growth excess l is read from ``vf.candidate`` (the claim under
    test) while u and its derivatives come from the curve anchored at
    build time.  Violations are reported, never raised.
    """
    if grid_n < 100:
        raise ValueError("verify_qvi requires grid_n >= 100")
    cand = vf.candidate
    grid = np.linspace(EPS, 1.0 - EPS, grid_n)
    du = vf.du(grid)
    ddu = vf.ddu(grid)
    resid = apply_generator(mp, 0.0, du, ddu, grid) + growth_integrand(mp, grid) - cand.l

    interior = (grid >= cand.a) & (grid <= cand.b)
    r_in = np.abs(resid[interior])
    k_in = int(np.argmax(r_in))
    max_interior = float(r_in[k_in])
    interior_x = float(grid[interior][k_in])

    r_out = resid[~interior]
    k_out = int(np.argmax(r_out))
    max_exterior = float(max(r_out[k_out], 0.0))
    exterior_x = float(grid[~interior][k_out])

    # Obstacle side: Mu(x) = max_y u(y) + cost(x, y) over the target grid,
    # which always contains the restart points alpha and beta.
    targets = np.unique(np.concatenate([grid, [cand.alpha, cand.beta]]))
    u_grid = vf.u(grid)
    u_targets = vf.u(targets)
    gain = u_targets[None, :] + trade_cost_gamma(cp, grid[:, None], targets[None, :])
    mu = gain.max(axis=1)
    obstacle = mu - u_grid
    k_ob = int(np.argmax(obstacle))
    max_obstacle = float(obstacle[k_ob])
    obstacle_x = float(grid[k_ob])

    def equality_at(x):
        vals = u_targets + trade_cost_gamma(cp, x, targets)
        k = int(np.argmax(vals))
        return abs(float(vals[k]) - vf.u(x)), float(targets[k])

    gap_low, target_low = equality_at(cand.a)
    gap_high, target_high = equality_at(cand.b)

    res = residual_system(mp, cp, cand)
    pasting = float(np.max(np.abs(res[:4])))

    spacing = float(grid[1] - grid[0])
    passed = bool(
        max_interior <= tol
        and max_exterior <= tol
        and max_obstacle <= tol
        and gap_low <= tol and gap_high <= tol
        and abs(target_low - cand.alpha) <= spacing
        and abs(target_high - cand.beta) <= spacing
        and pasting <= PASTING_TOL
    )
    return VerificationReport(
        grid_n=grid_n, tol=tol,
        max_interior_residual=max_interior, interior_worst_x=interior_x,
        max_exterior_excess=max_exterior, exterior_worst_x=exterior_x,
        max_obstacle_excess=max_obstacle, obstacle_worst_x=obstacle_x,
        equality_gap_low=gap_low, equality_gap_high=gap_high,
        equality_target_low=target_low, equality_target_high=target_high,
        pasting_mismatch=pasting, passed=passed,
    )
