"""Seeded Monte Carlo of the controlled and reflected fraction processes.

Holdings evolve exactly between trades: per step the bond grows by
exp(r dt) and the stock by exp((mu - sigma^2/2) dt + sigma sqrt(dt) Z), so
the only discretisation is that boundary crossings are detected at grid
times and the overshoot is kept (the trade executes from the overshooting
fraction).  An optional Brownian-bridge correction samples within-step
crossings for the impulse simulator; it draws its uniforms from a separate
stream so the normal sequence is unchanged.

Randomness is counter-based: path i of a run seeded s reads an independent
Philox stream keyed (s, i), so any subset of paths can be simulated
concurrently or in blocks with identical results, and every output is a
pure function of (inputs, base_seed, path_index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import limit as _limit
from . import qvi as _qvi
from .market import CostParams, MarketParams, merton_fraction, to_centered, wealth_factor

__all__ = [
    "SimConfig", "TradeEvent", "PathRecord", "ReflectedRecord", "GrowthEstimate",
    "CouplingRow", "NumericalBlowup", "path_generator", "bridge_crossing_prob",
    "simulate_impulse_path", "estimate_growth_impulse",
    "simulate_reflected_path", "estimate_growth_reflected",
    "couple_at_boundaries", "couple_paths",
]

_BLOCK = 8192
_BRIDGE_STREAM_SALT = 0x9E3779B97F4A7C15  # golden-ratio word, keys the uniform stream


class NumericalBlowup(RuntimeError):
    """Wealth left the positive cone; indicates an internal error."""


@dataclass(frozen=True)
class SimConfig:
    """Common simulation settings.

    h0 = None picks the Merton fraction clipped into the interior of the
    operating region.  bridge_correction only affects the impulse
    simulator.
    """

    horizon: float
    dt: float
    v0: float = 1.0
    h0: float | None = None
    n_paths: int = 1000
    base_seed: int = 0
    bridge_correction: bool = False

    def __post_init__(self) -> None:
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not 0 < self.dt <= self.horizon / 100.0:
            raise ValueError("dt must satisfy 0 < dt <= horizon/100")
        if not self.v0 > 0:
            raise ValueError("v0 must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if self.base_seed < 0:
            raise ValueError("base_seed must be non-negative")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class TradeEvent:
    time: float
    pre_fraction: float
    target: float
    factor: float
    log_cost: float


@dataclass(frozen=True)
class PathRecord:
    """One impulse-controlled path sampled at every grid time."""

    times: np.ndarray
    fractions: np.ndarray
    wealths: np.ndarray
    trade_events: tuple
    log_wealth_final: float
    growth: float
    step_log_total: float
    trade_log_total: float


@dataclass(frozen=True)
class ReflectedRecord:
    """One reflected path with cumulative buy (L) and sell (M) volumes."""

    times: np.ndarray
    fractions: np.ndarray
    wealths: np.ndarray
    buy_volume: np.ndarray
    sell_volume: np.ndarray
    log_wealth_final: float
    growth: float


@dataclass(frozen=True)
class GrowthEstimate:
    mean_growth: float
    std_error: float
    n_paths: int
    horizon: float
    dt: float


@dataclass(frozen=True)
class CouplingRow:
    delta: float
    mean_sup_distance: float
    n_paths: int
    sup_distances: np.ndarray
    trade_counts: np.ndarray
    jump_low: float
    jump_high: float


def path_generator(base_seed: int, path_index: int, stream: int = 0) -> np.random.Generator:
    """Philox stream keyed by (base_seed, path_index); stream 1 is the
    uniform side-channel used by the bridge correction."""
    word = base_seed ^ (_BRIDGE_STREAM_SALT if stream else 0)
    return np.random.Generator(np.random.Philox(key=[word, path_index]))


def bridge_crossing_prob(y0, y1, level, sigma: float, dt: float):
    """P(a Brownian bridge from y0 to y1 over dt touches level).

    Valid when y0 and y1 are on the same side of the level; the drift does
    not enter the bridge law.
    """
    expo = -2.0 * (level - np.asarray(y0)) * (level - np.asarray(y1)) / (sigma * sigma * dt)
    return np.exp(np.minimum(expo, 0.0))


def _default_h0(mp: MarketParams, lo: float, hi: float) -> float:
    margin = 1e-3 * (hi - lo)
    return min(max(merton_fraction(mp), lo + margin), hi - margin)


def _impulse_engine(mp, cp, bounds, cfg: SimConfig, path_indices, record: bool):
    """Vectorised impulse simulation over the given path indices.

    Returns (growth, log_wT, trade_counts) arrays, plus per-step records
    when record=True (only supported for a single path).
    """
    a, al, be, b = bounds
    h0 = cfg.h0 if cfg.h0 is not None else _default_h0(mp, a, b)
    if not a < h0 < b:
        raise ValueError(f"h0={h0:g} must lie strictly inside the no-trade region ({a:g}, {b:g})")
    n_paths = len(path_indices)
    if record and n_paths != 1:
        raise ValueError("record mode is single-path")
    n_steps = cfg.n_steps
    er = math.exp(mp.r * cfg.dt)
    gd = (mp.mu - 0.5 * mp.sigma * mp.sigma) * cfg.dt
    gv = mp.sigma * math.sqrt(cfg.dt)
    X = np.full(n_paths, (1.0 - h0) * cfg.v0)
    Y = np.full(n_paths, h0 * cfg.v0)
    gens = [path_generator(cfg.base_seed, i) for i in path_indices]
    ugens = ([path_generator(cfg.base_seed, i, stream=1) for i in path_indices]
             if cfg.bridge_correction else None)
    trade_counts = np.zeros(n_paths, dtype=np.int64)
    step_log = np.zeros(n_paths)
    trade_log = np.zeros(n_paths)
    if cfg.bridge_correction:
        y_lo, y_hi = to_centered(a), to_centered(b)
        y_prev = np.full(n_paths, to_centered(h0))
    if record:
        h_rec = np.empty(n_steps + 1)
        v_rec = np.empty(n_steps + 1)
        h_rec[0], v_rec[0] = h0, cfg.v0
        events = []

    done = 0
    while done < n_steps:
        nb = min(_BLOCK, n_steps - done)
        Z = np.empty((n_paths, nb))
        for i, gen in enumerate(gens):
            Z[i] = gen.standard_normal(nb)
        U = None
        if cfg.bridge_correction:
            U = np.empty((n_paths, 2 * nb))
            for i, gen in enumerate(ugens):
                U[i] = gen.random(2 * nb)
        for k in range(nb):
            v_before = X + Y
            X *= er
            Y *= np.exp(gd + gv * Z[:, k])
            V = X + Y
            step_log += np.log(V / v_before)
            h = Y / V
            exit_lo = h <= a
            exit_hi = h >= b
            if cfg.bridge_correction:
                y_new = np.log(Y / X)
                inside = ~(exit_lo | exit_hi)
                p_lo = bridge_crossing_prob(y_prev, y_new, y_lo, mp.sigma, cfg.dt)
                p_hi = bridge_crossing_prob(y_prev, y_new, y_hi, mp.sigma, cfg.dt)
                cross_lo = inside & (U[:, 2 * k] < p_lo)
                cross_hi = inside & ~cross_lo & (U[:, 2 * k + 1] < p_hi)
                # a sampled within-step touch trades from the boundary value
                if cross_lo.any():
                    V_at = V[cross_lo]
                    h[cross_lo] = a
                    Y[cross_lo] = a * V_at
                    X[cross_lo] = (1.0 - a) * V_at
                    exit_lo = exit_lo | cross_lo
                if cross_hi.any():
                    V_at = V[cross_hi]
                    h[cross_hi] = b
                    Y[cross_hi] = b * V_at
                    X[cross_hi] = (1.0 - b) * V_at
                    exit_hi = exit_hi | cross_hi
            out = exit_lo | exit_hi
            if out.any():
                idx = np.nonzero(out)[0]
                h_pre = h[idx]
                xi = np.where(exit_lo[idx], al, be)
                factor = wealth_factor(cp, h_pre, xi)
                v_new = (X[idx] + Y[idx]) * factor
                Y[idx] = xi * v_new
                X[idx] = (1.0 - xi) * v_new
                trade_counts[idx] += 1
                trade_log[idx] += np.log(factor)
                if record:
                    events.append(TradeEvent(
                        time=(done + k + 1) * cfg.dt,
                        pre_fraction=float(h_pre[0]),
                        target=float(xi[0]),
                        factor=float(factor[0]),
                        log_cost=float(np.log(factor[0])),
                    ))
            if cfg.bridge_correction:
                y_prev = np.log(Y / X)
            if record:
                V = X + Y
                h_rec[done + k + 1] = (Y / V)[0]
                v_rec[done + k + 1] = V[0]
        if np.any(X + Y <= 0.0) or not np.all(np.isfinite(X + Y)):
            raise NumericalBlowup("wealth left the positive cone")
        done += nb

    log_wT = np.log(X + Y)
    growth = (log_wT - math.log(cfg.v0)) / cfg.horizon
    if record:
        times = np.arange(n_steps + 1) * cfg.dt
        rec = PathRecord(
            times=times, fractions=h_rec, wealths=v_rec, trade_events=tuple(events),
            log_wealth_final=float(log_wT[0]), growth=float(growth[0]),
            step_log_total=float(step_log[0]), trade_log_total=float(trade_log[0]),
        )
        return growth, log_wT, trade_counts, rec
    return growth, log_wT, trade_counts, None


def simulate_impulse_path(mp: MarketParams, cp: CostParams, cand,
                          cfg: SimConfig, path_index: int) -> PathRecord:
    """One impulse-controlled path under the constant boundary strategy."""
    bounds = (cand.a, cand.alpha, cand.beta, cand.b)
    _, _, _, rec = _impulse_engine(mp, cp, bounds, cfg, [path_index], record=True)
    return rec


def estimate_growth_impulse(mp: MarketParams, cp: CostParams, cand,
                            cfg: SimConfig) -> GrowthEstimate:
    """Mean and standard error of per-path growth over cfg.n_paths paths."""
    bounds = (cand.a, cand.alpha, cand.beta, cand.b)
    growth, _, _, _ = _impulse_engine(mp, cp, bounds, cfg, range(cfg.n_paths), record=False)
    return GrowthEstimate(
        mean_growth=float(growth.mean()),
        std_error=float(growth.std(ddof=1) / math.sqrt(cfg.n_paths)) if cfg.n_paths > 1 else 0.0,
        n_paths=cfg.n_paths, horizon=cfg.horizon, dt=cfg.dt,
    )


def _reflected_engine(mp, gamma, A, B, cfg: SimConfig, path_indices, record: bool):
    """Vectorised reflected simulation: project back to [A, B] in monetary
    terms whenever a step ends outside.

    Selling m = (Y - B V)/(1 - gamma B) restores h = B exactly and buying
    l = (A V - Y)/(1 + gamma A) restores h = A exactly under the
    self-financing accounting dX = rX dt + (1-gamma) dM - (1+gamma) dL.
    """
    h0 = cfg.h0 if cfg.h0 is not None else _default_h0(mp, A, B)
    if not A <= h0 <= B:
        raise ValueError(f"h0={h0:g} must lie inside [{A:g}, {B:g}]")
    n_paths = len(path_indices)
    if record and n_paths != 1:
        raise ValueError("record mode is single-path")
    n_steps = cfg.n_steps
    er = math.exp(mp.r * cfg.dt)
    gd = (mp.mu - 0.5 * mp.sigma * mp.sigma) * cfg.dt
    gv = mp.sigma * math.sqrt(cfg.dt)
    X = np.full(n_paths, (1.0 - h0) * cfg.v0)
    Y = np.full(n_paths, h0 * cfg.v0)
    gens = [path_generator(cfg.base_seed, i) for i in path_indices]
    L = np.zeros(n_paths)
    M = np.zeros(n_paths)
    if record:
        h_rec = np.empty(n_steps + 1)
        v_rec = np.empty(n_steps + 1)
        l_rec = np.empty(n_steps + 1)
        m_rec = np.empty(n_steps + 1)
        h_rec[0], v_rec[0], l_rec[0], m_rec[0] = h0, cfg.v0, 0.0, 0.0

    done = 0
    while done < n_steps:
        nb = min(_BLOCK, n_steps - done)
        Z = np.empty((n_paths, nb))
        for i, gen in enumerate(gens):
            Z[i] = gen.standard_normal(nb)
        for k in range(nb):
            X *= er
            Y *= np.exp(gd + gv * Z[:, k])
            V = X + Y
            h = Y / V
            over = h > B
            if over.any():
                idx = np.nonzero(over)[0]
                m = (Y[idx] - B * V[idx]) / (1.0 - gamma * B)
                Y[idx] -= m
                X[idx] += (1.0 - gamma) * m
                M[idx] += m
            under = h < A
            if under.any():
                idx = np.nonzero(under)[0]
                buy = (A * V[idx] - Y[idx]) / (1.0 + gamma * A)
                Y[idx] += buy
                X[idx] -= (1.0 + gamma) * buy
                L[idx] += buy
            if record:
                V = X + Y
                h_rec[done + k + 1] = (Y / V)[0]
                v_rec[done + k + 1] = V[0]
                l_rec[done + k + 1] = L[0]
                m_rec[done + k + 1] = M[0]
        if np.any(X + Y <= 0.0) or not np.all(np.isfinite(X + Y)):
            raise NumericalBlowup("wealth left the positive cone")
        done += nb

    log_wT = np.log(X + Y)
    growth = (log_wT - math.log(cfg.v0)) / cfg.horizon
    if record:
        times = np.arange(n_steps + 1) * cfg.dt
        rec = ReflectedRecord(
            times=times, fractions=h_rec, wealths=v_rec,
            buy_volume=l_rec, sell_volume=m_rec,
            log_wealth_final=float(log_wT[0]), growth=float(growth[0]),
        )
        return growth, L, M, rec
    return growth, L, M, None


def simulate_reflected_path(mp: MarketParams, gamma: float, A: float, B: float,
                            cfg: SimConfig, path_index: int) -> ReflectedRecord:
    """One reflected path under the control limit policy for (A, B)."""
    _, _, _, rec = _reflected_engine(mp, gamma, A, B, cfg, [path_index], record=True)
    return rec


def estimate_growth_reflected(mp: MarketParams, gamma: float, A: float, B: float,
                              cfg: SimConfig) -> GrowthEstimate:
    growth, _, _, _ = _reflected_engine(mp, gamma, A, B, cfg, range(cfg.n_paths), record=False)
    return GrowthEstimate(
        mean_growth=float(growth.mean()),
        std_error=float(growth.std(ddof=1) / math.sqrt(cfg.n_paths)) if cfg.n_paths > 1 else 0.0,
        n_paths=cfg.n_paths, horizon=cfg.horizon, dt=cfg.dt,
    )


def couple_at_boundaries(mp: MarketParams, impulse_bounds_y, limits_y,
                         cfg: SimConfig, y_start: float):
    """Drive the transformed impulse process and the reflected one on the
    same normal increments; returns per-path sup distances and trade counts.

    Both processes step by c dt + sigma sqrt(dt) Z first and are then
    mapped back into their regions, the impulse one by jumping to its
    restart target, the reflected one by clipping.
    """
    a_y, al_y, be_y, b_y = impulse_bounds_y
    lo_y, hi_y = limits_y
    n_paths = cfg.n_paths
    n_steps = cfg.n_steps
    c = (mp.mu - mp.r - 0.5 * mp.sigma * mp.sigma) * cfg.dt
    sq = mp.sigma * math.sqrt(cfg.dt)
    Yi = np.full(n_paths, y_start)
    Yr = np.full(n_paths, y_start)
    sup = np.zeros(n_paths)
    trades = np.zeros(n_paths, dtype=np.int64)
    gens = [path_generator(cfg.base_seed, i) for i in range(n_paths)]
    done = 0
    while done < n_steps:
        nb = min(_BLOCK, n_steps - done)
        Z = np.empty((n_paths, nb))
        for i, gen in enumerate(gens):
            Z[i] = gen.standard_normal(nb)
        for k in range(nb):
            dw = c + sq * Z[:, k]
            Yi = Yi + dw
            out_lo = Yi <= a_y
            out_hi = Yi >= b_y
            if out_lo.any() or out_hi.any():
                trades += out_lo | out_hi
                Yi = np.where(out_lo, al_y, np.where(out_hi, be_y, Yi))
            Yr = np.clip(Yr + dw, lo_y, hi_y)
            np.maximum(sup, np.abs(Yi - Yr), out=sup)
        done += nb
    return sup, trades


def couple_paths(mp: MarketParams, gamma: float, deltas, cfg: SimConfig) -> list:
    """Common-noise coupling of impulse paths against the reflected limit.

    deltas must be sorted in decreasing order; each is solved by the
    boundary solver (warm started along the list).  One CouplingRow per
    delta, reporting the mean over paths of sup_t |Y_delta - Y|.
    """
    deltas = [float(d) for d in deltas]
    if any(d2 >= d1 for d1, d2 in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be sorted in decreasing order")
    lim = _limit.solve_limit(mp, gamma)
    lo_y, hi_y = to_centered(lim.candidate.A), to_centered(lim.candidate.B)
    h_start = cfg.h0 if cfg.h0 is not None else _default_h0(mp, lim.candidate.A, lim.candidate.B)
    y_start = to_centered(h_start)
    rows = []
    prev = None
    for delta in deltas:
        cp = CostParams(delta=delta, gamma=gamma)
        sol = _qvi.solve_boundaries(mp, cp, init=prev)
        prev = sol.candidate
        cand = sol.candidate
        if not cand.a < h_start < cand.b:
            raise ValueError(f"h0={h_start:g} outside the no-trade region at delta={delta:g}")
        bounds_y = tuple(to_centered(v) for v in (cand.a, cand.alpha, cand.beta, cand.b))
        sup, trades = couple_at_boundaries(mp, bounds_y, (lo_y, hi_y), cfg, y_start)
        rows.append(CouplingRow(
            delta=delta, mean_sup_distance=float(sup.mean()), n_paths=cfg.n_paths,
            sup_distances=sup, trade_counts=trades,
            jump_low=float(bounds_y[1] - bounds_y[0]),
            jump_high=float(bounds_y[3] - bounds_y[2]),
        ))
    return rows
