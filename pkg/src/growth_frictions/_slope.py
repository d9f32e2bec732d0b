"""Slope function of the continuation region and the damped Newton engine.

Inside the no-trade region the value function's derivative is an explicit
function g(x, x0, l) anchored so that g(x0, x0, l) = 0.  The textbook form
has two branches, a power-law one and an integral one for the knife-edge
parameter set where the transformed drift vanishes.  Rearranged through
expm1 the power branch extends continuously through that set, so a single
expression covers both; the integral branch is its exact limit.  The same
rearrangement yields closed forms for the antiderivative, so no quadrature
is needed anywhere in the solvers.

Derivatives of g are evaluated through the continuation ODE rearranged,
g'(x) = (l - f(x) - x(1-x)(mu - r - sigma^2 x) g(x)) / (sigma^2 x^2 (1-x)^2 / 2),
which is exact because g solves that ODE identically in (x0, l).
"""

from __future__ import annotations

import numpy as np

from .market import MarketParams, growth_integrand, merton_fraction, to_centered


class ParameterDegeneracy(ValueError):
    """Inputs outside the regime the solver supports."""


class NonConvergence(RuntimeError):
    """Newton failed; carries the continuation trace gathered so far."""

    def __init__(self, message: str, trace=()):
        super().__init__(message)
        self.trace = tuple(trace)


def _e1(z):
    """expm1(z)/z with the removable singularity filled in."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0.0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


def _e2(z):
    """(expm1(z) - z)/z^2 -> 1/2; series below 1e-3 to dodge cancellation."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-3
    zs = z[small]
    out[small] = 0.5 + zs * (1.0 / 6.0 + zs * (1.0 / 24.0 + zs * (1.0 / 120.0 + zs / 720.0)))
    zb = z[~small]
    out[~small] = (np.expm1(zb) - zb) / (zb * zb)
    return out


def _softplus(t):
    t = np.asarray(t, dtype=float)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _power(mp: MarketParams) -> float:
    """Exponent 2*hhat - 1 of the slope formula; zero at the knife edge."""
    return 2.0 * merton_fraction(mp) - 1.0


def slope_g(mp: MarketParams, x, x0: float, l: float):
    """Derivative of the value function on the no-trade region.

    Vanishes at x = x0 by construction; x and x0 must be strictly inside
    (0, 1).
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0) or np.any(x >= 1.0) or not 0.0 < x0 < 1.0:
        raise ValueError("slope_g requires x and x0 strictly inside (0, 1)")
    p = _power(mp)
    f1 = growth_integrand(mp, 1.0)
    d = to_centered(x0) - to_centered(x)
    em = d * _e1(p * d)
    w = x * (1.0 - x)
    out = -(2.0 / (mp.sigma * mp.sigma)) * (l - x * f1) * em / w + (x0 - x) * np.exp(p * d) / w
    return out if out.ndim else float(out)


def slope_g_dx(mp: MarketParams, x, x0: float, l: float):
    """x-derivative of slope_g, via the continuation ODE rearranged."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(slope_g(mp, x, x0, l))
    s2 = mp.sigma * mp.sigma
    drift = x * (1.0 - x) * (mp.mu - mp.r - s2 * x)
    half = 0.5 * s2 * (x * (1.0 - x)) ** 2
    out = (l - growth_integrand(mp, x) - drift * g) / half
    return out if out.ndim else float(out)


def slope_g_integral(mp: MarketParams, x_from, x_to, x0: float, l: float):
    """Exact integral of slope_g from x_from to x_to (closed form).

    In logit coordinates t the integrand collapses to
    -(2l/sigma^2)(e^{p(t0-t)}-1)/p + x0 e^{p(t0-t)} - phi(t), each piece of
    which integrates in closed form; the expm1-style helpers keep the
    p -> 0 limit exact.
    """
    x_from = np.asarray(x_from, dtype=float)
    x_to = np.asarray(x_to, dtype=float)
    if (np.any(x_from <= 0.0) or np.any(x_from >= 1.0)
            or np.any(x_to <= 0.0) or np.any(x_to >= 1.0)):
        raise ValueError("slope_g_integral requires endpoints strictly inside (0, 1)")
    p = _power(mp)
    t0 = to_centered(x0)
    t1 = to_centered(x_from)
    t2 = to_centered(x_to)
    dt = t2 - t1
    u2 = t0 - t2
    piece_a = dt * (dt * _e2(p * dt) + u2 * _e1(p * u2) * _e1(p * dt))
    piece_b = x0 * np.exp(p * u2) * dt * _e1(p * dt)
    piece_c = _softplus(t2) - _softplus(t1)
    out = -(2.0 * l / (mp.sigma * mp.sigma)) * piece_a + piece_b - piece_c
    return out if out.ndim else float(out)


def damped_newton(residual, v0, *, tol=1e-10, max_iter=80, fd_step=1e-7,
                  min_step=1e-14, max_halvings=50):
    """Damped Newton on a square system with forward-difference Jacobian.

    residual(v) -> ndarray may raise ValueError (and subclasses) on
    out-of-domain iterates; failed trial steps are halved, up to
    max_halvings times.  Stops when the residual max-norm reaches tol or
    the damped step shrinks below min_step.  Returns (v, iterations,
    residual_norm); the caller decides whether the final norm is good
    enough.
    """
    v = np.array(v0, dtype=float)
    fv = np.asarray(residual(v), dtype=float)
    n = v.size
    for it in range(max_iter):
        norm0 = float(np.max(np.abs(fv)))
        if norm0 <= tol:
            return v, it, norm0
        jac = np.empty((n, n))
        for j in range(n):
            h = fd_step * max(1.0, abs(v[j]))
            vp = v.copy()
            vp[j] += h
            try:
                jac[:, j] = (np.asarray(residual(vp)) - fv) / h
            except ValueError:
                vp[j] = v[j] - h
                jac[:, j] = (fv - np.asarray(residual(vp))) / h
        try:
            dv = np.linalg.solve(jac, -fv)
        except np.linalg.LinAlgError:
            return v, it, norm0
        scale = 1.0
        for _ in range(max_halvings):
            try:
                trial = v + scale * dv
                ft = np.asarray(residual(trial), dtype=float)
            except ValueError:
                scale *= 0.5
                continue
            if float(np.max(np.abs(ft))) < norm0 or float(np.max(np.abs(scale * dv))) <= min_step:
                v, fv = trial, ft
                break
            scale *= 0.5
        else:
            return v, it + 1, norm0
        if float(np.max(np.abs(scale * dv))) <= min_step:
            return v, it + 1, float(np.max(np.abs(fv)))
    return v, max_iter, float(np.max(np.abs(fv)))
