"""Independent reference solutions: moment ODEs, Euler-Maruyama ensembles,
analytic stationary densities and effective potentials.

The ODEs are obtained by integrating the weak form of the limiting PDE
against a test function by hand, so they share no code with the PDE solver:

* regression with phi = 0 and f = (x - xi)^2:
      e' = -2 tau e + tau^2 (sigma^2 + e)
* PCA with beta = 0 and f = x xi (the diffusion term drops out since
  d^2(x xi)/dx^2 = 0), using <xi^2> = 1:
      Q' = tau Q [omega (1 - Q^2) - (tau/2)(1 + omega Q^2)]
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .algorithms import AlgorithmSpec
from .measure import Grid, OrderParameterPath


class ModelViolationError(RuntimeError):
    """An oracle trajectory left the range its derivation guarantees."""


class EnsembleDivergenceError(RuntimeError):
    pass


@dataclass
class OdePath:
    times: np.ndarray
    values: np.ndarray
    analytic: np.ndarray | None = None

    def to_path(self, name: str) -> OrderParameterPath:
        return OrderParameterPath(float(self.times[0]), float(self.times[1] - self.times[0]), self.values, (name,))


def rk4(f: Callable, y0: float, T: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    nsteps = max(1, int(round(T / dt)))
    h = T / nsteps
    ys = np.empty(nsteps + 1)
    ys[0] = y = float(y0)
    for k in range(nsteps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        ys[k + 1] = y
    return h * np.arange(nsteps + 1), ys


def regression_mse_fixed_point(tau: float, sigma: float) -> float:
    return tau * sigma**2 / (2.0 - tau)


def regression_mse_exact(tau: float, sigma: float, e0: float, t):
    t = np.asarray(t, dtype=float)
    a = tau * tau - 2.0 * tau
    if a == 0.0:
        return e0 + tau * tau * sigma * sigma * t
    e_star = -tau * tau * sigma * sigma / a
    return (e0 - e_star) * np.exp(a * t) + e_star


def regression_mse_ode(tau: float, sigma: float, e0: float, T: float, dt: float = 1e-2) -> OdePath:
    """RK4 solution of e' = -2 tau e + tau^2 (sigma^2 + e) alongside the closed form."""
    if not tau > 0 or sigma < 0 or e0 < 0:
        raise ValueError("need tau > 0, sigma >= 0, e0 >= 0")
    if tau >= 2:
        warnings.warn(f"tau={tau} >= 2: the MSE recursion is unstable and e* is not a valid limit",
                      RuntimeWarning, stacklevel=2)
    s2 = sigma * sigma
    times, vals = rk4(lambda e: -2.0 * tau * e + tau * tau * (s2 + e), e0, T, dt)
    exact = regression_mse_exact(tau, sigma, e0, times)
    err = np.max(np.abs(vals - exact) / np.maximum(1.0, np.abs(exact)))
    if err > 1e-9:
        raise AssertionError(f"RK4 and closed form disagree by {err:.3e}; reduce dt")
    return OdePath(times, vals, exact)


def pca_overlap_rhs(tau: float, omega: float, Q: float) -> float:
    return tau * Q * (omega * (1.0 - Q * Q) - 0.5 * tau * (1.0 + omega * Q * Q))


def pca_overlap_ode(tau: float, omega: float, Q0: float, T: float, dt: float = 1e-2) -> OdePath:
    """RK4 solution of the overlap ODE for unregularized streaming PCA."""
    if not tau > 0 or not omega > 0:
        raise ValueError("need tau > 0 and omega > 0")
    if abs(Q0) > 1:
        raise ValueError("|Q0| must not exceed 1")
    times, vals = rk4(lambda q: pca_overlap_rhs(tau, omega, q), Q0, T, dt)
    bad = np.flatnonzero(~(np.abs(vals) <= 1 + 1e-6))
    if bad.size:
        j = int(bad[0])
        raise ModelViolationError(f"overlap reached Q = {vals[j]} at t = {times[j]:g}, outside [-1, 1]")
    return OdePath(times, vals)


@dataclass
class EnsembleResult:
    times: np.ndarray
    edges: np.ndarray
    histograms: np.ndarray  # (len(times), bins) densities over surviving particles
    samples: np.ndarray  # (len(times), particles), NaN for diverged particles
    diverged: int


def decoupled_sde_ensemble(spec: AlgorithmSpec, q_path: OrderParameterPath | None, xi_value: float,
                           x0_sampler: Callable, particles: int, T: float, dt: float, seed,
                           times: Sequence[float], edges: Sequence[float]) -> EnsembleResult:
    """Euler-Maruyama for dX = G(X, xi, Q(t)) dt + sqrt(Lambda(Q(t))) dB.

    Time starts at q_path.t0 (or 0 without a path); ``times`` are absolute.
    Particles leaving |X| <= 1e6 are dropped and counted; more than 0.1% is an
    error.
    """
    if particles < 1000:
        raise ValueError("need at least 1000 particles")
    rng = np.random.default_rng(seed)
    t0 = q_path.t0 if q_path is not None else 0.0
    x = np.asarray(x0_sampler(rng, particles), dtype=float).copy()
    alive = np.ones(particles, dtype=bool)
    edges = np.asarray(edges, dtype=float)
    nsteps = int(round(T / dt))
    stops = sorted(int(round((t - t0) / dt)) for t in times)
    if stops and (stops[0] < 0 or stops[-1] > nsteps):
        raise ValueError("requested times outside the ensemble horizon")
    hists, snaps, out_t = [], [], []
    k = 0

    def q_at(t):
        if spec.r == 0:
            return np.zeros(0)
        return q_path.at(t)

    def record():
        xs = np.where(alive, x, np.nan)
        counts, _ = np.histogram(x[alive], bins=edges)
        hists.append(counts / (alive.sum() * np.diff(edges)))
        snaps.append(xs)
        out_t.append(t0 + k * dt)

    for stop in stops:
        while k < stop:
            q = q_at(t0 + k * dt)
            g = spec.G(x, xi_value, q)
            lam = float(spec.Lam(q))
            x += g * dt + math.sqrt(lam * dt) * rng.standard_normal(particles)
            k += 1
            bad = alive & ~(np.abs(x) <= 1e6)
            if bad.any():
                alive &= ~bad
                x[bad] = 0.0
                if (~alive).sum() > 1e-3 * particles:
                    raise EnsembleDivergenceError(
                        f"{int((~alive).sum())} of {particles} particles diverged by t={t0 + k * dt}")
        record()
    return EnsembleResult(np.array(out_t), edges, np.array(hists), np.array(snaps), int((~alive).sum()))


def ou_stationary_density(tau: float, sigma: float, grid: Grid) -> np.ndarray:
    """N(0, tau sigma^2 / 2) on the grid: the balance of drift -tau x and diffusion tau^2 sigma^2."""
    if not tau > 0 or not sigma > 0:
        raise ValueError("need tau > 0 and sigma > 0")
    var = 0.5 * tau * sigma * sigma
    x = grid.x
    return np.exp(-0.5 * x * x / var) / math.sqrt(2.0 * math.pi * var)


def effective_potential(tau: float, beta: float, Phi: Callable, xi_value: float,
                        grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """E(x) = (tau/2)(x - xi)^2 + beta Phi(x) and the x locations of its interior grid minima."""
    x = grid.x
    E = 0.5 * tau * (x - xi_value) ** 2 + beta * np.asarray(Phi(x), dtype=float)
    dE = np.diff(E)
    # strict descent into node j followed by non-descent out of it
    j = np.flatnonzero((dE[:-1] < 0) & (dE[1:] >= 0)) + 1
    return E, x[j]
