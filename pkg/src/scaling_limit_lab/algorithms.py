"""Drift/diffusion descriptions of the limiting PDE for each algorithm.

A limiting PDE has the generic strong form

    d/dt p(x | xi) = d/dx [ -G(x, xi, Q) p + (Lambda(Q) / 2) dp/dx ],

where the order parameters Q(l) = <mu_t, p_l(x, xi)> couple all xi-atoms.
Functions of Q receive an array whose last axis indexes the components, so
``q[..., 0]`` is the first order parameter; they must broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .regularizers import make_regularizer


class NegativeDiffusionError(ValueError):
    pass


@dataclass(frozen=True)
class AlgorithmSpec:
    drift: Callable  # G(x, xi, q)
    diffusion: Callable  # Lambda(q)
    order_params: tuple = ()
    param_names: tuple = ()
    cap: float = 1e6
    name: str = "custom"
    relax_rate: float = 1.0  # rough restoring rate, only used for default domains
    reads_q: bool = True

    def __post_init__(self):
        object.__setattr__(self, "order_params", tuple(self.order_params))
        names = tuple(self.param_names) or tuple(f"q{l}" for l in range(len(self.order_params)))
        if len(names) != len(self.order_params):
            raise ValueError("one name per order parameter")
        object.__setattr__(self, "param_names", names)
        if self.reads_q and not self.order_params:
            raise ValueError("a spec whose coefficients read Q needs order parameters")
        if not self.cap > 0:
            raise ValueError("cap b must be positive")

    @property
    def r(self) -> int:
        return len(self.order_params)

    def capped(self, q):
        return np.clip(np.asarray(q, dtype=float), -self.cap, self.cap)

    def G(self, x, xi, q):
        return self.drift(x, xi, self.capped(q))

    def Lam(self, q):
        lam = np.asarray(self.diffusion(self.capped(q)), dtype=float)
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            bad = lam[~(lam >= 0)]
            raise NegativeDiffusionError(f"{self.name}: diffusion Lambda(Q) = {bad.ravel()[0]} is not >= 0")
        return lam

    def probe(self, x, xi) -> np.ndarray:
        """(r, len(x)) values of the order-parameter functions at one atom."""
        x = np.asarray(x, dtype=float)
        if not self.order_params:
            return np.zeros((0, x.size))
        return np.array([np.broadcast_to(np.asarray(p(x, xi), dtype=float), x.shape) for p in self.order_params])


def make_regression_spec(tau: float, sigma: float, phi=None, cap: float = 1e6) -> AlgorithmSpec:
    """G = tau (xi - x) - phi(x), Lambda = tau^2 (sigma^2 + e), e = <mu, (x - xi)^2>."""
    if not tau > 0 or sigma < 0:
        raise ValueError("need tau > 0 and sigma >= 0")
    if not callable(phi):
        phi = make_regularizer(phi)
    s2 = sigma * sigma

    def drift(x, xi, q):
        return tau * (xi - x) - phi(x)

    def diffusion(q):
        return tau * tau * (s2 + q[..., 0])

    return AlgorithmSpec(drift, diffusion, (lambda x, xi: (x - xi) ** 2,), ("e",), cap,
                         "regression", relax_rate=tau)


def make_pca_spec(tau: float, omega: float, beta: float = 0.0, phi=None, cap: float = 1e6) -> AlgorithmSpec:
    """Limiting drift/diffusion for the regularized Oja iteration.

    G = tau omega Q xi - tau beta phi(x) - tau x [omega Q^2 - beta R + (tau/2)(1 + omega Q^2)],
    Lambda = tau^2 (1 + omega Q^2), with Q = <mu, x xi> and R = <mu, x phi(x)>.

    The x-restoring term carries omega Q^2: it is what the sphere projection
    subtracts to keep <mu, x^2> = 1.  ``beta`` here multiplies tau; a
    simulation run with strength b matches beta = b / tau.
    """
    if not tau > 0 or not omega > 0 or beta < 0:
        raise ValueError("need tau > 0, omega > 0, beta >= 0")
    if not callable(phi):
        phi = make_regularizer(phi)

    def drift(x, xi, q):
        Q, R = q[..., 0], q[..., 1]
        wq2 = omega * Q * Q
        return tau * omega * Q * xi - tau * beta * phi(x) - tau * x * (wq2 - beta * R + 0.5 * tau * (1.0 + wq2))

    def diffusion(q):
        Q = q[..., 0]
        return tau * tau * (1.0 + omega * Q * Q)

    return AlgorithmSpec(drift, diffusion, (lambda x, xi: x * xi, lambda x, xi: x * phi(x)), ("Q", "R"), cap,
                         "pca", relax_rate=tau)


def make_frozen_spec(drift: Callable, diffusion: float, name: str = "frozen") -> AlgorithmSpec:
    """Spec with coefficients that ignore Q: G(x, xi) and a constant Lambda."""
    lam = float(diffusion)
    return AlgorithmSpec(lambda x, xi, q: drift(x, xi), lambda q: np.full(np.shape(q)[:-1], lam), (), (),
                         name=name, reads_q=False)


def make_double_well_spec(f_prime: Callable, tau: float, sigma: float) -> AlgorithmSpec:
    """Limit of the 1-D toy SGD: G = -tau f'(x), Lambda = tau^2 sigma^2 (no coupling)."""
    return make_frozen_spec(lambda x, xi: -tau * f_prime(x), tau * tau * sigma * sigma, "toy_sgd")

