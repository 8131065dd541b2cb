"""Builtin separable regularizers Phi and their derivatives phi = Phi'.

A ``Regularizer`` is callable and returns ``strength * Phi'(x)``, which is the
phi entering eta(x) = x - phi(x)/n.  ``potential`` returns ``strength * Phi(x)``.

Every builtin has an integer code so the compiled simulation kernels can
evaluate it without calling back into Python.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("none", "l1", "smoothed_l1", "elastic", "tanh")
_CODES = {k: i for i, k in enumerate(KINDS)}


@dataclass(frozen=True)
class Regularizer:
    kind: str = "none"
    strength: float = 1.0
    eps: float = 1e-3  # smoothed_l1 width
    alpha: float = 2.0  # tanh sharpness
    lam1: float = 0.0  # elastic quadratic weight
    lam2: float = 0.0  # elastic absolute weight

    def __post_init__(self):
        if self.kind not in _CODES:
            raise ValueError(f"unknown regularizer {self.kind!r}; choose from {KINDS}")
        if self.kind == "smoothed_l1" and self.eps <= 0:
            raise ValueError("smoothed_l1 needs eps > 0")
        if self.kind == "tanh" and self.alpha <= 0:
            raise ValueError("tanh needs alpha > 0")

    def __call__(self, x):
        return self.strength * self.dPhi(x)

    def dPhi(self, x):
        x = np.asarray(x, dtype=float)
        k = self.kind
        if k == "none":
            return np.zeros_like(x)
        if k == "l1":
            return np.sign(x)
        if k == "smoothed_l1":
            return np.tanh(x / self.eps)
        if k == "elastic":
            return 2.0 * self.lam1 * x + self.lam2 * np.sign(x)
        # tanh(alpha |x|)
        return self.alpha * np.sign(x) / np.cosh(self.alpha * x) ** 2

    def Phi(self, x):
        x = np.asarray(x, dtype=float)
        k = self.kind
        if k == "none":
            return np.zeros_like(x)
        if k == "l1":
            return np.abs(x)
        if k == "smoothed_l1":
            # eps*log(cosh(x/eps)) without overflow
            z = np.abs(x) / self.eps
            return self.eps * (z + np.log1p(np.exp(-2.0 * z)) - np.log(2.0))
        if k == "elastic":
            return self.lam1 * x**2 + self.lam2 * np.abs(x)
        return np.tanh(self.alpha * np.abs(x))

    def potential(self, x):
        return self.strength * self.Phi(x)

    @property
    def is_zero(self) -> bool:
        return self.kind == "none" or self.strength == 0.0

    def kernel_params(self) -> tuple[int, float, float, float]:
        """(code, strength, p1, p2) consumed by the compiled kernels."""
        code = _CODES[self.kind]
        if self.kind == "smoothed_l1":
            return code, self.strength, self.eps, 0.0
        if self.kind == "elastic":
            return code, self.strength, self.lam1, self.lam2
        if self.kind == "tanh":
            return code, self.strength, self.alpha, 0.0
        return code, self.strength, 0.0, 0.0


def make_regularizer(spec) -> Regularizer:
    """Regularizer from a name, a mapping like {"name": "l1", "strength": 0.1}, or an instance."""
    if isinstance(spec, Regularizer):
        return spec
    if spec is None:
        return Regularizer()
    if isinstance(spec, str):
        return Regularizer(spec)
    spec = dict(spec)
    kind = spec.pop("name", spec.pop("kind", "none"))
    return Regularizer(kind, **spec)
