"""Gradient reversal: identity on the forward pass, sign-flipped and scaled
gradient on the backward pass.

The gate is what couples the domain classifier to the shared feature stack
adversarially. Minimizing the domain loss downstream of the gate pushes the
shared features toward *worse* domain separability, because the gradient that
reaches them is -coefficient times the true gradient.
"""

import numpy as np

from .errors import InputError


class ReversalGate:
    def __init__(self, coefficient: float = 1.0):
        self.set_coefficient(coefficient)

    def set_coefficient(self, coefficient: float):
        c = float(coefficient)
        if not np.isfinite(c) or c < 0.0:
            raise InputError(f"reversal coefficient must be finite and >= 0, got {coefficient}")
        self.coefficient = c

    def forward(self, x, train: bool = False, rng=None) -> np.ndarray:
        return np.asarray(x, dtype=np.float64)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        return -self.coefficient * np.asarray(upstream, dtype=np.float64)

    def params(self):
        return []

    def state(self):
        return []
