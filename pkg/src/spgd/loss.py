"""Margin surrogate losses.

Losses are evaluated at z = -margin, so during training z stays in [-1, 1]
(base classifiers are bounded), but every finite z is accepted.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

LOSS_KINDS = ("exponential", "logistic")


@dataclass(frozen=True)
class LossSpec:
    """A convex, C^2, nondecreasing surrogate l(z)."""

    kind: str = "exponential"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}, expected one of {LOSS_KINDS}")


def eval_loss(loss: LossSpec, z):
    """Evaluate (l(z), l'(z), l''(z)), vectorized over z.

    exponential: (e^z, e^z, e^z)
    logistic:    (ln(1+e^z), sigma(z), sigma(z)(1-sigma(z)))

    The logistic value is computed as max(z,0) + log1p(e^{-|z|}) so large
    |z| cannot overflow.
    """
    z = np.asarray(z, dtype=np.float64)
    if loss.kind == "exponential":
        e = np.exp(z)
        return e, e, e
    s = expit(z)
    val = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return val, s, s * (1.0 - s)
