"""Closed-form sphere-valued maps with machine-precision Jacobians.

Jacobians use complex-step differentiation, which is exact to rounding for
real-analytic formulas built from arithmetic, exp, sqrt and trigonometric
functions (no abs or conjugation).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

STEP = 1e-30


@dataclass
class AnalyticField:
    """A map R^2 -> R^3 given by ``raw(x, y)``; values are normalised onto the sphere."""

    raw: Callable
    name: str = "field"

    def _unit(self, x, y):
        v = self.raw(x, y)
        return v / np.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])

    def __call__(self, x, y) -> np.ndarray:
        return np.real(self._unit(np.asarray(x, float), np.asarray(y, float)))

    def jacobian(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ux = np.imag(self._unit(x + 1j * STEP, y + 0j)) / STEP
        uy = np.imag(self._unit(x + 0j, y + 1j * STEP)) / STEP
        return ux, uy

    def on_grid(self, spec, center=(0.0, 0.0)) -> np.ndarray:
        dx, dy = spec.offsets(center)
        return self(dx, dy)


def stereo_raw(lam: float, rot: np.ndarray | None = None, stretch=(1.0, 1.0), shift=(0.0, 0.0)):
    """pi(lam * (S x - shift)) with an optional rotation of the target."""

    def raw(x, y):
        X = lam * (stretch[0] * x - shift[0])
        Y = lam * (stretch[1] * y - shift[1])
        q = X * X + Y * Y
        v = np.stack([2.0 * X / (1.0 + q), 2.0 * Y / (1.0 + q), (1.0 - q) / (1.0 + q)])
        if rot is not None:
            v = np.einsum("ij,j...->i...", rot, v)
        return v

    return raw
