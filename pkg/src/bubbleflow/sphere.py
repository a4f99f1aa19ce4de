"""Target-sphere primitives: stereographic family, projections, degree and rotation fits.

Sphere-valued grid fields are stored with the vector component first, shape (3, n, n).
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np

from .errors import DegenerateCorrelation, UnresolvedField

NORTH = np.array([0.0, 0.0, 1.0])
POLE_INF = np.array([0.0, 0.0, -1.0])  # image of the point at infinity


def stereo(x, mu: float = 1.0) -> np.ndarray:
    """Inverse stereographic projection at scale ``mu``.

    ``x`` has shape (2, ...) and the result has shape (3, ...).
    """
    x = np.asarray(x, dtype=float)
    y0, y1 = mu * x[0], mu * x[1]
    q = y0 * y0 + y1 * y1
    d = 1.0 + q
    return np.stack([2.0 * y0 / d, 2.0 * y1 / d, (1.0 - q) / d])


def stereo_jacobian(x, mu: float = 1.0) -> np.ndarray:
    """Derivatives of ``stereo``; shape (3, 2, ...) with J[k, l] = d pi_k / d x_l."""
    x = np.asarray(x, dtype=float)
    y0, y1 = mu * x[0], mu * x[1]
    q = y0 * y0 + y1 * y1
    d = 1.0 + q
    d2 = d * d
    J = np.empty((3, 2) + np.shape(y0))
    J[0, 0] = 2.0 * (d - 2.0 * y0 * y0) / d2
    J[0, 1] = -4.0 * y0 * y1 / d2
    J[1, 0] = -4.0 * y0 * y1 / d2
    J[1, 1] = 2.0 * (d - 2.0 * y1 * y1) / d2
    J[2, 0] = -4.0 * y0 / d2
    J[2, 1] = -4.0 * y1 / d2
    return mu * J


def stereo_grad_norm(x, mu: float = 1.0):
    """|grad pi_mu(x)| = 2 sqrt(2) mu / (1 + |mu x|^2)."""
    x = np.asarray(x, dtype=float)
    q = mu * mu * (x[0] * x[0] + x[1] * x[1])
    return 2.0 * np.sqrt(2.0) * mu / (1.0 + q)


def stereo_ball_energy(r: float) -> float:
    """Dirichlet energy of pi on the disc of radius r."""
    return 4.0 * np.pi * r * r / (1.0 + r * r)


def normalize(v: np.ndarray) -> np.ndarray:
    """Radial projection onto the unit sphere along axis 0."""
    return v / np.sqrt(np.sum(v * v, axis=0))


def tangent_project(u: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Remove the component of ``f`` along the unit vector ``u`` (both along axis 0)."""
    return f - np.sum(f * u, axis=0) * u


class Degree(NamedTuple):
    value: int
    raw: float


def degree(u: np.ndarray, max_jump_fraction: float = 1e-3) -> Degree:
    """Topological degree from the plaquette-centred Jacobian integral.

    Derivatives and the field value are averaged to the centre of each grid
    plaquette, so the integrand is second-order accurate. The grid spacing
    cancels out of the sum.
    """
    u = np.asarray(u, dtype=float)
    a = u
    b = np.roll(u, -1, axis=1)  # (i+1, j)
    c = np.roll(u, -1, axis=2)  # (i, j+1)
    d = np.roll(b, -1, axis=2)  # (i+1, j+1)
    jumps = np.concatenate(
        [np.sum(a * b, axis=0).ravel(), np.sum(a * c, axis=0).ravel()]
    )
    frac = float(np.mean(jumps < 0.0))
    if frac > max_jump_fraction:
        warnings.warn(
            f"{100 * frac:.3f}% of grid edges turn by more than pi/2; degree may be unreliable",
            stacklevel=2,
        )
    ux = 0.5 * ((b - a) + (d - c))
    uy = 0.5 * ((c - a) + (d - b))
    um = 0.25 * (a + b + c + d)
    jac = np.sum(um * np.cross(ux, uy, axis=0), axis=0)
    raw = float(np.sum(jac)) / (4.0 * np.pi)
    k = int(round(raw))
    if abs(raw - k) > 0.2:
        raise UnresolvedField(f"degree integral {raw:.4f} is not close to an integer")
    return Degree(k, raw)


class RotationFit(NamedTuple):
    rot: np.ndarray
    singular_values: np.ndarray
    degenerate: bool


def best_rotation(u: np.ndarray, template: np.ndarray, weights: np.ndarray) -> RotationFit:
    """Weighted orthogonal Procrustes: the proper rotation R minimising sum w |u - R t|^2.

    Emits a DegenerateCorrelation warning when the two smallest singular values of
    the weighted cross-correlation are below 1e-12 times the largest.
    """
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative and not all zero")
    U = np.asarray(u, dtype=float).reshape(3, -1)
    T = np.asarray(template, dtype=float).reshape(3, -1)
    wf = w.reshape(-1)
    # maximise trace(R M) with M = sum_k w_k t_k u_k^T
    M = (T * wf) @ U.T
    P, s, Qt = np.linalg.svd(M)
    sign = np.sign(np.linalg.det(Qt.T @ P.T))
    if sign == 0:
        sign = 1.0
    D = np.diag([1.0, 1.0, sign])
    R = Qt.T @ D @ P.T
    degenerate = bool(s[1] <= 1e-12 * max(s[0], 1e-300))
    if degenerate:
        warnings.warn("rotation fit is not unique", DegenerateCorrelation, stacklevel=2)
    return RotationFit(R, s, degenerate)


def rotation_angle(R: np.ndarray) -> float:
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def rotation_from_axis_angle(axis, angle: float) -> np.ndarray:
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def apply_rotation(R: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.einsum("ij,j...->i...", R, u)
