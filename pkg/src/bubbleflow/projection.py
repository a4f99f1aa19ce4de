"""Projection of the energy stress onto the tangent line of the metric family.

Because the family is one-dimensional, the projection is determined by the
scalar pairing ``inner = <k, d_mu g>_{L^2(g)}``. Three routes compute it:

* ``cylinder``: resample the map onto the (s, theta) lattice and integrate
  mu^{-1} psi'(s - X) alpha(s) ds;
* ``grid``: differentiate the discrete energy in mu, inner = -2 dE/dmu. This is
  the route that keeps the discrete flow an exact gradient flow;
* ``projection_oracle_2d``: full tensor assembly on a refined Cartesian grid,
  used to validate the cylinder formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analytic import AnalyticField
from .errors import ChartUnderresolved
from .fields import (
    GridMetric,
    SphereField,
    cylinder_alpha,
    l2_norm,
    plaquette_gradient,
    tension,
)
from .metric import MetricState, RadialFlow, cylinder_chart, rhobar_sq
from .sphere import normalize


@dataclass
class ProjectionResult:
    inner: float
    norm_dmu_sq: float
    proj_norm: float
    mu_velocity: float
    alpha_profile: np.ndarray | None = None
    s: np.ndarray | None = None

    @classmethod
    def from_inner(cls, inner: float, norm_dmu_sq: float, alpha=None, s=None) -> "ProjectionResult":
        return cls(
            inner=float(inner),
            norm_dmu_sq=float(norm_dmu_sq),
            proj_norm=abs(inner) / math.sqrt(norm_dmu_sq),
            mu_velocity=0.5 * inner / norm_dmu_sq,
            alpha_profile=alpha,
            s=s,
        )


def annulus_cells(ms: MetricState) -> float:
    """Radial width of supp psi'(s - X) in grid cells."""
    r_in = ms.frozen_radius()
    return (ms.profile.r1 - r_in) / ms.spec.h


def discrete_dE_dmu(u: np.ndarray, ms: MetricState) -> float:
    """Derivative of the discrete energy in mu at fixed u."""
    d = ms.grid_dmu.aniso
    h = ms.spec.h
    gx, gy = plaquette_gradient(u, h)
    q = d[0] * np.sum(gx * gx, 0) + 2.0 * d[1] * np.sum(gx * gy, 0) + d[2] * np.sum(gy * gy, 0)
    return float(0.5 * h * h * np.sum(q))


def _ring_lattice(ms: MetricState, n_s: int | None, ds: float):
    a = ms.profile.psi_gap_a
    lo, hi = ms.X - a, ms.X
    if n_s is None:
        n_s = int(math.ceil((hi - lo) / ds)) + 1
    return np.linspace(lo, hi, n_s)


def _sigma_for_s(ms: MetricState, s: np.ndarray):
    """Exact-ODE log radii and F' for a set of cylinder values (Newton on the ODE itself)."""
    sig = ms.radial_diffeo().F_inverse(s)
    for _ in range(2):
        F, P = RadialFlow(sig, ms.profile, ms.psi, ms.mu_ref).state(ms.mu)
        sig = sig - (F - s) / P
    F, P = RadialFlow(sig, ms.profile, ms.psi, ms.mu_ref).state(ms.mu)
    return sig, P


def project_stress(u, ms: MetricState, method: str = "cylinder", ds: float = 0.01,
                   n_theta: int = 512, min_cells: float = 8.0) -> ProjectionResult:
    """Stress projection for a grid field ``u`` (array (3,n,n) or SphereField)."""
    if isinstance(u, SphereField):
        u = u.values
    if ms.representation != "pulled_back":
        raise ValueError("projection needs the pulled-back representation")
    cells = annulus_cells(ms)
    if cells < min_cells:
        raise ChartUnderresolved(f"ramp annulus spans only {cells:.1f} grid cells")
    nsq = ms.dmu_l2**2
    if method == "grid":
        return ProjectionResult.from_inner(-2.0 * discrete_dE_dmu(u, ms), nsq)
    if method != "cylinder":
        raise ValueError(f"unknown method {method!r}")
    s = _ring_lattice(ms, None, ds)
    chart = cylinder_chart(ms, n_s=len(s), n_theta=n_theta, s_range=(s[0], s[-1]))
    alpha = cylinder_alpha(chart.resample(u), chart.ds)
    wts = ms.psi.d1(chart.s - ms.X)
    inner = np.trapezoid(wts * alpha, chart.s) / ms.mu
    return ProjectionResult.from_inner(inner, nsq, alpha, chart.s)


def project_stress_analytic(field: AnalyticField, ms: MetricState, ds: float = 0.01,
                            n_theta: int = 256) -> ProjectionResult:
    """Cylinder route for a closed-form map (derivatives exact)."""
    s = _ring_lattice(ms, None, ds)
    sig, P = _sigma_for_s(ms, s)
    r = np.exp(sig)
    th = np.arange(n_theta) * (2.0 * np.pi / n_theta)
    c, sn = np.cos(th), np.sin(th)
    x = r[:, None] * c[None, :]
    y = r[:, None] * sn[None, :]
    ux, uy = field.jacobian(x, y)
    ur = ux * c + uy * sn
    ut = r[:, None] * (-ux * sn + uy * c)  # d/dtheta
    us = r[:, None] * ur / P[:, None]  # d/ds
    alpha = np.sum(np.sum(us * us, 0) - np.sum(ut * ut, 0), axis=1) * (2.0 * np.pi / n_theta)
    wts = ms.psi.d1(s - ms.X)
    inner = np.trapezoid(wts * alpha, s) / ms.mu
    nsq = ms.dmu_l2**2
    return ProjectionResult.from_inner(inner, nsq, alpha, s)


def _cartesian_metric(x, y, mu, ms: MetricState):
    """Metric tensor (g11, g12, g22) of the anchored family at scale mu, at chart points."""
    r = np.hypot(x, y)
    prof = ms.profile
    w = rhobar_sq(r, mu, prof)
    g11 = w.copy()
    g12 = np.zeros_like(w)
    g22 = w.copy()
    inside = (r < prof.r1) & (r > 0)
    if np.any(inside):
        sig = np.log(r[inside])
        F, P = RadialFlow(sig, prof, ms.psi, ms.mu_ref).state(mu)
        e = np.exp(-np.abs(F))
        so = 2.0 * e / (1.0 + e * e) / r[inside]
        wv = so * so
        c = x[inside] / r[inside]
        s = y[inside] / r[inside]
        # g = sech(F)^2 (F'^2 dsigma^2 + dtheta^2) in the flat orthonormal polar frame
        grr = wv * P * P
        gtt = wv
        g11[inside] = grr * c * c + gtt * s * s
        g12[inside] = (grr - gtt) * c * s
        g22[inside] = grr * s * s + gtt * c * c
    return g11, g12, g22


def projection_oracle_2d(field: AnalyticField, ms: MetricState, refine: int = 16,
                         rel_eps: float = 1e-4) -> ProjectionResult:
    """Full-tensor assembly of <k, d_mu g>_{L^2(g)} and ||d_mu g||^2 on Cartesian grids.

    d_mu g is taken by fourth-order central differences in mu of the metric
    tensor itself. The box [-r0, r0]^2 around b is integrated on a grid refined by
    ``refine``; outside it the metric is the constant c_mu^2 dx^2.
    """
    spec, prof, mu = ms.spec, ms.profile, ms.mu
    half = prof.r0
    m = int(round(2 * half / spec.h)) * refine
    hh = 2 * half / m
    t = -half + (np.arange(m) + 0.5) * hh
    X, Y = np.meshgrid(t, t, indexing="ij")
    eps = rel_eps * mu
    gs = {k: _cartesian_metric(X, Y, mu + k * eps, ms) for k in (-2, -1, 0, 1, 2)}
    g = gs[0]
    dg = [(-gs[2][i] + 8 * gs[1][i] - 8 * gs[-1][i] + gs[-2][i]) / (12 * eps) for i in range(3)]
    g11, g12, g22 = g
    det = g11 * g22 - g12 * g12
    sq = np.sqrt(det)
    i11, i12, i22 = g22 / det, -g12 / det, g11 / det
    ux, uy = field.jacobian(X, Y)
    P11 = np.sum(ux * ux, 0)
    P12 = np.sum(ux * uy, 0)
    P22 = np.sum(uy * uy, 0)
    dn = i11 * P11 + 2 * i12 * P12 + i22 * P22
    k11, k12, k22 = P11 - 0.5 * dn * g11, P12 - 0.5 * dn * g12, P22 - 0.5 * dn * g22

    def pair(A, B):
        # tr(g^-1 A g^-1 B) for symmetric A, B
        a11 = i11 * A[0] + i12 * A[1]
        a12 = i11 * A[1] + i12 * A[2]
        a21 = i12 * A[0] + i22 * A[1]
        a22 = i12 * A[1] + i22 * A[2]
        b11 = i11 * B[0] + i12 * B[1]
        b12 = i11 * B[1] + i12 * B[2]
        b21 = i12 * B[0] + i22 * B[1]
        b22 = i12 * B[1] + i22 * B[2]
        return a11 * b11 + a12 * b21 + a21 * b12 + a22 * b22

    inner = float(np.sum(pair((k11, k12, k22), dg) * sq) * hh * hh)
    nbox = float(np.sum(pair(dg, dg) * sq) * hh * hh)
    # outside the box the metric is c_mu^2 dx^2 and the map is assumed to be constant there
    c2 = prof.c_mu(mu) ** 2
    q0 = (mu * prof.r0) ** 2
    dc2 = 2.0 * prof.c_mu(mu) * 2.0 * (1.0 - q0) / (1.0 + q0) ** 2
    nout = 2.0 * dc2 * dc2 / c2 * (spec.area - (2 * half) ** 2)
    return ProjectionResult.from_inner(inner, nbox + nout)


def gradient_norm(u, ms: MetricState, method: str = "grid", proj: ProjectionResult | None = None):
    """(gradient norm, tension norm, projection result) of the coupled energy."""
    if isinstance(u, SphereField):
        u = u.values
    gm: GridMetric = ms.grid_metric
    tau = tension(u, gm, ms.spec)
    tn = l2_norm(tau, ms.spec, gm)
    if proj is None:
        proj = project_stress(u, ms, method=method)
    return math.sqrt(tn * tn + 0.25 * proj.proj_norm**2), tn, proj


__all__ = [
    "ProjectionResult",
    "project_stress",
    "project_stress_analytic",
    "projection_oracle_2d",
    "gradient_norm",
    "discrete_dE_dmu",
    "annulus_cells",
    "normalize",
]
