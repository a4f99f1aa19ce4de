"""Discrete operators and energy functionals for sphere-valued fields on the torus grid.

Discretization
--------------
The Dirichlet energy is assembled from staggered differences on grid edges,

    E(u) = 1/2 h^2 sum_edges |D u|^2  +  1/2 h^2 sum_plaquettes (G u)^T (A) (G u),

where ``D`` is the fourth-order staggered difference
(27 (u_{i+1} - u_i) - (u_{i+2} - u_{i-1})) / 24h (``order=2`` selects the plain
forward difference), ``G`` is the plaquette-centred gradient (average of the two parallel edge
differences) and ``A = a - I`` is the anisotropic part of the metric's unimodular
energy tensor ``a = sqrt(det g) g^{-1}``. For a conformal metric ``A = 0``, so the
energy never reads the conformal factor. The discrete Laplacian ``L`` is defined
by ``dE/du = -h^2 L u``, so summation by parts holds exactly and the tension is
``P_u(L u) / w`` with ``w = sqrt(det g)`` the area density.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import NotTangent
from .sphere import normalize, tangent_project
from .torus import TorusSpec


@dataclass
class SphereField:
    """Unit-vector field of shape (3, n, n) on a torus grid."""

    values: np.ndarray
    spec: TorusSpec

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (3, self.spec.n, self.spec.n):
            raise ValueError(f"expected shape (3, {self.spec.n}, {self.spec.n}), got {v.shape}")
        self.values = v

    def check_unit(self, tol: float = 1e-10) -> float:
        err = float(np.max(np.abs(np.sqrt(np.sum(self.values**2, axis=0)) - 1.0)))
        if err > tol:
            raise ValueError(f"field is not unit length (max deviation {err:.3e})")
        return err

    @classmethod
    def from_raw(cls, raw: np.ndarray, spec: TorusSpec) -> "SphereField":
        return cls(normalize(np.asarray(raw, dtype=float)), spec)


@dataclass
class GridMetric:
    """A Riemannian metric sampled on the grid.

    ``w`` is the area density sqrt(det g) at nodes. ``aniso`` holds the plaquette
    values of ``a - I`` as (xx, xy, yy) with ``a = sqrt(det g) g^{-1}``; ``None``
    means the metric is conformal to the flat one.
    """

    w: np.ndarray
    aniso: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def flat(cls, spec: TorusSpec) -> "GridMetric":
        return cls(np.ones((spec.n, spec.n)))

    @classmethod
    def conformal(cls, rho: np.ndarray) -> "GridMetric":
        rho = np.asarray(rho, dtype=float)
        if np.any(rho <= 0):
            raise ValueError("conformal factor must be positive")
        return cls(rho * rho)

    def area(self, spec: TorusSpec) -> float:
        return float(np.sum(self.w)) * spec.cell_area


def ConformalWeight(rho: np.ndarray) -> GridMetric:  # noqa: N802 - mirrors the data type name
    return GridMetric.conformal(rho)


# ---------------------------------------------------------------------------
# stencils


STENCIL_ORDER = 4

# staggered difference weights on nodes i-1, i, i+1, i+2 for the edge i+1/2
_EDGE_WEIGHTS = {
    2: ((0, -1.0), (1, 1.0)),
    4: ((-1, 1.0 / 24.0), (0, -27.0 / 24.0), (1, 27.0 / 24.0), (2, -1.0 / 24.0)),
}


def _edge_diff(u, axis, order):
    out = np.zeros_like(u)
    for off, c in _EDGE_WEIGHTS[order]:
        out += c * np.roll(u, -off, axis=axis)
    return out


def _edge_diff_adjoint(f, axis, order):
    out = np.zeros_like(f)
    for off, c in _EDGE_WEIGHTS[order]:
        out += c * np.roll(f, off, axis=axis)
    return out


def edge_differences(u: np.ndarray, h: float, order: int = STENCIL_ORDER):
    """Staggered differences along x and y; entry i holds the edge i+1/2."""
    return _edge_diff(u, -2, order) / h, _edge_diff(u, -1, order) / h


def edge_laplacian(u: np.ndarray, h: float, order: int = STENCIL_ORDER) -> np.ndarray:
    """-D^T D summed over both directions (equals ``laplacian5`` for order 2)."""
    return -(
        _edge_diff_adjoint(_edge_diff(u, -2, order), -2, order)
        + _edge_diff_adjoint(_edge_diff(u, -1, order), -1, order)
    ) / (h * h)


def plaquette_gradient(u: np.ndarray, h: float):
    """Gradient at plaquette centres (i+1/2, j+1/2)."""
    a = u
    b = np.roll(u, -1, axis=-2)
    c = np.roll(u, -1, axis=-1)
    d = np.roll(b, -1, axis=-1)
    gx = 0.5 * ((b - a) + (d - c)) / h
    gy = 0.5 * ((c - a) + (d - b)) / h
    return gx, gy


def plaquette_gradient_adjoint(fx: np.ndarray, fy: np.ndarray, h: float) -> np.ndarray:
    """Adjoint of ``plaquette_gradient`` with respect to plain sums."""
    s = fx + fy
    t = fx - fy
    out = np.roll(np.roll(s, 1, axis=-2), 1, axis=-1) - s
    out += np.roll(t, 1, axis=-2) - np.roll(t, 1, axis=-1)
    return out / (2.0 * h)


def laplacian5(u: np.ndarray, h: float) -> np.ndarray:
    return (
        np.roll(u, 1, axis=-2)
        + np.roll(u, -1, axis=-2)
        + np.roll(u, 1, axis=-1)
        + np.roll(u, -1, axis=-1)
        - 4.0 * u
    ) / (h * h)


def _apply_aniso(aniso, gx, gy):
    axx, axy, ayy = aniso
    return axx * gx + axy * gy, axy * gx + ayy * gy


def metric_laplacian(u: np.ndarray, h: float, aniso: np.ndarray | None = None,
                     order: int = STENCIL_ORDER) -> np.ndarray:
    """L u with dE/du = -h^2 L u (componentwise for vector fields)."""
    out = edge_laplacian(u, h, order)
    if aniso is not None:
        gx, gy = plaquette_gradient(u, h)
        fx, fy = _apply_aniso(aniso, gx, gy)
        out -= plaquette_gradient_adjoint(fx, fy, h)
    return out


def laplacian_matrix(n: int, h: float, aniso: np.ndarray | None = None,
                     order: int = STENCIL_ORDER) -> sp.csr_matrix:
    """Sparse matrix of the scalar operator ``metric_laplacian`` (row-major node order)."""
    N = n * n
    idx = np.arange(N).reshape(n, n)

    def shifted(di, dj):
        return np.roll(np.roll(idx, -di, axis=0), -dj, axis=1)

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(np.broadcast_to(v, r.shape).ravel())

    inv_h2 = 1.0 / (h * h)
    wts = _EDGE_WEIGHTS[order]
    taps: dict[int, float] = {}  # autocorrelation of the edge stencil
    for oa, ca in wts:
        for ob, cb in wts:
            taps[ob - oa] = taps.get(ob - oa, 0.0) + ca * cb
    for k, c in taps.items():
        if k == 0:
            add(idx, idx, -2.0 * c * inv_h2)
        else:
            add(idx, shifted(k, 0), -c * inv_h2)
            add(idx, shifted(0, k), -c * inv_h2)
    if aniso is not None:
        # plaquette p=(i,j) touches nodes (i,j),(i+1,j),(i,j+1),(i+1,j+1) with
        # gradient weights gx: (-1, +1, -1, +1)/(2h), gy: (-1, -1, +1, +1)/(2h)
        live = np.any(aniso != 0.0, axis=0)  # skip plaquettes where the metric is conformal
        axx, axy, ayy = (comp[live] for comp in aniso)
        corners = [((0, 0), -1.0, -1.0), ((1, 0), 1.0, -1.0), ((0, 1), -1.0, 1.0), ((1, 1), 1.0, 1.0)]
        c = 1.0 / (4.0 * h * h)
        for (ai, aj), ax, ay in corners:
            ra = shifted(ai, aj)[live]
            for (bi, bj), bx, by in corners:
                cb = shifted(bi, bj)[live]
                coef = c * (ax * bx * axx + (ax * by + ay * bx) * axy + ay * by * ayy)
                add(ra, cb, -coef)
    M = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )
    return M.tocsr()


# ---------------------------------------------------------------------------
# energies


def energy_density(u: np.ndarray, h: float, aniso: np.ndarray | None = None,
                   order: int = STENCIL_ORDER) -> np.ndarray:
    """Node energy density e with sum(e) * h^2 equal to the total energy."""
    dx, dy = edge_differences(u, h, order)
    ex = np.sum(dx * dx, axis=0)
    ey = np.sum(dy * dy, axis=0)
    e = 0.25 * (ex + np.roll(ex, 1, axis=0) + ey + np.roll(ey, 1, axis=1))
    if aniso is not None:
        gx, gy = plaquette_gradient(u, h)
        fx, fy = _apply_aniso(aniso, gx, gy)
        q = 0.5 * np.sum(gx * fx + gy * fy, axis=0)
        e = e + 0.25 * (q + np.roll(q, 1, 0) + np.roll(q, 1, 1) + np.roll(np.roll(q, 1, 0), 1, 1))
    return e


def dirichlet_energy(u, spec: TorusSpec | None = None, metric: GridMetric | None = None,
                     order: int = STENCIL_ORDER) -> float:
    """Discrete Dirichlet energy. Conformal factors do not enter."""
    if isinstance(u, SphereField):
        spec, u = u.spec, u.values
    h = spec.h
    dx, dy = edge_differences(u, h, order)
    E = 0.5 * (np.sum(dx * dx) + np.sum(dy * dy))
    if metric is not None and metric.aniso is not None:
        gx, gy = plaquette_gradient(u, h)
        fx, fy = _apply_aniso(metric.aniso, gx, gy)
        E += 0.5 * np.sum(gx * fx + gy * fy)
    return float(E * h * h)


def local_energy(u, weights: np.ndarray, spec: TorusSpec | None = None,
                 metric: GridMetric | None = None, order: int = STENCIL_ORDER) -> float:
    """Energy with per-node quadrature weights (area units), e.g. from ``ball_mask``."""
    if isinstance(u, SphereField):
        spec, u = u.spec, u.values
    aniso = metric.aniso if metric is not None else None
    return float(np.sum(energy_density(u, spec.h, aniso, order) * weights))


def tension(u, metric: GridMetric | None = None, spec: TorusSpec | None = None,
            order: int = STENCIL_ORDER) -> np.ndarray:
    """Tangent tension field P_u(L u) / w."""
    if isinstance(u, SphereField):
        spec, u = u.spec, u.values
    aniso = metric.aniso if metric is not None else None
    Lu = metric_laplacian(u, spec.h, aniso, order)
    tau = tangent_project(u, Lu)
    if metric is not None:
        tau = tau / metric.w
    return tau


def l2_inner(f: np.ndarray, g: np.ndarray, spec: TorusSpec, metric: GridMetric | None = None) -> float:
    prod = np.sum(f * g, axis=0)
    if metric is not None:
        prod = prod * metric.w
    return float(np.sum(prod) * spec.cell_area)


def l2_norm(f, spec, metric=None) -> float:
    return float(np.sqrt(max(l2_inner(f, f, spec, metric), 0.0)))


# ---------------------------------------------------------------------------
# stress, Hopf function, cylinder diagnostics


def central_gradient(u: np.ndarray, h: float):
    return (
        (np.roll(u, -1, axis=-2) - np.roll(u, 1, axis=-2)) / (2.0 * h),
        (np.roll(u, -1, axis=-1) - np.roll(u, 1, axis=-1)) / (2.0 * h),
    )


def stress_tensor(u, rho: np.ndarray | None = None, spec: TorusSpec | None = None,
                  g: np.ndarray | None = None) -> np.ndarray:
    """Energy stress tensor k = u*g_S2 - 1/2 |du|_g^2 g in coordinate components.

    Returns (k11, k12, k22). Pass either a conformal factor ``rho`` or node
    values ``g = (g11, g12, g22)`` of a general metric; with neither the metric
    is flat.
    """
    if isinstance(u, SphereField):
        spec, u = u.spec, u.values
    ux, uy = central_gradient(u, spec.h)
    p11 = np.sum(ux * ux, axis=0)
    p12 = np.sum(ux * uy, axis=0)
    p22 = np.sum(uy * uy, axis=0)
    if g is None:
        half = 0.5 * (p11 + p22)  # 1/2 |du|_g^2 g_ij for a conformal metric
        return np.stack([p11 - half, p12, p22 - half])
    g11, g12, g22 = g
    det = g11 * g22 - g12 * g12
    gi11, gi12, gi22 = g22 / det, -g12 / det, g11 / det
    dn = gi11 * p11 + 2.0 * gi12 * p12 + gi22 * p22
    return np.stack([p11 - 0.5 * dn * g11, p12 - 0.5 * dn * g12, p22 - 0.5 * dn * g22])


def stress_trace(k: np.ndarray, rho: np.ndarray | None = None) -> np.ndarray:
    tr = k[0] + k[2]
    return tr if rho is None else tr / (rho * rho)


def hopf(u, spec: TorusSpec | None = None, h: float | None = None) -> np.ndarray:
    """Hopf function |u_x|^2 - |u_y|^2 - 2i u_x.u_y in the grid coordinates."""
    if isinstance(u, SphereField):
        spec, u = u.spec, u.values
    h = spec.h if h is None else h
    ux, uy = central_gradient(u, h)
    return (np.sum(ux * ux, 0) - np.sum(uy * uy, 0)) - 2j * np.sum(ux * uy, 0)


def hopf_dbar_residual(u: np.ndarray, h: float) -> np.ndarray:
    """(d_x + i d_y) phi - 2 tau . (u_x - i u_y), with tau the flat tension."""
    phi = hopf(u, h=h)
    px, py = central_gradient(phi, h)
    ux, uy = central_gradient(u, h)
    tau = tangent_project(u, laplacian5(u, h))
    return (px + 1j * py) - 2.0 * (np.sum(tau * ux, 0) - 1j * np.sum(tau * uy, 0))


def _cyl_derivatives(u_cyl: np.ndarray, ds: float, dtheta: float):
    us = np.gradient(u_cyl, ds, axis=1, edge_order=2)
    ut = (np.roll(u_cyl, -1, axis=2) - np.roll(u_cyl, 1, axis=2)) / (2.0 * dtheta)
    return us, ut


def cylinder_alpha(u_cyl: np.ndarray, ds: float) -> np.ndarray:
    """alpha(s) = int |u_s|^2 - |u_theta|^2 dtheta on a uniform (s, theta) lattice.

    ``u_cyl`` has shape (3, n_s, n_theta); theta is periodic over [0, 2 pi).
    """
    n_t = u_cyl.shape[2]
    dt = 2.0 * np.pi / n_t
    us, ut = _cyl_derivatives(u_cyl, ds, dt)
    return np.sum(np.sum(us * us, 0) - np.sum(ut * ut, 0), axis=1) * dt


def cylinder_theta(u_cyl: np.ndarray, ds: float) -> np.ndarray:
    """Angular energy Theta(s) = int |u_theta|^2 dtheta per ring."""
    n_t = u_cyl.shape[2]
    dt = 2.0 * np.pi / n_t
    _, ut = _cyl_derivatives(u_cyl, ds, dt)
    return np.sum(np.sum(ut * ut, 0), axis=1) * dt


# ---------------------------------------------------------------------------
# second variation


def second_variation(u, v: np.ndarray, w: np.ndarray, spec: TorusSpec | None = None,
                     metric: GridMetric | None = None, tol: float = 1e-8,
                     order: int = STENCIL_ORDER) -> float:
    """Hessian of the discrete energy composed with normalisation, along tangent v, w.

    Equals h^2 [sum_edges Dv.Dw + (aniso part)] + h^2 sum_nodes (u . L u)(v . w),
    the discrete form of  int grad v . grad w - |grad u|^2 v . w.
    """
    if isinstance(u, SphereField):
        spec, u = u.spec, u.values
    if np.max(np.abs(np.sum(u * v, 0))) > tol or np.max(np.abs(np.sum(u * w, 0))) > tol:
        raise NotTangent("variations must be tangent to the sphere at u")
    h = spec.h
    aniso = metric.aniso if metric is not None else None
    vx, vy = edge_differences(v, h, order)
    wx, wy = edge_differences(w, h, order)
    quad = np.sum(vx * wx) + np.sum(vy * wy)
    if aniso is not None:
        gvx, gvy = plaquette_gradient(v, h)
        gwx, gwy = plaquette_gradient(w, h)
        fx, fy = _apply_aniso(aniso, gwx, gwy)
        quad += np.sum(gvx * fx + gvy * fy)
    uLu = np.sum(u * metric_laplacian(u, h, aniso, order), axis=0)
    return float(h * h * (quad + np.sum(uLu * np.sum(v * w, 0))))
