"""Fits of the singular-minimiser data (R, a, lambda, p) and the stability ratios.

All quantities are evaluated on the grid that carries the map. For a map that
lives on the pulled-back grid of a flow (metric g = T* gbar), a ``ChartView``
records where each node sits in the flat chart around b (the point T(x)) and
the Jacobian of T, so that integrals of the flat-torus map ubar = u o T^{-1}
are computed without resampling ubar onto a grid that could not resolve it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoConcentration
from .fields import energy_density
from .metric import MetricState
from .sphere import POLE_INF, best_rotation, stereo
from .torus import TorusSpec, ball_mask

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# chart views


@dataclass
class ChartView:
    """Nodes of a torus grid seen in the flat chart around ``b``.

    ``pos`` holds the flat-chart offsets T(x) - b of every node, ``jac`` the
    area Jacobian of T, and ``aniso`` the energy tensor of the metric the map is
    sampled in (None for the flat torus).
    """

    spec: TorusSpec
    b: tuple
    pos: tuple
    jac: np.ndarray
    aniso: np.ndarray | None = None
    _radial: object = field(default=None, repr=False)

    @classmethod
    def flat(cls, spec: TorusSpec, b=(0.0, 0.0)) -> "ChartView":
        dx, dy = spec.offsets(b)
        return cls(spec, (float(b[0]), float(b[1])), (dx, dy), np.ones_like(dx))

    @classmethod
    def pulled_back(cls, ms: MetricState) -> "ChartView":
        spec = ms.spec
        dx, dy = spec.offsets(ms.b)
        r = np.hypot(dx, dy)
        rd = ms.radial_diffeo()
        core = math.exp(rd.f[0] - rd.sigma[0]) / rd.mu
        scale, jac = _radial_scale(rd, r, ms.profile.r1, core)
        return cls(spec, ms.b, (dx * scale, dy * scale), jac, ms.grid_metric.aniso, (rd, ms.profile.r1, core))

    def map_points(self, dx, dy):
        """Flat-chart offsets T(x) - b for pulled-back offsets (dx, dy)."""
        if self._radial is None:
            return dx, dy
        rd, r1, core = self._radial
        scale, _ = _radial_scale(rd, np.hypot(dx, dy), r1, core)
        return dx * scale, dy * scale

    def ball_weights(self, center, radius: float, sub: int = 4) -> np.ndarray:
        """Node weights (pulled-back area units) of the preimage of the flat ball B_radius(b + center)."""
        if self._radial is None:
            return ball_mask(self.spec, (self.b[0] + center[0], self.b[1] + center[1]), radius, sub=sub)
        h = self.spec.h
        px, py = self.pos
        cx, cy = center
        # only cells whose image can reach the ball need sub-sampling
        reach = np.hypot(px - cx, py - cy)
        stretch = 2.0 * h * np.sqrt(np.maximum(self.jac, 1.0)) + 2.0 * h
        w = np.where(reach + stretch < radius, 1.0, 0.0)
        cut = (reach - stretch < radius) & (reach + stretch >= radius)
        if np.any(cut):
            idx = np.nonzero(cut)
            dx, dy = self.spec.offsets(self.b)
            t = (np.arange(sub) + 0.5) / sub - 0.5
            sx = dx[idx][:, None, None] + h * t[None, :, None]
            sy = dy[idx][:, None, None] + h * t[None, None, :]
            sx, sy = np.broadcast_arrays(sx, sy)
            mx, my = self.map_points(sx, sy)
            inside = (mx - cx) ** 2 + (my - cy) ** 2 < radius * radius
            w[idx] = inside.reshape(len(idx[0]), -1).mean(axis=1)
        return w * self.spec.cell_area

    def energy_density(self, u: np.ndarray) -> np.ndarray:
        return energy_density(u, self.spec.h, self.aniso)

    def area_weights(self) -> np.ndarray:
        """Flat-chart area of every node cell."""
        return self.jac * self.spec.cell_area


def _radial_scale(rd, r, r1, core_scale):
    """t(r)/r and the area Jacobian t t' / r of the radial map (identity beyond r1)."""
    scale = np.ones_like(r)
    jac = np.ones_like(r)
    inside = (r < r1) & (r > 0)
    if np.any(inside):
        sig = np.log(r[inside])
        F = rd.F(sig)
        P = rd.Fprime(sig)
        e = np.exp(F - sig) / rd.mu
        scale[inside] = e
        jac[inside] = e * e * P
    zero = r == 0
    scale[zero] = core_scale
    jac[zero] = core_scale**2
    return scale, jac


# ---------------------------------------------------------------------------
# fits


@dataclass
class BubbleFit:
    rot: np.ndarray
    a: tuple  # flat-chart offset of the bubble centre from the view's base point
    lam: float
    p: np.ndarray
    defect: float
    res_grad_tail: dict  # R -> ||grad v||_{L^2(Sigma \ B_R(a))}
    res_l2_const: float
    res_h1_bubble: float
    ratios: dict
    degenerate_rotation: bool = False

    def to_dict(self) -> dict:
        return {
            "rot": self.rot.tolist(), "a": list(self.a), "lambda": self.lam, "p": self.p.tolist(),
            "defect": self.defect, "res_grad_tail": {repr(k): v for k, v in self.res_grad_tail.items()},
            "res_l2_const": self.res_l2_const, "res_h1_bubble": self.res_h1_bubble,
            "ratios": self.ratios, "degenerate_rotation": self.degenerate_rotation,
        }


def _golden_max(f, lo, hi, tol):
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = hi - g * (hi - lo), lo + g * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - g * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + g * (hi - lo)
            fd = f(d)
    return 0.5 * (lo + hi)


def fit_center_scale(v: np.ndarray, view: ChartView | TorusSpec, search_radius: float | None = None):
    """(a, lambda) with E(v, B_{1/lambda}(a)) = sup = 2 pi.

    For a flat view this is the concentration search; otherwise the centre is
    refined around the view's base point within ``search_radius``.
    """
    if isinstance(view, TorusSpec):
        from .flow import find_concentration

        c = find_concentration(v, view)
        return (float(c.b[0]), float(c.b[1])), float(c.mu0)
    dens = view.energy_density(v)
    if view._radial is None:
        from .flow import find_concentration

        c = find_concentration(v, view.spec)
        off = (float(view.spec.wrap(c.b[0] - view.b[0])), float(view.spec.wrap(c.b[1] - view.b[1])))
        return off, float(c.mu0)

    def ball(center, R):
        return float(np.sum(dens * view.ball_weights(center, R)))

    inj = view.spec.inj
    if ball((0.0, 0.0), inj) < TWO_PI:
        raise NoConcentration("no ball around the base point carries 2 pi of energy")

    def radius_for(center):
        lo, hi = 1e-9, inj
        for _ in range(50):
            mid = math.sqrt(lo * hi)
            if ball(center, mid) >= TWO_PI:
                hi = mid
            else:
                lo = mid
        return math.sqrt(lo * hi)

    R = radius_for((0.0, 0.0))
    sr = R if search_radius is None else search_radius
    cx = _golden_max(lambda x: ball((x, 0.0), R), -sr, sr, 1e-3 * R)
    cy = _golden_max(lambda y: ball((cx, y), R), -sr, sr, 1e-3 * R)
    R = radius_for((cx, cy))
    return (cx, cy), 1.0 / R


def fit_rotation_constant(v: np.ndarray, view: ChartView, a, lam: float):
    """Rotation by weighted Procrustes against pi_lambda on D_iota(a), and p = m_v / |m_v|."""
    px, py = view.pos
    X, Y = px - a[0], py - a[1]
    template = stereo(np.stack([X, Y]), lam)
    iota = view.spec.inj
    rho2 = 4.0 * lam * lam / (1.0 + lam * lam * (X * X + Y * Y)) ** 2
    wts = rho2 * view.ball_weights(a, iota) * view.jac
    fit = best_rotation(v, template, wts)
    m = np.sum(v * view.area_weights(), axis=(1, 2))
    nm = np.linalg.norm(m)
    p = m / nm if nm > 0 else np.array(POLE_INF)
    return fit.rot, p, fit.degenerate


def _h1_sq(diff: np.ndarray, view: ChartView, mask: np.ndarray, l2_weight: np.ndarray) -> float:
    grad = 2.0 * np.sum(energy_density(diff, view.spec.h, view.aniso) * mask)
    l2 = np.sum(np.sum(diff * diff, 0) * l2_weight * mask * view.jac)
    return float(grad + l2)


def audit(v: np.ndarray, view: ChartView | TorusSpec, defect: float | None = None,
          fit: tuple | None = None, n_radii: int = 6) -> BubbleFit:
    """Stability residuals of the bubble fit and their ratios to the predicted powers of the defect.

    ``defect`` defaults to the discrete energy minus 4 pi; pass the exact value
    when it is known (e.g. cut-off bubbles) to keep lattice error out of it.
    """
    if isinstance(view, TorusSpec):
        if fit is None:
            b, lam0 = fit_center_scale(v, view)
            fit = ((0.0, 0.0), lam0)
        else:
            b, fit = fit[0], ((0.0, 0.0), fit[1])
        view = ChartView.flat(view, b)
    spec = view.spec
    dens = view.energy_density(v)
    E = float(np.sum(dens) * spec.cell_area)
    delta = E - 4.0 * math.pi if defect is None else float(defect)
    if fit is None:
        a, lam = fit_center_scale(v, view)
    else:
        a, lam = fit
    rot, p, degenerate = fit_rotation_constant(v, view, a, lam)
    iota = spec.inj
    # a nonpositive discrete defect means lattice error has swamped it; the ratios are then undefined
    sq = math.sqrt(delta) if delta > 0 else math.nan

    tails = {}
    for k in range(1, n_radii + 1):
        R = iota * 2.0**-k
        inside = float(np.sum(dens * view.ball_weights(a, R)))
        tails[R] = math.sqrt(max(2.0 * (E - inside), 0.0))
    diff_c = v - p[:, None, None]
    res2 = math.sqrt(float(np.sum(np.sum(diff_c * diff_c, 0) * view.area_weights())))

    px, py = view.pos
    X, Y = px - a[0], py - a[1]
    model = np.einsum("ij,j...->i...", rot, stereo(np.stack([X, Y]), lam))
    rho2 = 4.0 * lam * lam / (1.0 + lam * lam * (X * X + Y * Y)) ** 2
    mask = view.ball_weights(a, iota)
    res3 = math.sqrt(_h1_sq(v - model, view, mask, rho2) / spec.cell_area * spec.cell_area)

    logt = (1.0 + abs(math.log(delta))) ** 0.5 if delta > 0 else math.nan
    ratios = {
        "ratio1": max(res * R / sq for R, res in tails.items()),
        "ratio1_by_R": {repr(R): res * R / sq for R, res in tails.items()},
        "ratio2": res2 / (sq * logt),
        "ratio3": res3 / sq,
        "ratio4": 1.0 / (lam * sq),
    }
    return BubbleFit(rot, tuple(a), float(lam), p, delta, tails, res2, res3, ratios, bool(degenerate))


# ---------------------------------------------------------------------------
# Lojasiewicz audit


@dataclass
class LojReport:
    status: str  # pass | fail | window_violated | degenerate | defect_unresolved
    window: dict
    gradient_norm: float
    defect: float
    ratios: dict
    caps: dict

    def to_dict(self) -> dict:
        return {"status": self.status, "window": self.window, "gradient_norm": self.gradient_norm,
                "defect": self.defect, "ratios": self.ratios, "caps": self.caps}


def window_check(u: np.ndarray, view: ChartView, mu: float, eps2: float, n_ring: int = 4,
                 n_angle: int = 8) -> dict:
    """Energies on the two balls of the Lojasiewicz hypothesis, with margins."""
    dens = view.energy_density(u)
    outer = float(np.sum(dens * view.ball_weights((0.0, 0.0), (1.0 + eps2) / mu)))
    worst = -math.inf
    for k in range(n_ring + 1):
        rr = k / n_ring / mu
        for j in range(n_angle if k else 1):
            ang = 2.0 * math.pi * j / n_angle
            c = (rr * math.cos(ang), rr * math.sin(ang))
            worst = max(worst, float(np.sum(dens * view.ball_weights(c, (1.0 - eps2) / mu))))
    low_margin = outer - (TWO_PI - eps2)
    high_margin = (TWO_PI + eps2) - worst
    return {"outer_energy": outer, "inner_max_energy": worst, "low_margin": low_margin,
            "high_margin": high_margin, "ok": bool(low_margin >= 0 and high_margin >= 0), "eps2": eps2}


def loj_audit(u: np.ndarray, ms: MetricState, gradient_norm: float | None = None,
              eps2: float = 0.1, caps: dict | None = None, tiny: float = 1e-10) -> LojReport:
    """Ratios defect / G^2, 1 / (mu G) and (fitted distance) / G for G = ||grad E_b(u, g_mu)||."""
    from .projection import gradient_norm as grad_norm_fn

    caps = {"loj_energy": 1e3, "loj_mu": 1e3, "loj_dist": 1e3} if caps is None else caps
    view = ChartView.pulled_back(ms)
    win = window_check(u, view, ms.mu, eps2)
    if gradient_norm is None:
        gradient_norm = grad_norm_fn(u, ms, method="grid")[0]
    G = gradient_norm
    E = float(np.sum(view.energy_density(u)) * ms.spec.cell_area)
    defect = E - 4.0 * math.pi
    if not win["ok"]:
        return LojReport("window_violated", win, G, defect, {}, caps)
    if G < tiny and abs(defect) < tiny:
        return LojReport("degenerate", win, G, defect, {}, caps)
    if defect <= 0:
        return LojReport("defect_unresolved", win, G, defect, {}, caps)
    a, lam = fit_center_scale(u, view, search_radius=0.5 / ms.mu)
    rot, _, _ = fit_rotation_constant(u, view, a, lam)
    px, py = view.pos
    X, Y = px - a[0], py - a[1]
    model = np.einsum("ij,j...->i...", rot, stereo(np.stack([X, Y]), lam))
    rho2 = 4.0 * lam * lam / (1.0 + lam * lam * (X * X + Y * Y)) ** 2
    iota = ms.spec.inj
    inner_mask = view.ball_weights(a, iota)
    d_bubble = math.sqrt(_h1_sq(u - model, view, inner_mask, rho2))
    c_lam = 2.0 * lam / (1.0 + lam * lam * iota * iota)
    far = rot @ np.array(POLE_INF)
    outer_mask = ms.spec.cell_area - inner_mask
    d_const = math.sqrt(_h1_sq(u - far[:, None, None], view, outer_mask, np.full_like(rho2, c_lam**2)))
    ratios = {
        "energy": defect / (G * G),
        "mu": 1.0 / (ms.mu * G),
        "dist": (d_bubble + d_const) / G,
        "lambda_over_mu": lam / ms.mu,
    }
    ok = ratios["energy"] <= caps["loj_energy"] and ratios["mu"] <= caps["loj_mu"] and ratios["dist"] <= caps["loj_dist"]
    return LojReport("pass" if ok else "fail", win, G, defect, ratios, caps)


def slope(x, y) -> tuple[float, float]:
    """Least-squares log-log slope and its standard error (NaN stderr for two points)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if len(lx) < 2:
        return float("nan"), float("nan")
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    if len(lx) > 2:
        resid = ly - A @ coef
        s2 = float(resid @ resid) / (len(lx) - 2)
        se = math.sqrt(s2 / float(np.sum((lx - lx.mean()) ** 2)))
    else:
        se = float("nan")
    return float(coef[0]), se


__all__ = ["ChartView", "BubbleFit", "LojReport", "fit_center_scale", "fit_rotation_constant",
           "audit", "loj_audit", "window_check", "slope"]
