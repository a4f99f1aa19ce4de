"""Green's function of the torus and the singular bubble models built from it.

The mean-zero Green's function solves -Lap G0 = 2 pi (delta - 1/Area). It is
evaluated by Ewald splitting with parameter ``alpha``:

    G0(x) = (2 pi/A) sum_{k != 0} exp(-|k|^2/(4 alpha)) cos(k.x)/|k|^2
            + 1/2 sum_n E1(alpha |x + n L|^2) - pi/(2 alpha A),

and the regular part J = G0 + log|x| replaces the n = 0 image term by the
entire function (Ein(alpha |x|^2) - gamma - log alpha)/2. Every evaluator
accepts complex coordinates so that complex-step derivatives are exact.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, special

from .errors import OutOfChart, Underresolved
from .metric import smoothstep, smoothstep_d1
from .sphere import POLE_INF, normalize, stereo
from .torus import TorusSpec

EULER_GAMMA = 0.5772156649015329


def ein(z):
    """Entire exponential integral Ein(z) = int_0^z (1 - e^{-t})/t dt (complex-safe)."""
    z = np.asarray(z)
    small = np.abs(z) < 1.0
    out = np.empty(z.shape, dtype=np.result_type(z, float))
    if np.any(small):
        zs = z[small]
        term = zs.copy()  # (-1)^{k+1} z^k / k!
        acc = zs.copy()
        for k in range(2, 40):
            term = -term * zs / k
            acc = acc + term / k
        out[small] = acc
    if np.any(~small):
        zl = z[~small]
        out[~small] = special.exp1(zl) + np.log(zl) + EULER_GAMMA
    return out


def _cstep(x):
    """Complex-safe C^4 step selected on the real part."""
    re = np.real(x)
    xc = np.where(re <= 0.0, 0.0, np.where(re >= 1.0, 1.0, x))
    return xc**5 * (126.0 + xc * (-420.0 + xc * (540.0 + xc * (-315.0 + 70.0 * xc))))


def radial_cutoff(r2, inner: float, outer: float):
    """1 for r <= inner, 0 for r >= outer, smooth C^4 in between; argument is r^2."""
    r = np.sqrt(r2 + 0j) if np.iscomplexobj(r2) else np.sqrt(r2)
    return 1.0 - _cstep((r - inner) / (outer - inner))


@dataclass
class TorusGreens:
    side: float = 1.0
    K: int = 64
    alpha_scale: float = 8.0 * math.pi  # alpha = alpha_scale / side^2

    def __post_init__(self) -> None:
        if self.K < 32:
            raise ValueError("Fourier cutoff K must be at least 32")

    @property
    def area(self) -> float:
        return self.side * self.side

    @property
    def alpha(self) -> float:
        return self.alpha_scale / self.area

    @cached_property
    def _modes(self):
        L = self.side
        m = np.arange(-self.K, self.K + 1)
        mx, my = np.meshgrid(m, m, indexing="ij")
        keep = (mx > 0) | ((mx == 0) & (my > 0))  # half plane; cos/sin symmetric
        kx = 2 * np.pi * mx[keep] / L
        ky = 2 * np.pi * my[keep] / L
        k2 = kx * kx + ky * ky
        coef = 2.0 * (2 * np.pi / self.area) * np.exp(-k2 / (4 * self.alpha)) / k2
        sig = coef > 1e-19 * coef.max()
        return kx[sig], ky[sig], coef[sig]

    # -- pointwise evaluators (arbitrary, possibly complex, coordinates) ------
    def _wrap(self, x, y):
        L = self.side
        sx = L * np.floor(np.real(x) / L + 0.5)
        sy = L * np.floor(np.real(y) / L + 0.5)
        return x - sx, y - sy

    def _fourier(self, x, y, deriv: bool):
        kx, ky, coef = self._modes
        x = np.asarray(x)
        shape = x.shape
        xf = x.reshape(-1)
        yf = np.asarray(y).reshape(-1)
        dtype = np.result_type(xf, yf, float)
        val = np.zeros(xf.shape, dtype)
        gx = np.zeros(xf.shape, dtype)
        gy = np.zeros(xf.shape, dtype)
        chunk = 4096
        for s in range(0, xf.size, chunk):
            ph = np.outer(xf[s:s + chunk], kx) + np.outer(yf[s:s + chunk], ky)
            if deriv:
                sn = np.sin(ph) * coef
                gx[s:s + chunk] = -sn @ kx
                gy[s:s + chunk] = -sn @ ky
            else:
                val[s:s + chunk] = np.cos(ph) @ coef
        if deriv:
            return gx.reshape(shape), gy.reshape(shape)
        return val.reshape(shape)

    def _images(self):
        return [(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)]

    def J(self, x, y):
        """Regular part J(x) = G0(x) + log|x| (x taken as the minimal image)."""
        x, y = self._wrap(np.asarray(x), np.asarray(y))
        a, L = self.alpha, self.side
        out = self._fourier(x, y, deriv=False) - math.pi / (2.0 * a * self.area)
        for i, j in self._images():
            yx, yy = x + i * L, y + j * L
            q = yx * yx + yy * yy
            if i == 0 and j == 0:
                out = out + 0.5 * (ein(a * q) - EULER_GAMMA - math.log(a))
            else:
                out = out + 0.5 * special.exp1(a * q)
        return out

    def G0(self, x, y):
        x, y = self._wrap(np.asarray(x), np.asarray(y))
        q = x * x + y * y
        return self.J(x, y) - 0.5 * np.log(q)

    def grad_G0(self, x, y):
        x, y = self._wrap(np.asarray(x), np.asarray(y))
        a, L = self.alpha, self.side
        gx, gy = self._fourier(x, y, deriv=True)
        for i, j in self._images():
            yx, yy = x + i * L, y + j * L
            q = yx * yx + yy * yy
            f = -np.exp(-a * q) / q
            gx = gx + f * yx
            gy = gy + f * yy
        return gx, gy

    def grad_J(self, x, y):
        x, y = self._wrap(np.asarray(x), np.asarray(y))
        a, L = self.alpha, self.side
        gx, gy = self._fourier(x, y, deriv=True)
        for i, j in self._images():
            yx, yy = x + i * L, y + j * L
            q = yx * yx + yy * yy
            if i == 0 and j == 0:
                z = a * q
                small = np.abs(z) < 1e-3
                zs = np.where(small, 1.0, z)
                f = np.where(small, a * (1.0 - z / 2.0 + z * z / 6.0 - z**3 / 24.0),
                             a * (1.0 - np.exp(-zs)) / zs)
            else:
                f = -np.exp(-a * q) / q
            gx = gx + f * yx
            gy = gy + f * yy
        return gx, gy

    # -- grid evaluators ----------------------------------------------------
    def grad_G0_grid(self, spec: TorusSpec, a) -> tuple[np.ndarray, np.ndarray]:
        """grad G0(p - a) at every node p (singular value at p == a replaced by 0)."""
        dx, dy = spec.offsets(a)
        with np.errstate(divide="ignore", invalid="ignore"):
            gx, gy = self.grad_G0(dx, dy)
        bad = (dx == 0) & (dy == 0)
        gx[bad] = 0.0
        gy[bad] = 0.0
        return gx, gy


def jhat(x, y, greens: TorusGreens):
    """First two components of the model correction: -grad J(x) (grad J(0) = 0 on the torus)."""
    gx, gy = greens.grad_J(x, y)
    return -gx, -gy


@dataclass
class BubbleModel:
    """Analytic singular bubble model z = N(vbar) centred at ``a`` with scale ``lam``."""

    lam: float
    a: tuple
    greens: TorusGreens
    r0: float

    def raw(self, x, y):
        """vbar at chart offsets (x, y) from a (complex-safe)."""
        lam, G = self.lam, self.greens
        q = x * x + y * y
        phi = radial_cutoff(q, 0.5 * self.r0, self.r0)
        X, Y = lam * x, lam * y
        qq = X * X + Y * Y
        den = 1.0 + qq
        jx, jy = jhat(x, y, G)
        inner = np.stack([2 * X / den + 2.0 / lam * jx, 2 * Y / den + 2.0 / lam * jy, (1 - qq) / den])
        # phi is exactly 1 on the inner disc; keep the singular Green's gradient away from it
        plateau = np.real(q) < 0.25 * self.r0 * self.r0
        gx, gy = G.grad_G0(np.where(plateau, self.r0, x), np.where(plateau, 0.0, y))
        outer = np.stack([-2.0 / lam * gx, -2.0 / lam * gy, -np.ones_like(q)])
        return phi * inner + (1.0 - phi) * outer

    def value(self, x, y):
        v = self.raw(x, y)
        return v / np.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])

    def jacobian(self, x, y):
        eps = 1e-30
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        ux = np.imag(self.value(x + 1j * eps, y + 0j)) / eps
        uy = np.imag(self.value(x + 0j, y + 1j * eps)) / eps
        return ux, uy

    def energy_density(self, x, y):
        ux, uy = self.jacobian(x, y)
        return 0.5 * (np.sum(ux * ux, 0) + np.sum(uy * uy, 0))


def bubble_eval(lam: float, a, greens: TorusGreens, spec: TorusSpec, r0: float | None = None) -> np.ndarray:
    """Sample the model z_{lam,a} on the torus grid."""
    if lam * spec.h > 0.5:
        warnings.warn(f"bubble scale 1/{lam} is below two grid cells", Underresolved, stacklevel=2)
    r0 = 0.5 * min(spec.inj, 1.0) if r0 is None else r0
    model = BubbleModel(lam, tuple(a), greens, r0)
    dx, dy = spec.offsets(a)
    q = dx * dx + dy * dy
    out = np.empty((3,) + dx.shape)
    near = q < r0 * r0
    out[:, near] = model.value(dx[near], dy[near])
    far = ~near
    gx, gy = greens.grad_G0(dx[far], dy[far])
    far_raw = np.stack([-2.0 / lam * gx, -2.0 / lam * gy, -np.ones_like(gx)])
    out[:, far] = normalize(far_raw)
    return out


def model_energy(model: BubbleModel, side: float = 1.0, n_sigma: int = 48, n_panels: int = 24,
                 n_theta: int = 96, n_cart: int = 256) -> float:
    """Dirichlet energy of the model by smooth partition of unity.

    A radial cutoff chi (1 inside r0, 0 beyond 1.5 r0) splits the integral: the
    chi part is done in log-polar coordinates with Gauss-Legendre panels, the
    remainder (smooth and periodic) by the midpoint rule on a Cartesian grid.
    """
    r_in, r_out = model.r0, 1.5 * model.r0
    if r_out >= 0.5 * side:
        raise ValueError("partition radius exceeds the injectivity radius")
    lam = model.lam
    s_lo, s_hi = math.log(1e-8 / lam), math.log(r_out)
    edges = np.linspace(s_lo, s_hi, n_panels + 1)
    gx, gw = np.polynomial.legendre.leggauss(n_sigma)
    sig = (0.5 * (edges[1:] - edges[:-1])[:, None] * gx[None, :] + 0.5 * (edges[1:] + edges[:-1])[:, None]).ravel()
    wsig = (0.5 * (edges[1:] - edges[:-1])[:, None] * gw[None, :]).ravel()
    th = np.arange(n_theta) * 2 * np.pi / n_theta
    r = np.exp(sig)
    X = r[:, None] * np.cos(th)[None, :]
    Y = r[:, None] * np.sin(th)[None, :]
    chi = np.real(radial_cutoff(X * X + Y * Y, r_in, r_out))
    e = model.energy_density(X, Y)
    polar = np.sum((chi * e).sum(axis=1) * (2 * np.pi / n_theta) * wsig * r * r)
    h = side / n_cart
    t = -0.5 * side + (np.arange(n_cart) + 0.5) * h
    CX, CY = np.meshgrid(t, t, indexing="ij")
    chi_c = np.real(radial_cutoff(CX * CX + CY * CY, r_in, r_out))
    mask = chi_c < 1.0
    ec = np.zeros_like(CX)
    ec[mask] = model.energy_density(CX[mask], CY[mask])
    cart = np.sum((1.0 - chi_c) * ec) * h * h
    return float(polar + cart)


# ---------------------------------------------------------------------------
# cut-off bubbles


@dataclass(frozen=True)
class CutoffBubble:
    """pi_lam near b, blended to the constant pi(inf) across [c/2, c], renormalised."""

    lam: float
    b: tuple
    cut_radius: float
    rot: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.lam * self.cut_radius < 8.0:
            raise ValueError("cut-off bubble needs lambda * cut_radius >= 8")

    def raw(self, x, y):
        q = x * x + y * y
        chi = radial_cutoff(q, 0.5 * self.cut_radius, self.cut_radius)
        X, Y = self.lam * x, self.lam * y
        qq = X * X + Y * Y
        den = 1.0 + qq
        pl = np.stack([2 * X / den, 2 * Y / den, (1 - qq) / den])
        pinf = np.stack([0 * q, 0 * q, -np.ones_like(q)])
        v = pinf + chi * (pl - pinf)
        if self.rot is not None:
            v = np.einsum("ij,j...->i...", self.rot, v)
        return v

    def value(self, x, y):
        v = self.raw(x, y)
        return v / np.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])

    def angle(self, r):
        """Polar angle h(r) of the equivariant profile (h(0) = 0, h = pi beyond the cut)."""
        r = np.asarray(r)
        q = r * r
        chi = radial_cutoff(q, 0.5 * self.cut_radius, self.cut_radius)
        R = self.lam * r
        qq = R * R
        s0 = 2 * R / (1 + qq)
        c0 = (1 - qq) / (1 + qq)
        return np.arctan2(chi * s0, chi * c0 - (1 - chi))

    def exact_energy(self) -> float:
        """Energy by 1-D quadrature of pi int (h'^2 + sin^2 h / r^2) r dr."""
        eps = 1e-30

        def dens(r):
            hp = np.imag(self.angle_c(r + 1j * eps)) / eps
            hv = float(np.real(self.angle_c(r + 0j)))
            return math.pi * (hp * hp + math.sin(hv) ** 2 / (r * r)) * r

        c = self.cut_radius
        pts = [1.0 / self.lam * t for t in (0.5, 1, 2, 4, 8)] + [0.5 * c]
        pts = sorted(p for p in pts if 0 < p < c)
        knots = [0.0] + pts + [c]
        total = 0.0
        for lo, hi in zip(knots[:-1], knots[1:]):
            val, _ = integrate.quad(dens, lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)
            total += val
        return total

    def angle_c(self, r):
        """Complex-safe version of ``angle`` valid away from h = pi."""
        q = r * r
        chi = radial_cutoff(q, 0.5 * self.cut_radius, self.cut_radius)
        R = self.lam * r
        qq = R * R
        s0 = 2 * R / (1 + qq)
        c0 = (1 - qq) / (1 + qq)
        num = chi * s0
        den = chi * c0 - (1 - chi)
        # arctan2 is not complex-aware; use the branch of arctan consistent with the real value
        base = np.arctan2(np.real(num), np.real(den))
        return base + (np.arctan(num / den) - np.arctan(np.real(num) / np.real(den)))

    def exact_defect(self) -> float:
        return self.exact_energy() - 4.0 * math.pi


def cutoff_bubble(lam: float, b, spec: TorusSpec, cut_radius: float | None = None,
                  rot: np.ndarray | None = None) -> np.ndarray:
    """Grid samples of a cut-off bubble (default cut radius: the injectivity radius)."""
    cut = spec.inj if cut_radius is None else cut_radius
    model = CutoffBubble(lam, tuple(b), cut, rot)
    dx, dy = spec.offsets(b)
    return model.value(dx, dy)


def stereo_bubble(lam: float, b, spec: TorusSpec) -> np.ndarray:
    dx, dy = spec.offsets(b)
    return stereo(np.stack([dx, dy]), lam)


__all__ = [
    "TorusGreens", "BubbleModel", "CutoffBubble", "bubble_eval", "cutoff_bubble",
    "jhat", "model_energy", "ein", "radial_cutoff", "POLE_INF", "OutOfChart",
    "smoothstep", "smoothstep_d1",
]
