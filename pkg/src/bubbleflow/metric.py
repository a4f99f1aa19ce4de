"""The one-parameter metric family around a concentration point b.

Geometry in brief (radius r = |x| in the chart at b, sigma = log r):

* weighted metric  gbar_mu = rhobar^2 dx^2 with
  rhobar^2 = phi(r) 4 mu^2/(1 + mu^2 r^2)^2 + (1 - phi(r)) c_mu^2,  c_mu = 2 mu/(1 + mu^2 r0^2);
* radial diffeomorphisms generated in l = log mu by the cylinder-variable ODE
  dF/dl = psi(F - X_l),  X_l = log(mu r1),  for F(sigma) = log(mu t(e^sigma));
* pulled-back metric on B_{r1}:  g = sech(F)^2 (F'^2 dsigma^2 + dtheta^2), identical
  to gbar outside B_{r1}.

The pulled-back metric is anisotropic wherever F' != 1, so it is stored as an
area density plus the plaquette tensor a - I (see ``fields``).

Diffeomorphisms are anchored at a reference scale ``mu_ref`` where they are the
identity. ``mu_ref = mu_star`` gives the standard family; anchoring at the
initial scale mu_0 gives the same geometry expressed in the coordinates of the
initial map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from .errors import MonotonicityLost, OdeStepFailure, ProfileInvalid
from .fields import GridMetric
from .torus import TorusSpec

LADDER_STEP = 0.01  # maximal step in log(mu) for the radial ODE


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class ConstantProfile:
    r0: float
    r1: float
    r2: float
    r3: float
    mu_star: float
    psi_gap_a: float
    psi_gap_b: float
    mode: str = "paper"
    edge_fraction: float = 0.2  # width of each smooth shoulder of psi' relative to a

    @classmethod
    def build(cls, inj: float, mode: str = "paper", a: float | None = None,
              b: float | None = None, edge_fraction: float = 0.2) -> "ConstantProfile":
        if mode == "paper":
            a = 4.0 if a is None else a
            b = 1.0 if b is None else b
        elif mode == "desk":
            a = 2.0 if a is None else a
            b = 0.5 if b is None else b
        else:
            raise ProfileInvalid(f"unknown profile mode {mode!r}")
        r0 = 0.5 * min(inj, 1.0)
        r1 = r0 / 4.0
        r2 = math.exp(-a) * r1
        r3 = math.exp(-b) * r2
        prof = cls(r0, r1, r2, r3, 1.0 / r3, a, b, mode, edge_fraction)
        prof.validate(inj)
        return prof

    @classmethod
    def for_spec(cls, spec: TorusSpec, mode: str = "paper", **kw) -> "ConstantProfile":
        return cls.build(spec.inj, mode, **kw)

    def validate(self, inj: float | None = None) -> None:
        a, b = self.psi_gap_a, self.psi_gap_b
        if self.mode == "paper" and (a != 4.0 or b != 1.0):
            raise ProfileInvalid("paper profile requires gaps a=4, b=1")
        if self.mode == "desk" and not (2.0 <= a <= 4.0 and 0.5 <= b <= 1.0):
            raise ProfileInvalid("desk profile requires a in [2,4] and b in [0.5,1]")
        if not (0.0 < self.edge_fraction < 0.5):
            raise ProfileInvalid("edge_fraction must lie in (0, 1/2)")
        if inj is not None and not math.isclose(self.r0, 0.5 * min(inj, 1.0)):
            raise ProfileInvalid("r0 must equal min(inj, 1)/2")
        rel = [
            (self.r1, self.r0 / 4.0),
            (self.r2, math.exp(-a) * self.r1),
            (self.r3, math.exp(-b) * self.r2),
            (self.mu_star, 1.0 / self.r3),
        ]
        for got, want in rel:
            if not math.isclose(got, want, rel_tol=1e-12):
                raise ProfileInvalid("profile radii are inconsistent")

    def c_mu(self, mu):
        return 2.0 * mu / (1.0 + mu * mu * self.r0 * self.r0)

    def to_dict(self) -> dict:
        return {
            "r0": self.r0, "r1": self.r1, "r2": self.r2, "r3": self.r3,
            "mu_star": self.mu_star, "psi_gap_a": self.psi_gap_a,
            "psi_gap_b": self.psi_gap_b, "mode": self.mode,
            "edge_fraction": self.edge_fraction,
        }


# ---------------------------------------------------------------------------
# smooth cutoffs (piecewise polynomial, C^4)


def smoothstep(x):
    """C^4 step: 0 for x<=0, 1 for x>=1, derivative 630 x^4 (1-x)^4."""
    x = np.clip(x, 0.0, 1.0)
    return x**5 * (126.0 + x * (-420.0 + x * (540.0 + x * (-315.0 + 70.0 * x))))


def smoothstep_d1(x):
    x = np.clip(x, 0.0, 1.0)
    return 630.0 * (x * (1.0 - x)) ** 4


def smoothstep_d2(x):
    x = np.clip(x, 0.0, 1.0)
    return 2520.0 * (x * (1.0 - x)) ** 3 * (1.0 - 2.0 * x)


def smoothstep_int(x):
    """Antiderivative of ``smoothstep`` vanishing at 0; equals 1/2 at 1 (x clipped to [0,1])."""
    x = np.clip(x, 0.0, 1.0)
    return x**6 * (21.0 + x * (-60.0 + x * (67.5 + x * (-35.0 + 7.0 * x))))


@dataclass(frozen=True)
class CutoffPsi:
    """Monotone ramp from 0 on (-inf, -a] to 1 on [0, inf).

    psi' is a plateau of height 1/(a - w) with smooth shoulders of width
    w = edge_fraction * a, so max psi' = 1/((1 - edge_fraction) a) and
    psi(-a/2) = 1/2 by symmetry.
    """

    a: float
    edge_fraction: float = 0.2
    scale: float = 1.0  # total mass of psi'; 1 for a valid cutoff

    @property
    def w(self) -> float:
        return self.edge_fraction * self.a

    @property
    def height(self) -> float:
        return self.scale / (self.a - self.w)

    @property
    def max_slope(self) -> float:
        return self.height

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        a, w, hp = self.a, self.w, self.height
        lo = hp * w * smoothstep_int((z + a) / w)
        mid = hp * (0.5 * w + (z + a - w))
        hi = self.scale - hp * w * smoothstep_int(-z / w)
        out = np.where(z < -a + w, lo, np.where(z <= -w, mid, hi))
        out = np.where(z <= -a, 0.0, out)
        return np.where(z >= 0.0, self.scale, out)

    def d1(self, z):
        z = np.asarray(z, dtype=float)
        a, w, hp = self.a, self.w, self.height
        rise = smoothstep((z + a) / w)
        fall = smoothstep(-z / w)
        return hp * np.minimum(rise, fall)

    def d2(self, z):
        z = np.asarray(z, dtype=float)
        a, w, hp = self.a, self.w, self.height
        rise = np.where((z > -a) & (z < -a + w), smoothstep_d1((z + a) / w) / w, 0.0)
        fall = np.where((z > -w) & (z < 0.0), -smoothstep_d1(-z / w) / w, 0.0)
        return hp * (rise + fall)


@dataclass(frozen=True)
class CutoffPhi:
    """Radial cutoff: 1 on [0, r0/2], 0 on [r0, inf)."""

    r0: float

    def __call__(self, r):
        return 1.0 - smoothstep((np.asarray(r, float) - 0.5 * self.r0) / (0.5 * self.r0))

    def d1(self, r):
        return -smoothstep_d1((np.asarray(r, float) - 0.5 * self.r0) / (0.5 * self.r0)) / (0.5 * self.r0)


def build_psi(profile: ConstantProfile) -> CutoffPsi:
    psi = CutoffPsi(profile.psi_gap_a, profile.edge_fraction)
    check_psi(psi, profile)
    return psi


def build_phi(profile: ConstantProfile) -> CutoffPhi:
    return CutoffPhi(profile.r0)


def check_psi(psi: CutoffPsi, profile: ConstantProfile | None = None) -> dict:
    """Verify the ramp invariants; raises ProfileInvalid on failure."""
    a = psi.a
    mass, _ = integrate.quad(psi.d1, -a, 0.0, points=[-a + psi.w, -psi.w], epsabs=1e-14, epsrel=1e-13)
    report = {
        "mass": mass,
        "psi_at_0": float(psi(0.0)),
        "psi_at_minus_a": float(psi(-a)),
        "psi_at_mid": float(psi(-0.5 * a)),
        "max_slope": psi.max_slope,
        "slope_bound": 4.0 / (3.0 * a),
    }
    problems = []
    if abs(mass - 1.0) > 1e-10:
        problems.append(f"integral of psi' is {mass:.12f}, not 1")
    if report["psi_at_0"] != 1.0 or report["psi_at_minus_a"] != 0.0:
        problems.append("psi does not reach its end values")
    if abs(report["psi_at_mid"] - 0.5) > 1e-12:
        problems.append("psi(-a/2) differs from 1/2")
    if psi.max_slope > report["slope_bound"] * (1 + 1e-12):
        problems.append("psi' exceeds (4/3)/a")
    if problems:
        raise ProfileInvalid("; ".join(problems))
    return report


# ---------------------------------------------------------------------------
# radial ODE on a fixed ladder in log(mu)


class RadialFlow:
    """Integrates (F, F') for a fixed set of sigma = log r values.

    The state at ladder node l_ref + k*LADDER_STEP is always obtained from node
    k-1 by one classical RK4 step, so values are independent of the order in
    which scales are requested. Points whose cylinder variable sits at or below
    the foot of the ramp have exactly zero increments and stay bitwise frozen.
    """

    def __init__(self, sigma: np.ndarray, profile: ConstantProfile, psi: CutoffPsi,
                 mu_ref: float, dl: float = LADDER_STEP):
        self.sigma = np.asarray(sigma, dtype=float)
        self.psi = psi
        self.l_ref = math.log(mu_ref)
        self.log_r1 = math.log(profile.r1)
        self.dl = dl
        self._nodes: dict[int, tuple[np.ndarray, np.ndarray]] = {
            0: (self.sigma + self.l_ref, np.ones_like(self.sigma))
        }

    def _rhs(self, l, f, p):
        z = f - l - self.log_r1
        return self.psi(z), self.psi.d1(z) * p

    def _rk4(self, l, f, p, dl):
        a1, b1 = self._rhs(l, f, p)
        a2, b2 = self._rhs(l + 0.5 * dl, f + 0.5 * dl * a1, p + 0.5 * dl * b1)
        a3, b3 = self._rhs(l + 0.5 * dl, f + 0.5 * dl * a2, p + 0.5 * dl * b2)
        a4, b4 = self._rhs(l + dl, f + dl * a3, p + dl * b3)
        fn = f + (dl / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        pn = p + (dl / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        if not (np.all(np.isfinite(fn)) and np.all(np.isfinite(pn))):
            raise OdeStepFailure(f"non-finite state at log mu = {l + dl}")
        return fn, pn

    def _node(self, k: int):
        if k in self._nodes:
            return self._nodes[k]
        step = 1 if k > 0 else -1
        j = k
        while j not in self._nodes:
            j -= step
        f, p = self._nodes[j]
        while j != k:
            l = self.l_ref + j * self.dl
            f, p = self._rk4(l, f, p, step * self.dl)
            j += step
            self._nodes[j] = (f, p)
        return f, p

    def frozen_mask(self, mu: float) -> np.ndarray:
        """Points already at the foot of the ramp at the ladder node at or below ``mu``.

        Their tables are bitwise identical for every scale from that node on. A
        point that only reaches the foot between two nodes is excluded, since the
        node-to-node step still moves it by a rounding-level amount.
        """
        x = (math.log(mu) - self.l_ref) / self.dl
        k = math.floor(x + 1e-12)
        f, _ = self._node(k)
        z = f - (self.l_ref + k * self.dl) - self.log_r1
        return z <= -self.psi.a

    def state(self, mu: float) -> tuple[np.ndarray, np.ndarray]:
        x = (math.log(mu) - self.l_ref) / self.dl
        k = math.floor(x + 1e-12) if x >= 0 else math.ceil(x - 1e-12)
        f, p = self._node(k)
        rem = math.log(mu) - (self.l_ref + k * self.dl)
        if rem != 0.0:
            f, p = self._rk4(self.l_ref + k * self.dl, f, p, rem)
        return f, p


def quadrature_profile(sigma, mu: float, mu_ref: float, profile: ConstantProfile,
                       psi: CutoffPsi) -> np.ndarray:
    """Independent route to F via the autonomous variable z = F - X.

    dz/dl = psi(z) - 1, so l - l_ref = int_{z_ref}^{z} dz' / (psi(z') - 1); solved
    for z by bracketing. Used as a test oracle.
    """
    from scipy.optimize import brentq

    a = profile.psi_gap_a
    log_r1 = math.log(profile.r1)
    dl_total = math.log(mu) - math.log(mu_ref)
    out = []
    for s in np.atleast_1d(sigma):
        z0 = s - log_r1
        if z0 >= 0.0:
            z = z0
        elif z0 <= -a and dl_total >= 0:
            z = z0 - dl_total
        else:
            def elapsed(z):
                if z == z0:
                    return 0.0
                lo, hi = sorted((z, z0))
                pts = [p for p in (-a, -a + psi.w, -psi.w) if lo < p < hi]
                with np.errstate(divide="ignore"):
                    val, _ = integrate.quad(lambda t: 1.0 / (1.0 - psi(t)), lo, hi, points=pts or None,
                                            epsabs=1e-14, epsrel=1e-13, limit=200)
                return val if z < z0 else -val

            # elapsed(z) increases as z decreases
            target = dl_total
            if target >= 0:
                z_lo = z0 - target - 1.0
                z = brentq(lambda zz: elapsed(zz) - target, z_lo, z0, xtol=1e-15, rtol=1e-15)
            else:
                z_hi = min(0.0, z0 - target)
                z = brentq(lambda zz: elapsed(zz) - target, z0, z_hi - 1e-300, xtol=1e-15, rtol=1e-15)
        out.append(z + math.log(mu) + log_r1)
    return np.array(out)


# ---------------------------------------------------------------------------
# radial diffeomorphism as a dense table


@dataclass
class RadialDiffeo:
    """Dense table of F = log(mu t(e^sigma)) and F' on the transition range."""

    mu: float
    mu_ref: float
    profile: ConstantProfile
    sigma: np.ndarray
    f: np.ndarray
    fp: np.ndarray

    @cached_property
    def _spline(self) -> CubicHermiteSpline:
        return CubicHermiteSpline(self.sigma, self.f, self.fp)

    @property
    def X(self) -> float:
        return math.log(self.mu * self.profile.r1)

    def F(self, sig):
        """F(sigma) for arbitrary sigma (closed forms outside the table)."""
        sig = np.asarray(sig, dtype=float)
        lo, hi = self.sigma[0], self.sigma[-1]
        inner = self._spline(np.clip(sig, lo, hi))
        below = self.f[0] + (sig - lo)
        above = sig + math.log(self.mu)
        return np.where(sig < lo, below, np.where(sig > hi, above, inner))

    def Fprime(self, sig):
        sig = np.asarray(sig, dtype=float)
        lo, hi = self.sigma[0], self.sigma[-1]
        inner = self._spline(np.clip(sig, lo, hi), 1)
        return np.where((sig < lo) | (sig > hi), 1.0, inner)

    def t(self, r):
        """Radial profile t_mu(r) (maps pulled-back radius to weighted radius)."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            sig = np.log(r)
        return np.where(r > 0, np.exp(self.F(sig)) / self.mu, 0.0)

    def F_inverse(self, s):
        """sigma with F(sigma) = s, by table interpolation plus Newton polishing."""
        s = np.asarray(s, dtype=float)
        sig = np.interp(s, self.f, self.sigma)
        lo = self.sigma[0]
        sig = np.where(s < self.f[0], lo + (s - self.f[0]), sig)
        sig = np.where(s > self.f[-1], s - math.log(self.mu), sig)
        for _ in range(4):
            sig = sig - (self.F(sig) - s) / self.Fprime(sig)
        return sig


def solve_radial_diffeo(mu: float, profile: ConstantProfile, mu_ref: float | None = None,
                        n_table: int = 4096, psi: CutoffPsi | None = None,
                        allow_below_ref: bool = False) -> RadialDiffeo:
    """Integrate the generating ODE from the identity at ``mu_ref`` (default mu_star) to ``mu``."""
    mu_ref = profile.mu_star if mu_ref is None else mu_ref
    if mu < mu_ref and not allow_below_ref:
        from .errors import BelowMuStar

        raise BelowMuStar(f"mu={mu} is below the anchor scale {mu_ref}")
    psi = build_psi(profile) if psi is None else psi
    lo = math.log(profile.r2) - 0.5 - max(0.0, math.log(mu_ref / mu))
    sigma = np.linspace(lo, math.log(profile.r1), n_table)
    flow = RadialFlow(sigma, profile, psi, mu_ref)
    f, fp = flow.state(mu)
    if np.any(np.diff(f) <= 0) or np.any(fp <= 0):
        raise MonotonicityLost("radial table is not strictly increasing")
    return RadialDiffeo(mu, mu_ref, profile, sigma, f, fp)


# ---------------------------------------------------------------------------
# radial formulas for the weighted metric


def rhobar_sq(r, mu: float, profile: ConstantProfile, phi: CutoffPhi | None = None):
    phi = CutoffPhi(profile.r0) if phi is None else phi
    r = np.asarray(r, dtype=float)
    ph = phi(r)
    bub = 4.0 * mu * mu / (1.0 + mu * mu * r * r) ** 2
    c2 = profile.c_mu(mu) ** 2
    return ph * bub + (1.0 - ph) * c2


def rhobar_sq_dmu(r, mu: float, profile: ConstantProfile, phi: CutoffPhi | None = None):
    phi = CutoffPhi(profile.r0) if phi is None else phi
    r = np.asarray(r, dtype=float)
    ph = phi(r)
    q = mu * mu * r * r
    dbub = 8.0 * mu * (1.0 - q) / (1.0 + q) ** 3
    r0 = profile.r0
    q0 = mu * mu * r0 * r0
    c = 2.0 * mu / (1.0 + q0)
    dc = 2.0 * (1.0 - q0) / (1.0 + q0) ** 2
    return ph * dbub + (1.0 - ph) * 2.0 * c * dc


def _sech_over_r(F, sigma):
    """sech(F) / e^sigma, evaluated without overflow."""
    e = np.exp(-np.abs(F))
    return 2.0 * e / (1.0 + e * e) * np.exp(-sigma)


# ---------------------------------------------------------------------------
# metric state on the grid


@dataclass
class MetricState:
    """Metric g_{mu,b} (or the weighted gbar_{mu,b}) sampled on a torus grid."""

    spec: TorusSpec
    profile: ConstantProfile
    b: tuple
    mu: float
    representation: str = "pulled_back"
    mu_ref: float | None = None
    psi: CutoffPsi | None = None
    _flows: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.representation not in ("pulled_back", "weighted"):
            raise ValueError("representation must be 'pulled_back' or 'weighted'")
        if self.mu_ref is None:
            self.mu_ref = self.profile.mu_star
        if self.psi is None:
            self.psi = build_psi(self.profile)
        self.b = (float(self.b[0]), float(self.b[1]))
        self.phi = CutoffPhi(self.profile.r0)

    # -- geometry helpers -------------------------------------------------
    def with_mu(self, mu: float) -> "MetricState":
        """Same family at another scale; radial ODE caches are shared."""
        return MetricState(self.spec, self.profile, self.b, mu, self.representation,
                           self.mu_ref, self.psi, self._flows)

    @property
    def X(self) -> float:
        return math.log(self.mu * self.profile.r1)

    def _points(self, where: str):
        shift = (0.0, 0.0) if where == "node" else (0.5 * self.spec.h, 0.5 * self.spec.h)
        dx, dy = self.spec.offsets(self.b, shift)
        return dx, dy, np.hypot(dx, dy)

    def _radial_state(self, where: str):
        """(index arrays, sigma, F, F') for the points of ``where`` inside B_{r1}."""
        key = where
        dx, dy, r = self._points(where)
        inside = r < self.profile.r1
        rr = r[inside]
        if key not in self._flows:
            uniq, inv = np.unique(rr, return_inverse=True)
            with np.errstate(divide="ignore"):
                sig = np.log(uniq)
            sig = np.where(uniq > 0, sig, -np.inf)
            finite = np.isfinite(sig)
            flow = RadialFlow(sig[finite], self.profile, self.psi, self.mu_ref)
            self._flows[key] = (uniq, inv, sig, finite, flow)
        uniq, inv, sig, finite, flow = self._flows[key]
        F = np.empty_like(sig)
        P = np.ones_like(sig)
        Ff, Pf = flow.state(self.mu)
        F[finite] = Ff
        P[finite] = Pf
        F[~finite] = -np.inf
        return inside, dx, dy, r, sig, F, P, inv

    # -- fields -------------------------------------------------------------
    def weighted_rho_sq(self, r):
        return rhobar_sq(r, self.mu, self.profile, self.phi)

    @cached_property
    def grid_metric(self) -> GridMetric:
        return self._build(derivative=False)

    @cached_property
    def grid_dmu(self) -> GridMetric:
        """Pointwise mu-derivative: ``w`` holds d(sqrt det g)/dmu, ``aniso`` holds d(a)/dmu."""
        return self._build(derivative=True)

    def _build(self, derivative: bool) -> GridMetric:
        n = self.spec.n
        dxn, dyn, rn = self._points("node")
        if derivative:
            w = rhobar_sq_dmu(rn, self.mu, self.profile, self.phi)
        else:
            w = rhobar_sq(rn, self.mu, self.profile, self.phi)
        if self.representation == "weighted":
            return GridMetric(w, None, {"mu": self.mu})
        mu = self.mu
        log_r1 = math.log(self.profile.r1)
        inside, _, _, _, sig, F, P, inv = self._radial_state("node")
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            so = np.where(np.isfinite(sig), _sech_over_r(F, np.where(np.isfinite(sig), sig, 0.0)), 0.0)
        # the chart centre itself: frozen core, sech(F)/r -> 2 mu_ref
        so = np.where(np.isfinite(sig), so, 2.0 * self.mu_ref)
        wn = so * so * P
        if derivative:
            z = F - self.X
            dF = np.where(np.isfinite(sig), self.psi(z) / mu, 0.0)
            dP = np.where(np.isfinite(sig), self.psi.d1(z) * P / mu, 0.0)
            wn = wn * (-2.0 * np.tanh(np.where(np.isfinite(F), F, 0.0)) * dF + dP / P)
        wfull = w.copy()
        wfull[inside] = wn[inv]

        # plaquette anisotropy
        cin, dxc, dyc, rc, sigc, Fc, Pc, invc = self._radial_state("corner")
        aniso = np.zeros((3, n, n))
        with np.errstate(invalid="ignore", divide="ignore"):
            cx = np.where(rc > 0, dxc / rc, 1.0)[cin]
            cy = np.where(rc > 0, dyc / rc, 0.0)[cin]
        Pv = Pc[invc]
        if derivative:
            z = (Fc - self.X)[invc]
            dP = np.where(np.isfinite(sigc[invc]), self.psi.d1(z) * Pv / mu, 0.0)
            er = -dP / (Pv * Pv)
            et = dP
        else:
            er = 1.0 / Pv - 1.0
            et = Pv - 1.0
        aniso[0][cin] = er * cx * cx + et * cy * cy
        aniso[1][cin] = (er - et) * cx * cy
        aniso[2][cin] = er * cy * cy + et * cx * cx
        del log_r1
        return GridMetric(wfull, aniso, {"mu": self.mu, "mu_ref": self.mu_ref})

    # -- scalar summaries -----------------------------------------------------
    def radial_diffeo(self, n_table: int = 4096) -> RadialDiffeo:
        key = ("table", n_table)
        if key not in self._flows:
            lo = math.log(self.profile.r2) - 0.5 - max(0.0, math.log(self.mu_ref / min(self.mu, self.mu_ref)))
            sigma = np.linspace(lo - 3.0, math.log(self.profile.r1), n_table)
            self._flows[key] = (sigma, RadialFlow(sigma, self.profile, self.psi, self.mu_ref))
        sigma, flow = self._flows[key]
        f, fp = flow.state(self.mu)
        if np.any(np.diff(f) <= 0) or np.any(fp <= 0):
            raise MonotonicityLost("radial table is not strictly increasing")
        return RadialDiffeo(self.mu, self.mu_ref, self.profile, sigma, f, fp)

    def frozen_radius(self) -> float:
        """Radius of the core on which the metric no longer changes (F - X <= -a)."""
        rd = self.radial_diffeo()
        return float(np.exp(rd.F_inverse(self.X - self.profile.psi_gap_a)))

    def dmu_norms(self) -> tuple[float, float]:
        return dmu_metric_norms(self.mu, self.profile, self.spec.area, self.psi)

    @cached_property
    def dmu_l2(self) -> float:
        return dmu_metric_norms(self.mu, self.profile, self.spec.area, self.psi, sup=False)[0]


# ---------------------------------------------------------------------------
# grid-free norms of the metric velocity


def cylinder_velocity_components(s, mu: float, profile: ConstantProfile, psi: CutoffPsi):
    """g-orthonormal components of d(g)/d(mu) on B_{r1} in the cylinder variable s."""
    X = math.log(mu * profile.r1)
    z = np.asarray(s, float) - X
    th = np.tanh(s)
    g11 = 2.0 / mu * (psi.d1(z) - th * psi(z))
    g22 = -2.0 / mu * th * psi(z)
    return g11, g22


def dmu_metric_norms(mu: float, profile: ConstantProfile, area: float,
                     psi: CutoffPsi | None = None, sup: bool = True) -> tuple[float, float]:
    """(L^2(g), L^infinity(g)) norms of d(g)/d(mu), by one-dimensional radial quadrature.

    With ``sup=False`` the second entry is NaN and the costly maximisation is skipped.
    """
    psi = build_psi(profile) if psi is None else psi
    phi = CutoffPhi(profile.r0)
    a, w = profile.psi_gap_a, psi.w
    X = math.log(mu * profile.r1)

    def dens_cyl(s):
        g11, g22 = cylinder_velocity_components(s, mu, profile, psi)
        return 2.0 * math.pi * (g11 * g11 + g22 * g22) / math.cosh(s) ** 2

    brk = [X - a + w, X - w]
    inner, _ = integrate.quad(dens_cyl, X - a, X, points=brk, epsabs=0.0, epsrel=1e-13, limit=400)

    def dens_ann(r):
        d = rhobar_sq_dmu(r, mu, profile, phi)
        return 2.0 * math.pi * r * 2.0 * d * d / rhobar_sq(r, mu, profile, phi)

    r0, r1 = profile.r0, profile.r1
    ann, _ = integrate.quad(dens_ann, r1, r0, points=[0.5 * r0], epsabs=0.0, epsrel=1e-13, limit=400)
    c2 = profile.c_mu(mu) ** 2
    dc2 = rhobar_sq_dmu(2.0 * r0, mu, profile, phi)
    bulk = 2.0 * dc2 * dc2 / c2 * (area - math.pi * r0 * r0)
    l2 = math.sqrt(inner + ann + bulk)
    if not sup:
        return l2, float("nan")

    # sup norm: dense sampling refined by bounded maximisation
    from scipy.optimize import minimize_scalar

    def cyl_abs(s):
        g11, g22 = cylinder_velocity_components(s, mu, profile, psi)
        return math.sqrt(g11 * g11 + g22 * g22)

    def ann_abs(r):
        return math.sqrt(2.0) * abs(rhobar_sq_dmu(r, mu, profile, phi)) / rhobar_sq(r, mu, profile, phi)

    best = 0.0
    for fn, lo, hi in ((cyl_abs, X - a, X), (ann_abs, r1, r0)):
        xs = np.linspace(lo, hi, 2001)
        vals = np.array([fn(x) for x in xs])
        k = int(np.argmax(vals))
        a_ = xs[max(k - 1, 0)]
        b_ = xs[min(k + 1, len(xs) - 1)]
        res = minimize_scalar(lambda x: -fn(x), bounds=(a_, b_), method="bounded",
                              options={"xatol": 1e-12})
        best = max(best, vals[k], -res.fun)
    best = max(best, math.sqrt(2.0) * abs(dc2) / c2)
    return l2, best


# ---------------------------------------------------------------------------
# ordering of metrics along the family


def metric_quadratic_form(r, beta, mu: float, profile: ConstantProfile, psi: CutoffPsi,
                          mu_ref: float | None = None, flow_cache: dict | None = None):
    """g(e, e) / |e|^2 for unit flat vectors e at angle ``beta`` to the radial direction."""
    mu_ref = profile.mu_star if mu_ref is None else mu_ref
    r = np.asarray(r, float)
    beta = np.asarray(beta, float)
    out = rhobar_sq(r, mu, profile)
    inside = r < profile.r1
    if np.any(inside):
        sig = np.log(r[inside])
        key = (id(r), mu_ref)
        flow = None if flow_cache is None else flow_cache.get(key)
        if flow is None:
            flow = RadialFlow(sig, profile, psi, mu_ref)
            if flow_cache is not None:
                flow_cache[key] = flow
        F, P = flow.state(mu)
        so = _sech_over_r(F, sig)
        wv = so * so * P
        c2 = np.cos(beta[inside]) ** 2
        out = out.copy()
        out[inside] = wv * (P * c2 + (1.0 - c2) / P)
    return out


def ordering_check(mu1: float, mu2: float, profile: ConstantProfile, samples: int = 10_000,
                   seed: int = 0, mu_ref: float | None = None, r_range=None) -> dict:
    """Largest ratio g_{mu2}(e,e)/g_{mu1}(e,e) over random points and directions."""
    if mu2 < mu1:
        raise ValueError("ordering check needs mu2 >= mu1")
    psi = build_psi(profile)
    rng = np.random.default_rng(seed)
    lo, hi = r_range if r_range is not None else (profile.r2 * math.exp(-3.0), 2.0 * profile.r0)
    r = np.exp(rng.uniform(math.log(lo), math.log(hi), samples))
    beta = rng.uniform(0.0, 2.0 * np.pi, samples)
    cache: dict = {}
    g1 = metric_quadratic_form(r, beta, mu1, profile, psi, mu_ref, cache)
    g2 = metric_quadratic_form(r, beta, mu2, profile, psi, mu_ref, cache)
    ratio = g2 / g1
    bound = math.e**3 * (1.0 + 1e-9)
    k = int(np.argmax(ratio))
    return {
        "mu1": mu1, "mu2": mu2, "samples": samples,
        "max_ratio": float(ratio[k]), "argmax_r": float(r[k]), "argmax_beta": float(beta[k]),
        "min_ratio": float(np.min(ratio)), "bound": bound, "pass": bool(ratio[k] <= bound),
    }


# ---------------------------------------------------------------------------
# cylinder chart


@dataclass
class CylinderChart:
    """(s, theta) lattice over s in [X - (a + 2), X] mapped into the torus chart at b."""

    ms: MetricState
    s: np.ndarray
    theta: np.ndarray
    sigma: np.ndarray  # log-radius of each ring
    points: tuple  # torus coordinates of the lattice, each of shape (n_s, n_theta)

    @property
    def ds(self) -> float:
        return float(self.s[1] - self.s[0])

    def resample(self, u: np.ndarray, normalize_result: bool = True) -> np.ndarray:
        from .sphere import normalize

        out = bilinear_periodic(u, self.ms.spec, self.points[0], self.points[1])
        return normalize(out) if normalize_result else out


def cylinder_chart(ms: MetricState, n_s: int = 256, n_theta: int = 256,
                   s_range: tuple | None = None) -> CylinderChart:
    a = ms.profile.psi_gap_a
    lo, hi = s_range if s_range is not None else (ms.X - (a + 2.0), ms.X)
    s = np.linspace(lo, hi, n_s)
    theta = np.arange(n_theta) * (2.0 * np.pi / n_theta)
    if ms.representation == "weighted":
        sigma = s - math.log(ms.mu)
    else:
        sigma = ms.radial_diffeo().F_inverse(s)
    r = np.exp(sigma)
    px = ms.b[0] + r[:, None] * np.cos(theta)[None, :]
    py = ms.b[1] + r[:, None] * np.sin(theta)[None, :]
    return CylinderChart(ms, s, theta, sigma, (px, py))


def bilinear_periodic(u: np.ndarray, spec: TorusSpec, px, py) -> np.ndarray:
    """Bilinear interpolation of a periodic grid field (leading component axis allowed)."""
    h = spec.h
    n = spec.n
    gx = np.asarray(px) / h
    gy = np.asarray(py) / h
    i0 = np.floor(gx).astype(np.int64)
    j0 = np.floor(gy).astype(np.int64)
    fx = gx - i0
    fy = gy - j0
    i0 %= n
    j0 %= n
    i1 = (i0 + 1) % n
    j1 = (j0 + 1) % n
    return (
        u[..., i0, j0] * (1 - fx) * (1 - fy)
        + u[..., i1, j0] * fx * (1 - fy)
        + u[..., i0, j1] * (1 - fx) * fy
        + u[..., i1, j1] * fx * fy
    )


def pull_back(v: np.ndarray, ms: MetricState, mu_from: float | None = None) -> np.ndarray:
    """Resample v along the radial diffeomorphism: u(x) = v(T(x)).

    T is the map from the anchored chart at scale ``ms.mu`` to the weighted chart;
    it is the identity outside B_{r1}(b).
    """
    from .sphere import normalize

    spec = ms.spec
    dx, dy = spec.offsets(ms.b)
    r = np.hypot(dx, dy)
    inside = (r < ms.profile.r1) & (r > 0)
    rd = ms.radial_diffeo()
    tr = rd.t(r[inside])
    scale = np.ones_like(r)
    scale[inside] = tr / r[inside]
    core = r == 0
    scale[core] = 1.0
    px = ms.b[0] + dx * scale
    py = ms.b[1] + dy * scale
    return normalize(bilinear_periodic(v, spec, px, py))
