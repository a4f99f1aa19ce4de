"""Coupled map/metric gradient flow on the one-parameter family g_{mu,b}.

The unknowns are the map u on the torus grid and the scale mu. The discrete
energy E(u, mu) = E(u, g_mu) is the quantity that decreases; u moves by its
tension, mu by

    dmu/dt = 1/2 <k, d_mu g> / ||d_mu g||^2 = -(dE/dmu) / ||d_mu g||^2,

so that dE/dt = -(||tau||^2 + 1/4 ||P k||^2) holds for the semi-discrete system.

The default ``heun`` scheme is explicit RK2 for the map with the CFL bound
dt <= cfl * h^2 * min(W). Its step shrinks like mu^-2 in the bulk, which makes
long runs at grid 512 impractical, so an opt-in ``implicit`` scheme treats the
map linearly implicitly,

    W (u* - u) / dt = L u* - (u . L u) u,     u_new = u* / |u*|,

with W the area density and L the metric Laplacian (one sparse SPD solve per
component, algebraic multigrid preconditioned CG). Both update mu by Heun's rule.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np
import pyamg
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .config import FlowConfig
from .errors import (
    BelowMuStar,
    CoreProtectionViolated,
    NoConcentration,
    ResampleUnderresolved,
    StepCollapse,
    Stalled,
)
from .fields import (
    dirichlet_energy,
    energy_density,
    l2_norm,
    laplacian_matrix,
    metric_laplacian,
)
from .metric import ConstantProfile, MetricState, pull_back
from .projection import discrete_dE_dmu, project_stress
from .sphere import normalize
from .torus import TorusSpec, ball_mask

TWO_PI = 2.0 * math.pi

# ---------------------------------------------------------------------------
# concentration finder


def _ball_energy_map(density: np.ndarray, spec: TorusSpec, radius: float) -> np.ndarray:
    """E(v, B_R(p)) for every node p, by circular convolution with the ball mask."""
    mask = ball_mask(spec, (0.0, 0.0), radius, method="linear")
    return np.real(np.fft.ifft2(np.fft.fft2(density) * np.conj(np.fft.fft2(mask))))


def _ball_energy(density: np.ndarray, spec: TorusSpec, center, radius: float) -> float:
    return float(np.sum(density * ball_mask(spec, center, radius, method="linear")))


def _golden(f, a: float, b: float, tol: float) -> float:
    """Maximise a unimodal function on [a, b]."""
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _bisect(f, lo: float, hi: float, iters: int = 60) -> float:
    """Root of an increasing function f with f(lo) < 0 <= f(hi)."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) >= 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass
class Concentration:
    b: tuple
    mu0: float
    energy: float  # E(v, B_{1/mu0}(b))
    sup_energy: float  # sup over grid nodes at the same radius

    def __iter__(self):
        return iter((self.b, self.mu0))


def find_concentration(v: np.ndarray, spec: TorusSpec, profile: ConstantProfile | None = None,
                       allow_below_mu_star: bool = True, rtol: float = 1e-3) -> Concentration:
    """Centre b and scale mu0 with E(v, B_{1/mu0}(b)) = sup_p E(v, B_{1/mu0}(p)) = 2 pi."""
    dens = energy_density(v, spec.h)  # mask weights carry the area element
    inj = spec.inj

    def sup_at(R):
        return float(np.max(_ball_energy_map(dens, spec, R)))

    if sup_at(inj) < TWO_PI:
        raise NoConcentration("no ball of radius up to the injectivity radius carries 2 pi of energy")
    lo = 0.5 * spec.h
    if sup_at(lo) >= TWO_PI:
        raise ResampleUnderresolved("energy 2 pi sits inside half a grid cell")
    R = _bisect(lambda r: sup_at(r) - TWO_PI, lo, inj, iters=40)
    emap = _ball_energy_map(dens, spec, R)
    k = int(np.argmax(emap))  # first maximum in row-major order: lexicographic tie-break
    i, j = divmod(k, spec.n)
    cx, cy = i * spec.h, j * spec.h
    h = spec.h
    for _ in range(2):
        cx = _golden(lambda x: _ball_energy(dens, spec, (x, cy), R), cx - h, cx + h, 1e-3 * h)
        cy = _golden(lambda y: _ball_energy(dens, spec, (cx, y), R), cy - h, cy + h, 1e-3 * h)
    center = (cx % spec.side, cy % spec.side)
    R = _bisect(lambda r: _ball_energy(dens, spec, center, r) - TWO_PI, 0.5 * R, min(2.0 * R, inj))
    e_final = _ball_energy(dens, spec, center, R)
    if abs(e_final - TWO_PI) > rtol * TWO_PI:
        raise NoConcentration(f"could not centre the concentration ball (E = {e_final:.6f})")
    mu0 = 1.0 / R
    if profile is not None and mu0 < profile.mu_star and not allow_below_mu_star:
        raise BelowMuStar(f"mu0 = {mu0:.3f} is below mu* = {profile.mu_star:.3f}")
    return Concentration(center, mu0, e_final, sup_at(R))


# ---------------------------------------------------------------------------
# state


@dataclass
class DiagnosticsRecord:
    step: int
    t: float
    energy: float
    defect: float
    mu: float
    tension_norm: float
    proj_norm: float
    gradient_norm: float
    mu_velocity: float
    step_size: float
    loj_ratio: float
    core_energy: float
    alpha_min: float
    alpha_max: float
    dist_u: float
    dist_g: float
    energy_rate: float  # -(E_new - E_old) / dt of the step that produced this record
    grad_sq_mid: float  # trapezoid of gradient_norm^2 over that step
    rejected: int
    phase: str

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class _Eval:
    """Per-state quantities reused between steps."""

    energy: float
    tau: np.ndarray
    tension_norm: float
    dE_dmu: float
    norm_dmu: float
    lu_dot_u: np.ndarray

    @property
    def mu_velocity(self) -> float:
        return -self.dE_dmu / (self.norm_dmu**2)

    @property
    def proj_norm(self) -> float:
        return 2.0 * abs(self.dE_dmu) / self.norm_dmu

    def grad_sq(self, coupled: bool) -> float:
        g = self.tension_norm**2
        if coupled:
            g += 0.25 * self.proj_norm**2
        return g


@dataclass
class FlowState:
    u: np.ndarray
    ms: MetricState
    t: float = 0.0
    energy: float = 0.0
    dist_u: float = 0.0
    dist_g: float = 0.0
    phase: str = "coupled"  # coupled | frozen | converged
    dt: float = 1e-7
    step_count: int = 0
    mu0: float = 0.0
    core_weights: np.ndarray | None = field(default=None, repr=False)
    history: list = field(default_factory=list, repr=False)
    _eval: _Eval | None = field(default=None, repr=False)
    _solver: tuple | None = field(default=None, repr=False)

    @property
    def spec(self) -> TorusSpec:
        return self.ms.spec

    @property
    def mu(self) -> float:
        return self.ms.mu

    @property
    def defect(self) -> float:
        return self.energy - 4.0 * math.pi


def _evaluate(u: np.ndarray, ms: MetricState) -> _Eval:
    spec = ms.spec
    gm = ms.grid_metric
    Lu = metric_laplacian(u, spec.h, gm.aniso)
    udl = np.sum(u * Lu, axis=0)
    tau = (Lu - udl * u) / gm.w
    return _Eval(
        energy=dirichlet_energy(u, spec, gm),
        tau=tau,
        tension_norm=l2_norm(tau, spec, gm),
        dE_dmu=discrete_dE_dmu(u, ms),
        norm_dmu=ms.dmu_l2,
        lu_dot_u=udl,
    )


def _core_energy(state: FlowState, u: np.ndarray | None = None, ms: MetricState | None = None) -> float:
    u = state.u if u is None else u
    ms = state.ms if ms is None else ms
    if state.core_weights is None:
        return float("nan")
    return float(np.sum(energy_density(u, ms.spec.h, ms.grid_metric.aniso) * state.core_weights))


def init_flow(v: np.ndarray, b, mu0: float, profile: ConstantProfile, spec: TorusSpec,
              cfg: FlowConfig | None = None) -> FlowState:
    """Initial data (u0, g0) = T*_{mu0,b}(v, gbar_{mu0,b}).

    In the ``anchored`` picture the family is integrated from mu0 itself, so T
    is the identity at t = 0 and u0 = v exactly; in the ``mu_star`` picture it
    starts at mu* and v is resampled through the radial diffeomorphism.
    """
    cfg = FlowConfig() if cfg is None else cfg
    if mu0 < profile.mu_star and not cfg.allow_below_mu_star:
        raise BelowMuStar(f"mu0 = {mu0:.3f} is below mu* = {profile.mu_star:.3f}")
    mu_ref = mu0 if cfg.picture == "anchored" else profile.mu_star
    ms = MetricState(spec, profile, tuple(b), mu0, "pulled_back", mu_ref=mu_ref)
    if cfg.picture == "anchored":
        u0 = np.array(v, dtype=float, copy=True)
        core_r = 1.0 / mu0
    else:
        u0 = pull_back(v, ms)
        rd = ms.radial_diffeo()
        core_r = float(np.exp(rd.F_inverse(math.log(1.0))))  # F = 0 <=> t = 1/mu
    if core_r < 2.0 * spec.h:
        raise ResampleUnderresolved(f"core radius {core_r:.3e} is below two grid cells")
    state = FlowState(u=u0, ms=ms, dt=cfg.dt0, mu0=mu0)
    state.core_weights = ball_mask(spec, b, core_r)
    state._eval = _evaluate(u0, ms)
    state.energy = state._eval.energy
    state.history.append(_record(state, state._eval, 0.0, float("nan"), float("nan"), 0))
    return state


def _alpha_extremes(u: np.ndarray, ms: MetricState) -> tuple[float, float]:
    try:
        res = project_stress(u, ms, method="cylinder", ds=0.02, n_theta=256)
    except Exception:  # diagnostics only
        return float("nan"), float("nan")
    return float(np.min(res.alpha_profile)), float(np.max(res.alpha_profile))


def _record(state: FlowState, ev: _Eval, dt: float, rate: float, gsq_mid: float, rejected: int) -> DiagnosticsRecord:
    coupled = state.phase == "coupled"
    gsq = ev.grad_sq(coupled)
    amin, amax = _alpha_extremes(state.u, state.ms)
    return DiagnosticsRecord(
        step=state.step_count, t=state.t, energy=ev.energy, defect=ev.energy - 4.0 * math.pi,
        mu=state.mu, tension_norm=ev.tension_norm, proj_norm=ev.proj_norm if coupled else 0.0,
        gradient_norm=math.sqrt(gsq), mu_velocity=ev.mu_velocity if coupled else 0.0,
        step_size=dt, loj_ratio=(ev.energy - 4.0 * math.pi) / gsq if gsq > 0 else float("inf"),
        core_energy=_core_energy(state), alpha_min=amin, alpha_max=amax,
        dist_u=state.dist_u, dist_g=state.dist_g, energy_rate=rate, grad_sq_mid=gsq_mid,
        rejected=rejected, phase=state.phase,
    )


# ---------------------------------------------------------------------------
# stepping


def _implicit_map(state: FlowState, dt: float, cfg: FlowConfig) -> np.ndarray:
    u, ms, ev = state.u, state.ms, state._eval
    spec = ms.spec
    gm = ms.grid_metric
    n = spec.n
    L = laplacian_matrix(n, spec.h, gm.aniso)
    A = (sp.diags(gm.w.ravel()) - dt * L).tocsr()
    # the hierarchy only preconditions CG, so it is reused while dt stays within a factor 2
    key = state.step_count // cfg.rebuild_every
    stale = state._solver is None or state._solver[0] != key or not 0.5 <= dt / state._solver[2] <= 2.0
    if stale:
        # pyamg draws spectral-radius start vectors from the global RNG; pin it for reproducible runs
        saved = np.random.get_state()
        np.random.seed(0)
        try:
            ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric", max_coarse=500)
        finally:
            np.random.set_state(saved)
        state._solver = (key, ml.aspreconditioner(cycle="V"), dt)
    M = state._solver[1]
    out = np.empty_like(u)
    for c in range(3):
        rhs = (gm.w * u[c] - dt * ev.lu_dot_u * u[c]).ravel()
        x, info = cg(A, rhs, x0=u[c].ravel(), rtol=cfg.solver_rtol, atol=0.0, M=M, maxiter=500)
        if info != 0:
            raise StepCollapse(f"linear solver did not converge (info={info})")
        out[c] = x.reshape(n, n)
    return normalize(out)


def _explicit_map(state: FlowState, dt: float) -> np.ndarray:
    u1 = normalize(state.u + dt * state._eval.tau)
    ev1 = _evaluate(u1, state.ms)
    return normalize(state.u + 0.5 * dt * (state._eval.tau + ev1.tau))


def _cfl_dt(state: FlowState, cfg: FlowConfig) -> float:
    return cfg.cfl * state.spec.h**2 * float(np.min(state.ms.grid_metric.w))


def step(state: FlowState, cfg: FlowConfig, dt_max: float | None = None) -> FlowState:
    """Advance one accepted step (retrying with smaller dt on rejection). Mutates and returns state."""
    coupled = state.phase == "coupled"
    ev0 = state._eval
    g0 = ev0.grad_sq(coupled)
    dt_cap = cfg.dt_max if dt_max is None else min(dt_max, cfg.dt_max)
    if cfg.scheme == "heun":
        dt_cap = min(dt_cap, _cfl_dt(state, cfg))
    dt = min(state.dt, dt_cap)
    mu_floor = min(state.ms.profile.mu_star, 0.25 * state.mu0)
    rejected = 0
    while True:
        if dt < cfg.dt_min:
            raise StepCollapse(f"step size fell below {cfg.dt_min:g}")
        mu = state.mu
        v0 = ev0.mu_velocity if coupled else 0.0
        if abs(dt * v0) > cfg.mu_rel_max * mu:
            dt *= 0.5
            rejected += 1
            continue
        u1 = _implicit_map(state, dt, cfg) if cfg.scheme == "implicit" else _explicit_map(state, dt)
        if coupled:
            ms_pred = state.ms.with_mu(mu + dt * v0)
            v1 = -discrete_dE_dmu(u1, ms_pred) / ms_pred.dmu_l2**2
            mu1 = mu + 0.5 * dt * (v0 + v1)
        else:
            mu1 = mu
        if mu1 < mu_floor or abs(mu1 - mu) > cfg.mu_rel_max * mu:
            dt *= 0.5
            rejected += 1
            continue
        ms1 = state.ms.with_mu(mu1) if mu1 != mu else state.ms
        ev1 = _evaluate(u1, ms1)
        g1 = ev1.grad_sq(coupled)
        if ev1.energy > ev0.energy + cfg.energy_tol * ev0.energy or abs(g1 - g0) > cfg.eta * g0 + 1e-300:
            dt *= 0.5
            rejected += 1
            continue
        break
    du = l2_norm(u1 - state.u, state.spec, state.ms.grid_metric)
    dg = abs(mu1 - mu) * state.ms.with_mu(0.5 * (mu + mu1)).dmu_l2 if mu1 != mu else 0.0
    rate = (ev0.energy - ev1.energy) / dt
    gsq_mid = 0.5 * (g0 + g1)
    state.u, state.ms, state._eval = u1, ms1, ev1
    state.t += dt
    state.energy = ev1.energy
    state.dist_u += du
    state.dist_g += dg
    state.step_count += 1
    rel = abs(g1 - g0) / g0 if g0 > 0 else 0.0
    state.dt = min(dt * cfg.grow, dt_cap) if rel < 0.25 * cfg.eta and rejected == 0 else dt
    if state.core_weights is not None:
        ce = _core_energy(state)
        if cfg.enforce_core and abs(ce - TWO_PI) > 2.0 * cfg.eps2:
            raise CoreProtectionViolated(f"core energy {ce:.4f} left [2pi - 2eps2, 2pi + 2eps2]")
    state.history.append(_record(state, ev1, dt, rate, gsq_mid, rejected))
    return state


def run_flow(state: FlowState, cfg: FlowConfig, sink: Callable[[DiagnosticsRecord], None] | None = None,
             checkpoint: Callable[[FlowState], None] | None = None) -> FlowState:
    """Coupled phase until mu >= mu_stop, then the frozen-metric phase until grad_tol or t_max."""
    mu_stop = cfg.mu_stop if cfg.mu_stop is not None else cfg.mu_stop_factor * state.mu0
    best = state.energy
    since_progress = 0
    if sink is not None and state.step_count == 0:
        sink(state.history[-1])
    while state.phase != "converged":
        if state.t >= cfg.t_max or state.step_count >= cfg.max_steps:
            break
        if state.phase == "coupled" and state.mu >= mu_stop:
            state.phase = "frozen"
            state.dt = max(state.dt, cfg.dt0)
            state._solver = None
        if state.phase == "frozen" and state._eval.tension_norm <= cfg.grad_tol:
            state.phase = "converged"
            break
        step(state, cfg, dt_max=cfg.t_max - state.t)
        if sink is not None:
            sink(state.history[-1])
        if checkpoint is not None and cfg.checkpoint_every and state.step_count % cfg.checkpoint_every == 0:
            checkpoint(state)
        if state.energy < best * (1.0 - 1e-13):
            best = state.energy
            since_progress = 0
        else:
            since_progress += 1
            if since_progress >= cfg.stall_steps:
                raise Stalled(f"no energy decrease in {cfg.stall_steps} accepted steps")
    if state.phase == "frozen" and state._eval.tension_norm <= cfg.grad_tol:
        state.phase = "converged"
    return state


def history_arrays(state: FlowState) -> dict[str, np.ndarray]:
    cols = DiagnosticsRecord.columns()
    out = {c: [] for c in cols}
    for rec in state.history:
        d = asdict(rec)
        for c in cols:
            out[c].append(d[c])
    return {c: np.asarray(v) for c, v in out.items()}


__all__ = [
    "Concentration", "DiagnosticsRecord", "FlowState", "find_concentration", "init_flow",
    "step", "run_flow", "history_arrays",
]
