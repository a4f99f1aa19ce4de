"""Property suites shared by the command line and the acceptance tests.

Every check returns a plain dict with at least ``name`` and ``pass``; the
suite functions return a list of them so callers can serialise or assert.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .audit import slope
from .bubbles import BubbleModel, TorusGreens, bubble_eval, model_energy
from .errors import ProfileInvalid
from .metric import (
    ConstantProfile,
    CutoffPsi,
    RadialFlow,
    build_psi,
    check_psi,
    dmu_metric_norms,
    ordering_check,
)
from .sphere import POLE_INF, degree
from .torus import TorusSpec


def _check(name: str, ok: bool, **data) -> dict:
    return {"name": name, "pass": bool(ok), **data}


def frozen_core_check(profile: ConstantProfile, mu1: float, factors=(2.0, 10.0, 100.0),
                      psi: CutoffPsi | None = None, n_sigma: int = 4096) -> dict:
    """Radial tables below the foot of the ramp at mu1 stay bitwise fixed for larger mu."""
    psi = build_psi(profile) if psi is None else psi
    sigma = np.linspace(math.log(profile.r2) - 6.0, math.log(profile.r1), n_sigma)
    flow = RadialFlow(sigma, profile, psi, profile.mu_star)
    f1, p1 = flow.state(mu1)
    core = flow.frozen_mask(mu1)
    worst = 0.0
    equal = True
    for k in factors:
        f, p = flow.state(k * mu1)
        equal &= bool(np.array_equal(f[core], f1[core]) and np.array_equal(p[core], p1[core]))
        worst = max(worst, float(np.max(np.abs(f[core] - f1[core]), initial=0.0)))
    return _check("frozen_core_bitwise", equal and bool(np.any(core)), mu1=mu1, points=int(core.sum()),
                  factors=list(factors), max_abs_diff=worst)


def metrics_suite(mode: str = "paper", psi: CutoffPsi | None = None, samples: int = 10_000,
                  seed: int = 0, slope_tol: float = 0.05) -> list[dict]:
    """Grid-free checks of the metric family on a mu ladder {mu*, 10 mu*, 100 mu*}."""
    spec = TorusSpec(512)
    profile = ConstantProfile.for_spec(spec, mode)
    psi = build_psi(profile) if psi is None else psi
    out = []
    t0 = time.perf_counter()
    try:
        rep = check_psi(psi, profile)
        out.append(_check("psi_invariants", True, **rep))
    except ProfileInvalid as exc:
        out.append(_check("psi_invariants", False, error=str(exc)))
        return out

    ladder = [profile.mu_star * k for k in (1.0, 10.0, 100.0)]
    l2, sup = zip(*(dmu_metric_norms(mu, profile, spec.area, psi) for mu in ladder))
    s2, e2 = slope(ladder, l2)
    si, ei = slope(ladder, sup)
    out.append(_check("dmu_l2_slope", abs(s2 + 2.0) <= slope_tol, slope=s2, stderr=e2, expected=-2.0,
                      mu=ladder, values=list(l2)))
    out.append(_check("dmu_sup_slope", abs(si + 1.0) <= slope_tol, slope=si, stderr=ei, expected=-1.0,
                      mu=ladder, values=list(sup)))
    out.append(frozen_core_check(profile, profile.mu_star * math.e, psi=psi))

    pairs = [(profile.mu_star, profile.mu_star * math.e**2), (10 * profile.mu_star, 10 * profile.mu_star * math.e**2),
             (profile.mu_star, 100 * profile.mu_star)]
    for k, (m1, m2) in enumerate(pairs):
        rep = ordering_check(m1, m2, profile, samples=samples, seed=seed + k)
        # the e^3 constant is only proved for the full-width ramp; desk runs report it
        ok = rep["pass"] if mode == "paper" else True
        out.append(_check(f"ordering_{k}", ok, **rep))
    out.append(_check("runtime", True, seconds=time.perf_counter() - t0))
    return out


def _sup_far_distance(lam: float, greens: TorusGreens, r0: float, n: int = 256) -> float:
    """sup |z - pi(infinity)| over the grid nodes outside the model's chart ball."""
    spec = TorusSpec(n, greens.side)
    dx, dy = spec.offsets((0.0, 0.0))
    far = dx * dx + dy * dy >= r0 * r0
    gx, gy = greens.grad_G0(dx[far], dy[far])
    raw = np.stack([-2.0 / lam * gx, -2.0 / lam * gy, -np.ones_like(gx)])
    z = raw / np.linalg.norm(raw, axis=0)
    return float(np.max(np.linalg.norm(z - POLE_INF[:, None], axis=0)))


def bubble_model_suite(lams=(32.0, 64.0, 128.0), grid_n: int = 512, slope_tol: float = 0.2,
                       far_tol: float = 0.1) -> list[dict]:
    """Energy defect and far-field decay of the singular-minimiser model z_{lam,a}."""
    greens = TorusGreens()
    r0 = 0.25
    t0 = time.perf_counter()
    defects, far, degs = [], [], []
    spec = TorusSpec(grid_n)
    for lam in lams:
        model = BubbleModel(lam, (0.0, 0.0), greens, r0)
        defects.append(abs(model_energy(model) - 4.0 * math.pi))
        far.append(_sup_far_distance(lam, greens, r0))
        degs.append(degree(bubble_eval(lam, (0.5, 0.5), greens, spec, r0)).value)
    sd, ed = slope(lams, defects)
    sf, ef = slope(lams, far)
    return [
        _check("model_defect_slope", abs(sd + 2.0) <= slope_tol, slope=sd, stderr=ed, expected=-2.0,
               lams=list(lams), values=defects),
        _check("model_far_distance_slope", abs(sf + 1.0) <= far_tol, slope=sf, stderr=ef, expected=-1.0,
               values=far),
        _check("model_degree", all(d == 1 for d in degs), degrees=degs),
        _check("runtime", True, seconds=time.perf_counter() - t0),
    ]


__all__ = ["metrics_suite", "bubble_model_suite", "frozen_core_check"]
