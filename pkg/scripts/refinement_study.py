"""Grid-refinement tables for the pull-back energy error and the Hopf dbar residual.

    python3 scripts/refinement_study.py [--max-n 1024]

Prints one row per grid size; the observed order is log2 of successive ratios.
"""

import argparse
import math
import sys

import numpy as np

from bubbleflow.bubbles import cutoff_bubble
from bubbleflow.fields import dirichlet_energy, hopf_dbar_residual
from bubbleflow.metric import ConstantProfile, MetricState, pull_back
from bubbleflow.sphere import normalize
from bubbleflow.torus import TorusSpec


def pullback_error(n: int, lam: float = 32.0) -> float:
    spec = TorusSpec(n)
    prof = ConstantProfile.for_spec(spec, "desk")
    v = cutoff_bubble(lam, (0.5, 0.5), spec)
    ms = MetricState(spec, prof, (0.5, 0.5), lam * math.e, mu_ref=lam)
    E0 = dirichlet_energy(v, spec)
    return abs(dirichlet_energy(pull_back(v, ms), spec, ms.grid_metric) - E0) / E0


def dbar_rms(n: int) -> float:
    spec = TorusSpec(n)
    X, Y = spec.coords
    a, b = 2 * math.pi * X, 2 * math.pi * Y
    u = normalize(np.stack([np.sin(a), np.sin(b), 1.5 + np.cos(a + b)]))
    return float(np.sqrt(np.mean(np.abs(hopf_dbar_residual(u, spec.h)) ** 2)))


def table(name, fn, sizes):
    print(f"{name}\n{'n':>6} {'value':>12} {'order':>7}")
    prev = None
    for n in sizes:
        val = fn(n)
        order = "" if prev is None else f"{math.log2(prev / val):7.2f}"
        print(f"{n:6d} {val:12.4e} {order}")
        prev = val


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-n", type=int, default=1024)
    args = ap.parse_args()
    sizes = [n for n in (128, 256, 512, 1024, 2048) if n <= args.max_n]
    table("pull-back energy error (desk profile, cutoff bubble lam=32, mu=32e)", pullback_error, sizes)
    table("Hopf dbar residual, RMS", dbar_rms, [n for n in sizes if n <= 512] or sizes)
    sys.exit(0)
