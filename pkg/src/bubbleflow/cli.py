"""Command line front end: ``bubbleflow {metrics-audit, flow-run, sweep, bubble-audit}``.

Exit codes: 0 pass, 2 invariant failure, 3 precondition failure, 4 inconclusive.
Thread pools are sized from ``--threads`` (falling back to BUBBLEFLOW_THREADS)
before numpy is imported, so heavy imports happen inside ``main``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

EXIT_PASS = 0
EXIT_INVARIANT = 2
EXIT_PRECONDITION = 3
EXIT_INCONCLUSIVE = 4


def _set_threads(n: int | None) -> int:
    if n is None:
        env = os.environ.get("BUBBLEFLOW_THREADS")
        n = int(env) if env else 1
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    return n


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--threads", type=int, help="thread budget (default: BUBBLEFLOW_THREADS or 1)")
    common.add_argument("--profile", choices=("paper", "desk"), help="constant profile")
    p = argparse.ArgumentParser(prog="bubbleflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("metrics-audit", parents=[common], help="grid-free checks of the metric family")
    fr = sub.add_parser("flow-run", parents=[common], help="run the coupled flow and audit the endpoint")
    fr.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    sub.add_parser("sweep", parents=[common], help="lambda ladder with scaling regressions")
    ba = sub.add_parser("bubble-audit", parents=[common], help="fit and audit the initial map")
    ba.add_argument("--model-suite", action="store_true", help="also run the singular-model suite")
    return p


def _load_config(args):
    from .config import RunConfig

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.out is not None:
        cfg.out_dir = str(args.out)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.profile is not None:
        cfg.profile.mode = args.profile
    cfg.validate()
    return cfg


def _stamp(cfg) -> dict:
    from . import __version__

    return {"config_hash": cfg.digest(), "version": __version__}


def _write_config(cfg, out: Path) -> None:
    from .io import write_json

    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", {**_stamp(cfg), "config": cfg.to_dict()})


# ---------------------------------------------------------------------------
# shared pipeline pieces


def make_initial(cfg):
    """(v, spec, exact_defect or None) for the configured initial data."""
    import numpy as np

    from .bubbles import CutoffBubble, TorusGreens, bubble_eval, cutoff_bubble
    from .io import read_field
    from .torus import TorusSpec

    init = cfg.initial
    if init.kind == "file":
        v, spec = read_field(init.path)
        return v, spec, None
    spec = TorusSpec(cfg.grid_n, cfg.side)
    if init.kind == "constant":
        v = np.zeros((3, spec.n, spec.n))
        v[2] = 1.0
        return v, spec, None
    if init.kind == "bubble_model":
        return bubble_eval(init.lam, init.center, TorusGreens(side=spec.side), spec), spec, None
    cut = spec.inj if init.cut_radius is None else init.cut_radius
    v = cutoff_bubble(init.lam, init.center, spec, cut_radius=cut)
    return v, spec, CutoffBubble(init.lam, tuple(init.center), cut).exact_defect()


def _profile(cfg, spec):
    from .metric import ConstantProfile

    kw = {}
    if cfg.profile.psi_gap_a is not None:
        kw["a"] = cfg.profile.psi_gap_a
    if cfg.profile.psi_gap_b is not None:
        kw["b"] = cfg.profile.psi_gap_b
    return ConstantProfile.for_spec(spec, cfg.profile.mode, **kw)


def _restore(state, u, meta):
    """Overwrite a freshly initialised flow state with checkpointed data."""
    from .flow import _evaluate

    state.u = u
    state.ms = state.ms.with_mu(meta["mu"])
    state.t, state.dt = meta["t"], meta["dt"]
    state.dist_u, state.dist_g = meta["dist_u"], meta["dist_g"]
    state.phase, state.step_count = meta["phase"], meta["step_count"]
    state._eval = _evaluate(u, state.ms)
    state.energy = state._eval.energy
    state._solver = None
    state.history = state.history[:1]
    return state


def run_pipeline(cfg, out: Path, resume: bool = False) -> tuple[int, dict]:
    """v -> (b, mu0) -> coupled flow -> frozen phase -> endpoint audit."""
    from .audit import ChartView, audit, loj_audit
    from .errors import (BelowMuStar, CoreProtectionViolated, NoConcentration, ResampleUnderresolved,
                         Stalled, StepCollapse)
    from .flow import DiagnosticsRecord, find_concentration, init_flow, run_flow
    from .io import DiagnosticsWriter, load_checkpoint_meta, save_checkpoint, write_field, write_json

    out.mkdir(parents=True, exist_ok=True)
    _write_config(cfg, out)
    started = time.perf_counter()
    stamp = _stamp(cfg)
    v, spec, exact = make_initial(cfg)
    profile = _profile(cfg, spec)
    summary: dict = {**stamp, "status": None}
    try:
        conc = find_concentration(v, spec, profile, allow_below_mu_star=cfg.flow.allow_below_mu_star)
        state = init_flow(v, conc.b, conc.mu0, profile, spec, cfg.flow)
    except (NoConcentration, BelowMuStar, ResampleUnderresolved) as exc:
        summary.update(status="precondition_failed", error=type(exc).__name__, message=str(exc))
        write_json(out / "audit.json", summary)
        return EXIT_PRECONDITION, summary
    delta0 = exact if exact is not None else state.defect
    summary.update(b=list(conc.b), mu0=conc.mu0, initial_defect=delta0,
                   initial_defect_discrete=state.defect, mu_star=profile.mu_star)

    append = False
    if resume and (out / "checkpoint.json").exists():
        u, _, meta = load_checkpoint_meta(out)
        state = _restore(state, u, meta)
        append = True
    elif resume:
        raise FileNotFoundError(f"no checkpoint in {out}")

    if append:
        _truncate_timeseries(out / "timeseries.csv", state.step_count)

    def checkpoint(s):
        save_checkpoint(out, s)

    writer = DiagnosticsWriter(out / "timeseries.csv", DiagnosticsRecord.columns(), meta=stamp, append=append)
    code = EXIT_PASS
    try:
        with writer:
            run_flow(state, cfg.flow, sink=writer, checkpoint=checkpoint)
    except Stalled as exc:
        summary.update(status="stalled", message=str(exc))
        code = EXIT_INCONCLUSIVE
    except (StepCollapse, CoreProtectionViolated) as exc:
        summary.update(status="invariant_failed", error=type(exc).__name__, message=str(exc))
        code = EXIT_INVARIANT
    write_field(out / "final.bfld", state.u, spec)

    ev = state._eval
    G = math.sqrt(ev.grad_sq(state.phase == "coupled"))
    summary.update(t=state.t, steps=state.step_count, phase=state.phase, mu=state.mu, energy=state.energy,
                   defect=state.defect, tension_norm=ev.tension_norm, gradient_norm=G,
                   dist_u=state.dist_u, dist_g=state.dist_g, ledger=state.dist_u + state.dist_g)
    caps = {"loj_energy": cfg.audit.loj_energy, "loj_mu": cfg.audit.loj_mu, "loj_dist": cfg.audit.loj_dist}
    try:
        loj = loj_audit(state.u, state.ms, gradient_norm=G, eps2=cfg.audit.eps2, caps=caps)
        summary["loj"] = loj.to_dict()
    except Exception as exc:  # report-only
        loj = None
        summary["loj"] = {"status": "error", "error": type(exc).__name__, "message": str(exc)}
    try:
        fit = audit(state.u, ChartView.pulled_back(state.ms))
        summary["fit"] = fit.to_dict()
    except Exception as exc:
        summary["fit"] = {"error": type(exc).__name__, "message": str(exc)}
    summary["calibrations"] = {"eps2": cfg.audit.eps2, **caps, "note": "existential constants; calibrated values"}

    if code == EXIT_PASS:
        if loj is not None and loj.status == "window_violated":
            summary["status"] = "window_violated"
            code = EXIT_INCONCLUSIVE
        elif loj is not None and loj.status == "fail":
            summary["status"] = "loj_failed"
            code = EXIT_INVARIANT
        elif state.phase != "converged":
            summary["status"] = "not_converged"
            code = EXIT_INCONCLUSIVE
        else:
            summary["status"] = "pass"
    summary["wall_seconds"] = time.perf_counter() - started
    write_json(out / "audit.json", summary)
    return code, summary


def _truncate_timeseries(path: Path, step: int) -> None:
    """Drop rows written after the checkpoint so an interrupted run resumes cleanly."""
    if not path.exists():
        return
    lines = path.read_text().splitlines(keepends=True)
    keep = []
    header_seen = False
    for ln in lines:
        if ln.startswith("#"):
            keep.append(ln)
            continue
        if not header_seen:
            keep.append(ln)
            header_seen = True
            continue
        if int(ln.split(",", 1)[0]) <= step:
            keep.append(ln)
    path.write_text("".join(keep))


# ---------------------------------------------------------------------------
# commands


def cmd_metrics_audit(cfg, out: Path, mode: str) -> int:
    from .io import write_json
    from .suites import metrics_suite

    checks = metrics_suite(mode=mode, seed=cfg.seed)
    failed = [c["name"] for c in checks if not c["pass"]]
    _write_config(cfg, out)
    write_json(out / "metrics_audit.json", {**_stamp(cfg), "profile": mode, "checks": checks,
                                            "failed": failed, "pass": not failed})
    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}")
    return EXIT_PASS if not failed else EXIT_INVARIANT


def cmd_flow_run(cfg, out: Path, resume: bool = False) -> int:
    code, summary = run_pipeline(cfg, out, resume=resume)
    print(f"status={summary['status']} exit={code}")
    return code


def _sweep_one(payload):
    from .config import RunConfig

    cfg_dict, lam, out = payload
    cfg = RunConfig.from_dict(cfg_dict)
    cfg.initial.lam = lam
    cfg.threads = 1
    code, summary = run_pipeline(cfg, Path(out))
    initial = _initial_audit(cfg)
    return lam, code, summary, initial


def _initial_audit(cfg) -> dict:
    from .audit import audit

    v, spec, exact = make_initial(cfg)
    return audit(v, spec, defect=exact).to_dict()


def cmd_sweep(cfg, out: Path) -> int:
    import numpy as np

    from .audit import slope
    from .io import write_json
    from .suites import bubble_model_suite

    out.mkdir(parents=True, exist_ok=True)
    _write_config(cfg, out)
    started = time.perf_counter()
    lams = [float(x) for x in cfg.sweep.lams]
    jobs = [(cfg.to_dict(), lam, str(out / f"lam_{lam:g}")) for lam in lams]
    if cfg.threads > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(cfg.threads, len(jobs))) as ex:
            results = list(ex.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    results.sort(key=lambda r: r[0])

    rows = []
    for lam, code, s, init in results:
        fit = s.get("fit", {})
        rows.append({
            "lambda0": lam, "exit": code, "status": s.get("status"), "delta": s.get("initial_defect"),
            "ledger": s.get("ledger"), "mu0_inv": 1.0 / s["mu0"] if s.get("mu0") else float("nan"),
            "lambda_final_inv": 1.0 / fit["lambda"] if "lambda" in fit else float("nan"),
            "final_defect": s.get("defect"), "mu_final": s.get("mu"),
            **{f"init_{k}": init["ratios"][k] for k in ("ratio1", "ratio2", "ratio3", "ratio4")},
            **{f"end_{k}": fit.get("ratios", {}).get(k, float("nan")) for k in ("ratio1", "ratio2", "ratio3", "ratio4")},
        })
    with open(out / "sweep_table.csv", "w", newline="") as fh:
        fh.write("# " + json.dumps(_stamp(cfg), sort_keys=True) + "\n")
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})

    tol = cfg.sweep.slope_tol
    slopes = {}
    ok = True
    enough = len(rows) >= 2
    deltas = [r["delta"] for r in rows]
    for key in ("ledger", "mu0_inv", "lambda_final_inv"):
        ys = [r[key] for r in rows]
        if not enough or not all(y is not None and np.isfinite(y) and y > 0 for y in ys):
            slopes[key] = {"status": "insufficient-data"}
            continue
        s, se = slope(deltas, ys)
        good = abs(s - 0.5) <= tol
        ok &= good
        slopes[key] = {"slope": s, "stderr": se, "expected": 0.5, "tol": tol, "pass": good}

    spreads = {}
    for which in ("init", "end"):
        for k in ("ratio1", "ratio2", "ratio3", "ratio4"):
            vals = np.array([r[f"{which}_{k}"] for r in rows], float)
            finite = vals[np.isfinite(vals) & (vals > 0)]
            spread = float(finite.max() / finite.min()) if len(finite) == len(vals) and len(vals) else float("nan")
            limit = cfg.audit.spread_max
            spreads[f"{which}_{k}"] = {"values": vals.tolist(), "spread": spread, "limit": limit,
                                       "pass": bool(spread < limit) if np.isfinite(spread) else False}
    model = bubble_model_suite(lams=tuple(lams)) if enough else []
    report = {**_stamp(cfg), "lambdas": lams, "rows": rows, "slopes": slopes, "ratio_spreads": spreads,
              "bubble_model": model, "wall_seconds": time.perf_counter() - started}
    write_json(out / "sweep_report.json", report)
    for key, s in slopes.items():
        line = "n/a" if "slope" not in s else f"{s['slope']:.3f} +- {s['stderr']:.3f}"
        print(f"{key}: {line}")
    if not enough:
        return EXIT_INCONCLUSIVE
    return EXIT_PASS if ok else EXIT_INVARIANT


def cmd_bubble_audit(cfg, out: Path, model_suite: bool = False) -> int:
    from .audit import audit
    from .errors import NoConcentration, ResampleUnderresolved
    from .io import write_json
    from .suites import bubble_model_suite

    _write_config(cfg, out)
    v, spec, exact = make_initial(cfg)
    payload = {**_stamp(cfg)}
    code = EXIT_PASS
    try:
        payload["fit"] = audit(v, spec, defect=exact).to_dict()
    except (NoConcentration, ResampleUnderresolved) as exc:
        payload.update(status="precondition_failed", error=type(exc).__name__, message=str(exc))
        code = EXIT_PRECONDITION
    if model_suite:
        checks = bubble_model_suite()
        payload["bubble_model"] = checks
        if code == EXIT_PASS and not all(c["pass"] for c in checks):
            code = EXIT_INVARIANT
    payload.setdefault("status", "pass" if code == EXIT_PASS else "fail")
    write_json(out / "bubble_audit.json", payload)
    print(f"status={payload['status']} exit={code}")
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    threads = _set_threads(args.threads)
    cfg = _load_config(args)
    if args.threads is None:
        cfg.threads = threads
    out = Path(cfg.out_dir)
    if args.command == "metrics-audit":
        return cmd_metrics_audit(cfg, out, args.profile or "paper")
    if args.command == "flow-run":
        return cmd_flow_run(cfg, out, resume=args.resume)
    if args.command == "sweep":
        return cmd_sweep(cfg, out)
    return cmd_bubble_audit(cfg, out, model_suite=args.model_suite)


if __name__ == "__main__":
    sys.exit(main())
