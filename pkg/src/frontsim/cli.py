"""Command-line surface: simulate ensembles, detect renewals, estimate
constants, and run the coupling/bound verification suites."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bounds, front as front_mod, harness
from .config import ModelParams, sample_nu
from .errors import FrontsimError
from .renewal import HorizonPolicy, RenewalScanner
from .walks import path_from_text


def _load_config(args) -> harness.RunConfig:
    cfg = harness.parse_config_text(Path(args.config).read_text())
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.replicas is not None:
        cfg.replicas = args.replicas
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _add_common(sub):
    sub.add_argument("--config", required=True, help="run-config file (key = value)")
    sub.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                     help="override master_seed")
    sub.add_argument("--replicas", type=int, default=None)
    sub.add_argument("--out", default=None, help="override output_dir")
    sub.add_argument("--workers", type=int, default=1)
    sub.add_argument("--resume", action="store_true",
                     help="resume/verify an existing output tree (also the "
                          "default behavior)")


def cmd_simulate(args) -> int:
    if args.script_file:
        text = Path(args.script_file).read_text()
        blocks = [b for b in text.split("\n\n") if b.strip()]
        paths = tuple(path_from_text(b) for b in blocks)
        t_back = max(p.t_back for p in paths)
        t_fwd = min(p.t_fwd for p in paths)
        x0s = [p.x0 for p in paths]
        psi = front_mod.ParticleSystem(
            paths=paths, window=(min(x0s), max(x0s)), t_back=t_back, t_fwd=t_fwd
        )
        trace = front_mod.build_front_single_rate(psi)
        out = Path(args.out or ".") / "front_script.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(front_mod.front_to_csv(trace))
        print(f"wrote {out} ({trace.n_jumps} jumps)")
        return 0
    cfg = _load_config(args)
    manifest = harness.run_ensemble(cfg, workers=args.workers, resume=True)
    censored = sum(1 for r in manifest.replicas if r["censored"])
    print(json.dumps({
        "run_key": manifest.run_key,
        "replicas": len(manifest.replicas),
        "censored": censored,
        "renewals": sum(r["n_renewals"] for r in manifest.replicas),
        "pilot_speed": manifest.pilot_speed,
    }))
    return 0


def cmd_renewal(args) -> int:
    cfg = _load_config(args)
    if not args.horizon_sweep:
        manifest = harness.run_ensemble(cfg, workers=args.workers, resume=True)
        print(json.dumps({
            "renewals": sum(r["n_renewals"] for r in manifest.replicas)
        }))
        return 0
    pilot = harness.pilot_speed(cfg)
    base, doubled, lost = 0, 0, 0
    for i in range(cfg.replica_start, cfg.replica_start + cfg.replicas):
        psi, trace, renewals, _ = harness.simulate_replica(cfg, i, pilot)
        ap = cfg.resolved_alpha_params(pilot)
        hp2 = HorizonPolicy(cfg.h_back * 2, cfg.h_fwd * 2, cfg.tail_tol)
        sc2 = RenewalScanner(psi, trace, ap.alpha, hp2, cap_c=ap.cap_c,
                             cap_l=ap.cap_l, theta=ap.theta)
        k1 = {r.kappa for r in renewals}
        k2 = {r.kappa for r in sc2.separation_times()}
        base += len(k1)
        doubled += len(k2)
        lost += len(k1 - k2)
    churn = lost / base if base else 0.0
    print(json.dumps({"records": base, "records_doubled": doubled,
                      "lost": lost, "churn": churn}))
    return 0


def cmd_estimate(args) -> int:
    report = harness.merge_and_report(args.dirs)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.as_json())
    print(report.as_json())
    return 0


def cmd_verify_couplings(args) -> int:
    cfg = _load_config(args)
    rng = np.random.default_rng(cfg.master_seed)
    window = cfg.window or (-50, 50)
    failures = {"addition": 0, "addition_modified": 0, "modified": 0,
                "symmetrize": 0}
    for _ in range(args.trials):
        w = sample_nu(cfg.rho, window, rng)
        psi = front_mod.system_from_configuration(
            w, cfg.d_r, 0.0, cfg.t_fwd, rng
        )
        extra = front_mod.system_from_configuration(
            sample_nu(cfg.rho, (1, max(2, window[1])), rng),
            cfg.d_r, 0.0, cfg.t_fwd, rng,
        )
        bigger = front_mod.ParticleSystem(
            paths=psi.paths + tuple(
                p for p in extra.paths
                if p.label not in set(psi.labels)
            )[:1],
            window=window, t_back=0.0, t_fwd=cfg.t_fwd,
        )
        if not front_mod.check_coupling_addition(psi, bigger).passed:
            failures["addition"] += 1
        if not front_mod.check_coupling_addition(psi, bigger, "modified").passed:
            failures["addition_modified"] += 1
        if not front_mod.check_coupling_modified(psi).passed:
            failures["modified"] += 1
        if not front_mod.check_coupling_symmetrize(psi).passed:
            failures["symmetrize"] += 1
    print(json.dumps({"trials": args.trials, "failures": failures}))
    return 0 if not any(failures.values()) else 1


def cmd_verify_bounds(args) -> int:
    cfg = _load_config(args)
    rng = np.random.default_rng(cfg.master_seed)
    pilot = harness.pilot_speed(cfg)
    ap = cfg.resolved_alpha_params(pilot)
    spec = bounds.BoundGridSpec(
        x_values=(0, -1, -2, -3), t_values=(1.0, 2.0, 5.0),
        n_per_cell=max(args.n, 1000), alpha=1.0, theta=0.5,
    )
    results = bounds.run_single_walk_grid(spec, rng)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bound_table.csv").write_text(bounds.grid_to_csv(results))
    summary = bounds.grid_summary_json(results)
    (out / "bound_summary.json").write_text(summary)
    shift = bounds.verify_shift_invariance(
        ModelParams(cfg.rho, cfg.d_r, cfg.d_r, "single_rate"),
        t=10.0, bulk_window=(-20, 20), n=args.n // 100 or 10, rng=rng,
    )
    print(summary)
    print(json.dumps({"shift_invariance_pass": shift.passed,
                      "chi2": shift.chi2, "dof": shift.dof,
                      "p_value": shift.p_value}))
    ok = json.loads(summary)["failures"] == [] and shift.passed
    return 0 if ok else 1


def cmd_report(args) -> int:
    return cmd_estimate(args)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="frontsim",
        description="Event-driven infection-front simulator and verifier",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_sim = subs.add_parser("simulate", help="run a replica ensemble")
    _add_common(p_sim)
    p_sim.add_argument("--script-file", default=None,
                       help="build one deterministic front from scripted paths")
    p_sim.set_defaults(func=cmd_simulate)

    p_ren = subs.add_parser("renewal", help="detect renewal times")
    _add_common(p_ren)
    p_ren.add_argument("--horizon-sweep", action="store_true",
                       help="re-detect at doubled windows and report churn")
    p_ren.set_defaults(func=cmd_renewal)

    p_est = subs.add_parser("estimate", help="merge ensembles into a report")
    p_est.add_argument("dirs", nargs="+")
    p_est.add_argument("--out", default=None)
    p_est.set_defaults(func=cmd_estimate)

    p_cpl = subs.add_parser("verify-couplings", help="pathwise coupling suite")
    _add_common(p_cpl)
    p_cpl.add_argument("--trials", type=int, default=100)
    p_cpl.set_defaults(func=cmd_verify_couplings)

    p_bnd = subs.add_parser("verify-bounds", help="Monte Carlo bound suite")
    _add_common(p_bnd)
    p_bnd.add_argument("--n", type=int, default=10_000)
    p_bnd.set_defaults(func=cmd_verify_bounds)

    p_rep = subs.add_parser("report", help="alias of estimate over many dirs")
    p_rep.add_argument("dirs", nargs="+")
    p_rep.add_argument("--out", default=None)
    p_rep.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FrontsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
