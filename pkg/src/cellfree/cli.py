"""Command-line experiment runner and report renderer."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from cellfree.scenario import GeometryConfig, load_geometry_config
from cellfree.duality import SolverOptions
from cellfree.experiment import (
    ExperimentSpec,
    emit_results,
    rate_to_gamma,
    run_experiment,
)
from cellfree import report


def _csv_list(text, cast=str):
    return tuple(cast(item) for item in text.split(",") if item.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellfree",
        description="Feasibility experiments for joint cell-free downlink precoding",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a feasibility sweep")
    run.add_argument("--config", type=Path, default=None,
                     help="YAML geometry config (section: geometry)")
    run.add_argument("--drops", type=int, default=100)
    run.add_argument("--samples", type=int, default=100)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--gammas", type=str, default=None,
                     help="comma-separated SINR targets")
    run.add_argument("--rates", type=str, default=None,
                     help="comma-separated rate targets [b/s/Hz], converted to SINRs")
    run.add_argument("--precoders", type=str, default="centralized,local",
                     help="subset of centralized,local,local_scalar_baseline")
    run.add_argument("--modes", type=str, default="per_ap,sum_power")
    run.add_argument("--out", type=Path, default=Path("results"))
    run.add_argument("--log-trajectories", action="store_true")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--alpha-schedule", type=str, default="10,17,5")
    run.add_argument("--outer-max-iter", type=int, default=500)

    rep = sub.add_parser("report", help="render figures from a results directory")
    rep.add_argument("--results", type=Path, default=Path("results"),
                     help="directory containing results.csv (and trajectories.jsonl)")
    rep.add_argument("--out", type=Path, default=None,
                     help="output directory for figures (default: alongside the CSV)")
    return parser


def cmd_run(args) -> int:
    geometry = (load_geometry_config(args.config) if args.config
                else GeometryConfig())
    if args.gammas and args.rates:
        print("error: give either --gammas or --rates, not both", file=sys.stderr)
        return 2
    if args.rates:
        gammas = tuple(rate_to_gamma(r) for r in _csv_list(args.rates, float))
    elif args.gammas:
        gammas = _csv_list(args.gammas, float)
    else:
        gammas = (geometry.sinr_target,)
    solver = SolverOptions(
        alpha_schedule=_csv_list(args.alpha_schedule, float),
        outer_max_iter=args.outer_max_iter,
    )
    spec = ExperimentSpec(
        geometry=geometry, gammas=gammas,
        precoders=_csv_list(args.precoders), modes=_csv_list(args.modes),
        drops=args.drops, samples=args.samples, seed=args.seed,
        solver=solver, log_trajectories=args.log_trajectories, jobs=args.jobs,
    )
    result = run_experiment(spec)
    args.out.mkdir(parents=True, exist_ok=True)
    emit_results(result, args.out / "results.csv", args.out / "results.json")
    if args.log_trajectories:
        with open(args.out / "trajectories.jsonl", "w") as fh:
            for entry in result.trajectories:
                meta = {key: entry[key] for key in ("drop", "gamma", "precoder", "mode")}
                for record in entry["trajectory"]:
                    fh.write(json.dumps({**meta, **record}) + "\n")
    for cell in result.cells:
        print(f"gamma={cell['gamma']:g} rate={cell['rate']:.3f} "
              f"{cell['precoder']}/{cell['mode']}: "
              f"{cell['feasible']}/{cell['drops'] - cell['excluded']} feasible "
              f"({cell['excluded']} excluded)")
    print(f"wrote {args.out / 'results.csv'}")
    return 0


def cmd_report(args) -> int:
    csv_path = args.results / "results.csv"
    if not csv_path.exists():
        print(f"error: {csv_path} not found", file=sys.stderr)
        return 2
    out_dir = args.out or args.results
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = report.read_results_csv(csv_path)
    report.feasibility_figure(rows, out_dir / "feasibility.png")
    written = [out_dir / "feasibility.png"]
    traj_path = args.results / "trajectories.jsonl"
    if traj_path.exists():
        records = report.read_trajectories(traj_path)
        if records:
            report.convergence_figure(records, out_dir / "convergence.png")
            written.append(out_dir / "convergence.png")
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    return cmd_report(args)


if __name__ == "__main__":
    sys.exit(main())
