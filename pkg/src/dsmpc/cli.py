"""Command-line pipeline: synth, simulate, report, check.

Exit codes: 0 success, 1 infeasibility or a failed check/synthesis, 2 input
error (missing or malformed files, mismatched artifact).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifact import hash_model_file, load_artifact, save_artifact, synthesize
from .checks import run_checks
from .errors import ArtifactModelMismatch, DsmpcError, ModelFileError
from .model import distribution_from_file, horizon_from_file, load_network
from .sim import ScenarioSpec, load_scenario, monte_carlo
from .solver import SolverSettings, backend_name
from .synthesis import admissible_steady_state, make_steady_state_oracle
from .uncertainty import GammaPolicy

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT = 2

# Closed-loop simulation favors throughput; feasibility is re-checked per
# solve so the looser tolerance only affects reported objectives.
SIM_SETTINGS = SolverSettings(rho=0.3, eps_abs=1e-6, eps_rel=1e-6,
                              check_every=10)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ModelFileError, ArtifactModelMismatch, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DsmpcError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dsmpc",
        description="Distributed stochastic MPC toolkit: offline synthesis, "
                    "closed-loop Monte Carlo, reporting and self-checks.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(required=True)

    p = sub.add_parser("synth", help="compute and store the offline ingredients")
    p.add_argument("--model", required=True)
    p.add_argument("--artifact", required=True, help="output artifact path")
    p.add_argument("--gamma-policy", choices=["global", "per-constraint"],
                   default="per-constraint")
    p.add_argument("--distribution", choices=["gaussian", "uniform"],
                   default=None, help="override the model file's tag")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate", help="closed-loop Monte-Carlo runs")
    p.add_argument("--model", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--artifact", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--backend", choices=["centralized", "distributed"],
                   default="centralized")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summarize traces and emit plot scripts")
    p.add_argument("--traces", required=True, help="simulate output directory")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("check", help="run the invariant suite on a model")
    p.add_argument("--model", required=True)
    p.add_argument("--gamma-policy", choices=["global", "per-constraint"],
                   default="per-constraint")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_check)
    return parser


def _policy_from_args(args, model_path):
    distribution = args.distribution if getattr(args, "distribution", None) \
        else distribution_from_file(model_path)
    return GammaPolicy(mode=args.gamma_policy, distribution=distribution)


def cmd_synth(args):
    model = load_network(args.model)
    N = horizon_from_file(args.model)
    policy = _policy_from_args(args, args.model)
    art = synthesize(model, N, policy, model_hash=hash_model_file(args.model))
    save_artifact(art, args.artifact)
    d = art.diagnostics
    print(f"synthesis complete: N={N}, policy={policy.mode}/{policy.distribution}")
    print(f"  rho(A+BK)              = {d['rho_closed_loop']:.6f}")
    print(f"  cost-equation residual = {d['lyapunov_residual']:.2e}")
    print(f"  terminal level scale   = {d['terminal_level_scale']:.6f}")
    print(f"  terminal tightening    = {d['terminal_state_tightening']:.4f} (state) "
          f"/ {d['terminal_input_tightening']:.4f} (input)")
    if args.verbose:
        for t, mag in enumerate(d["stage_state_tightening"]):
            print(f"  stage {t}: max state tightening {mag:.4f}")
    if d["lyapunov_offblock_mass"] > 1e-6:
        print(f"  note: cost matrix has off-block mass {d['lyapunov_offblock_mass']:.3f}; "
              "the per-subsystem cost split is approximate for this model")
    print(f"  artifact written to {args.artifact}")
    return EXIT_OK


def cmd_simulate(args):
    model = load_network(args.model)
    art = load_artifact(args.artifact)
    with open(args.model, "rb") as fh:
        art.verify_model_bytes(fh.read())
    scenario = load_scenario(args.scenario)
    if args.seed is not None or args.runs is not None:
        scenario = ScenarioSpec(
            initial_state=scenario.initial_state,
            segments=scenario.segments,
            steps=scenario.steps,
            runs=args.runs if args.runs is not None else scenario.runs,
            seed=args.seed if args.seed is not None else scenario.seed,
            distribution=scenario.distribution,
        )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def write_trace(trace):
        path = out / f"trace_{trace.run_index:04d}.csv"
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(
                ["k"] + [f"x{i}" for i in range(model.n)]
                + [f"u{i}" for i in range(model.m)]
                + [f"y{i}" for i in range(model.l)]
                + ["mode", "status", "objective"]
            )
            for k in range(scenario.steps):
                wr.writerow(
                    [k] + list(trace.x[k]) + list(trace.u[k]) + list(trace.y[k])
                    + [trace.mode[k], trace.status[k], trace.objective[k]]
                )
            wr.writerow([scenario.steps] + list(trace.x[-1])
                        + [""] * model.m + list(trace.y[-1]) + ["", "", ""])

    if args.verbose:
        print(f"running {scenario.runs} runs x {scenario.steps} steps "
              f"({args.backend} backend, {backend_name()} core)")
    report = monte_carlo(model, art, scenario, jobs=args.jobs,
                         trace_callback=write_trace, settings=SIM_SETTINGS,
                         backend=args.backend)

    _write_aggregate(out, model, scenario, report)
    _write_reference(out, model, scenario)
    summary = _summary_dict(model, art, scenario, report, args)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)
    print(f"simulate: {scenario.runs} runs, {report.infeasible_events} infeasible "
          f"steps, {report.mode2_events} fallback initializations")
    print(f"  min state-constraint satisfaction: {report.state_rate.min():.3f}")
    print(f"  outputs in {out}")
    return EXIT_OK if report.infeasible_events == 0 else EXIT_FAILURE


def _write_aggregate(out, model, scenario, report):
    with open(out / "aggregate.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        header = (["k"]
                  + [f"state_rate_{j}" for j in range(report.state_rate.shape[1])]
                  + [f"input_rate_{j}" for j in range(report.input_rate.shape[1])]
                  + [f"mean_y{i}" for i in range(model.l)]
                  + ["mode2_count", "mean_objective"])
        wr.writerow(header)
        for k in range(scenario.steps + 1):
            row = [k] + list(report.state_rate[k])
            if k < scenario.steps:
                row += list(report.input_rate[k])
            else:
                row += [""] * report.input_rate.shape[1]
            row += list(report.mean_output[k])
            if k < scenario.steps:
                row += [int(report.mode2_per_step[k]), report.mean_objective[k]]
            else:
                row += ["", ""]
            wr.writerow(row)


def _write_reference(out, model, scenario):
    with open(out / "reference.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k"] + [f"yref{i}" for i in range(model.l)])
        for k in range(scenario.steps + 1):
            wr.writerow([k] + list(scenario.reference_at(min(k, scenario.steps - 1))))


def _summary_dict(model, art, scenario, report, args):
    oracle = make_steady_state_oracle(model, art.tightened.state_terminal,
                                      art.tightened.input_terminal)
    segments = []
    for summary in report.segment_summaries:
        y_ref = np.asarray(summary["y_ref"])
        _, _, y_star = admissible_steady_state(y_ref, oracle,
                                               terminal_set=art.terminal)
        mean_end = np.asarray(summary["terminal_mean_output"])
        segments.append({
            **summary,
            "steady_state_target": y_star.tolist(),
            "gap_to_target_inf": float(np.max(np.abs(mean_end - y_star))),
            "tracking_cost_at_target": float(
                (y_star - y_ref) @ model.T @ (y_star - y_ref)
            ),
        })
    return {
        "runs": report.runs,
        "steps": report.steps,
        "backend": args.backend,
        "model": str(args.model),
        "model_hash": hash_model_file(args.model),
        "artifact": str(args.artifact),
        "seed": scenario.seed,
        "infeasible_events": report.infeasible_events,
        "mode2_events": report.mode2_events,
        "min_state_rate": float(report.state_rate.min()),
        "min_state_rate_per_row": report.state_rate.min(axis=0).tolist(),
        "min_input_rate": float(report.input_rate.min()),
        "segments": segments,
        "n_state_rows": int(model.state_set.nrows),
        "n_states": int(model.n),
        "n_inputs": int(model.m),
        "l": int(model.l),
    }


def cmd_report(args):
    out = Path(args.traces)
    summary_path = out / "summary.json"
    if not summary_path.exists():
        raise ModelFileError(f"{out} has no summary.json; run simulate first")
    traces = sorted(out.glob("trace_*.csv"))
    if not traces:
        raise ModelFileError(f"{out} contains no trace files")
    with open(summary_path, encoding="utf-8") as fh:
        summary = json.load(fh)

    print(f"report over {len(traces)} trace files ({summary['runs']} runs recorded)")
    print(f"  recursive feasibility : {summary['infeasible_events']} infeasible steps "
          f"({'PASS' if summary['infeasible_events'] == 0 else 'FAIL'})")
    print(f"  fallback activations  : {summary['mode2_events']}")
    print(f"  min satisfaction      : {summary['min_state_rate']:.3f} (state), "
          f"{summary['min_input_rate']:.3f} (input)")
    for seg in summary["segments"]:
        tgt = np.asarray(seg["steady_state_target"])
        print(f"  segment k={seg['start']:>3}: reference {seg['y_ref']}")
        print(f"      steady-state target {np.round(tgt, 4).tolist()}, "
              f"terminal mean {np.round(np.asarray(seg['terminal_mean_output']), 4).tolist()}")
        print(f"      gap to target {seg['gap_to_target_inf']:.4f}, "
              f"tracking cost at target {seg['tracking_cost_at_target']:.1f}")

    _emit_plot_scripts(out, summary, len(traces))
    print(f"  plot scripts written: {out/'fig_outputs.gp'}, {out/'fig_satisfaction.gp'}")
    return EXIT_OK


def _emit_plot_scripts(out, summary, n_traces):
    l = summary["l"]
    steps = summary["steps"]
    with open(out / "fig_outputs.gp", "w", encoding="utf-8") as fh:
        fh.write("# gnuplot script: closed-loop output fan per subsystem\n")
        fh.write("# trace columns: k, x..., u..., y..., mode, status, objective\n")
        fh.write("set datafile separator ','\nset key off\n")
        fh.write(f"set multiplot layout {l},1\n")
        n = summary.get("n_state_rows", 0)
        for i in range(l):
            ycol = 2 + summary_state_dim(summary) + summary_input_dim(summary) + i
            fh.write(f"set ylabel 'y_{i}'\n")
            fh.write(
                f"plot for [r=0:{n_traces - 1}] sprintf('trace_%04d.csv', r) "
                f"using 1:{ycol} with lines lc rgb '#40000000', "
                f"'reference.csv' using 1:{2 + i} with steps lw 2 lc rgb 'red'\n"
            )
        fh.write("unset multiplot\n")
    with open(out / "fig_satisfaction.gp", "w", encoding="utf-8") as fh:
        fh.write("# gnuplot script: per-step empirical constraint satisfaction\n")
        fh.write("set datafile separator ','\nset yrange [0:1.05]\n")
        fh.write("set xlabel 'step k'\nset ylabel 'satisfaction rate'\n")
        rates = summary.get("min_state_rate_per_row", [])
        worst = int(np.argmin(rates)) if rates else 0
        fh.write(f"# worst state row: {worst}\n")
        fh.write(
            f"plot 'aggregate.csv' using 1:{2 + worst} with boxes "
            f"title 'state row {worst}', 0.7 with lines lc rgb 'red' "
            "title 'required level'\n"
        )


def summary_state_dim(summary):
    return summary["n_states"]


def summary_input_dim(summary):
    return summary["n_inputs"]


def cmd_check(args):
    model = load_network(args.model)
    N = horizon_from_file(args.model)
    policy = _policy_from_args(args, args.model)
    results = run_checks(model, N, policy)
    width = max(len(name) for name, _, _ in results)
    failures = 0
    for name, ok, detail in results:
        mark = "PASS" if ok else "FAIL"
        if not ok:
            failures += 1
        print(f"  {name:<{width}}  {mark}  {detail}")
    print(f"check: {len(results) - failures}/{len(results)} passed")
    return EXIT_OK if failures == 0 else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
