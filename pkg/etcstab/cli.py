"""
etcstab/cli.py - Main Entry Point and CLI Logic

Subcommands:

    etc-stab check-graph FILE
    etc-stab design FILE
    etc-stab simulate FILE [--mode M] [--out DIR]
    etc-stab sweep FILE --param P --values V1,V2,... [--mode M] [--out DIR]

Exit codes: 0 success, 1 validation failure, 2 divergence, 3 solver failure.
"""
import argparse
import json
import os
import sys
from typing import Any, List, Optional

import numpy as np

from .analysis import event_log_offset, summarize
from .control import design_gain
from .debug_logger import DebugLogger
from .errors import DivergenceError, EtcStabError, ValidationError
from .export import to_jsonable, write_json, write_run, write_table
from .graph import (
    block_triangular_form, diagonal_dominance, grounded_matrix, iscc_partition,
    is_weakly_connected, laplacian_rank_check, pinned_followers, pinning_check,
    select_pinning_vertices,
)
from .scenario import ScenarioFile, TriggerMode, build_scenario, load_scenario_file
from .sim import run
from .sweep_worker import SWEEP_PARAMETERS, simulate_for_sweep

THREADS_ENV = "ETC_STAB_THREADS"


def _labels(vertices: Any) -> str:
    return "{" + ", ".join(str(v + 1) for v in vertices) + "}"


def _design(sf: ScenarioFile, logger: DebugLogger) -> Any:
    solver = sf.solver
    return design_gain(
        sf.A, sf.B, sf.net,
        varsigma_R=solver["varsigma_R"],
        delta=solver["delta"],
        v1=None if solver["v1"] == "auto" else solver["v1"],
        mu=np.broadcast_to(np.asarray(sf.trigger["mu"], dtype=float), (sf.net.follower_count,)),
        logger=logger,
    )


def cmd_check_graph(args: argparse.Namespace, logger: DebugLogger) -> int:
    """Prints the structural report; returns 0 iff every iSCC cell is pinned."""
    sf = load_scenario_file(args.path)
    net = sf.net
    m = net.follower_count
    partition = iscc_partition(net)
    print(f"Scenario: {sf.name}")
    print(f"Followers: {m}, leaders: {net.leader_count}")
    connected = is_weakly_connected(net)
    print(f"Weakly connected: {'yes' if connected else 'no'}")
    c = partition.cell_count
    print(f"iSCC cells (c = {c}): " + " ".join(_labels(cell) for cell in partition.cells))
    if partition.non_iscc:
        print(f"Other followers: {_labels(partition.non_iscc)}")
    if connected:
        rank, _, consistent = laplacian_rank_check(net)
        print(f"rank(L_F) = {rank}, m - c = {m - c}: {'consistent' if consistent else 'INCONSISTENT'}")
        form = block_triangular_form(net)
        print(f"Block order: {_labels(form.permutation)}, block sizes {list(form.block_sizes)}")
    else:
        print("Rank check and block form skipped: follower graph is not weakly connected")
    print(f"Pinned followers: {_labels(np.flatnonzero(pinned_followers(net)))}")

    if not pinning_check(net, partition):
        pinned = pinned_followers(net)
        missing = [cell for cell in partition.cells if not any(pinned[v] for v in cell)]
        print("Pinning: FAILED, unpinned cells " + " ".join(_labels(cell) for cell in missing))
        print(f"Suggested control vertices: {_labels(select_pinning_vertices(net))}")
        return 1

    print("Pinning: OK")
    gm = grounded_matrix(net)
    weak, strict_rows = diagonal_dominance(gm.M)
    spectrum = np.linalg.eigvals(gm.M)
    spectrum = spectrum[np.lexsort((spectrum.imag, spectrum.real))]
    print(f"Diagonal dominance: {'weak' if weak else 'no'}, strict in rows {_labels(strict_rows)}")
    print("Spectrum of M: " + ", ".join(f"{z.real:.6g}{z.imag:+.6g}j" for z in spectrum))
    print(f"Psi = diag({', '.join(f'{p:.6g}' for p in gm.psi)}), eta = {gm.eta:.6g}")
    logger.section("Graph", [f"M = {np.array2string(gm.M, precision=4)}", f"eta = {gm.eta:.6g}"])
    return 0


def cmd_design(args: argparse.Namespace, logger: DebugLogger) -> int:
    """Emits the certified gain design as JSON (stdout or --out file)."""
    sf = load_scenario_file(args.path)
    design = _design(sf, logger)
    payload = {"scenario": sf.name, "design": design.to_dict()}
    if args.out:
        write_json(args.out, payload)
        print(f"Design written to {args.out}")
    else:
        print(json.dumps(to_jsonable(payload), indent=2, sort_keys=True))
    return 0


def _print_summary(report: Any, diverged: bool) -> None:
    if diverged:
        print("Status: diverged")
    print(f"|x~(0)| = {report.tilde_x_initial:.6g}, |x~(T)| = {report.tilde_x_final:.6g}")
    print(f"Hull residual at end: {report.hull_residual_final:.3e}")
    print("Trigger counts: " + ", ".join(f"{i + 1}: {n}" for i, n in enumerate(report.trigger_counts)))
    print(f"Min inter-event time: {report.min_inter_event_time:.6g}")


def cmd_simulate(args: argparse.Namespace, logger: DebugLogger) -> int:
    """Runs one simulation and writes all artifacts; exit 2 when the guard stops it."""
    sf = load_scenario_file(args.path)
    design = _design(sf, logger)
    scenario = build_scenario(sf, design, args.mode)
    out_dir = args.out or sf.output["dir"]

    diverged, message = False, ""
    try:
        trajectory = run(scenario, design, logger)
    except DivergenceError as e:
        trajectory, diverged, message = e.trajectory, True, str(e)
        logger.warn(message)

    report = summarize(trajectory, scenario, design, logger)
    summary = {
        "scenario": sf.name,
        "mode": scenario.mode.value,
        "status": "diverged" if diverged else "completed",
        "design": design.to_dict(),
        "trigger": {
            "k": scenario.k, "beta": scenario.beta, "sigma": scenario.sigma,
            "mu": scenario.mu, "xi": scenario.xi, "theta": scenario.theta,
            "phi0": scenario.phi0, "Theta": scenario.Theta,
        },
        "solver": {"h": scenario.h, "T": scenario.T, "decimation": scenario.decimation},
        "analysis": report.to_dict(),
    }
    written = write_run(out_dir, trajectory, report, summary)
    logger.log("Wrote " + ", ".join(written))
    _print_summary(report, diverged)
    print(f"Artifacts written to {out_dir}")
    if diverged:
        print(f"Error: {message}", file=sys.stderr)
        return DivergenceError.exit_code
    return 0


def _parse_values(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ValidationError(f"--values must be comma-separated numbers, got {text!r}") from e
    if not values:
        raise ValidationError("--values is empty")
    return values


def _worker_count(tasks: int) -> int:
    from multiprocessing import cpu_count
    limit = max(1, cpu_count() - 1)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            limit = max(1, int(env))
        except ValueError as e:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}") from e
    return max(1, min(limit, tasks))


def cmd_sweep(args: argparse.Namespace, logger: DebugLogger) -> int:
    """One run per value in parallel; writes sweep.csv with one row per value."""
    if args.param not in SWEEP_PARAMETERS:
        raise ValidationError(f"unknown sweep parameter {args.param!r}; expected one of {', '.join(SWEEP_PARAMETERS)}")
    values = _parse_values(args.values)
    sf = load_scenario_file(args.path)
    design = _design(sf, logger)
    scenario = build_scenario(sf, design, args.mode)
    out_dir = args.out or os.path.join(sf.output["dir"], f"sweep_{args.param}")
    os.makedirs(out_dir, exist_ok=True)

    tasks = [(scenario, design, args.param, v, out_dir) for v in values]
    processes = _worker_count(len(tasks))
    logger.log(f"Sweep over {args.param} = {values} on {processes} worker(s)")
    if processes == 1:
        rows = [simulate_for_sweep(task) for task in tasks]
    else:
        from multiprocessing import Pool
        with Pool(processes=processes) as pool:
            rows = pool.map(simulate_for_sweep, tasks)

    reference: Optional[List[Any]] = None
    if args.param == "theta" and scenario.mode is TriggerMode.DETC:
        static = build_scenario(sf, design, TriggerMode.SETC_INSTANT.value)
        try:
            static_run = run(static, design, logger)
        except DivergenceError as e:
            static_run = e.trajectory
        reference = [static_run.event_times(i) for i in range(static_run.follower_count)]

    m = sf.net.follower_count
    header = ["value"] + [f"triggers_{i + 1}" for i in range(m)] + ["tilde_x_final", "min_inter_event_time", "diverged", "error"]
    if reference is not None:
        header.append("offset_to_static")
    table = []
    for row in rows:
        counts = row.get("trigger_counts", [""] * m)
        line = [row["value"]] + list(counts) + [
            row.get("tilde_x_final", ""), row.get("min_inter_event_time", ""),
            int(row["diverged"]), row["error"],
        ]
        if reference is not None:
            line.append(event_log_offset(row["event_times"], reference) if "event_times" in row else "")
        table.append(line)
        status = row["error"] or ("diverged" if row["diverged"] else f"counts {counts}")
        print(f"{args.param} = {row['value']:g}: {status}")
    path = os.path.join(out_dir, "sweep.csv")
    write_table(path, header, table)
    print(f"Sweep table written to {path}")
    return 1 if any(row["error"] for row in rows) else 0


COMMANDS = {
    "check-graph": cmd_check_graph,
    "design": cmd_design,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
}


def main_logic(args: argparse.Namespace) -> int:
    """Dispatches one subcommand inside a debug-logging context."""
    with DebugLogger(args.debug) as logger:
        logger.section("Command", [f"{args.command} {args.path}"])
        return COMMANDS[args.command](args, logger)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="etc-stab",
        description="Event-triggered leader-follower stabilization: graph checks, gain design and simulation.",
        epilog="Exit codes: 0 success, 1 validation, 2 divergence, 3 solver failure.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--debug", help="Save debug output to the specified file ('-' for stderr).")
    common.add_argument("--profile", help="Profile execution and save results to file.")
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check-graph", parents=[common], help="iSCC cells, rank check, pinning verdict and M certificate.")
    check.add_argument("path", help="Scenario JSON file.")

    design = sub.add_parser("design", parents=[common], help="Riccati gain and trigger-parameter bounds as JSON.")
    design.add_argument("path", help="Scenario JSON file.")
    design.add_argument("--out", help="Write the JSON to this file instead of stdout.")

    modes = [m.value for m in TriggerMode]
    simulate = sub.add_parser("simulate", parents=[common], help="Simulate one run and write CSV/JSON/gnuplot artifacts.")
    simulate.add_argument("path", help="Scenario JSON file.")
    simulate.add_argument("--mode", choices=modes, help="Override the scenario's trigger mode.")
    simulate.add_argument("--out", help="Output directory (default: the scenario's output.dir).")

    sweep = sub.add_parser("sweep", parents=[common], help="One simulation per parameter value, compared in sweep.csv.")
    sweep.add_argument("path", help="Scenario JSON file.")
    sweep.add_argument("--param", required=True, help=f"One of: {', '.join(SWEEP_PARAMETERS)} (k is a scale of the certified bound).")
    sweep.add_argument("--values", required=True, help="Comma-separated values, e.g. 1,1000,1e6.")
    sweep.add_argument("--mode", choices=modes, help="Override the scenario's trigger mode.")
    sweep.add_argument("--out", help="Sweep output directory.")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parses arguments, runs the command and maps toolkit errors to exit codes."""
    args = build_parser().parse_args(argv)
    try:
        if args.profile:
            import cProfile
            import pstats
            profiler = cProfile.Profile()
            profiler.enable()
            try:
                return main_logic(args)
            finally:
                profiler.disable()
                with open(args.profile, 'w') as f:
                    stats = pstats.Stats(profiler, stream=f)
                    stats.sort_stats('cumulative').print_stats()
        return main_logic(args)
    except EtcStabError as e:
        if isinstance(e, DivergenceError):
            print("Status: diverged", file=sys.stderr)
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code


def cli() -> None:
    """The command-line interface entry point."""
    sys.exit(main())
