"""
export.py - Run Artifacts on Disk

Writes everything one simulation produces into a run directory:

    trajectory.csv   t, agent, x1..xn, u1..up (long format, one row per agent)
    events.csv       agent, event_index, time, mode
    phi.csv          t, phi_1..phi_m (dynamic trigger runs only)
    metrics.csv      t, tilde_x_norm, V1, hull_1..hull_m [, V2, psi]
    report.json      design and analysis summary
    plots.gp         gnuplot script turning the CSVs into PNG figures

Floats are written with their shortest round-trip representation, so
repeat runs of the same scenario produce byte-identical files.
"""
import csv
import json
import os
from typing import Any, Dict, List, Optional

import numpy as np

from .analysis import AnalysisReport
from .sim import Trajectory


def _csv_writer(f: Any) -> Any:
    return csv.writer(f, lineterminator="\n")


def write_trajectory_csv(path: str, trajectory: Trajectory) -> None:
    _, N, n = trajectory.states.shape
    p = trajectory.inputs.shape[2]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = _csv_writer(f)
        writer.writerow(["t", "agent"] + [f"x{c + 1}" for c in range(n)] + [f"u{c + 1}" for c in range(p)])
        for t, x, u in zip(trajectory.times, trajectory.states, trajectory.inputs):
            for agent in range(N):
                writer.writerow([repr(float(t)), agent + 1] + [repr(float(v)) for v in x[agent]]
                                + [repr(float(v)) for v in u[agent]])


def write_events_csv(path: str, trajectory: Trajectory) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = _csv_writer(f)
        writer.writerow(["agent", "event_index", "time", "mode"])
        for agent_events in trajectory.events:
            for event in agent_events:
                writer.writerow([event.agent, event.index, repr(event.time), event.mode])


def write_phi_csv(path: str, trajectory: Trajectory) -> None:
    if trajectory.phi is None:
        return
    m = trajectory.phi.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = _csv_writer(f)
        writer.writerow(["t"] + [f"phi_{i + 1}" for i in range(m)])
        for t, row in zip(trajectory.times, trajectory.phi):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def write_metrics_csv(path: str, report: AnalysisReport) -> None:
    m = report.hull_residuals.shape[1]
    dynamic = report.envelope is not None
    header = ["t", "tilde_x_norm", "V1"] + [f"hull_{i + 1}" for i in range(m)]
    if dynamic:
        header += ["V2", "psi"]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = _csv_writer(f)
        writer.writerow(header)
        for k, t in enumerate(report.times):
            row = [t, report.tilde_x_norms[k], report.lyapunov_V1[k]] + list(report.hull_residuals[k])
            if dynamic:
                row += [report.lyapunov_V2[k], report.envelope[k]]
            writer.writerow([repr(float(v)) for v in row])


def write_json(path: str, payload: Dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(to_jsonable(payload), indent=2, sort_keys=True, allow_nan=False))
        f.write("\n")


def plot_script(follower_count: int, vertex_count: int, state_dim: int, dynamic: bool) -> str:
    """Gnuplot script for state, error-norm, event and phi figures of one run directory."""
    N, m = vertex_count, follower_count
    lines = [
        "# gnuplot plots.gp  (run inside the output directory)",
        "set datafile separator ','",
        "set terminal pngcairo size 900,540",
        "set xlabel 't (s)'",
        "set grid",
    ]
    for c in range(state_dim):
        lines += [
            f"set output 'states_x{c + 1}.png'",
            f"set ylabel 'x_{{i{c + 1}}}'",
            f"plot for [i=1:{N}] 'trajectory.csv' skip 1 every {N}::(i-1) using 1:{3 + c} "
            f"with lines title (i <= {m} ? sprintf('follower %d', i) : sprintf('leader %d', i))",
        ]
    lines += [
        "set output 'tilde_x.png'",
        "set ylabel '|x~(t)|'",
        "set logscale y",
        "plot 'metrics.csv' skip 1 using 1:2 with lines title '|x~|'",
        "unset logscale y",
        "set output 'events.png'",
        "set ylabel 'follower'",
        f"set yrange [0.5:{m}.5]",
        "plot 'events.csv' skip 1 using 3:1 with points pt 7 ps 0.3 title 'trigger instants'",
        "set autoscale y",
    ]
    if dynamic:
        lines += [
            "set output 'phi.png'",
            "set ylabel 'phi_i'",
            f"plot for [i=1:{m}] 'phi.csv' skip 1 using 1:(column(i+1)) with lines title sprintf('phi_%d', i)",
            "set output 'envelope.png'",
            "set ylabel 'V1, psi'",
            "set logscale y",
            f"plot 'metrics.csv' skip 1 using 1:3 with lines title 'V1', "
            f"'' skip 1 using 1:{5 + m} with lines title 'psi'",
        ]
    return "\n".join(lines) + "\n"


def write_run(out_dir: str, trajectory: Trajectory, report: Optional[AnalysisReport],
              summary: Dict[str, Any]) -> List[str]:
    """
    Writes all artifacts of one run into `out_dir` (created if missing).

    Args:
        out_dir: Target directory.
        trajectory: The (possibly partial) trajectory.
        report: Analysis of the run; None skips metrics.csv.
        summary: JSON payload for report.json.

    Returns:
        Paths written.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def target(name: str) -> str:
        path = os.path.join(out_dir, name)
        written.append(path)
        return path

    write_trajectory_csv(target("trajectory.csv"), trajectory)
    write_events_csv(target("events.csv"), trajectory)
    if trajectory.phi is not None:
        write_phi_csv(target("phi.csv"), trajectory)
    if report is not None:
        write_metrics_csv(target("metrics.csv"), report)
    write_json(target("report.json"), summary)
    _, N, n = trajectory.states.shape
    with open(target("plots.gp"), "w", encoding="utf-8") as f:
        f.write(plot_script(trajectory.follower_count, N, n, trajectory.phi is not None))
    return written


def write_table(path: str, header: List[str], rows: List[List[Any]]) -> None:
    """Plain CSV table (sweep comparisons)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = _csv_writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def to_jsonable(value: Any) -> Any:
    """Recursively converts numpy values and non-finite floats for strict JSON."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value
