"""
sweep_worker.py - Multiprocessing Worker

This module defines the worker function used by the multiprocessing pool for
parameter sweeps. Each task is one independent simulation with its own output
directory; workers share nothing but the immutable scenario and design they
receive, so the sweep result does not depend on scheduling.
"""
import os
from typing import Any, Dict, Tuple

import numpy as np

from .analysis import summarize
from .control import GainDesign
from .errors import DivergenceError, EtcStabError, ParameterError
from .export import write_run
from .scenario import Scenario, TriggerMode, with_parameter
from .sim import run

SWEEP_PARAMETERS = ("k", "beta", "sigma", "theta", "mu", "h")


def run_directory(out_dir: str, param: str, value: float) -> str:
    return os.path.join(out_dir, f"{param}_{value:g}")


def simulate_for_sweep(task_args: Tuple[Scenario, GainDesign, str, float, str]) -> Dict[str, Any]:
    """
    Worker function executed by each process in the multiprocessing pool.

    Args:
        task_args (Tuple): everything one run needs:
            - scenario (Scenario): the resolved base scenario.
            - design (GainDesign): certified design for the scenario.
            - param (str): sweep parameter name, one of SWEEP_PARAMETERS.
            - value (float): value for that parameter ("k" is a scale of k_certified).
            - out_dir (str): sweep root; this run writes into its own subdirectory.

    Returns:
        Dict: one comparison-table row. Failed runs carry an "error" message
        instead of metrics.
    """
    base, design, param, value, out_dir = task_args
    row: Dict[str, Any] = {"value": value, "diverged": False, "error": ""}
    try:
        scenario = with_parameter(base, param, value, k_reference=design.bounds.k_certified)
        k_bound = design.bounds.k_certified if scenario.mode is TriggerMode.DETC else design.bounds.k_max
        if np.any(scenario.k >= k_bound):
            raise ParameterError(f"k_i = {scenario.k[0]:.6g} is not below {k_bound:.6g}")
        try:
            trajectory = run(scenario, design)
        except DivergenceError as e:
            trajectory = e.trajectory
            row["diverged"] = True
        report = summarize(trajectory, scenario, design)
        write_run(run_directory(out_dir, param, value), trajectory, report, {
            "param": param, "value": value, "analysis": report.to_dict(),
        })
    except EtcStabError as e:
        row["error"] = str(e)
        return row

    row.update({
        "trigger_counts": report.trigger_counts,
        "tilde_x_final": report.tilde_x_final,
        "min_inter_event_time": report.min_inter_event_time,
        "event_times": [trajectory.event_times(i).tolist() for i in range(trajectory.follower_count)],
    })
    return row
