"""
analysis.py - Post-hoc Verification of a Trajectory

Turns a finished (or guard-stopped) run into the quantities the stability and
Zeno-freeness results talk about:

- the transformed state x~ (followers minus their chi-weighted leader mix),
- the distance of every follower to the leaders' convex hull,
- the Lyapunov functions V1 = x~^T (Psi kron R) x~ and V2 = sum phi_i,
- the dynamic-trigger envelope psi(t),
- lower bounds on inter-event times for both trigger families,
- empirical trigger counts and inter-event statistics.

Everything here is pure post-processing over immutable inputs.
"""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from scipy import optimize

from .control import GainDesign, chi_coefficients
from .debug_logger import NULL_LOGGER
from .errors import ConvergenceError, ParameterError, ValidationError
from .hull import hull_residual
from .scenario import Scenario, TriggerMode
from .sim import Trajectory, measurement_operator

ENVELOPE_BRANCH_TOL = 1e-9
H_SAFETY_FACTOR = 1.1
CONVERGENCE_RATIO = 0.05
ENVELOPE_FACTOR = 2.0
_BRACKET_EXPANSIONS = 200


def tilde_x(x: np.ndarray, chi: np.ndarray) -> np.ndarray:
    """
    Stacked follower deviations x~_i = x_i - sum_j chi_ij x_j.

    Args:
        x: (N, n) states of all agents, followers first.
        chi: (m, N - m) convex leader weights.

    Returns:
        (m * n,) vector, follower-major.
    """
    x = np.asarray(x, dtype=float)
    m = chi.shape[0]
    return (x[:m] - chi @ x[m:]).ravel()


def tilde_x_series(states: np.ndarray, chi: np.ndarray) -> np.ndarray:
    """tilde_x at every output time, shape (K, m * n)."""
    m = chi.shape[0]
    deviations = states[:, :m, :] - np.einsum("ij,kjl->kil", chi, states[:, m:, :])
    return deviations.reshape(states.shape[0], -1)


def hull_residual_series(states: np.ndarray, m: int) -> np.ndarray:
    """(K, m) distances of each follower to the leaders' hull at each output time."""
    return np.array([hull_residual(x[:m], x[m:]) for x in states])


def lyapunov_v1(xt: np.ndarray, Psi: np.ndarray, R: np.ndarray) -> np.ndarray:
    """
    V1 = x~^T (Psi kron R) x~.

    `xt` may be a single stacked vector or a (K, m * n) series.
    """
    Q = np.kron(np.atleast_2d(Psi), np.atleast_2d(R))
    xt = np.asarray(xt, dtype=float)
    if xt.ndim == 1:
        return float(xt @ Q @ xt)
    return np.einsum("ki,ij,kj->k", xt, Q, xt)


def lyapunov_v2(phi: np.ndarray) -> np.ndarray:
    """V2 = sum_i phi_i (per row for a series)."""
    return np.sum(np.asarray(phi, dtype=float), axis=-1)


def detc_envelope(k_w: float, sigma: float, m: int, beta: float, psi0: float, t: Any) -> Any:
    """
    Solution of psi' = -k_w psi + m beta e^{-sigma t}, psi(0) = psi0.

    The k_w = sigma branch is used when |k_w - sigma| < 1e-9.
    """
    t = np.asarray(t, dtype=float)
    decay = np.exp(-k_w * t)
    if abs(k_w - sigma) < ENVELOPE_BRANCH_TOL:
        value = decay * psi0 + m * beta * t * decay
    else:
        value = decay * psi0 + m * beta / (k_w - sigma) * (np.exp(-sigma * t) - decay)
    return float(value) if value.ndim == 0 else value


def _setc_balance(tau: float, h_i: float, norm_A: float, beta: float, sigma: float, t_k: float) -> float:
    growth = math.expm1(norm_A * tau) / norm_A if norm_A > 0 else tau
    return beta * math.exp(-sigma * (t_k + tau)) - (h_i * growth) ** 2


def setc_zeno_bound(h_i: float, norm_A: float, beta: float, sigma: float, t_k: float = 0.0) -> float:
    """
    Lower bound tau on the next inter-event time of the integral static rule.

    Unique positive root of beta e^{-sigma (t_k + tau)} = (h_i / |A|)^2 (e^{|A| tau} - 1)^2.
    The left side decreases and the right side increases from zero, so the
    root is bracketed by doubling and polished with Brent's method.

    Raises:
        ParameterError: h_i <= 0 (no bound) or |A| < 0.
        ConvergenceError: no sign change found while expanding the bracket.
    """
    if h_i <= 0:
        raise ParameterError("h_i must be positive for a Zeno bound")
    if norm_A < 0:
        raise ParameterError("|A| must be nonnegative")
    if beta <= 0:
        return 0.0
    hi = 1.0
    for _ in range(_BRACKET_EXPANSIONS):
        if _setc_balance(hi, h_i, norm_A, beta, sigma, t_k) < 0:
            break
        hi *= 2.0
    else:
        raise ConvergenceError("setc Zeno bound: bracket expansion failed")
    return float(optimize.brentq(
        _setc_balance, 0.0, hi, args=(h_i, norm_A, beta, sigma, t_k),
        xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500,
    ))


def detc_zeno_bound(sigma: float, Theta_i: float, theta_i: float, h_i: float) -> float:
    """tau_i = ln(1 + sigma Theta_i / (theta_i h_i^2)) / sigma."""
    if min(sigma, Theta_i, theta_i, h_i) <= 0:
        raise ParameterError("detc Zeno bound needs positive sigma, Theta, theta and h_i")
    return math.log1p(sigma * Theta_i / (theta_i * h_i ** 2)) / sigma


def estimate_h(trajectory: Trajectory, scenario: Scenario, design: GainDesign) -> np.ndarray:
    """
    Empirical bound h_i on Gamma_i = |-A P^_i + BK [sum_j a_ij (P^_i - P^_j) + sum_l b_il P^_i]|.

    The held samples P^ only change at events, so the supremum over the run is
    taken over the event instants. Leaders hold no sample. The result carries
    a 1.1 safety factor.

    Raises:
        ValidationError: the trajectory has no events.
    """
    if not trajectory.events or not any(trajectory.events):
        raise ValidationError("estimate_h needs a trajectory with logged events")
    M, _ = measurement_operator(scenario.net)
    A = scenario.A
    BK = scenario.B @ np.atleast_2d(design.K)
    m = trajectory.follower_count

    timeline: Dict[float, List[Any]] = {}
    for agent_events in trajectory.events:
        for event in agent_events:
            timeline.setdefault(event.time, []).append(event)
    held = np.array([agent_events[0].sample for agent_events in trajectory.events], dtype=float)

    gamma = np.zeros(m)
    for t in sorted(timeline):
        for event in timeline[t]:
            held[event.agent - 1] = event.sample
        rows = -held @ A.T + (M @ held) @ BK.T
        gamma = np.maximum(gamma, np.linalg.norm(rows, axis=1))
    return H_SAFETY_FACTOR * gamma


def zeno_bound_series(trajectory: Trajectory, scenario: Scenario, design: GainDesign,
                      h: np.ndarray) -> List[np.ndarray]:
    """Integral-rule bound tau_k^i at every logged event t_k^i; empty where h_i = 0."""
    norm_A = float(np.linalg.norm(scenario.A, 2))
    series = []
    for i, agent_events in enumerate(trajectory.events):
        if h[i] <= 0:
            series.append(np.array([]))
            continue
        series.append(np.array([
            setc_zeno_bound(h[i], norm_A, scenario.beta, scenario.sigma, e.time) for e in agent_events
        ]))
    return series


def leaders_vanish(A: np.ndarray) -> bool:
    """True when A is Hurwitz: leader states tend to zero and the hull shrinks to the origin."""
    return bool(np.all(np.linalg.eigvals(np.atleast_2d(A)).real < 0))


def _finite(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


@dataclass
class AnalysisReport:
    """Verification metrics of one run. Time series share the trajectory's output grid."""
    mode: str
    times: np.ndarray
    tilde_x_norms: np.ndarray
    hull_residuals: np.ndarray
    lyapunov_V1: np.ndarray
    trigger_counts: List[int]
    min_inter_event_times: List[float]
    h_estimates: List[float]
    diverged: bool
    end_time: float
    leaders_vanish: bool
    lyapunov_V2: Optional[np.ndarray] = None
    envelope: Optional[np.ndarray] = None
    envelope_params: Dict[str, float] = field(default_factory=dict)
    setc_tau_min: List[Optional[float]] = field(default_factory=list)
    detc_tau: List[Optional[float]] = field(default_factory=list)
    detc_tau_violations: List[int] = field(default_factory=list)
    phi_bound_margin: Optional[List[float]] = None

    @property
    def tilde_x_initial(self) -> float:
        return float(self.tilde_x_norms[0])

    @property
    def tilde_x_final(self) -> float:
        return float(self.tilde_x_norms[-1])

    @property
    def hull_residual_final(self) -> float:
        return float(np.max(self.hull_residuals[-1]))

    @property
    def min_inter_event_time(self) -> float:
        return min(self.min_inter_event_times, default=math.inf)

    @property
    def converged(self) -> bool:
        return not self.diverged and self.tilde_x_final <= CONVERGENCE_RATIO * self.tilde_x_initial

    @property
    def envelope_holds(self) -> Optional[bool]:
        if self.envelope is None:
            return None
        return bool(np.all(self.lyapunov_V1 <= ENVELOPE_FACTOR * self.envelope))

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready summary; time series are exported separately as CSV."""
        return {
            "mode": self.mode,
            "diverged": self.diverged,
            "end_time": self.end_time,
            "converged": self.converged,
            "tilde_x_initial": self.tilde_x_initial,
            "tilde_x_final": self.tilde_x_final,
            "tilde_x_max": float(np.max(self.tilde_x_norms)),
            "hull_residual_final": self.hull_residual_final,
            "hull_residual_final_per_agent": [float(v) for v in self.hull_residuals[-1]],
            "V1_initial": float(self.lyapunov_V1[0]),
            "V1_final": float(self.lyapunov_V1[-1]),
            "trigger_counts": list(self.trigger_counts),
            "total_triggers": int(sum(self.trigger_counts)),
            "min_inter_event_times": [_finite(v) for v in self.min_inter_event_times],
            "min_inter_event_time": _finite(self.min_inter_event_time),
            "h_estimates": list(self.h_estimates),
            "setc_tau_min": list(self.setc_tau_min),
            "detc_tau": list(self.detc_tau),
            "detc_tau_violations": list(self.detc_tau_violations),
            "envelope": dict(self.envelope_params),
            "envelope_holds": self.envelope_holds,
            "phi_bound_margin": self.phi_bound_margin,
            "leaders_vanish": self.leaders_vanish,
        }


def summarize(trajectory: Trajectory, scenario: Scenario, design: GainDesign,
              logger: Any = NULL_LOGGER) -> AnalysisReport:
    """
    Assembles the full report for one run.

    Zeno bounds are only computed for followers with a positive h_i
    estimate; others are reported as None (bound inapplicable).
    """
    m = scenario.net.follower_count
    chi = chi_coefficients(design.grounded, scenario.net)
    xt = tilde_x_series(trajectory.states, chi)
    V1 = lyapunov_v1(xt, design.grounded.Psi, design.R)
    min_gaps = []
    for i in range(m):
        gaps = trajectory.inter_event_times(i)
        min_gaps.append(float(np.min(gaps)) if gaps.size else math.inf)
    h = estimate_h(trajectory, scenario, design)

    report = AnalysisReport(
        mode=trajectory.mode.value,
        times=trajectory.times,
        tilde_x_norms=np.linalg.norm(xt, axis=1),
        hull_residuals=hull_residual_series(trajectory.states, m),
        lyapunov_V1=V1,
        trigger_counts=trajectory.trigger_counts,
        min_inter_event_times=min_gaps,
        h_estimates=[float(v) for v in h],
        diverged=trajectory.diverged,
        end_time=trajectory.end_time,
        leaders_vanish=leaders_vanish(scenario.A),
    )

    if trajectory.mode is TriggerMode.DETC:
        V2 = lyapunov_v2(trajectory.phi)
        psi0 = float(V1[0] + V2[0])
        report.lyapunov_V2 = V2
        report.envelope_params = {
            "k_w": design.k_w, "sigma": scenario.sigma, "m": m,
            "beta": scenario.beta, "V0": psi0,
        }
        report.envelope = detc_envelope(design.k_w, scenario.sigma, m, scenario.beta, psi0, trajectory.times)
        report.detc_tau = [
            detc_zeno_bound(scenario.sigma, scenario.Theta[i], scenario.theta[i], h[i]) if h[i] > 0 else None
            for i in range(m)
        ]
        report.detc_tau_violations = [
            i + 1 for i, tau in enumerate(report.detc_tau)
            if tau is not None and min_gaps[i] < tau
        ]
        if trajectory.phi_log_margin is not None:
            report.phi_bound_margin = [float(v) for v in trajectory.phi_log_margin]
        if report.detc_tau_violations:
            logger.log(f"dynamic Zeno bound exceeded by observed gaps for followers {report.detc_tau_violations}")
    else:
        series = zeno_bound_series(trajectory, scenario, design, h)
        report.setc_tau_min = [float(np.min(s)) if s.size else None for s in series]

    logger.section("Analysis", [
        f"|x~(0)| = {report.tilde_x_initial:.6g}, |x~(T)| = {report.tilde_x_final:.6g}",
        f"hull residual at end = {report.hull_residual_final:.3e}",
        f"trigger counts = {report.trigger_counts}, min gap = {report.min_inter_event_time:.6g}",
        f"h_i = {np.array2string(h, precision=4)}",
    ])
    return report


def event_log_offset(times_a: List[np.ndarray], times_b: List[np.ndarray]) -> float:
    """
    Largest Hausdorff distance between two runs' per-follower event-time sets.

    Zero when both runs trigger at identical instants.
    """
    worst = 0.0
    for a, b in zip(times_a, times_b):
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        if a.size == 0 or b.size == 0:
            if a.size != b.size:
                return math.inf
            continue
        gaps = np.abs(a[:, None] - b[None, :])
        worst = max(worst, float(gaps.min(axis=1).max()), float(gaps.min(axis=0).max()))
    return worst
