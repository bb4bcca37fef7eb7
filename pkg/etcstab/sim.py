"""
sim.py - Event-Triggered Closed-Loop Simulator

Integrates all N agents (followers under the sampled protocol, leaders free)
together with the dynamic trigger variables on a fixed RK4 grid. Each step:

1.  integrate states and phi over [t, t + h] with the inputs held from t,
2.  evaluate every follower's trigger condition at t + h,
3.  resample all fired followers at once.

Event times therefore have resolution h. Every follower samples at t = 0.
"""
import math
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Tuple, Union

import numpy as np

from .debug_logger import NULL_LOGGER
from .errors import DivergenceError, PositivityError, ValidationError
from .graph import DirectedNetwork, laplacian
from .integrator import rk4_step
from .scenario import Scenario, TriggerMode

DIVERGENCE_GUARD = 1e12


@dataclass(frozen=True)
class Event:
    """One trigger of follower `agent` (1-based); `index` 0 is the initial sample at t = 0."""
    agent: int
    index: int
    time: float
    mode: str
    sample: Tuple[float, ...]


@dataclass
class SimState:
    """
    Instantaneous simulator state.

    Attributes:
        t: Current time.
        x: N x n agent states.
        net: The network the measurements are taken on.
        samples: m x n, last sampled measurement P_i(t_k^i) per follower.
        last_trigger: t_k^i per follower.
        integral_error: running integral of |e_i|^2 since t_k^i.
        integral_threshold: running integral of k_i |P_i(t_k^i)|^2 + beta e^{-sigma s}.
        phi: dynamic trigger variables (unused by static modes).
    """
    t: float
    x: np.ndarray
    net: DirectedNetwork
    samples: np.ndarray
    last_trigger: np.ndarray
    integral_error: np.ndarray
    integral_threshold: np.ndarray
    phi: np.ndarray

    @classmethod
    def initial(cls, net: DirectedNetwork, x0: np.ndarray, phi0: Union[float, np.ndarray] = 1.0) -> 'SimState':
        """State at t = 0 with every follower freshly sampled."""
        x = np.array(x0, dtype=float)
        m = net.follower_count
        return cls(
            t=0.0, x=x, net=net, samples=measurements(net, x),
            last_trigger=np.zeros(m), integral_error=np.zeros(m),
            integral_threshold=np.zeros(m),
            phi=np.broadcast_to(np.asarray(phi0, dtype=float), (m,)).copy(),
        )

    def error(self) -> np.ndarray:
        """e_i = P_i(t_k^i) - P_i(t) for every follower, m x n."""
        return self.samples - measurements(self.net, self.x)


@dataclass
class Trajectory:
    """
    Output of one run, sampled every `decimation` steps plus the last step.

    Attributes:
        times: (K,) output grid.
        states: (K, N, n) agent states.
        inputs: (K, N, p) inputs applied from each output time on.
        phi: (K, m) dynamic trigger variables, None for static modes.
        events: per follower, the ordered event list (first one at t = 0).
        mode: trigger mode of the run.
        h: integration step.
        end_time: last integrated time (below T after divergence).
        diverged: True when the divergence guard stopped the run.
        phi_log_margin: per follower, min over steps of
            ln(phi_i(t) / phi_i(0)) + (mu_i + xi_i / theta_i) t; nonnegative
            exactly when the exponential lower bound on phi_i holds.
    """
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    phi: Optional[np.ndarray]
    events: Tuple[Tuple[Event, ...], ...]
    mode: TriggerMode
    h: float
    end_time: float
    diverged: bool = False
    phi_log_margin: Optional[np.ndarray] = None

    @property
    def follower_count(self) -> int:
        return len(self.events)

    @property
    def trigger_counts(self) -> List[int]:
        """Events per follower, not counting the initial sample."""
        return [len(ev) - 1 for ev in self.events]

    def event_times(self, i: int) -> np.ndarray:
        return np.array([e.time for e in self.events[i]])

    def inter_event_times(self, i: int) -> np.ndarray:
        return np.diff(self.event_times(i))

    def min_inter_event_time(self) -> float:
        """Smallest gap between consecutive events of any follower; inf without triggers."""
        gaps = [self.inter_event_times(i) for i in range(self.follower_count)]
        gaps = [g for g in gaps if g.size]
        return float(min(np.min(g) for g in gaps)) if gaps else math.inf

    def sample_at(self, i: int, t: float) -> np.ndarray:
        """The sample P_i(t_k^i) held at time t."""
        held = self.events[i][0]
        for event in self.events[i]:
            if event.time > t:
                break
            held = event
        return np.array(held.sample)


def measurement_operator(net: DirectedNetwork) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns (M, C) with P_F = M x_F - C x_L.

    M is the follower Laplacian plus the leader in-weights on the diagonal and
    C is the follower-leader coupling.
    """
    coupling = np.array(net.coupling)
    return laplacian(net) + np.diag(coupling.sum(axis=1)), coupling


def measurements(net: DirectedNetwork, x: np.ndarray) -> np.ndarray:
    """Disagreement vectors P_i for all followers, m x n."""
    M, C = measurement_operator(net)
    m = net.follower_count
    return M @ x[:m] - C @ x[m:]


def measurement(state: SimState, i: int) -> np.ndarray:
    """P_i(t) = sum_j a_ij (x_i - x_j) + sum_j b_ij (x_i - x_j) for follower i (0-based)."""
    net = state.net
    if not 0 <= i < net.follower_count:
        raise ValidationError(f"agent {i} is not a follower")
    m = net.follower_count
    x = state.x
    return (
        np.asarray(net.adjacency[i]) @ (x[i] - x[:m])
        + np.asarray(net.coupling[i]) @ (x[i] - x[m:])
    )


def control_input(state: SimState, i: int, K: np.ndarray) -> np.ndarray:
    """u_i = -K P_i(t_k^i) for followers and 0 for leaders."""
    K = np.atleast_2d(K)
    if i >= state.net.follower_count:
        return np.zeros(K.shape[0])
    return -K @ state.samples[i]


def accumulate(state: SimState, h: float, e2_start: np.ndarray, e2_end: np.ndarray, k: np.ndarray, beta: float, sigma: float) -> None:
    """Adds one trapezoidal step over [state.t - h, state.t] to both SETC integrals."""
    s2 = np.sum(state.samples ** 2, axis=1)
    t0, t1 = state.t - h, state.t
    state.integral_error += h / 2 * (e2_start + e2_end)
    state.integral_threshold += h / 2 * (2 * k * s2 + beta * (math.exp(-sigma * t0) + math.exp(-sigma * t1)))


def setc_integral_trigger(state: SimState, i: int) -> bool:
    """Integral static rule: fires once the error integral exceeds the threshold integral."""
    return bool(state.integral_error[i] - state.integral_threshold[i] > 0)


def trigger_slack(samples: np.ndarray, P: np.ndarray, k: Any, beta: float, sigma: float, t: float) -> Any:
    """
    k_i |P_i(t_k^i)|^2 + beta e^{-sigma t} - |e_i(t)|^2.

    Works on one follower (vectors) or on all of them (m x n rows). Negative
    values mean the error has outgrown the static threshold.
    """
    e = samples - P
    return k * np.sum(samples ** 2, axis=-1) + beta * math.exp(-sigma * t) - np.sum(e ** 2, axis=-1)


def setc_instant_trigger(state: SimState, i: int, k_i: float, beta: float, sigma: float) -> bool:
    """Instantaneous static rule |e_i|^2 > k_i |P_i(t_k^i)|^2 + beta e^{-sigma t}."""
    return bool(trigger_slack(state.samples[i], measurement(state, i), k_i, beta, sigma, state.t) < 0)


def detc_trigger(state: SimState, i: int, k_i: float, beta: float, sigma: float, theta_i: float) -> bool:
    """
    Dynamic rule: fires at the first grid point where
    phi_i < theta_i (|e_i|^2 - k_i |P_i(t_k^i)|^2 - beta e^{-sigma t}).
    """
    slack = trigger_slack(state.samples[i], measurement(state, i), k_i, beta, sigma, state.t)
    return bool(state.phi[i] < -theta_i * slack)


def phi_rate(phi: np.ndarray, mu: np.ndarray, xi: np.ndarray, slack: np.ndarray) -> np.ndarray:
    """phi' = -mu phi + xi slack, with slack from `trigger_slack`."""
    return -mu * phi + xi * slack


def phi_step(
    phi: np.ndarray,
    t: float,
    h: float,
    mu: np.ndarray,
    xi: np.ndarray,
    forcing: Callable[[float], np.ndarray],
) -> np.ndarray:
    """
    One RK4 step of phi' = -mu phi + xi forcing(t).

    `forcing(t)` is the trigger slack at time t. The simulator integrates the
    same `phi_rate` jointly with the states.

    Raises:
        PositivityError: some phi_i is not positive after the step.
    """
    out = rk4_step(lambda s, p: phi_rate(p, mu, xi, forcing(s)), t, np.asarray(phi, dtype=float), h)
    _check_positive(out, t + h)
    return out


def _check_positive(phi: np.ndarray, t: float) -> None:
    bad = np.flatnonzero(~(phi > 0))
    if bad.size:
        i = int(bad[0])
        raise PositivityError(
            f"phi_{i + 1} = {phi[i]:.3e} at t = {t:.6g}; reduce the step h"
        )


class _ClosedLoop:
    """Right-hand side of the joint state/phi system with inputs and samples frozen for one step."""

    def __init__(self, scenario: Scenario, K: np.ndarray):
        net = scenario.net
        self.N, self.m = net.vertex_count, net.follower_count
        self.n = scenario.A.shape[0]
        self.At = scenario.A.T
        self.Bt = scenario.B.T
        self.M, self.C = measurement_operator(net)
        self.Kt = np.atleast_2d(K).T
        self.dynamic = scenario.mode is TriggerMode.DETC
        self.k, self.beta, self.sigma = scenario.k, scenario.beta, scenario.sigma
        self.mu, self.xi = scenario.mu, scenario.xi
        self.samples = np.zeros((self.m, self.n))
        self.inputs = np.zeros((self.N, self.Bt.shape[0]))

    def hold(self, samples: np.ndarray) -> None:
        self.samples = samples.copy()
        self.inputs[:self.m] = -samples @ self.Kt

    def measure(self, x: np.ndarray) -> np.ndarray:
        return self.M @ x[:self.m] - self.C @ x[self.m:]

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        split = self.N * self.n
        x = y[:split].reshape(self.N, self.n)
        dx = x @ self.At + self.inputs @ self.Bt
        if not self.dynamic:
            return dx.ravel()
        slack = trigger_slack(self.samples, self.measure(x), self.k, self.beta, self.sigma, t)
        dphi = phi_rate(y[split:], self.mu, self.xi, slack)
        return np.concatenate([dx.ravel(), dphi])


class _Recorder:
    def __init__(self, dynamic: bool):
        self.times: List[float] = []
        self.states: List[np.ndarray] = []
        self.inputs: List[np.ndarray] = []
        self.phi: Optional[List[np.ndarray]] = [] if dynamic else None

    def add(self, t: float, x: np.ndarray, u: np.ndarray, phi: np.ndarray) -> None:
        self.times.append(t)
        self.states.append(x.copy())
        self.inputs.append(u.copy())
        if self.phi is not None:
            self.phi.append(phi.copy())

    def build(self, events: List[List[Event]], scenario: Scenario, end_time: float,
              diverged: bool, margin: Optional[np.ndarray]) -> Trajectory:
        return Trajectory(
            times=np.array(self.times),
            states=np.array(self.states),
            inputs=np.array(self.inputs),
            phi=np.array(self.phi) if self.phi is not None else None,
            events=tuple(tuple(ev) for ev in events),
            mode=scenario.mode,
            h=scenario.h,
            end_time=end_time,
            diverged=diverged,
            phi_log_margin=margin,
        )


def run(scenario: Scenario, design: Any, logger: Any = NULL_LOGGER) -> Trajectory:
    """
    Simulates the closed loop from t = 0 to T.

    Args:
        scenario: Validated simulation problem.
        design: Certified `GainDesign` providing K.
        logger: Debug logger.

    Returns:
        The decimated trajectory and the complete event log.

    Raises:
        DivergenceError: some state exceeded the guard; carries the partial trajectory.
        PositivityError: a dynamic trigger variable stopped being positive.
    """
    net = scenario.net
    N, m = net.vertex_count, net.follower_count
    n = scenario.A.shape[0]
    h, steps, mode = scenario.h, scenario.steps, scenario.mode
    K = np.atleast_2d(design.K)
    if K.shape != (scenario.B.shape[1], n):
        raise ValidationError(f"gain K has shape {K.shape}, expected {(scenario.B.shape[1], n)}")
    k, beta, sigma, theta = scenario.k, scenario.beta, scenario.sigma, scenario.theta
    dynamic = mode is TriggerMode.DETC

    loop = _ClosedLoop(scenario, K)
    state = SimState.initial(net, scenario.initial_states, scenario.phi0)
    loop.hold(state.samples)
    events: List[List[Event]] = [
        [Event(i + 1, 0, 0.0, mode.value, tuple(float(v) for v in state.samples[i]))] for i in range(m)
    ]
    decay = scenario.mu + scenario.xi / scenario.theta
    margin = np.zeros(m) if dynamic else None
    recorder = _Recorder(dynamic)
    recorder.add(0.0, state.x, loop.inputs, state.phi)

    logger.section("Simulation", [
        f"mode = {mode.value}, h = {h:g}, T = {scenario.T:g}, steps = {steps}",
        f"k = {np.array2string(k, precision=5)}, beta = {beta:g}, sigma = {sigma:g}",
    ] + ([f"mu = {scenario.mu}, xi = {scenario.xi}, theta = {theta}, phi0 = {scenario.phi0}"] if dynamic else []))

    split = N * n
    y = np.concatenate([state.x.ravel(), state.phi]) if dynamic else state.x.ravel().copy()
    e2_prev = np.zeros(m)
    for s in range(steps):
        t_next = (s + 1) * h
        y = rk4_step(loop, s * h, y, h)
        x = y[:split].reshape(N, n)
        state.t, state.x = t_next, x

        peak = np.max(np.abs(x)) if np.all(np.isfinite(x)) else math.inf
        if peak > DIVERGENCE_GUARD:
            logger.log(f"divergence guard hit at t = {t_next:.6g} (max |x| = {peak:.3e})")
            if math.isfinite(peak):
                recorder.add(t_next, x, loop.inputs, y[split:])
            trajectory = recorder.build(events, scenario, t_next, True, margin)
            raise DivergenceError(
                f"diverged: max |x| = {peak:.3e} exceeds {DIVERGENCE_GUARD:.0e} at t = {t_next:.6g}",
                trajectory,
            )

        if mode is TriggerMode.SETC_INTEGRAL:
            e2 = np.sum((state.samples - loop.measure(x)) ** 2, axis=1)
            accumulate(state, h, e2_prev, e2, k, beta, sigma)
            fired = [i for i in range(m) if setc_integral_trigger(state, i)]
            e2[fired] = 0.0
            e2_prev = e2
        elif mode is TriggerMode.SETC_INSTANT:
            fired = [i for i in range(m) if setc_instant_trigger(state, i, k[i], beta, sigma)]
        else:
            state.phi = y[split:]
            _check_positive(state.phi, t_next)
            margin = np.minimum(margin, np.log(state.phi / scenario.phi0) + decay * t_next)
            fired = [i for i in range(m) if detc_trigger(state, i, k[i], beta, sigma, theta[i])]

        # all rules are evaluated before any follower resamples
        for i in fired:
            sample = measurement(state, i)
            state.samples[i] = sample
            state.last_trigger[i] = t_next
            state.integral_error[i] = state.integral_threshold[i] = 0.0
            events[i].append(Event(i + 1, len(events[i]), t_next, mode.value, tuple(float(v) for v in sample)))
        if fired:
            loop.hold(state.samples)

        if (s + 1) % scenario.decimation == 0 or s + 1 == steps:
            recorder.add(t_next, x, loop.inputs, state.phi)

    trajectory = recorder.build(events, scenario, steps * h, False, margin)
    logger.log(f"{mode.value}: trigger counts {trajectory.trigger_counts}, "
               f"min inter-event time {trajectory.min_inter_event_time():.6g}")
    return trajectory
