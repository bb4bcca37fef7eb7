"""
scenario.py - Scenario Files and Simulation Problems

Two layers of configuration live here:

1.  `ScenarioFile`: the typed contents of a scenario JSON document, with
    policies such as ``"k": "auto:0.9"`` still unresolved. Loading validates
    every constraint and reports the line of the offending key.
2.  `Scenario`: a complete simulation problem with concrete per-follower
    trigger parameters, produced by `build_scenario` once a gain design exists.

The on-disk format is documented in scenario_format.txt.
"""
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .errors import EtcStabError, ParameterError, ValidationError
from .graph import DirectedNetwork

DEFAULT_H = 1e-3
DEFAULT_T = 30.0
DEFAULT_DECIMATION = 10


class TriggerMode(str, Enum):
    SETC_INTEGRAL = "setc"
    SETC_INSTANT = "setc-inst"
    DETC = "detc"


@dataclass(frozen=True)
class Scenario:
    """
    A fully resolved simulation problem.

    Per-follower arrays have length m. DETC-only arrays (mu, xi, theta, phi0,
    Theta) are still present for static modes and simply unused there.
    """
    A: np.ndarray
    B: np.ndarray
    net: DirectedNetwork
    initial_states: np.ndarray
    mode: TriggerMode
    k: np.ndarray
    beta: float
    sigma: float
    mu: np.ndarray
    xi: np.ndarray
    theta: np.ndarray
    phi0: np.ndarray
    Theta: np.ndarray
    T: float = DEFAULT_T
    h: float = DEFAULT_H
    decimation: int = DEFAULT_DECIMATION

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        m, N = self.net.follower_count, self.net.vertex_count
        if A.shape != (n, n):
            raise ValidationError(f"A must be square, got {A.shape}")
        x0 = np.asarray(self.initial_states, dtype=float).reshape(N, n)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "initial_states", x0)
        object.__setattr__(self, "mode", TriggerMode(self.mode))
        for name in ("k", "mu", "xi", "theta", "phi0", "Theta"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (m,)).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

        if not (self.h > 0 and self.T > 0 and self.h <= self.T):
            raise ParameterError(f"need 0 < h <= T, got h = {self.h}, T = {self.T}")
        if self.decimation < 1:
            raise ParameterError("decimation must be at least 1")
        if np.any(self.k < 0):
            raise ParameterError("k_i must be nonnegative")
        if self.beta < 0:
            raise ParameterError("beta must be nonnegative")
        if not self.sigma > 0:
            raise ParameterError("sigma must be positive")
        if self.mode is TriggerMode.DETC:
            for name in ("mu", "xi", "theta", "phi0"):
                if np.any(getattr(self, name) <= 0):
                    raise ParameterError(f"{name} must be positive")
            if np.any(self.Theta <= self.phi0):
                raise ParameterError("Theta_i > phi_i(0) is required")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.h))


@dataclass
class ScenarioFile:
    """Typed contents of a scenario JSON document."""
    name: str
    A: np.ndarray
    B: np.ndarray
    net: DirectedNetwork
    initial_states: np.ndarray
    trigger: Dict[str, Any]
    solver: Dict[str, Any]
    output: Dict[str, Any]
    description: str = ""
    source_text: str = field(default="", repr=False, compare=False)

    def line_of(self, key: str) -> Optional[int]:
        return _line_of(self.source_text, key)

    def to_dict(self) -> Dict[str, Any]:
        net = self.net
        return {
            "name": self.name,
            "description": self.description,
            "dynamics": {"A": self.A.tolist(), "B": self.B.tolist()},
            "network": {
                "vertices": net.vertex_count,
                "followers": net.follower_count,
                "edges": [list(e) for e in net.edges()],
                "leader_couplings": [list(c) for c in net.couplings()],
            },
            "initial_states": self.initial_states.tolist(),
            "trigger": dict(self.trigger),
            "solver": dict(self.solver),
            "output": dict(self.output),
        }


def _line_of(text: str, key: str) -> Optional[int]:
    needle = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return None


def _fail(text: str, key: str, message: str, error: type = ValidationError) -> EtcStabError:
    return error(f"{key}: {message}", line=_line_of(text, key))


def _matrix(text: str, key: str, value: Any) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise _fail(text, key, "must be a nested array of numbers") from e
    if arr.ndim != 2 or not np.all(np.isfinite(arr)):
        raise _fail(text, key, "must be a finite 2-D array (rows of numbers)")
    return arr


def _number(text: str, key: str, value: Any, positive: bool = False, nonnegative: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise _fail(text, key, f"must be a finite number, got {value!r}")
    if positive and not value > 0:
        raise _fail(text, key, f"must be positive, got {value}", ParameterError)
    if nonnegative and value < 0:
        raise _fail(text, key, f"must be nonnegative, got {value}", ParameterError)
    return float(value)


def _per_follower(text: str, key: str, value: Any, m: int, positive: bool = True) -> Union[float, List[float]]:
    if isinstance(value, list):
        if len(value) != m:
            raise _fail(text, key, f"needs {m} entries, got {len(value)}")
        return [_number(text, key, v, positive=positive, nonnegative=not positive) for v in value]
    return _number(text, key, value, positive=positive, nonnegative=not positive)


def _policy(text: str, key: str, value: Any, m: int, prefix: str) -> Union[str, float, List[float]]:
    """Either a policy string ("auto" / "auto:c") or explicit per-follower values."""
    if isinstance(value, str):
        if value == "auto" and prefix == "auto":
            return value
        if prefix == "auto:" and value.startswith("auto:"):
            try:
                scale = float(value[5:])
            except ValueError as e:
                raise _fail(text, key, f"bad policy {value!r}") from e
            if not 0 < scale < 1:
                raise _fail(text, key, f"policy scale must lie in (0, 1), got {scale}", ParameterError)
            return value
        raise _fail(text, key, f"unknown policy {value!r}")
    return _per_follower(text, key, value, m, positive=(key == "xi"))


def _section(doc: Dict[str, Any], text: str, key: str, required: bool = True) -> Dict[str, Any]:
    section = doc.get(key, None if required else {})
    if not isinstance(section, dict):
        raise _fail(text, key, "missing or not an object")
    return section


def parse_scenario(text: str, name: str = "scenario") -> ScenarioFile:
    """
    Parses and validates scenario JSON text.

    Raises:
        ValidationError: malformed JSON (with the decoder's line) or any
            violated constraint (with the line of the offending key).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"malformed JSON: {e.msg}", line=e.lineno) from e
    if not isinstance(doc, dict):
        raise ValidationError("scenario must be a JSON object", line=1)

    dynamics = _section(doc, text, "dynamics")
    A = _matrix(text, "A", dynamics.get("A"))
    n = A.shape[0]
    if A.shape != (n, n):
        raise _fail(text, "A", f"must be square, got {A.shape[0]}x{A.shape[1]}")
    B = _matrix(text, "B", dynamics.get("B"))
    if B.shape[0] != n:
        raise _fail(text, "B", f"must have {n} rows, got {B.shape[0]}")

    network = _section(doc, text, "network")
    N, m = network.get("vertices"), network.get("followers")
    if not isinstance(N, int) or not isinstance(m, int) or isinstance(N, bool) or isinstance(m, bool):
        raise _fail(text, "vertices", "vertices and followers must be integers")
    if m < 1:
        raise _fail(text, "followers", f"at least one follower is required, got {m}")
    if N <= m:
        raise _fail(text, "vertices", f"must exceed followers (N > m), got N = {N}, m = {m}")
    try:
        edges = [(int(e[0]), int(e[1]), float(e[2])) for e in network.get("edges", [])]
    except (TypeError, ValueError, IndexError) as e:
        raise _fail(text, "edges", "entries must be [from, to, weight]") from e
    try:
        couplings = [(int(c[0]), int(c[1]), float(c[2])) for c in network.get("leader_couplings", [])]
    except (TypeError, ValueError, IndexError) as e:
        raise _fail(text, "leader_couplings", "entries must be [follower, leader, weight]") from e
    try:
        net = DirectedNetwork.from_edges(N, m, edges, couplings)
    except ValidationError as e:
        raise _fail(text, "network", str(e)) from e

    x0 = _matrix(text, "initial_states", doc.get("initial_states"))
    if x0.shape != (N, n):
        raise _fail(text, "initial_states", f"must be {N} rows of {n} values, got {x0.shape}")

    trig = _section(doc, text, "trigger")
    mode = trig.get("mode", TriggerMode.SETC_INTEGRAL.value)
    if mode not in {m_.value for m_ in TriggerMode}:
        raise _fail(text, "mode", f"unknown trigger mode {mode!r}")
    trigger: Dict[str, Any] = {"mode": mode}
    trigger["k"] = _policy(text, "k", trig.get("k", "auto:0.9"), m, "auto:")
    trigger["beta"] = _number(text, "beta", trig.get("beta", 1.0), nonnegative=True)
    trigger["sigma"] = _number(text, "sigma", trig.get("sigma", 0.5), positive=True)
    trigger["xi"] = _policy(text, "xi", trig.get("xi", "auto"), m, "auto")
    for key, default in (("mu", 1.0), ("theta", 1.0), ("phi0", 1.0), ("Theta", 2.0)):
        trigger[key] = _per_follower(text, key, trig.get(key, default), m)
    if np.any(np.broadcast_to(trigger["Theta"], (m,)) <= np.broadcast_to(trigger["phi0"], (m,))):
        raise _fail(text, "Theta", "Theta_i > phi0_i is required", ParameterError)

    solv = _section(doc, text, "solver", required=False)
    solver: Dict[str, Any] = {}
    varsigma_R = solv.get("varsigma_R", 1.0)
    solver["varsigma_R"] = varsigma_R if varsigma_R == "auto" else _number(text, "varsigma_R", varsigma_R, positive=True)
    solver["delta"] = _number(text, "delta", solv.get("delta", 0.05), positive=True)
    v1 = solv.get("v1", "auto")
    solver["v1"] = v1 if v1 == "auto" else _number(text, "v1", v1, positive=True)
    solver["h"] = _number(text, "h", solv.get("h", DEFAULT_H), positive=True)
    solver["T"] = _number(text, "T", solv.get("T", DEFAULT_T), positive=True)
    if solver["h"] > solver["T"]:
        raise _fail(text, "h", "step h must not exceed horizon T", ParameterError)

    out = _section(doc, text, "output", required=False)
    decimation = out.get("decimation", DEFAULT_DECIMATION)
    if not isinstance(decimation, int) or isinstance(decimation, bool) or decimation < 1:
        raise _fail(text, "decimation", "must be a positive integer")
    output = {"dir": str(out.get("dir", f"out/{doc.get('name', name)}")), "decimation": decimation}

    return ScenarioFile(
        name=str(doc.get("name", name)), A=A, B=B, net=net, initial_states=x0,
        trigger=trigger, solver=solver, output=output,
        description=str(doc.get("description", "")), source_text=text,
    )


def load_scenario_file(path: str) -> ScenarioFile:
    """Reads and validates a scenario file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ValidationError(f"cannot read scenario '{path}': {e}") from e
    stem = path.replace("\\", "/").rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return parse_scenario(text, name=stem)


def save_scenario_file(sf: ScenarioFile, path: str) -> None:
    """Writes a scenario file that reloads to an equal `ScenarioFile`."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(sf.to_dict(), indent=2))
        f.write("\n")


def resolve_k(policy: Union[str, float, Sequence[float]], bound: float, m: int) -> np.ndarray:
    """"auto:c" gives c * bound for every follower; explicit values pass through."""
    if isinstance(policy, str):
        return np.full(m, float(policy[5:]) * bound)
    return np.broadcast_to(np.asarray(policy, dtype=float), (m,)).copy()


def build_scenario(sf: ScenarioFile, design: Any, mode: Optional[str] = None) -> Scenario:
    """
    Resolves policies against a certified design.

    k_i must lie in [0, k_max) for static modes and in [0, k_certified) for
    the dynamic mode; "auto:c" uses c * k_certified so every mode sees the
    same k_i. xi "auto" means xi_max; explicit xi_i must lie in (0, xi_max].

    Raises:
        ParameterError: a resolved parameter violates its bound.
    """
    trig = sf.trigger
    m = sf.net.follower_count
    chosen = TriggerMode(mode if mode is not None else trig["mode"])
    bounds = design.bounds
    k = resolve_k(trig["k"], bounds.k_certified, m)
    k_bound = bounds.k_certified if chosen is TriggerMode.DETC else bounds.k_max
    if np.any(k >= k_bound):
        raise _fail(sf.source_text, "k", f"k_i must be below {k_bound:.6g}, got max {np.max(k):.6g}", ParameterError)

    xi = np.full(m, bounds.xi_max) if trig["xi"] == "auto" else np.broadcast_to(np.asarray(trig["xi"], dtype=float), (m,))
    if chosen is TriggerMode.DETC and np.any(xi > bounds.xi_max * (1 + 1e-12)):
        raise _fail(sf.source_text, "xi", f"xi_i must not exceed xi_max = {bounds.xi_max:.6g}", ParameterError)

    return Scenario(
        A=sf.A, B=sf.B, net=sf.net, initial_states=sf.initial_states, mode=chosen,
        k=k, beta=trig["beta"], sigma=trig["sigma"], mu=trig["mu"], xi=xi,
        theta=trig["theta"], phi0=trig["phi0"], Theta=trig["Theta"],
        T=sf.solver["T"], h=sf.solver["h"], decimation=sf.output["decimation"],
    )


def with_parameter(scenario: Scenario, name: str, value: float, k_reference: float = 1.0) -> Scenario:
    """
    Copy of `scenario` with one sweep parameter changed.

    "k" sets every k_i to value * k_reference (pass k_certified to sweep the
    "auto:c" scale); the others replace the value for every follower.
    """
    if name == "k":
        return replace(scenario, k=np.full(scenario.net.follower_count, float(value) * k_reference))
    if name in ("beta", "sigma", "h"):
        return replace(scenario, **{name: float(value)})
    if name in ("theta", "mu"):
        return replace(scenario, **{name: np.full(scenario.net.follower_count, float(value))})
    raise ValidationError(f"unknown sweep parameter {name!r}; expected one of k, beta, sigma, theta, mu, h")
