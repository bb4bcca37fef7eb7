import json
import os
from dataclasses import replace

import numpy as np
import pytest

from etcstab.control import design_gain
from etcstab.errors import DivergenceError
from etcstab.scenario import TriggerMode, build_scenario, load_scenario_file
from etcstab.sim import run

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "scenarios")

# Agents 1-4 follow, 5-6 lead.
CANONICAL_X0 = np.array([[-2, 4.3], [7, -4.5], [-4, 3], [8, 2], [2, 2], [2, 1]])
A1 = np.array([[1.0, 1.0], [2.0, -3.0]])
A2 = np.array([[-1.0, 1.0], [2.0, -3.0]])
B = np.array([[-1.0], [0.0]])


def scenario_path(name: str) -> str:
    return os.path.join(SCENARIO_DIR, f"{name}.json")


def write_variant(tmp_path, name: str, **overrides) -> str:
    """Copy of a shipped scenario with section keys overridden, e.g. solver={"T": 2.0}."""
    with open(scenario_path(name), encoding="utf-8") as f:
        doc = json.load(f)
    for section, values in overrides.items():
        if isinstance(values, dict) and isinstance(doc.get(section), dict):
            doc[section].update(values)
        else:
            doc[section] = values
    path = os.path.join(str(tmp_path), f"{name}_variant.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
    return path


@pytest.fixture(scope="session")
def canonical_file():
    return load_scenario_file(scenario_path("paper_A2"))


@pytest.fixture(scope="session")
def canonical_net(canonical_file):
    return canonical_file.net


def _design_for(sf):
    return design_gain(
        sf.A, sf.B, sf.net,
        varsigma_R=sf.solver["varsigma_R"], delta=sf.solver["delta"],
        mu=np.broadcast_to(np.asarray(sf.trigger["mu"], dtype=float), (sf.net.follower_count,)),
    )


@pytest.fixture(scope="session")
def canonical_design(canonical_file):
    return _design_for(canonical_file)


@pytest.fixture(scope="session")
def divergent_file():
    return load_scenario_file(scenario_path("paper_A1"))


@pytest.fixture(scope="session")
def divergent_design(divergent_file):
    return _design_for(divergent_file)


@pytest.fixture(scope="session")
def setc_run(canonical_file, canonical_design):
    scenario = build_scenario(canonical_file, canonical_design, TriggerMode.SETC_INTEGRAL.value)
    return scenario, run(scenario, canonical_design)


@pytest.fixture(scope="session")
def detc_run(canonical_file, canonical_design):
    scenario = build_scenario(canonical_file, canonical_design, TriggerMode.DETC.value)
    return scenario, run(scenario, canonical_design)


@pytest.fixture(scope="session")
def divergent_run(divergent_file, divergent_design):
    scenario = build_scenario(divergent_file, divergent_design)
    with pytest.raises(DivergenceError) as info:
        run(scenario, divergent_design)
    return scenario, info.value


@pytest.fixture
def short_canonical(canonical_file, canonical_design):
    """Canonical dynamic-trigger scenario cut to two seconds at full output resolution."""
    scenario = build_scenario(canonical_file, canonical_design, TriggerMode.DETC.value)
    return replace(scenario, T=2.0, decimation=1)
