import os
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from etcstab.errors import ParameterError, ValidationError
from etcstab.scenario import (
    Scenario, TriggerMode, build_scenario, load_scenario_file, parse_scenario,
    save_scenario_file, with_parameter,
)

from conftest import CANONICAL_X0, scenario_path, write_variant


def test_load_canonical(canonical_file):
    sf = canonical_file
    assert sf.name == "paper_A2"
    assert_allclose(sf.A, [[-1, 1], [2, -3]])
    assert sf.B.shape == (2, 1)
    assert_allclose(sf.initial_states, CANONICAL_X0)
    assert sf.trigger["mode"] == "detc"
    assert sf.trigger["k"] == "auto:0.035"
    assert sf.solver["varsigma_R"] == "auto"
    assert sf.output["decimation"] == 10


def test_malformed_json_reports_line():
    text = '{\n  "name": "x",\n  "dynamics": {\n    "A": [[1, 2],\n  }\n}\n'
    with pytest.raises(ValidationError) as info:
        parse_scenario(text)
    assert info.value.line is not None
    assert str(info.value).startswith(f"line {info.value.line}:")


def test_missing_section():
    with pytest.raises(ValidationError):
        parse_scenario('{"dynamics": {"A": [[1]], "B": [[1]]}}')


def test_constraint_error_points_at_key(tmp_path):
    path = write_variant(tmp_path, "paper_A2", trigger={"Theta": 10.0})
    with open(path, encoding="utf-8") as f:
        expected = next(n for n, line in enumerate(f, start=1) if '"Theta"' in line)
    with pytest.raises(ParameterError) as info:
        load_scenario_file(path)
    assert info.value.line == expected


@pytest.mark.parametrize("section, values", [
    ("dynamics", {"A": [[1, 2, 3], [4, 5, 6]]}),
    ("dynamics", {"B": [[1]]}),
    ("initial_states", [[0, 0]]),
    ("trigger", {"mode": "periodic"}),
    ("trigger", {"sigma": 0}),
    ("trigger", {"k": "auto:1.5"}),
    ("trigger", {"mu": [1, 2]}),
    ("solver", {"h": 40.0}),
    ("solver", {"varsigma_R": 0}),
    ("output", {"decimation": 0}),
    ("network", {"edges": [[1, 7, 1]]}),
])
def test_invalid_values_rejected(tmp_path, section, values):
    path = write_variant(tmp_path, "paper_A2", **{section: values})
    with pytest.raises(ValidationError):
        load_scenario_file(path)


@pytest.mark.parametrize("vertices, followers", [(3, 4), (4, 4), (4, 0)])
def test_vertex_counts_checked_before_edges(tmp_path, vertices, followers):
    path = write_variant(tmp_path, "paper_A2", network={"vertices": vertices, "followers": followers})
    with pytest.raises(ValidationError) as info:
        load_scenario_file(path)
    assert info.value.line is not None


def test_unreadable_file(tmp_path):
    with pytest.raises(ValidationError):
        load_scenario_file(os.path.join(str(tmp_path), "missing.json"))


def test_round_trip(tmp_path, canonical_file):
    path = os.path.join(str(tmp_path), "copy.json")
    save_scenario_file(canonical_file, path)
    again = load_scenario_file(path)
    assert again.to_dict() == canonical_file.to_dict()
    assert_array_equal(again.A, canonical_file.A)
    assert_array_equal(again.net.adjacency, canonical_file.net.adjacency)
    assert_array_equal(again.net.coupling, canonical_file.net.coupling)
    assert again.trigger == canonical_file.trigger
    assert again.solver == canonical_file.solver


def test_build_resolves_policies(canonical_file, canonical_design):
    scenario = build_scenario(canonical_file, canonical_design)
    bounds = canonical_design.bounds
    assert scenario.mode is TriggerMode.DETC
    assert_allclose(scenario.k, 0.035 * bounds.k_certified)
    assert_allclose(scenario.xi, 0.1)
    assert scenario.steps == 30000
    static = build_scenario(canonical_file, canonical_design, "setc")
    assert_array_equal(static.k, scenario.k)


def test_build_rejects_large_xi(tmp_path, canonical_design):
    sf = load_scenario_file(write_variant(tmp_path, "paper_A2", trigger={"xi": 50.0}))
    with pytest.raises(ParameterError):
        build_scenario(sf, canonical_design)


def test_build_rejects_large_k(tmp_path, canonical_design):
    sf = load_scenario_file(write_variant(tmp_path, "paper_A2", trigger={"k": 0.99}))
    with pytest.raises(ParameterError):
        build_scenario(sf, canonical_design)


def test_scenario_validation(canonical_file, canonical_design):
    scenario = build_scenario(canonical_file, canonical_design)
    with pytest.raises(ParameterError):
        replace(scenario, h=0.0)
    with pytest.raises(ParameterError):
        replace(scenario, h=60.0)
    with pytest.raises(ParameterError):
        replace(scenario, phi0=np.full(4, 200.0))
    with pytest.raises(ParameterError):
        replace(scenario, sigma=0.0)


def test_with_parameter(canonical_file, canonical_design):
    scenario = build_scenario(canonical_file, canonical_design)
    scaled = with_parameter(scenario, "k", 0.5, k_reference=0.2)
    assert_allclose(scaled.k, 0.1)
    assert with_parameter(scenario, "beta", 0.0).beta == 0.0
    assert_allclose(with_parameter(scenario, "theta", 1e6).theta, 1e6)
    assert with_parameter(scenario, "h", 5e-4).steps == 60000
    with pytest.raises(ValidationError):
        with_parameter(scenario, "gamma", 1.0)


def test_scenario_broadcasts_scalars(canonical_net):
    scenario = Scenario(
        A=[[0.0]], B=[[1.0]], net=canonical_net, initial_states=np.zeros((6, 1)),
        mode="setc-inst", k=0.1, beta=1.0, sigma=1.0, mu=1.0, xi=0.1,
        theta=1.0, phi0=1.0, Theta=2.0, T=1.0, h=0.01,
    )
    assert scenario.k.shape == (4,)
    assert scenario.mode is TriggerMode.SETC_INSTANT
    assert scenario.steps == 100


def test_shipped_scenarios_load():
    for name in ("paper_A1", "paper_A2", "unpinned"):
        assert load_scenario_file(scenario_path(name)).name == name
