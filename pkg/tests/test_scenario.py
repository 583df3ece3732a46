import copy
import json
import math

import pytest

from optomech import scenario as sc_mod
from optomech.errors import ConfigError
from optomech.scenario import (
    SweepRun,
    TimeEvolutionRun,
    apply_override,
    parse_scenario_dict,
    scenario_to_dict,
)


def minimal_cfg(**over):
    cfg = {
        "name": "tiny",
        "space": {"cavity1": 3, "mo": 3, "cavity2": 3},
        "params": {"g": [1.0, 1.0], "lambda": 0.01},
        "initial_state": {"cavity1": {"kind": "fock", "n": 1}},
        "hamiltonian": ["effective", "drive"],
        "run": {"mode": "time_evolution", "t0": 0.0, "t1": 1.0, "samples": 5},
        "measurements": [],
    }
    cfg.update(over)
    return cfg


def test_minimal_config_resolves_defaults():
    sc = parse_scenario_dict(minimal_cfg())
    assert sc.space.dims == (3, 3, 3, 3, 3)
    assert sc.params.tripartite(0) == pytest.approx(0.01)
    assert sc.recipe.preps[0].kind == "ground"  # unlisted subsystems default
    assert sc.tail_tol == pytest.approx(1e-4)
    assert not sc.dissipation


def test_round_trip_identity():
    sc = parse_scenario_dict(minimal_cfg())
    again = parse_scenario_dict(scenario_to_dict(sc))
    assert again == sc
    assert scenario_to_dict(again) == scenario_to_dict(sc)


def test_round_trip_steady_and_sweep():
    cfg = minimal_cfg(
        dissipation=True,
        params={"g": [1.0, 1.0], "lambda": 0.01, "kappa_a": [0.1, 0.1], "q": 0.01},
        hamiltonian=["effective", "squeeze_pump_mo"],
        run={"mode": "steady_state", "criteria": {"window": 5.0, "max_time": 50.0}},
    )
    sc = parse_scenario_dict(cfg)
    assert parse_scenario_dict(scenario_to_dict(sc)) == sc

    cfg = minimal_cfg(run={
        "mode": "sweep",
        "parameters": ["params.Omega1", "params.Omega2"],
        "values": [[[1, 1], [1, 1]], [[2, 2], [2, 2]]],
        "inner": {"mode": "time_evolution", "t1": 1.0, "samples": 2},
    })
    sc = parse_scenario_dict(cfg)
    assert isinstance(sc.run, SweepRun)
    assert parse_scenario_dict(scenario_to_dict(sc)) == sc


def test_unknown_keys_rejected_with_names():
    with pytest.raises(ConfigError, match="bogus"):
        parse_scenario_dict(minimal_cfg(bogus=1))
    with pytest.raises(ConfigError, match="params"):
        parse_scenario_dict(minimal_cfg(params={"g": [1, 1], "weird": 2}))
    with pytest.raises(ConfigError, match="run"):
        parse_scenario_dict(minimal_cfg(run={"mode": "time_evolution", "nope": 1}))


def test_effective_requires_blue_detuning():
    cfg = minimal_cfg()
    cfg["params"]["omega_atom"] = [[0.0, 5.0, 15.0], [0.0, 5.0, 14.0]]
    with pytest.raises(ConfigError, match="blue-detuned"):
        parse_scenario_dict(cfg)


def test_negative_rate_is_config_error_with_path():
    cfg = minimal_cfg()
    cfg["params"]["kappa_b"] = -1.0
    with pytest.raises(ConfigError, match="params"):
        parse_scenario_dict(cfg)


def test_mixed_initial_state_needs_density_or_approximation():
    cfg = minimal_cfg()
    cfg["initial_state"] = {"cavity1": {"kind": "thermal", "nbar": 0.5}}
    with pytest.raises(ConfigError, match="vacuum_approximation"):
        parse_scenario_dict(cfg)
    cfg["run"]["vacuum_approximation"] = True
    parse_scenario_dict(cfg)  # now fine
    cfg["run"]["vacuum_approximation"] = False
    cfg["dissipation"] = True
    cfg["params"]["kappa_a"] = [0.1, 0.1]
    parse_scenario_dict(cfg)  # density path takes mixed states


def test_measurement_validation():
    cfg = minimal_cfg(measurements=[{"type": "wrong"}])
    with pytest.raises(ConfigError, match="measurement"):
        parse_scenario_dict(cfg)
    cfg = minimal_cfg(measurements=[{"type": "fidelity", "mode": "cavity2"}])
    with pytest.raises(ConfigError, match="reference"):
        parse_scenario_dict(cfg)
    cfg = minimal_cfg(measurements=[{"type": "negativity", "pair": ["cavity1", "nope"]}])
    with pytest.raises(ConfigError, match="pair"):
        parse_scenario_dict(cfg)
    cfg = minimal_cfg(measurements=[
        {"type": "quadrature", "mode": "mo"},
        {"type": "quadrature", "mode": "mo", "which": "Y"},
    ])
    sc = parse_scenario_dict(cfg)
    # phase defaults to the per-mode parameter value
    assert sc.measurements[0].phase == pytest.approx(-math.pi / 4)
    assert sc.measurements[0].name == "qf_x_mo"
    assert sc.measurements[1].name == "qf_y_mo"


def test_duplicate_measurement_names_rejected():
    cfg = minimal_cfg(measurements=[
        {"type": "quadrature", "mode": "mo", "name": "a"},
        {"type": "quadrature", "mode": "cavity1", "name": "a"},
    ])
    with pytest.raises(ConfigError, match="duplicate"):
        parse_scenario_dict(cfg)


def test_sweep_validation():
    cfg = minimal_cfg(run={
        "mode": "sweep", "parameters": ["params.q"],
        "values": [0.1, float("inf")],
        "inner": {"mode": "time_evolution", "t1": 1.0, "samples": 2},
    })
    with pytest.raises(ConfigError, match="finite"):
        parse_scenario_dict(cfg)
    cfg["run"]["values"] = [0.1]
    parse_scenario_dict(cfg)  # degenerate single-value sweep is a plain run
    cfg["run"]["inner"] = {"mode": "sweep", "parameters": ["params.q"], "values": [1],
                           "inner": {"mode": "time_evolution"}}
    with pytest.raises(ConfigError, match="nested"):
        parse_scenario_dict(cfg)


def test_apply_override_paths():
    cfg = minimal_cfg()
    apply_override(cfg, "params.Omega1", [3.0, 3.0])
    apply_override(cfg, "space.mo", 4)
    sc = parse_scenario_dict(cfg)
    assert sc.params.Omega1 == (3.0, 3.0)
    assert sc.space.dims[3] == 4


def test_oscillatory_and_effective_conflict():
    from optomech import runner

    cfg = minimal_cfg(hamiltonian=["effective", "oscillatory"])
    sc = parse_scenario_dict(cfg)
    with pytest.raises(ConfigError, match="oscillatory"):
        runner.run(sc)


def test_shipped_library_parses():
    from optomech import runner

    names = runner.shipped_scenario_names()
    assert {"fig2a", "fig2c", "fig2f", "fig3_sweep", "fig4_entanglement",
            "fig5a", "fig5b", "fig5c", "fig6a", "fig6b", "fig6c",
            "table1_matrix", "ladder_trace", "rwa_validation"} <= set(names)
    for name in names:
        sc = runner.load_shipped(name)
        assert parse_scenario_dict(scenario_to_dict(sc)) == sc
