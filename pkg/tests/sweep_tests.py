"""
Tests of parameter sweeps: the tail tracking error grows with each input of the bound
"""
import numpy as np
import pytest

from .context import scenario, sweep
from .test_constants import ISS_SCENARIO


@pytest.fixture
def iss():
    return scenario.scenario_from_text(ISS_SCENARIO)


@pytest.mark.parametrize(
    "param, values",
    [
        ("disturbance.amplitude", [0.0, 0.1, 0.2, 0.5]),
        ("cost.x_ref.speed", [0.0, 0.05, 0.1, 0.2]),
        ("perception.noise", [0.0, 0.05, 0.1, 0.2]),
    ],
)
def test_tail_error_grows_with_forcing(iss, param, values):
    result = sweep.iss_sweep(iss, param, values)
    assert result.all_completed
    assert result.monotone, result.tail_errors
    assert result.spearman >= 0.9
    assert result.passes()
    assert result.values == values
    # the unforced point tracks exactly
    assert result.points[0].tail_error <= 1e-8


def test_sweep_records_bound_inputs(iss):
    result = sweep.run_sweep(iss, "perception.noise", [0.0, 0.1])
    assert [point.max_perception_error for point in result.points] == pytest.approx([0.0, 0.1])
    body = result.to_dict()
    assert body["param"] == "perception.noise"
    assert [point["status"] for point in body["points"]] == ["Completed", "Completed"]


def test_worker_processes_match_serial_run(iss):
    serial = sweep.run_sweep(iss, "perception.noise", [0.0, 0.05, 0.1])
    parallel = sweep.run_sweep(iss, "perception.noise", [0.0, 0.05, 0.1], workers=2)
    assert parallel.values == serial.values
    assert np.array_equal(parallel.tail_errors, serial.tail_errors)


def test_sweep_argument_checks(iss):
    with pytest.raises(scenario.ScenarioError):
        sweep.iss_sweep(iss, "perception.noise", [0.2, 0.1])
    with pytest.raises(scenario.ScenarioError):
        sweep.run_sweep(iss, "perception.noise", [])
    # every value is validated before any run
    with pytest.raises(scenario.ScenarioValidationError):
        sweep.run_sweep(iss, "perception.noise", [0.1, -0.1])


def test_constant_tails_have_no_correlation(iss):
    result = sweep.run_sweep(iss, "seed", [1, 2])
    assert np.isnan(result.spearman)
    assert not result.passes()


def test_magnitude():
    assert sweep.magnitude(0.5) == 0.5
    assert sweep.magnitude(3) == 3.0
    assert sweep.magnitude([3.0, 4.0]) == 5.0
