"""
Tests of scenario loading, validation and overrides
"""
import numpy as np
import pytest

from .context import scenario, PerceptionMode
from .test_constants import ISS_SCENARIO, LTI_STATIC, LTI_TRACKING, ROUNDABOUT, ROUNDABOUT_LEARNED


def problems_of(text: str):
    with pytest.raises(scenario.ScenarioValidationError) as info:
        scenario.scenario_from_text(text)
    return info.value.problems


def test_shipped_scenarios_load():
    for path in (LTI_STATIC, LTI_TRACKING, ROUNDABOUT):
        resp = scenario.load_scenario(path)
        assert resp.success, resp.error_message
    resp = scenario.load_scenario(ROUNDABOUT_LEARNED, require_model=False)
    assert resp.success, resp.error_message
    learned = resp.body
    assert learned.perception.mode == PerceptionMode.TrainedModel
    assert learned.perception.model_path.endswith("roundabout.model.json")
    assert learned.perception.training.arch == (256, 64, 32, 2)
    assert learned.perception.training.optimizer == "adam"
    assert learned.perception.training.validation_region == ((-1.8, -1.8), (1.8, 1.8))
    assert learned.perception.raster.size == 256


def test_lti_static_values():
    static = scenario.load_scenario(LTI_STATIC).body
    assert static.name == "lti_static"
    assert static.horizon == 200 and static.tau == 2.0
    assert static.controller.certify
    assert static.controller.mu == pytest.approx(2.0)
    assert static.controller.ell == pytest.approx(2.0)
    # x(0) = h(u0, w(0)) + offset = (0.2, -0.1) + (0.5, -0.5)
    assert np.allclose(static.initial_state(), [0.7, -0.6])
    assert static.perception.mode == PerceptionMode.Exact


def test_tracking_scenario_builds_fresh_cost():
    roundabout = scenario.load_scenario(ROUNDABOUT).body
    first = roundabout.build_cost()
    second = roundabout.build_cost()
    assert first is not second
    assert len(first.schedule) == 5
    assert len(first.obstacles) == 3
    snapshot = roundabout.reference_cost()
    assert np.all(snapshot.workspace.margins(roundabout.initial_state()[:2]) > 0)


def test_missing_files():
    resp = scenario.load_scenario("/nonexistent/scenario.scn")
    assert not resp.success
    resp = scenario.load_scenario(ROUNDABOUT_LEARNED)
    assert not resp.success
    assert "not found" in resp.error_message
    assert isinstance(resp.status, scenario.ScenarioValidationError)


def test_syntax_error():
    with pytest.raises(scenario.ScenarioSyntaxError):
        scenario.scenario_from_text("horizon = \n[plant")


def test_every_problem_is_reported():
    text = ISS_SCENARIO.replace("horizon = 40", "horizon = 0").replace("eta = 0.1", "eta = -1.0")
    text = text.replace('[perception]\nmode = "noisy"', '[perception]\nmode = "noisy"\ncolour = "red"')
    problems = problems_of(text)
    assert any(problem.startswith("[horizon]") for problem in problems)
    assert any(problem.startswith("[controller.eta]") for problem in problems)
    assert any(problem == "[perception.colour] unknown key" for problem in problems)


def test_shape_problems():
    problems = problems_of(ISS_SCENARIO.replace("u0 = [0.5, 0.25]", "u0 = [0.5, 0.25, 1.0]"))
    assert any("[controller.u0] must have shape 2" in problem for problem in problems)
    problems = problems_of(ISS_SCENARIO.replace('lower = [-3.0, -3.0]', 'lower = "low"'))
    assert any(problem.startswith("[controller.constraint.lower]") for problem in problems)


def test_invalid_plant_and_step_size():
    problems = problems_of(ISS_SCENARIO.replace("A = [[-1.0, 0.0], [0.0, -1.0]]", "A = [[1.0, 0.0], [0.0, -1.0]]"))
    assert any("not Hurwitz" in problem for problem in problems)
    certified = ISS_SCENARIO.replace("eta = 0.1", "eta = 1.5\ncertify = true")
    problems = problems_of(certified)
    assert any(problem.startswith("[controller]") for problem in problems)
    # without certificates any positive step is accepted
    assert scenario.scenario_from_text(ISS_SCENARIO.replace("eta = 0.1", "eta = 1.5")).controller.eta == 1.5


def test_noise_only_in_noisy_mode():
    problems = problems_of(ISS_SCENARIO.replace('mode = "noisy"\nnoise = 0.0', 'mode = "exact"\nnoise = 0.1'))
    assert any(problem.startswith("[perception.noise]") for problem in problems)


def test_model_mode_needs_model():
    problems = problems_of(ISS_SCENARIO.replace('mode = "noisy"\nnoise = 0.0', 'mode = "model"'))
    assert any(problem.startswith("[perception.model]") for problem in problems)


def test_training_settings():
    training = "\n[perception.training]\nregion = [[-1.0, -1.0], [1.0, 1.0]]\ngrid = 5\n"
    settings = scenario.scenario_from_text(ISS_SCENARIO + training).perception.training
    assert settings.optimizer == "adam"
    assert settings.validation_region is None
    assert settings.arch[0] == 256

    problems = problems_of(ISS_SCENARIO + training + "validation_region = [[-1.5, -1.0], [1.0, 1.0]]\n")
    assert any(problem.startswith("[perception.training.validation_region]") for problem in problems)
    problems = problems_of(ISS_SCENARIO + training + 'optimizer = "rmsprop"\n')
    assert any(problem.startswith("[perception.training.optimizer]") for problem in problems)


def test_overrides():
    base = scenario.scenario_from_text(ISS_SCENARIO)
    assert base.perception.noise == 0.0
    changed = base.with_overrides({"perception.noise": 0.1, "seed": 9})
    assert changed.perception.noise == 0.1
    assert changed.run.seed == 9
    assert dict(changed.overrides) == {"perception.noise": 0.1, "seed": 9}
    # the original is untouched
    assert base.perception.noise == 0.0 and base.run.seed == 3
    assert changed.source_hash == base.source_hash

    with pytest.raises(scenario.ScenarioValidationError):
        base.with_overrides({"perception.noise": -1.0})
    with pytest.raises(scenario.ScenarioValidationError):
        base.with_overrides({"horizon.inner": 1})
    with pytest.raises(scenario.ScenarioValidationError):
        base.with_overrides({"controller..eta": 1})


def test_overrides_at_load():
    resp = scenario.load_scenario(LTI_TRACKING, overrides={"perception.noise": 0.1})
    assert resp.success, resp.error_message
    assert resp.body.perception.noise == 0.1


def test_parse_override_value():
    assert scenario.parse_override_value("0.5") == 0.5
    assert scenario.parse_override_value("3") == 3
    assert scenario.parse_override_value("[0.1, 0.2]") == [0.1, 0.2]
    assert scenario.parse_override_value('"noisy"') == "noisy"
    assert scenario.parse_override_value("true") is True
    with pytest.raises(scenario.ScenarioSyntaxError):
        scenario.parse_override_value("[0.1,")


def test_source_hash_tracks_text():
    base = scenario.scenario_from_text(ISS_SCENARIO)
    other = scenario.scenario_from_text(ISS_SCENARIO + "\n# comment\n")
    assert base.source_hash != other.source_hash
    assert len(base.source_hash) == 64


def test_optimizer_drift():
    static = scenario.load_scenario(LTI_STATIC).body
    assert scenario.estimate_optimizer_drift(static) == pytest.approx(0.0, abs=1e-8)
    sequence = scenario.optimizer_sequence(static)
    assert sequence.shape == (201, 2)
    # u* = (u_ref + x_ref - w) / 2
    assert np.allclose(sequence[0], [0.4, 0.3], atol=1e-8)

    tracking = scenario.load_scenario(LTI_TRACKING).body
    assert scenario.estimate_optimizer_drift(tracking) > 0
    roundabout = scenario.load_scenario(ROUNDABOUT).body
    assert scenario.estimate_optimizer_drift(roundabout) is None
