"""
End to end runs of the shipped scenarios, checked against the certificate and the
qualitative behaviour of the roundabout
"""
import numpy as np
import pytest

from .context import certificates, harness, perception, scenario
from .test_constants import LTI_TRACKING, ROUNDABOUT, ROUNDABOUT_LEARNED


SEEDS = range(20)
NOISE_LEVELS = (0.0, 0.05, 0.1)


@pytest.fixture(scope="module")
def tracking_runs():
    base = scenario.load_scenario(LTI_TRACKING).body
    runs = []
    for noise in NOISE_LEVELS:
        for seed in SEEDS:
            trace = harness.run_closed_loop(base.with_overrides({"seed": seed, "perception.noise": noise}))
            runs.append(trace)
    return runs


def test_tracking_runs_complete(tracking_runs):
    assert len(tracking_runs) == len(SEEDS) * len(NOISE_LEVELS)
    assert all(trace.completed for trace in tracking_runs)


def test_envelope_dominates_tracking_error(tracking_runs):
    for trace in tracking_runs:
        inputs = certificates.CertificateInputs(**trace.metadata["certificate_inputs"])
        report = certificates.build_certificate(inputs)
        assert report.schur_ok
        z0 = float(trace.z_norm[0])
        envelope = np.array([certificates.bound_envelope(report, inputs, k, z0) for k in range(trace.samples)])
        exceeded = np.flatnonzero(trace.z_norm > envelope)
        assert exceeded.size == 0, (trace.metadata["overrides"], exceeded)


def test_recursion_holds_along_tracking_runs(tracking_runs):
    mutation_violations = 0
    for trace in tracking_runs:
        inputs = certificates.CertificateInputs(**trace.metadata["certificate_inputs"])
        verdict = certificates.recursion_oracle(trace, inputs)
        assert verdict.ok, (trace.metadata["overrides"], verdict.violations[:3])
        assert verdict.steps == trace.samples - 1

        halved = 0.5 * certificates.build_matrices(inputs, certificates.DERIVED)[0]
        mutated = certificates.recursion_oracle(trace, inputs, m1_override=halved)
        mutation_violations += len(mutated.violations)
    assert mutation_violations >= 1


@pytest.fixture(scope="module")
def roundabout():
    return scenario.load_scenario(ROUNDABOUT).body


@pytest.fixture(scope="module")
def exact_roundabout_run(roundabout):
    return harness.run_closed_loop(roundabout)


@pytest.fixture(scope="module")
def learned_model():
    learned = scenario.load_scenario(ROUNDABOUT_LEARNED, require_model=False).body
    settings = learned.perception.training
    gmap = perception.GenerativeMap(learned.perception.raster)
    training_set = perception.generate_training_set(gmap, settings.region, settings.grid, settings.seed, settings.jitter)
    model = perception.train_perception(
        training_set,
        arch=settings.arch,
        epochs=settings.epochs,
        lr=settings.learning_rate,
        seed=settings.seed,
        batch_size=settings.batch_size,
        momentum=settings.momentum,
        validation_grid=settings.validation_grid,
        optimizer=settings.optimizer,
        validation_region=settings.validation_region,
    )
    return learned, model


def test_roundabout_with_exact_feedback(exact_roundabout_run):
    trace = exact_roundabout_run
    assert trace.completed, trace.abort_reason
    assert harness.checkpoints_in_order(trace, 5)
    assert np.all(trace.margins > 0)
    assert harness.min_fine_clearance(trace) > 0


def test_learned_model_meets_error_target(learned_model):
    learned, model = learned_model
    settings = learned.perception.training
    assert settings.epochs == 2000 and settings.arch == (256, 64, 32, 2)
    assert learned.perception.raster.size == 256
    # below the barrier margin floor
    assert model.measured_error <= 0.05
    assert model.training_meta["final_rmse"] < model.measured_error


def test_roundabout_with_learned_perception(learned_model, exact_roundabout_run, tmp_path):
    learned, model = learned_model
    assert model.measured_error is not None

    # the model also round trips through the file the scenario points at
    path = str(tmp_path / "roundabout.model.json")
    assert perception.save_model(model, path).success
    trace = harness.run_closed_loop(learned, model=perception.load_model(path).body)

    assert trace.completed, trace.abort_reason
    assert harness.checkpoints_in_order(trace, 5)
    assert np.all(trace.margins > 0)
    assert harness.min_fine_clearance(trace) > 0
    assert harness.terminal_error(trace) <= harness.terminal_error(exact_roundabout_run) + 3 * model.measured_error

    # perception error stays bounded over the run
    assert np.all(np.isfinite(trace.perception_error))
    assert np.max(trace.perception_error) < 0.5
    assert trace.metadata["perception_error_bound"] == model.measured_error


def test_unicycle_has_no_recursion_oracle(roundabout, exact_roundabout_run):
    inputs = harness.certificate_inputs(roundabout)
    assert inputs.empirical
    with pytest.raises(certificates.OracleUnavailable):
        certificates.recursion_oracle(exact_roundabout_run, inputs)


def test_roundabout_seeds_do_not_change_exact_runs(roundabout, exact_roundabout_run):
    """
    exact feedback draws no randomness
    """
    reseeded = harness.run_closed_loop(roundabout.with_overrides({"seed": 5}))
    assert np.array_equal(reseeded.u, exact_roundabout_run.u)
