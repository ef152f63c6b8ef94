"""
Tests of plant models: steady-state maps, integration and the unicycle stabilizer
"""
import dataclasses
import math

import numpy as np
import pytest

from .context import plant, scenario
from .test_constants import FD_REL_TOL, LTI_TRACKING, ROUNDABOUT


@pytest.fixture
def lti():
    """
    x' = -x + u + w with Q = 2I, so P = I
    """
    eye = np.eye(2)
    return plant.make_lti_plant(-eye, eye, eye, 2 * eye)


@pytest.fixture
def unicycle():
    return plant.make_unicycle_plant(1.0)


def test_lti_constants(lti):
    constants = lti.constants
    assert constants.d1 == pytest.approx(1.0)
    assert constants.d2 == pytest.approx(1.0)
    assert constants.d3 == pytest.approx(1.0)
    assert constants.ell_hu == pytest.approx(1.0)
    assert constants.ell_hw == pytest.approx(1.0)
    # c_sigma = 2 ||P G||^2 / lambda_min(Q)
    assert constants.sigma_w_gain == pytest.approx(1.0)
    assert not constants.empirical
    assert np.allclose(lti.lyapunov_matrix, np.eye(2))


def test_lti_rejects_non_hurwitz():
    eye = np.eye(2)
    with pytest.raises(plant.CertificateUnavailable):
        plant.make_lti_plant(np.diag([-1.0, 0.5]), eye, eye)
    with pytest.raises(plant.PlantError):
        plant.make_lti_plant(-eye, np.ones((3, 2)), eye)


def test_equilibrium_residual(lti, unicycle):
    """
    f(h(u, w), u, w) = 0
    """
    rng = np.random.default_rng(1)
    for _ in range(50):
        u = rng.uniform(-2, 2, size=2)
        assert lti.equilibrium_residual(u, rng.uniform(-1, 1, size=2)) < 1e-8
        assert unicycle.equilibrium_residual(u, np.zeros(1)) < 1e-8


def test_input_jacobian_matches_finite_differences(lti, unicycle):
    rng = np.random.default_rng(2)
    step = 1e-6
    for model in (lti, unicycle):
        u = rng.uniform(-1, 1, size=model.input_dim)
        H = model.input_jacobian(u)
        columns = []
        for i in range(model.input_dim):
            e = np.zeros(model.input_dim)
            e[i] = step
            columns.append((model.steady_state_u(u + e) - model.steady_state_u(u - e)) / (2 * step))
        numeric = np.column_stack(columns)
        assert np.linalg.norm(H - numeric) <= FD_REL_TOL * max(1.0, np.linalg.norm(H))


def test_flow_semigroup(lti):
    """
    Integrating over [0, 2] equals integrating over [0, 1] then [1, 2] with the same step
    """
    w = plant.sinusoid_disturbance([0.3, 0.1], 0.7, phase=[0.0, 1.0])
    x0 = np.array([1.0, -0.5])
    u = np.array([0.2, 0.4])
    whole = plant.integrate_flow(lti, x0, u, w, 0.0, 2.0, substeps=40)
    half = plant.integrate_flow(lti, x0, u, w, 0.0, 1.0, substeps=20)
    split = plant.integrate_flow(lti, half, u, w, 1.0, 1.0, substeps=20)
    assert np.allclose(whole, split, rtol=0, atol=1e-12)


def test_rk4_order(lti):
    """
    Halving the step divides the global error by about 2^4
    """
    w = plant.constant_disturbance([0.0, 0.0])
    x0 = np.array([1.0, -1.0])
    u = np.array([0.5, 0.25])
    tau = 2.0
    target = lti.steady_state(u, np.zeros(2))
    exact = target + math.exp(-tau) * (x0 - target)
    coarse = np.linalg.norm(plant.integrate_flow(lti, x0, u, w, 0.0, tau, substeps=8) - exact)
    fine = np.linalg.norm(plant.integrate_flow(lti, x0, u, w, 0.0, tau, substeps=16) - exact)
    assert 12.0 < coarse / fine < 20.0


def test_flow_path_records_substeps(lti):
    w = plant.constant_disturbance([0.0, 0.0])
    path = plant.integrate_flow_path(lti, np.zeros(2), np.ones(2), w, 3.0, 2.0, substeps=10)
    assert path.states.shape == (10, 2)
    assert path.times[0] == 3.0
    assert np.allclose(path.states[0], np.zeros(2))
    assert path.times[-1] == pytest.approx(4.8)


def test_integration_diverged(lti):
    cubic = dataclasses.replace(lti, vector_field=lambda x, u, w: x**3)
    w = plant.constant_disturbance([0.0, 0.0])
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(plant.IntegrationDiverged):
            plant.integrate_flow(cubic, np.array([10.0, 10.0]), np.zeros(2), w, 0.0, 1.0, substeps=10)


def test_invalid_integration_arguments(lti):
    w = plant.constant_disturbance([0.0, 0.0])
    with pytest.raises(plant.PlantError):
        plant.integrate_flow(lti, np.zeros(2), np.zeros(2), w, 0.0, 0.0)
    with pytest.raises(plant.PlantError):
        plant.integrate_flow(lti, np.zeros(3), np.zeros(2), w, 0.0, 1.0)


def test_lyapunov_value_decreases(lti):
    w = plant.constant_disturbance([0.1, -0.1])
    u = np.array([0.3, 0.3])
    x = np.array([2.0, -1.0])
    previous = lti.lyapunov_value(x, u, w(0.0))
    for k in range(5):
        x = plant.integrate_flow(lti, x, u, w, float(k), 1.0, substeps=20)
        value = lti.lyapunov_value(x, u, w(0.0))
        assert value < previous
        previous = value


def test_unicycle_has_no_explicit_lyapunov_function(unicycle):
    assert not unicycle.has_lyapunov_function
    assert unicycle.constants.empirical
    with pytest.raises(plant.LyapunovUnavailable):
        unicycle.lyapunov_value(np.zeros(3), np.zeros(2), np.zeros(1))


def test_disturbance_rates():
    step = 1e-6
    signals = [
        plant.sinusoid_disturbance([0.3, 0.4], 2.0, offset=[1.0, 0.0], phase=[0.5, 0.0]),
        plant.ramp_disturbance([1.0, 2.0], [0.3, -0.4]),
        plant.constant_disturbance([1.0]),
    ]
    for signal in signals:
        for t in (0.0, 0.7, 3.1):
            numeric = (signal(t + step) - signal(t - step)) / (2 * step)
            assert np.allclose(signal.rate(t), numeric, atol=1e-6)
            assert np.linalg.norm(signal.rate(t)) <= signal.sup_rate + 1e-12
    assert signals[0].sup_rate == pytest.approx(2.0 * 0.5)
    assert signals[1].sup_rate == pytest.approx(0.5)
    assert signals[2].sup_rate == 0.0


def test_wrap_angle():
    assert plant.wrap_angle(math.pi) == pytest.approx(math.pi)
    assert plant.wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert plant.wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert plant.wrap_angle(0.25) == pytest.approx(0.25)


def test_unicycle_singularity():
    """
    At the commanded position the stabilizer output is zero, not undefined
    """
    x = np.array([0.5, -0.5, 1.0])
    v, omega = plant.unicycle_stabilizer(1.0, x, np.array([0.5, -0.5]))
    assert v == 0.0
    assert omega == 0.0


def test_unicycle_stabilizer_converges_from_ring(unicycle):
    """
    16 headings on a unit ring around the command: position error below 1e-3 within
    20 time units, and a positive fitted exponential rate for every probe
    """
    w = plant.constant_disturbance([0.0])
    probes = plant.unicycle_ring_probes(16)
    for x0, command in probes:
        final = plant.integrate_flow(unicycle, x0, command, w, 0.0, 20.0, substeps=400)
        assert np.linalg.norm(final[:2] - command) < 1e-3, f"probe from {x0} ended at {final}"

    constants = plant.estimate_lyapunov_constants(unicycle, probes, horizon=20.0)
    fits = [fit for fit in constants.diagnostics if not fit.skipped]
    assert len(fits) == 16
    assert all(fit.decay_rate > 0 for fit in fits)
    assert constants.d3 > 0 and constants.d2 >= constants.d1 == 1.0


def test_stability_estimate_skips_equilibrium_probes(unicycle):
    probes = [(np.array([0.0, 0.0, 0.0]), np.zeros(2))] + plant.unicycle_ring_probes(4)
    constants = plant.estimate_lyapunov_constants(unicycle, probes, horizon=15.0)
    assert constants.diagnostics[0].skipped
    with pytest.raises(plant.StabilityEstimateFailed):
        plant.estimate_lyapunov_constants(unicycle, probes[:1], horizon=15.0)


@pytest.mark.parametrize("path", [LTI_TRACKING, ROUNDABOUT])
def test_shipped_substeps_are_converged(path):
    """
    Doubling the substeps of a sampling period changes the end state by at most 1e-6 relative
    """
    loaded = scenario.load_scenario(path).body
    tau, substeps = loaded.tau, loaded.run.substeps
    if loaded.cost.kind == "tracking":
        inputs = loaded.cost.schedule.checkpoints
    else:
        inputs = [loaded.u0, [1.0, 0.5], [0.5, 1.0], [0.0, 0.5]]
    x = loaded.initial_state()
    for k, u in enumerate(inputs):
        coarse = plant.integrate_flow(loaded.plant, x, u, loaded.disturbance, k * tau, tau, substeps)
        fine = plant.integrate_flow(loaded.plant, x, u, loaded.disturbance, k * tau, tau, 2 * substeps)
        difference = coarse - fine
        if loaded.plant.state_dim == 3:
            difference[2] = plant.wrap_angle(difference[2])
        assert np.linalg.norm(difference) <= 1e-6 * np.linalg.norm(fine)
        x = fine
