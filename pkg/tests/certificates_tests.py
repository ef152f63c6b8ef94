"""
Tests of certificate matrices, Schur analysis, envelopes and the recursion oracle
"""
import math
from types import SimpleNamespace

import numpy as np
import pytest

from .context import certificates, controller, costs, plant


E = math.exp(-1.0)


@pytest.fixture
def pinned():
    """
    x' = -x + u + w, Q = 2I, Ru = Rx = I, eta = 0.1, tau = 2
    """
    return certificates.CertificateInputs(
        d1=1.0, d2=1.0, d3=1.0, ell_x=1.0, ell_hu=1.0, mu=2.0, ell=2.0, eta=0.1, tau=2.0, sigma_w_gain=1.0
    )


def test_pinned_matrices(pinned):
    M1, M2, M3 = certificates.build_matrices(pinned)
    assert pinned.c_w == pytest.approx(E)
    assert pinned.c_P == pytest.approx(0.8)
    assert np.allclose(M1, [[0.8, 0.1 * E], [1.8 * E, E * (1 + 0.1 * E)]], rtol=1e-12)
    assert np.allclose(M2, [[1.0, 0.1], [1.8 * E, 0.1 * E]], rtol=1e-12)
    assert np.allclose(M3, [[0.1 * E * (math.sqrt(2) + 1)], [0.1 * math.sqrt(2)]], rtol=1e-12)


def test_contraction_factors_agree(pinned):
    c_w, c_P = certificates.contraction_factors(pinned)
    assert c_w == pytest.approx(pinned.c_w, rel=1e-12)
    assert c_P == pytest.approx(pinned.c_P, rel=1e-12)
    other = certificates.CertificateInputs(
        d1=0.5, d2=3.0, d3=0.7, ell_x=2.0, ell_hu=1.5, mu=1.0, ell=3.0, eta=0.05, tau=4.0
    )
    c_w, c_P = certificates.contraction_factors(other)
    assert c_w == pytest.approx(other.c_w, rel=1e-12)
    assert c_P == pytest.approx(other.c_P, rel=1e-12)


def test_spectral_radius_closed_form(pinned):
    rng = np.random.default_rng(31)
    matrices = [certificates.build_matrices(pinned)[0]] + [rng.uniform(0, 1, size=(2, 2)) for _ in range(20)]
    matrices.append(np.array([[0.0, -1.0], [1.0, 0.0]]) * 0.5)
    for M in matrices:
        assert certificates.spectral_radius_2x2(M) == pytest.approx(np.max(np.abs(np.linalg.eigvals(M))), rel=1e-10)


def test_pinned_conditions(pinned):
    conditions = certificates.check_conditions(pinned)
    assert conditions.spectral_radius == pytest.approx(0.8518, abs=1e-3)
    assert conditions.schur_ok and conditions.eta_ok and conditions.tau_ok
    assert conditions.tau_threshold == 0.0


def test_step_size_outside_interval(pinned):
    with pytest.raises(certificates.InvalidStepSize):
        certificates.build_matrices(pinned.__class__(**{**pinned.to_dict(), "eta": 1.0}))
    with pytest.raises(certificates.InvalidStepSize):
        certificates.build_certificate(pinned.__class__(**{**pinned.to_dict(), "eta": 1.5}))
    with pytest.raises(certificates.CertificateError):
        certificates.build_matrices(pinned, variant="other")


def test_invalid_inputs():
    with pytest.raises(certificates.CertificateError):
        certificates.CertificateInputs(d1=0.0, d2=1.0, d3=1.0, ell_x=1.0, ell_hu=1.0, mu=1.0, ell=1.0, eta=0.1, tau=1.0)
    with pytest.raises(certificates.CertificateError):
        certificates.CertificateInputs(d1=1.0, d2=1.0, d3=1.0, ell_x=1.0, ell_hu=1.0, mu=1.0, ell=1.0, eta=0.1, tau=-1.0)


def test_power_constants_bound_powers(pinned):
    M1 = certificates.build_matrices(pinned)[0]
    r, c = certificates.power_constants(M1, horizon=60)
    rho = certificates.spectral_radius_2x2(M1)
    assert c == pytest.approx(rho + (1 - rho) / 100)
    power = np.eye(2)
    for k in range(61):
        assert np.linalg.norm(power, 2) <= r * c**k * (1 + 1e-12)
        power = power @ M1
    with pytest.raises(certificates.NotSchur) as info:
        certificates.power_constants(np.diag([1.1, 0.5]))
    assert info.value.spectral_radius == pytest.approx(1.1)


def test_schur_boundary(pinned):
    boundary = certificates.schur_boundary(pinned)
    assert 0.0 < boundary.tau_star < 2.0
    assert abs(boundary.rho_at_tau_star - 1.0) <= 1e-6
    assert boundary.relation == "above"
    assert boundary.tau_threshold == 0.0

    taus = np.linspace(0.1, 4.0, 40)
    profile = certificates.rho_profile(pinned, taus)
    assert np.all(np.diff(profile) < 0)
    assert profile[0] > 1.0 > profile[-1]


def test_report_notes_and_constants(pinned):
    report = certificates.build_certificate(pinned)
    assert report.schur_ok
    assert report.b_prime > report.b > 0
    assert report.b == pytest.approx(report.r_M1 * report.c_M1 / (1 + report.c_M1))
    assert report.m1 == 1.0 and report.m2 == 1.0
    assert any("l_hx" in note for note in report.notes)
    # the printed (2,1) entry carries c_w where the derivation carries sqrt(d2)
    assert any(note.startswith("M1[2,1]") for note in report.notes)
    assert report.derived.M1[1, 0] == pytest.approx(1.8)
    body = report.to_dict()
    assert body["inputs"]["eta"] == 0.1
    assert body["M1"] == report.M1.tolist()


def test_report_without_schur(pinned):
    fast = pinned.with_tau(0.2)
    report = certificates.build_certificate(fast)
    assert not report.schur_ok
    assert math.isnan(report.r_M1)
    assert any("not Schur" in note for note in report.notes)
    with pytest.raises(certificates.NotSchur):
        certificates.bound_envelope(report, fast, 0, 1.0)


def test_envelope_decays_to_forced_level(pinned):
    report = certificates.build_certificate(pinned)
    unforced = [report.envelope(k, 1.0) for k in range(0, 200, 10)]
    assert all(b < a for a, b in zip(unforced, unforced[1:]))
    assert report.envelope(0, 1.0) >= 1.0

    forced_inputs = pinned.__class__(**{**pinned.to_dict(), "delta_u_star": 0.05, "eps_perception": 0.02})
    forced_report = certificates.build_certificate(forced_inputs)
    terms = certificates.envelope_terms(forced_report, forced_inputs, 10_000, 1.0)
    assert terms.value == max(terms.printed, terms.derived)
    assert terms.value > 0
    # the literal form uses b < b' and drops sigma'_w
    assert terms.literal <= terms.printed


def test_from_models_matches_pinned(pinned):
    eye = np.eye(2)
    lti = plant.make_lti_plant(-eye, eye, eye, 2 * eye)
    cost = costs.make_quadratic_cost(eye, eye, [0.0, 0.0], [1.0, 0.5], H=lti.input_jacobian(np.zeros(2)))
    config = controller.ControllerConfig(eta=0.1, tau=2.0, constraint=controller.ConstraintSet.box([-2, -2], [2, 2]))
    inputs = certificates.CertificateInputs.from_models(lti, cost, config)
    for name in ("d1", "d2", "d3", "ell_x", "ell_hu", "mu", "ell", "eta", "tau", "sigma_w_gain"):
        assert getattr(inputs, name) == pytest.approx(getattr(pinned, name)), name
    assert not inputs.empirical


def _decaying_trace(samples=10, factor=0.3):
    u = np.tile([0.5, 0.25], (samples, 1))
    return SimpleNamespace(
        u=u,
        u_star=u.copy(),
        lyapunov=factor ** np.arange(samples),
        perception_error=np.zeros(samples),
    )


def test_recursion_oracle(pinned):
    trace = _decaying_trace()
    verdict = certificates.recursion_oracle(trace, pinned)
    assert verdict.ok
    assert verdict.variant == "derived"
    assert verdict.steps == 9
    assert verdict.worst_slack >= 0

    mutated = certificates.recursion_oracle(trace, pinned, m1_override=np.zeros((2, 2)))
    assert not mutated.ok
    assert all(violation.component == 1 for violation in mutated.violations)
    assert len(mutated.violations) == 9


def test_recursion_oracle_needs_lyapunov_values(pinned):
    trace = _decaying_trace()
    trace.lyapunov = np.full(10, np.nan)
    with pytest.raises(certificates.OracleUnavailable):
        certificates.recursion_oracle(trace, pinned)
    trace.lyapunov = None
    with pytest.raises(certificates.OracleUnavailable):
        certificates.recursion_oracle(trace, pinned)
