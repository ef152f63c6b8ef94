"""
Tracking certificates for the sampled-data loop.

For omega_k = (||u_k - u*_k||, W_k) with W_k = sqrt(V(x_k, u_k, w_k)) the loop satisfies a
componentwise recursion

    omega_{k+1} <= M1 omega_k + M2 nu_k + sigma * sigma'_w(sup ||w'||),
    nu_k = (||u*_{k+1} - u*_k||, ||x_hat_{k+1} - x_{k+1}||)

and, when M1 is Schur, ||M1^k|| <= r c^k gives a bound on ||z_k|| that decays geometrically
up to terms in the optimizer drift, the perception error and the disturbance rate.

Two coefficient sets are kept:

- "printed": the published matrices M1, M2, M3 (reported, and used for the closed-form envelope)
- "derived": coefficients obtained by carrying V through one sampling interval with
  u_k held. The W row picks up sqrt(d2) l_hu for the input shift, where the printed row has
  c_w sqrt(d1) l_hu, smaller by exp(-d3 tau / 2). The recursion oracle checks the derived set.

Everything here is a pure function of CertificateInputs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np

from .constants import BISECTION_TOL, POWER_HORIZON, RECURSION_TOL, SCHUR_MARGIN_FRACTION


logger = logging.getLogger(__name__)


class CertificateError(Exception):
    """
    Base of certificate errors
    """


class InvalidStepSize(CertificateError):
    """
    eta outside (0, 2 mu / ell^2)
    """


class NotSchur(CertificateError):
    def __init__(self, spectral_radius: float):
        super().__init__(f"matrix is not Schur; spectral radius {spectral_radius}")
        self.spectral_radius = spectral_radius


class OracleUnavailable(CertificateError):
    """
    The trace carries no Lyapunov values (plant without an explicit Lyapunov function)
    """


PRINTED = "printed"
DERIVED = "derived"


@dataclass(frozen=True)
class CertificateInputs:
    d1: float
    d2: float
    d3: float
    ell_x: float
    ell_hu: float
    mu: float
    ell: float
    eta: float
    tau: float
    sup_w_rate: float = 0.0
    # sup_k ||u*_k - u*_{k-1}||
    delta_u_star: float = 0.0
    # sup ||p_hat - p|| + eps_bar
    eps_perception: float = 0.0
    sigma_w_gain: float = 0.0
    # constants estimated by simulation
    empirical: bool = False

    def __post_init__(self):
        if not self.d1 > 0:
            raise CertificateError(f"d1 must be positive; got {self.d1}")
        for name in ("d2", "d3", "ell_x", "ell_hu", "mu", "ell", "tau", "sup_w_rate", "delta_u_star", "eps_perception", "sigma_w_gain"):
            if getattr(self, name) < 0:
                raise CertificateError(f"{name} must be nonnegative; got {getattr(self, name)}")

    @classmethod
    def from_models(cls, plant, cost, config, sup_w_rate=0.0, delta_u_star=0.0, eps_perception=0.0) -> CertificateInputs:
        """
        :param plant: PlantModel
        :param cost: CostSpec in force (snapshot for tracking costs)
        :param config: ControllerConfig
        """
        constants = plant.constants
        return cls(
            d1=constants.d1,
            d2=constants.d2,
            d3=constants.d3,
            ell_x=cost.ell_x,
            ell_hu=constants.ell_hu,
            mu=cost.mu,
            ell=cost.composite_lipschitz(constants.ell_hu),
            eta=config.eta,
            tau=config.tau,
            sup_w_rate=sup_w_rate,
            delta_u_star=delta_u_star,
            eps_perception=eps_perception,
            sigma_w_gain=constants.sigma_w_gain,
            empirical=constants.empirical,
        )

    @property
    def c_w(self) -> float:
        return math.exp(-self.d3 * self.tau / 2.0) * math.sqrt(self.d2 / self.d1)

    @property
    def c_P(self) -> float:
        radicand = 1.0 - self.eta * (2.0 * self.mu - self.eta * self.ell**2)
        if radicand < 0:
            raise InvalidStepSize(f"c_P undefined for eta={self.eta}, mu={self.mu}, ell={self.ell}")
        return math.sqrt(radicand)

    @property
    def eta_limit(self) -> float:
        return 2.0 * self.mu / self.ell**2

    @property
    def sigma_w(self) -> float:
        # sigma_w(sup ||w'||) = c_sigma s^2
        return self.sigma_w_gain * self.sup_w_rate**2

    @property
    def sigma_w_prime(self) -> float:
        # sqrt(sigma_w) = sqrt(c_sigma) s
        return math.sqrt(self.sigma_w_gain) * self.sup_w_rate

    @property
    def m1(self) -> float:
        return min(1.0, math.sqrt(self.d1))

    @property
    def m2(self) -> float:
        return max(1.0, math.sqrt(self.d2))

    def with_tau(self, tau: float) -> CertificateInputs:
        return replace(self, tau=tau)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def contraction_factors(inputs: CertificateInputs) -> Tuple[float, float]:
    """
    (c_w, c_P) computed independently of the CertificateInputs properties:
    c_w = exp(-d3 tau / 2 + log(d2 / d1) / 2), c_P = sqrt((1 - eta mu)^2 + eta^2 (ell^2 - mu^2))
    """
    c_w = math.exp(-0.5 * inputs.d3 * inputs.tau + 0.5 * math.log(inputs.d2 / inputs.d1))
    radicand = (1.0 - inputs.eta * inputs.mu) ** 2 + inputs.eta**2 * (inputs.ell**2 - inputs.mu**2)
    if radicand < 0:
        raise InvalidStepSize(f"c_P undefined for eta={inputs.eta}")
    return c_w, math.sqrt(radicand)


# section: matrices


def _printed(inputs: CertificateInputs) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    c_w, c_P = inputs.c_w, inputs.c_P
    eta, ell_x, ell_hu = inputs.eta, inputs.ell_x, inputs.ell_hu
    sqrt_d1 = math.sqrt(inputs.d1)
    sqrt_tau = math.sqrt(inputs.tau)
    gain = eta * ell_x * ell_hu
    M1 = np.array(
        [
            [c_P, gain * c_w / sqrt_d1],
            [c_w * ell_hu * sqrt_d1 * (1.0 + c_P), c_w * (1.0 + c_w * gain * ell_hu)],
        ]
    )
    M2 = np.array(
        [
            [1.0, gain],
            [c_w * ell_hu * sqrt_d1 * (c_P + 1.0), c_w * sqrt_d1 * ell_hu * gain],
        ]
    )
    M3 = np.array([[c_w * gain * ell_hu * (sqrt_tau + 1.0)], [gain * sqrt_tau / sqrt_d1]])
    return M1, M2, M3


def _derived(inputs: CertificateInputs) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    One sampling interval with u_k held, for V(x, u, w) = ||x - h(u, w)||_P^2:
      sqrt V(x_{k+1}, u_k, w_{k+1}) <= exp(-d3 tau / 2) W_k + sqrt(tau) sigma'_w
      ||u_{k+1} - u*_{k+1}|| <= c_P (||u_k - u*_k|| + nu1) + eta l_x l_hu (nu2 + sqrt V(...) / sqrt(d1))
      W_{k+1} <= sqrt V(x_{k+1}, u_k, w_{k+1}) + sqrt(d2) l_hu ||u_{k+1} - u_k||
    exp(-d3 tau / 2) is bounded by c_w and 1 by sqrt(d2 / d1) below.
    """
    c_w, c_P = inputs.c_w, inputs.c_P
    eta, ell_x, ell_hu = inputs.eta, inputs.ell_x, inputs.ell_hu
    sqrt_d1, sqrt_d2 = math.sqrt(inputs.d1), math.sqrt(inputs.d2)
    sqrt_tau = math.sqrt(inputs.tau)
    gain = eta * ell_x * ell_hu
    M1 = np.array(
        [
            [c_P, gain * c_w / sqrt_d1],
            [sqrt_d2 * ell_hu * (1.0 + c_P), c_w * (1.0 + gain * ell_hu)],
        ]
    )
    M2 = np.array(
        [
            [c_P, gain],
            [sqrt_d2 * ell_hu * (1.0 + c_P), sqrt_d2 * gain * ell_hu],
        ]
    )
    sigma = np.array([[gain * sqrt_tau / sqrt_d1], [sqrt_d2 / sqrt_d1 * (1.0 + gain * ell_hu) * sqrt_tau]])
    return M1, M2, sigma


def build_matrices(inputs: CertificateInputs, variant: str = PRINTED) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    :return: (M1, M2, M3); for the derived variant M3 holds the disturbance coefficients
    """
    if not 0 < inputs.eta < inputs.eta_limit:
        raise InvalidStepSize(f"eta={inputs.eta} outside (0, 2 mu / ell^2) = (0, {inputs.eta_limit})")
    if variant == PRINTED:
        return _printed(inputs)
    if variant == DERIVED:
        return _derived(inputs)
    raise CertificateError(f"unknown matrix variant [{variant}]")


def spectral_radius_2x2(M: np.ndarray) -> float:
    """
    closed form: eigenvalues tr/2 +- sqrt((tr/2)^2 - det)
    """
    half_trace = 0.5 * (M[0, 0] + M[1, 1])
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    discriminant = half_trace**2 - det
    if discriminant >= 0:
        root = math.sqrt(discriminant)
        return max(abs(half_trace + root), abs(half_trace - root))
    # complex pair, |lambda|^2 = det
    return math.sqrt(det)


# section: conditions


@dataclass(frozen=True)
class Conditions:
    tau_ok: bool
    eta_ok: bool
    schur_ok: bool
    tau_threshold: float
    spectral_radius: float


def check_conditions(inputs: CertificateInputs, variant: str = PRINTED) -> Conditions:
    """
    The sufficient conditions tau > log(d2/d1)/d3 and eta in (0, 2 mu/ell^2), and the
    operative test rho(M1) < 1
    """
    tau_threshold = math.log(inputs.d2 / inputs.d1) / inputs.d3 if inputs.d3 > 0 else math.inf
    eta_ok = 0 < inputs.eta < inputs.eta_limit
    M1 = (_printed if variant == PRINTED else _derived)(inputs)[0]
    rho = spectral_radius_2x2(M1)
    return Conditions(
        tau_ok=inputs.tau > tau_threshold,
        eta_ok=eta_ok,
        schur_ok=rho < 1.0,
        tau_threshold=tau_threshold,
        spectral_radius=rho,
    )


def power_constants(M1: np.ndarray, horizon: int = POWER_HORIZON) -> Tuple[float, float]:
    """
    c = rho + (1 - rho) / 100, r = max_{k <= horizon} ||M1^k|| / c^k, so that
    ||M1^k|| <= r c^k for k = 0..horizon.
    """
    rho = spectral_radius_2x2(M1)
    if rho >= 1.0:
        raise NotSchur(rho)
    c = rho + (1.0 - rho) * SCHUR_MARGIN_FRACTION
    r = 0.0
    power = np.eye(2)
    for k in range(horizon + 1):
        r = max(r, np.linalg.norm(power, 2) / c**k)
        power = power @ M1
    return float(r), float(c)


# section: Schur boundary


@dataclass(frozen=True)
class SchurBoundary:
    tau_star: float
    rho_at_tau_star: float
    tau_threshold: float
    # "above", "below" or "equal": tau_star relative to tau_threshold
    relation: str
    iterations: int


def rho_profile(inputs: CertificateInputs, taus: Sequence[float], variant: str = PRINTED) -> np.ndarray:
    return np.array([check_conditions(inputs.with_tau(tau), variant).spectral_radius for tau in taus])


def schur_boundary(inputs: CertificateInputs, variant: str = PRINTED, tol: float = BISECTION_TOL) -> SchurBoundary:
    """
    Locate tau* with rho(M1(tau*)) = 1 by bisection; rho is taken to decrease in tau.
    The bracket starts at inputs.tau and is expanded by doubling/halving.
    """

    def rho(tau: float) -> float:
        return check_conditions(inputs.with_tau(tau), variant).spectral_radius

    hi = max(inputs.tau, tol)
    while rho(hi) >= 1.0:
        hi *= 2.0
        if hi > 1e12:
            raise NotSchur(rho(hi))
    lo = hi / 2.0
    while rho(lo) < 1.0:
        lo /= 2.0
        if lo < 1e-12:
            # Schur for every sampled tau
            lo = 0.0
            break

    iterations = 0
    while hi - lo > tol * 1e-4 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if rho(mid) >= 1.0:
            lo = mid
        else:
            hi = mid
        iterations += 1
        if abs(rho(hi) - 1.0) <= tol and hi - lo <= tol:
            break
    tau_star = hi
    threshold = check_conditions(inputs.with_tau(tau_star), variant).tau_threshold
    if math.isclose(tau_star, threshold, rel_tol=tol, abs_tol=tol):
        relation = "equal"
    else:
        relation = "above" if tau_star > threshold else "below"
    logger.info(f"Schur boundary ({variant}): tau*={tau_star:.9g}, threshold={threshold:.6g} ({relation})")
    return SchurBoundary(tau_star, rho(tau_star), threshold, relation, iterations)


# section: report and envelope


@dataclass(frozen=True, eq=False)
class DerivedRecursion:
    M1: np.ndarray
    M2: np.ndarray
    sigma: np.ndarray
    spectral_radius: float
    r: float
    c: float


@dataclass(frozen=True, eq=False)
class CertificateReport:
    inputs: CertificateInputs
    M1: np.ndarray
    M2: np.ndarray
    M3: np.ndarray
    c_w: float
    c_P: float
    spectral_radius: float
    schur_ok: bool
    tau_ok: bool
    eta_ok: bool
    tau_threshold: float
    r_M1: float
    c_M1: float
    m1: float
    m2: float
    # literal constant r c / (m1 (1 + c))
    b: float
    # geometric-series constant r c / (m1 (1 - c))
    b_prime: float
    horizon: int
    derived: DerivedRecursion
    notes: Tuple[str, ...] = ()

    def envelope(self, k: int, z0_norm: float) -> float:
        return bound_envelope(self, self.inputs, k, z0_norm)

    def to_dict(self) -> dict:
        return {
            "inputs": self.inputs.to_dict(),
            "M1": self.M1.tolist(),
            "M2": self.M2.tolist(),
            "M3": self.M3.tolist(),
            "c_w": self.c_w,
            "c_P": self.c_P,
            "spectral_radius": self.spectral_radius,
            "schur_ok": self.schur_ok,
            "tau_ok": self.tau_ok,
            "eta_ok": self.eta_ok,
            "tau_threshold": self.tau_threshold,
            "r_M1": self.r_M1,
            "c_M1": self.c_M1,
            "m1": self.m1,
            "m2": self.m2,
            "b": self.b,
            "b_prime": self.b_prime,
            "horizon": self.horizon,
            "derived": {
                "M1": self.derived.M1.tolist(),
                "M2": self.derived.M2.tolist(),
                "sigma": self.derived.sigma.tolist(),
                "spectral_radius": self.derived.spectral_radius,
                "r": self.derived.r,
                "c": self.derived.c,
            },
            "notes": list(self.notes),
        }


def _power_or_nan(M: np.ndarray, horizon: int) -> Tuple[float, float]:
    try:
        return power_constants(M, horizon)
    except NotSchur:
        return math.nan, math.nan


def _comparison_notes(printed: Sequence[np.ndarray], derived: Sequence[np.ndarray]) -> List[str]:
    notes = []
    for name, P, D in zip(("M1", "M2", "M3"), printed, derived):
        for (i, j), value in np.ndenumerate(P):
            if value < D[i, j] * (1.0 - 1e-12):
                notes.append(f"{name}[{i + 1},{j + 1}] printed {value:.6g} < derived {D[i, j]:.6g}")
    return notes


def build_certificate(inputs: CertificateInputs, horizon: int = POWER_HORIZON) -> CertificateReport:
    M1, M2, M3 = build_matrices(inputs, PRINTED)
    D1, D2, sigma = build_matrices(inputs, DERIVED)
    conditions = check_conditions(inputs, PRINTED)
    r, c = _power_or_nan(M1, horizon)
    r_d, c_d = _power_or_nan(D1, horizon)
    m1, m2 = inputs.m1, inputs.m2

    notes = [
        "M1[2,1] and M2[2,1] use l_hu where the printed (2,1) entry of M1 reads l_hx",
        "b = r c / (m1 (1 + c)) reported; the envelope uses b' = r c / (m1 (1 - c))",
        f"power bound ||M1^k|| <= r c^k certified for k = 0..{horizon}",
    ]
    discrepancies = _comparison_notes((M1, M2, M3), (D1, D2, sigma))
    if discrepancies:
        notes.append("printed coefficients below the one-interval derivation; the recursion oracle uses the derived set")
        notes.extend(discrepancies)
        for line in discrepancies:
            logger.warning(line)
    if inputs.empirical:
        notes.append("empirical constants")
    if not conditions.schur_ok:
        notes.append(f"M1 is not Schur (spectral radius {conditions.spectral_radius:.6g}); no envelope")

    report = CertificateReport(
        inputs=inputs,
        M1=M1,
        M2=M2,
        M3=M3,
        c_w=inputs.c_w,
        c_P=inputs.c_P,
        spectral_radius=conditions.spectral_radius,
        schur_ok=conditions.schur_ok,
        tau_ok=conditions.tau_ok,
        eta_ok=conditions.eta_ok,
        tau_threshold=conditions.tau_threshold,
        r_M1=r,
        c_M1=c,
        m1=m1,
        m2=m2,
        b=r * c / (m1 * (1.0 + c)),
        b_prime=r * c / (m1 * (1.0 - c)),
        horizon=horizon,
        derived=DerivedRecursion(D1, D2, sigma, spectral_radius_2x2(D1), r_d, c_d),
        notes=tuple(notes),
    )
    logger.info(
        f"certificate: rho={report.spectral_radius:.6g}, schur_ok={report.schur_ok}, "
        f"tau_ok={report.tau_ok}, eta_ok={report.eta_ok}"
    )
    return report


@dataclass(frozen=True)
class EnvelopeTerms:
    printed: float
    derived: float
    # printed form as written: b, exponent k + 1, sigma_w
    literal: float

    @property
    def value(self) -> float:
        return max(self.printed, self.derived)


def envelope_terms(report: CertificateReport, inputs: CertificateInputs, k: int, z0_norm: float) -> EnvelopeTerms:
    if not report.schur_ok:
        raise NotSchur(report.spectral_radius)
    r, c, m1, m2 = report.r_M1, report.c_M1, report.m1, report.m2
    drift = math.hypot(inputs.delta_u_star, inputs.eps_perception)
    norm_M2 = np.linalg.norm(report.M2, 2)
    norm_M3 = np.linalg.norm(report.M3, 2)

    printed = (
        (r * m2 / m1) * c**k * z0_norm
        + report.b_prime * norm_M3 * max(inputs.sigma_w, inputs.sigma_w_prime)
        + report.b_prime * norm_M2 * drift
    )
    literal = (r * m2 / m1) * c ** (k + 1) * z0_norm + report.b * norm_M3 * inputs.sigma_w + report.b * norm_M2 * drift

    derived = report.derived
    if derived.spectral_radius < 1.0 and not math.isnan(derived.r):
        n1 = math.sqrt(1.0 / inputs.d1 + (1.0 + inputs.ell_hu) ** 2)
        n2 = math.sqrt(inputs.d2 + (1.0 + math.sqrt(inputs.d2) * inputs.ell_hu) ** 2)
        forced = np.linalg.norm(derived.M2, 2) * drift + np.linalg.norm(derived.sigma) * inputs.sigma_w_prime
        derived_bound = n1 * derived.r * (n2 * derived.c**k * z0_norm + forced / (1.0 - derived.c))
    else:
        derived_bound = math.inf
    return EnvelopeTerms(printed=printed, derived=derived_bound, literal=literal)


def bound_envelope(report: CertificateReport, inputs: CertificateInputs, k: int, z0_norm: float) -> float:
    """
    Bound on ||z_k||: the larger of the closed-form envelope built on the printed matrices and
    the envelope obtained by unrolling the derived recursion,
        n1 r_d (n2 c_d^k ||z_0|| + (||M2_d|| ||(Delta_u*, eps)|| + ||sigma_d|| sigma'_w) / (1 - c_d)),
    where n1, n2 convert between ||z|| and ||omega||.
    """
    return envelope_terms(report, inputs, k, z0_norm).value


# section: recursion oracle


@dataclass(frozen=True)
class Violation:
    k: int
    # 0: input error row, 1: Lyapunov row
    component: int
    lhs: float
    rhs: float


@dataclass(frozen=True)
class RecursionVerdict:
    variant: str
    steps: int
    violations: Tuple[Violation, ...]
    # min over steps and components of rhs - lhs
    worst_slack: float

    @property
    def ok(self) -> bool:
        return not self.violations


def recursion_oracle(trace, inputs: CertificateInputs, variant: str = DERIVED, m1_override: np.ndarray = None) -> RecursionVerdict:
    """
    Check omega_{k+1} <= M1 omega_k + M2 nu_k + M3 sigma'_w componentwise along a trace.

    :param trace: object with per-sample arrays u, u_star, lyapunov (W_k) and perception_error
    :param m1_override: replaces M1 (mutation testing)
    """
    lyapunov = getattr(trace, "lyapunov", None)
    if lyapunov is None or len(lyapunov) == 0 or np.any(np.isnan(np.asarray(lyapunov, dtype=float))):
        raise OracleUnavailable("trace has no Lyapunov values")
    W = np.asarray(lyapunov, dtype=float)
    u = np.asarray(trace.u, dtype=float)
    u_star = np.asarray(trace.u_star, dtype=float)
    errors = np.asarray(trace.perception_error, dtype=float)

    M1, M2, M3 = build_matrices(inputs, variant)
    if m1_override is not None:
        M1 = np.asarray(m1_override, dtype=float)
    forcing = M3[:, 0] * inputs.sigma_w_prime

    omega = np.column_stack([np.linalg.norm(u - u_star, axis=1), W])
    violations = []
    worst = math.inf
    steps = len(W) - 1
    for k in range(steps):
        nu = np.array([np.linalg.norm(u_star[k + 1] - u_star[k]), errors[k + 1]])
        rhs = M1 @ omega[k] + M2 @ nu + forcing
        for component in range(2):
            lhs = omega[k + 1, component]
            slack = rhs[component] - lhs
            worst = min(worst, slack)
            if slack < -RECURSION_TOL * max(1.0, abs(rhs[component])):
                violations.append(Violation(k, component, float(lhs), float(rhs[component])))
    if violations:
        logger.warning(f"recursion ({variant}) violated at {len(violations)} of {steps} steps")
    return RecursionVerdict(variant=variant, steps=steps, violations=tuple(violations), worst_slack=float(worst))
