"""
Plant models and the flow map used between sampling instants.

A plant bundles a vector field f(x, u, w), the steady-state map
h(u, w) = h_u(u) + h_w(w), the input Jacobian H(u) of h_u, and the
Lyapunov/Lipschitz constants the certificates are built from.

Two plants are provided:
- an LTI reference plant, constants in closed form
- a unicycle driven by a low-level position stabilizer, constants
  estimated by simulation (see estimate_lyapunov_constants)
"""
from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .constants import (
    DEFAULT_SUBSTEPS,
    LYAPUNOV_DECAY_FRACTION,
    LYAPUNOV_FIT_FLOOR,
    LYAPUNOV_FIT_STEPS_PER_UNIT,
    UNICYCLE_XI_EPSILON,
)
from .dataexchange import DisturbanceKind


logger = logging.getLogger(__name__)


class PlantError(Exception):
    """
    Invalid plant definition or invalid arguments to a plant operation
    """


class IntegrationDiverged(PlantError):
    """
    The state became non-finite during integration
    """

    def __init__(self, step: int, time: float):
        super().__init__(f"integration diverged at substep {step} (t={time})")
        self.step = step
        self.time = time


class CertificateUnavailable(PlantError):
    """
    The plant does not admit the constants certificates are built from,
    e.g. a non-Hurwitz LTI system
    """


class StabilityEstimateFailed(PlantError):
    """
    One or more probes did not decay during numerical estimation of
    the Lyapunov constants
    """

    def __init__(self, probes: List[int], message: str = None):
        message = message or f"probes {probes} did not decay below {LYAPUNOV_DECAY_FRACTION:.0%} of their initial error"
        super().__init__(message)
        self.probes = probes


class LyapunovUnavailable(PlantError):
    """
    The plant has no explicit Lyapunov function
    """


def wrap_angle(angle: float) -> float:
    """
    wrap angle into (-pi, pi]
    """
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


# section: disturbances


@dataclass(frozen=True)
class DisturbanceSignal:
    """
    Continuous disturbance w(t) with its analytic rate and a bound on the rate
    """

    value: Callable[[float], np.ndarray]
    rate: Callable[[float], np.ndarray]
    sup_rate: float
    dim: int
    kind: DisturbanceKind = DisturbanceKind.Constant

    def __call__(self, t: float) -> np.ndarray:
        return self.value(t)


def constant_disturbance(w0) -> DisturbanceSignal:
    w0 = np.atleast_1d(np.asarray(w0, dtype=float)).copy()
    zero = np.zeros_like(w0)
    return DisturbanceSignal(
        value=lambda t: w0.copy(),
        rate=lambda t: zero.copy(),
        sup_rate=0.0,
        dim=w0.size,
        kind=DisturbanceKind.Constant,
    )


def sinusoid_disturbance(amplitude, frequency: float, offset=None, phase=None) -> DisturbanceSignal:
    """
    w(t) = offset + amplitude * sin(frequency * t + phase), componentwise.

    :param amplitude: vector of per-component amplitudes
    :param frequency: angular frequency (rad per time unit), shared by all components
    :param offset: vector, defaults to zero
    :param phase: vector of per-component phases, defaults to zero
    """
    amplitude = np.atleast_1d(np.asarray(amplitude, dtype=float)).copy()
    offset = np.zeros_like(amplitude) if offset is None else np.atleast_1d(np.asarray(offset, dtype=float)).copy()
    phase = np.zeros_like(amplitude) if phase is None else np.broadcast_to(np.asarray(phase, dtype=float), amplitude.shape).copy()
    if offset.shape != amplitude.shape:
        raise PlantError(f"offset shape {offset.shape} does not match amplitude shape {amplitude.shape}")
    frequency = float(frequency)
    if frequency < 0:
        raise PlantError("sinusoid frequency must be nonnegative")

    def value(t: float) -> np.ndarray:
        return offset + amplitude * np.sin(frequency * t + phase)

    def rate(t: float) -> np.ndarray:
        return amplitude * frequency * np.cos(frequency * t + phase)

    return DisturbanceSignal(
        value=value,
        rate=rate,
        sup_rate=frequency * float(np.linalg.norm(amplitude)),
        dim=amplitude.size,
        kind=DisturbanceKind.Sinusoid,
    )


def ramp_disturbance(w0, slope) -> DisturbanceSignal:
    w0 = np.atleast_1d(np.asarray(w0, dtype=float)).copy()
    slope = np.broadcast_to(np.asarray(slope, dtype=float), w0.shape).copy()
    return DisturbanceSignal(
        value=lambda t: w0 + slope * t,
        rate=lambda t: slope.copy(),
        sup_rate=float(np.linalg.norm(slope)),
        dim=w0.size,
        kind=DisturbanceKind.Ramp,
    )


# section: plant types


@dataclass(frozen=True)
class ProbeFit:
    """
    Exponential envelope fitted to one probe trajectory:
    ||x(t) - h(u, w)|| <= overshoot * e^{-decay_rate t} * initial_error on the samples
    """

    index: int
    initial_error: float
    final_error: float
    decay_rate: float
    overshoot: float
    skipped: bool = False

    @property
    def lyapunov_rate(self) -> float:
        # V = ||x~||^2 decays at twice the rate of ||x~||
        return 2.0 * self.decay_rate


@dataclass(frozen=True)
class PlantConstants:
    d1: float
    d2: float
    d3: float
    ell_hu: float
    ell_hw: float
    # sigma_w(s) = sigma_w_gain * s^2
    sigma_w_gain: float
    # True when d1, d2, d3 were estimated by simulation
    empirical: bool = False
    diagnostics: Tuple[ProbeFit, ...] = ()

    def __post_init__(self):
        if not (0.0 < self.d1 <= self.d2):
            raise PlantError(f"Lyapunov sandwich requires 0 < d1 <= d2; got d1={self.d1}, d2={self.d2}")
        if self.d3 <= 0.0:
            raise PlantError(f"decay constant d3 must be positive; got {self.d3}")
        if self.ell_hu < 0 or self.ell_hw < 0 or self.sigma_w_gain < 0:
            raise PlantError("Lipschitz constants and sigma_w gain must be nonnegative")

    def sigma_w(self, s: float) -> float:
        return self.sigma_w_gain * s * s

    def sigma_w_prime(self, s: float) -> float:
        # sqrt of sigma_w
        return math.sqrt(self.sigma_w_gain) * s


@dataclass(frozen=True, eq=False)
class PlantModel:
    """
    Immutable plant definition; all callables are pure
    """

    name: str
    state_dim: int
    input_dim: int
    dist_dim: int
    vector_field: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    steady_state_u: Callable[[np.ndarray], np.ndarray]
    steady_state_w: Callable[[np.ndarray], np.ndarray]
    input_jacobian: Callable[[np.ndarray], np.ndarray]
    constants: PlantConstants
    # number of leading state components that perception estimates and tracking norms use
    observed_dims: int
    # P of V(x~) = x~' P x~, when the plant has an explicit Lyapunov function
    lyapunov_matrix: Optional[np.ndarray] = None
    # applied to the state after every integration substep
    normalize_state: Optional[Callable[[np.ndarray], np.ndarray]] = None
    parameters: Dict[str, Any] = field(default_factory=dict)

    def steady_state(self, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self.steady_state_u(u) + self.steady_state_w(w)

    def equilibrium_residual(self, u: np.ndarray, w: np.ndarray) -> float:
        return float(np.linalg.norm(self.vector_field(self.steady_state(u, w), u, w)))

    def tracking_block(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[..., : self.observed_dims]

    @property
    def has_lyapunov_function(self) -> bool:
        return self.lyapunov_matrix is not None

    def lyapunov_value(self, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> float:
        """
        V(x~) = x~' P x~ with x~ = x - h(u, w)
        """
        if self.lyapunov_matrix is None:
            raise LyapunovUnavailable(f"plant [{self.name}] has no explicit Lyapunov function")
        deviation = x - self.steady_state(u, w)
        return float(deviation @ self.lyapunov_matrix @ deviation)


# section: integration


@dataclass(frozen=True)
class FlowPath:
    """
    States at the start of every substep of one sampling interval, and the end state
    """

    times: np.ndarray
    states: np.ndarray
    final: np.ndarray


def _rk4(
    plant: PlantModel,
    x0: np.ndarray,
    u: np.ndarray,
    w: DisturbanceSignal,
    t0: float,
    tau: float,
    substeps: int,
    record: bool,
) -> FlowPath:
    if tau <= 0:
        raise PlantError(f"integration interval must be positive; got {tau}")
    if substeps < 1:
        raise PlantError(f"substeps must be >= 1; got {substeps}")
    x = np.array(x0, dtype=float)
    if x.shape != (plant.state_dim,):
        raise PlantError(f"state shape {x.shape} does not match plant state_dim {plant.state_dim}")
    if not np.all(np.isfinite(x)):
        raise PlantError("initial state is not finite")
    u = np.asarray(u, dtype=float)
    f = plant.vector_field

    h = tau / substeps
    times = np.empty(substeps) if record else None
    states = np.empty((substeps, plant.state_dim)) if record else None
    for i in range(substeps):
        t = t0 + i * h
        if record:
            times[i] = t
            states[i] = x
        k1 = f(x, u, w(t))
        k2 = f(x + 0.5 * h * k1, u, w(t + 0.5 * h))
        k3 = f(x + 0.5 * h * k2, u, w(t + 0.5 * h))
        k4 = f(x + h * k3, u, w(t + h))
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if plant.normalize_state is not None:
            x = plant.normalize_state(x)
        if not np.all(np.isfinite(x)):
            raise IntegrationDiverged(i, t + h)
    return FlowPath(times=times, states=states, final=x)


def integrate_flow(
    plant: PlantModel,
    x0: np.ndarray,
    u: np.ndarray,
    w: DisturbanceSignal,
    t0: float,
    tau: float,
    substeps: int = DEFAULT_SUBSTEPS,
) -> np.ndarray:
    """
    Solve x' = f(x, u, w(t)) on [t0, t0 + tau] with u held constant,
    by classical RK4 with step tau / substeps. Returns x(t0 + tau).
    """
    return _rk4(plant, x0, u, w, t0, tau, substeps, record=False).final


def integrate_flow_path(
    plant: PlantModel,
    x0: np.ndarray,
    u: np.ndarray,
    w: DisturbanceSignal,
    t0: float,
    tau: float,
    substeps: int = DEFAULT_SUBSTEPS,
) -> FlowPath:
    """
    Same as integrate_flow, additionally returning the state at the start of every substep
    """
    return _rk4(plant, x0, u, w, t0, tau, substeps, record=True)


# section: LTI plant


def _as_matrix(value, name: str) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(value, dtype=float))
    if matrix.ndim != 2:
        raise PlantError(f"{name} must be a matrix; got shape {matrix.shape}")
    return matrix


def _read_only(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


def make_lti_plant(A, B, E, Q=None) -> PlantModel:
    """
    x' = A x + B u + E w with A Hurwitz.

    h_u(u) = -A^{-1} B u, h_w(w) = -A^{-1} E w, H(u) = -A^{-1} B.
    P solves A'P + PA = -Q; d1 = lambda_min(P), d2 = lambda_max(P),
    d3 = lambda_min(Q) / (2 lambda_max(P)).

    sigma_w gain: with G = dh_w/dw and x~ = x - h(u, w),
        V' = -x~'Q x~ - 2 x~'P G w'
           <= -(lambda_min(Q)/2) ||x~||^2 + (2 ||P G||^2 / lambda_min(Q)) ||w'||^2   (Young)
           <= -d3 V + c_sigma ||w'||^2
    hence sigma_w(s) = c_sigma s^2 with c_sigma = 2 ||P G||^2 / lambda_min(Q).
    """
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    E = _as_matrix(E, "E")
    n = A.shape[0]
    if A.shape != (n, n):
        raise PlantError(f"A must be square; got shape {A.shape}")
    if B.shape[0] != n or E.shape[0] != n:
        raise PlantError(f"B and E must have {n} rows; got {B.shape} and {E.shape}")
    Q = np.eye(n) if Q is None else _as_matrix(Q, "Q")
    if Q.shape != (n, n) or not np.allclose(Q, Q.T):
        raise PlantError("Q must be a symmetric matrix matching A")
    q_eigs = np.linalg.eigvalsh(Q)
    if q_eigs[0] <= 0:
        raise PlantError("Q must be positive definite")

    spectrum = np.linalg.eigvals(A)
    if np.max(spectrum.real) >= 0:
        raise CertificateUnavailable(f"A is not Hurwitz; eigenvalues {spectrum}")

    hu = _read_only(-np.linalg.solve(A, B))
    hw = _read_only(-np.linalg.solve(A, E))
    P = scipy.linalg.solve_continuous_lyapunov(A.T, -Q)
    P = _read_only(0.5 * (P + P.T))
    p_eigs = np.linalg.eigvalsh(P)
    d1, d2 = float(p_eigs[0]), float(p_eigs[-1])
    q_min = float(q_eigs[0])
    constants = PlantConstants(
        d1=d1,
        d2=d2,
        d3=q_min / (2.0 * d2),
        ell_hu=float(np.linalg.norm(hu, 2)),
        ell_hw=float(np.linalg.norm(hw, 2)),
        sigma_w_gain=2.0 * float(np.linalg.norm(P @ hw, 2)) ** 2 / q_min,
    )
    A, B, E = _read_only(A), _read_only(B), _read_only(E)

    def vector_field(x, u, w):
        return A @ x + B @ u + E @ w

    logger.debug(f"built LTI plant n={n}: {constants}")
    return PlantModel(
        name="lti",
        state_dim=n,
        input_dim=B.shape[1],
        dist_dim=E.shape[1],
        vector_field=vector_field,
        steady_state_u=lambda u: hu @ u,
        steady_state_w=lambda w: hw @ w,
        input_jacobian=lambda u: hu,
        constants=constants,
        observed_dims=n,
        lyapunov_matrix=P,
        parameters={"A": A, "B": B, "E": E, "Q": _read_only(Q)},
    )


# section: unicycle plant


def unicycle_stabilizer(kappa: float, x: np.ndarray, u: np.ndarray) -> Tuple[float, float]:
    """
    Position stabilizer driving the unicycle at x = (a, b, theta) to the commanded position u.

    xi = ||u - r||, phi = atan2(u_b - b, u_a - a) - theta (wrapped);
    v = kappa xi cos(phi), omega = kappa (cos(phi) + 1) sin(phi) + kappa phi.

    :return: (linear speed v, angular speed omega)
    """
    a, b, theta = float(x[0]), float(x[1]), float(x[2])
    delta_a = float(u[0]) - a
    delta_b = float(u[1]) - b
    xi = math.hypot(delta_a, delta_b)
    if xi < UNICYCLE_XI_EPSILON:
        # atan2 is undefined at the target; the error dynamics have phi = 0 there
        phi = 0.0
    else:
        phi = wrap_angle(math.atan2(delta_b, delta_a) - theta)
    v = kappa * xi * math.cos(phi)
    omega = kappa * (math.cos(phi) + 1.0) * math.sin(phi) + kappa * phi
    return v, omega


def unicycle_vector_field(x: np.ndarray, u: np.ndarray, w: np.ndarray, kappa: float) -> np.ndarray:
    v, omega = unicycle_stabilizer(kappa, x, u)
    theta = float(x[2])
    return np.array([v * math.cos(theta), v * math.sin(theta), omega])


def _wrap_heading(x: np.ndarray) -> np.ndarray:
    x[2] = wrap_angle(float(x[2]))
    return x


_UNICYCLE_H = _read_only(np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]))


def _unicycle_model(kappa: float, constants: PlantConstants) -> PlantModel:
    return PlantModel(
        name="unicycle",
        state_dim=3,
        input_dim=2,
        dist_dim=1,
        vector_field=functools.partial(unicycle_vector_field, kappa=kappa),
        steady_state_u=lambda u: np.array([u[0], u[1], 0.0], dtype=float),
        steady_state_w=lambda w: np.zeros(3),
        input_jacobian=lambda u: _UNICYCLE_H,
        constants=constants,
        observed_dims=2,
        normalize_state=_wrap_heading,
        parameters={"kappa": kappa},
    )


def unicycle_ring_probes(count: int, radius: float = 1.0, command=(0.0, 0.0)) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Probes on a ring around the commanded position; the relative heading
    to the command sweeps (-pi, pi] across the ring
    """
    command = np.asarray(command, dtype=float)
    probes = []
    for i in range(count):
        alpha = 2.0 * math.pi * i / count
        position = command + radius * np.array([math.cos(alpha), math.sin(alpha)])
        heading = wrap_angle(2.0 * alpha)
        probes.append((np.array([position[0], position[1], heading]), command.copy()))
    return probes


@functools.lru_cache(maxsize=16)
def _unicycle_constants(kappa: float) -> PlantConstants:
    placeholder = PlantConstants(d1=1.0, d2=1.0, d3=1.0, ell_hu=1.0, ell_hw=0.0, sigma_w_gain=0.0, empirical=True)
    probes = unicycle_ring_probes(8)
    return estimate_lyapunov_constants(_unicycle_model(kappa, placeholder), probes, horizon=15.0 / kappa)


def make_unicycle_plant(kappa: float, constants: PlantConstants = None) -> PlantModel:
    """
    Unicycle a' = v cos(theta), b' = v sin(theta), theta' = omega, closed by
    unicycle_stabilizer. The input is a commanded position; h_u(u) = (u_a, u_b, 0)
    and only the position block is observed and tracked.

    When constants are not given they are estimated numerically (and cached per kappa).
    """
    if kappa <= 0:
        raise PlantError(f"kappa must be positive; got {kappa}")
    kappa = float(kappa)
    if constants is None:
        constants = _unicycle_constants(kappa)
    return _unicycle_model(kappa, constants)


# section: numerical Lyapunov constants


def estimate_lyapunov_constants(
    plant: PlantModel,
    probe_set: Sequence[Tuple[np.ndarray, np.ndarray]],
    horizon: float,
    w: np.ndarray = None,
    steps_per_unit: int = LYAPUNOV_FIT_STEPS_PER_UNIT,
) -> PlantConstants:
    """
    Fit exponential envelopes c e^{-a t} to ||x(t) - h(u, w)|| (observed block) for each
    probe, with w frozen, and return constants for the sandwich V = ||x~||^2-equivalent:
    d1 = 1, d2 = (largest overshoot)^2, d3 = half of the slowest V decay rate (2a).

    Probes that start at the equilibrium are skipped and flagged in the diagnostics.
    """
    if not probe_set:
        raise PlantError("probe set is empty")
    if horizon <= 0:
        raise PlantError(f"horizon must be positive; got {horizon}")
    w_frozen = np.zeros(plant.dist_dim) if w is None else np.asarray(w, dtype=float)
    signal = constant_disturbance(w_frozen)
    n_steps = max(1, int(math.ceil(horizon * steps_per_unit)))

    fits = []
    failed = []
    for index, (x0, u) in enumerate(probe_set):
        u = np.asarray(u, dtype=float)
        target = plant.steady_state(u, w_frozen)
        path = integrate_flow_path(plant, x0, u, signal, 0.0, horizon, n_steps)
        times = np.append(path.times, horizon)
        states = np.vstack([path.states, path.final])
        errors = np.linalg.norm(plant.tracking_block(states - target), axis=1)
        initial = float(errors[0])
        if initial == 0.0:
            logger.info(f"probe {index} starts at the equilibrium; skipped")
            fits.append(ProbeFit(index, 0.0, float(errors[-1]), 0.0, 1.0, skipped=True))
            continue
        if errors.min() > LYAPUNOV_DECAY_FRACTION * initial:
            failed.append(index)
            continue

        keep = errors > LYAPUNOV_FIT_FLOOR * initial
        slope, _ = np.polyfit(times[keep], np.log(errors[keep] / initial), 1)
        rate = -float(slope)
        if rate <= 0:
            failed.append(index)
            continue
        overshoot = max(1.0, float(np.max(errors[keep] / initial * np.exp(rate * times[keep]))))
        fits.append(ProbeFit(index, initial, float(errors[-1]), rate, overshoot))
        logger.debug(f"probe {index}: rate={rate:.6g}, overshoot={overshoot:.6g}")

    if failed:
        raise StabilityEstimateFailed(failed)
    informative = [fit for fit in fits if not fit.skipped]
    if not informative:
        raise StabilityEstimateFailed([], "every probe starts at the equilibrium; nothing to fit")

    slowest = min(fit.lyapunov_rate for fit in informative)
    largest_overshoot = max(fit.overshoot for fit in informative)
    return replace(
        plant.constants,
        d1=1.0,
        d2=largest_overshoot**2,
        d3=0.5 * slowest,
        empirical=True,
        diagnostics=tuple(fits),
    )
