"""
Sampled-data projected-gradient controller:

    u_k = Proj_Uc( u_{k-1} - eta * Psi_k(u_{k-1}, x_hat_k) ),   Psi_k(u, x) = grad_phi_k(u) + H(u)' grad_psi_k(x)

held constant over [k tau, (k+1) tau).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .costs import BarrierDomainError, CostSpec
from .dataexchange import ConstraintKind, SampleFlag
from .plant import PlantModel


logger = logging.getLogger(__name__)


class ControllerError(Exception):
    """
    Base of controller errors
    """


class InvalidConstraintSet(ControllerError):
    pass


class InvalidStepSize(ControllerError):
    """
    Step size outside (0, 2 mu / ell^2) while certificates are requested
    """


class HoldIndexError(ControllerError):
    """
    Hold evaluated outside its sampling interval
    """


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """
    Convex compact input set: a box {lower <= u <= upper} or a ball {||u - center|| <= radius}
    """

    kind: ConstraintKind
    dimension: int
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: Optional[float] = None

    @classmethod
    def box(cls, lower, upper) -> ConstraintSet:
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise InvalidConstraintSet(f"box bounds must be vectors of equal length; got {lower.shape}, {upper.shape}")
        if np.any(lower > upper):
            raise InvalidConstraintSet("box requires lower <= upper componentwise")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise InvalidConstraintSet("box must be bounded")
        return cls(ConstraintKind.Box, lower.size, lower=lower, upper=upper)

    @classmethod
    def ball(cls, center, radius: float) -> ConstraintSet:
        center = np.atleast_1d(np.asarray(center, dtype=float))
        if not radius > 0:
            raise InvalidConstraintSet(f"ball radius must be positive; got {radius}")
        return cls(ConstraintKind.Ball, center.size, center=center, radius=float(radius))

    def distance(self, u: np.ndarray) -> float:
        return float(np.linalg.norm(project(self, u) - u))

    def contains(self, u: np.ndarray, tol: float = 1e-12) -> bool:
        return self.distance(u) <= tol


def project(cset: ConstraintSet, z) -> np.ndarray:
    """
    Euclidean projection argmin_{u in cset} ||u - z||^2
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (cset.dimension,):
        raise InvalidConstraintSet(f"vector of shape {z.shape} projected onto a set of dimension {cset.dimension}")
    if cset.kind == ConstraintKind.Box:
        return np.minimum(np.maximum(z, cset.lower), cset.upper)
    offset = z - cset.center
    norm = float(np.linalg.norm(offset))
    if norm <= cset.radius:
        return z.copy()
    return cset.center + offset * (cset.radius / norm)


@dataclass
class ControllerConfig:
    """
    Configuration of the sampled-data controller
    """

    eta: float
    tau: float
    constraint: ConstraintSet
    # when set, eta must satisfy eta < 2 mu / ell^2 for the given mu, ell
    certify: bool = False
    mu: float = None
    ell: float = None

    def __post_init__(self):
        if not self.eta > 0:
            raise InvalidStepSize(f"step size must be positive; got {self.eta}")
        if not self.tau > 0:
            raise ControllerError(f"sampling period must be positive; got {self.tau}")
        if self.certify:
            if self.mu is None or self.ell is None:
                raise InvalidStepSize("certified configuration needs mu and ell")
            limit = 2.0 * self.mu / self.ell**2
            if not self.eta < limit:
                raise InvalidStepSize(f"step size {self.eta} outside (0, 2 mu / ell^2) = (0, {limit})")


@dataclass(frozen=True, eq=False)
class ControllerState:
    # last applied input u_{k-1}
    u_prev: np.ndarray
    # index of the next sample
    k: int = 0
    # most recent estimate at which the state gradient was defined
    last_feasible_x: Optional[np.ndarray] = None
    last_flags: Tuple[SampleFlag, ...] = ()


def initial_state(config: ControllerConfig, u0) -> ControllerState:
    u0 = np.asarray(u0, dtype=float)
    u_init = project(config.constraint, u0)
    if not np.array_equal(u_init, u0):
        logger.warning(f"initial input {u0} is outside the constraint set; projected to {u_init}")
    return ControllerState(u_prev=u_init, k=0)


def gradient_map(cost: CostSpec, plant: PlantModel, u: np.ndarray, x_hat: np.ndarray, t: float) -> np.ndarray:
    """
    Psi(u, x_hat) = grad_phi(u, t) + H(u)' grad_psi(x_hat, t)
    """
    return cost.grad_phi(u, t) + plant.input_jacobian(u).T @ cost.grad_psi(x_hat, t)


def controller_step(
    state: ControllerState,
    config: ControllerConfig,
    cost: CostSpec,
    plant: PlantModel,
    x_hat: np.ndarray,
) -> Tuple[np.ndarray, ControllerState]:
    """
    One projected-gradient update at sample state.k from the estimate x_hat.

    If the state gradient is undefined at x_hat (estimate outside the barrier's workspace) the
    gradient is evaluated at the last estimate where it was defined; if that fails too, with
    barrier margins clamped. Each fallback is flagged on the returned state.
    """
    t = state.k * config.tau
    u = state.u_prev
    flags = []
    feasible_x = np.asarray(x_hat, dtype=float)
    try:
        gradient = gradient_map(cost, plant, u, feasible_x, t)
    except BarrierDomainError as ex:
        gradient = None
        feasible_x = state.last_feasible_x
        if feasible_x is not None:
            try:
                gradient = gradient_map(cost, plant, u, feasible_x, t)
                flags.append(SampleFlag.BarrierRetried)
                logger.warning(f"sample {state.k}: {ex}; gradient taken at the last feasible estimate")
            except BarrierDomainError:
                gradient = None
        if gradient is None:
            if cost.grad_psi_clamped is None:
                raise
            gradient = cost.grad_phi(u, t) + plant.input_jacobian(u).T @ cost.grad_psi_clamped(x_hat, t)
            flags.append(SampleFlag.BarrierClamped)
            logger.warning(f"sample {state.k}: {ex}; gradient taken with clamped margins")

    u_next = project(config.constraint, u - config.eta * gradient)
    logger.debug(f"sample {state.k}: u={u_next}, |Psi|={np.linalg.norm(gradient):.3e}")
    return u_next, ControllerState(u_prev=u_next, k=state.k + 1, last_feasible_x=feasible_x, last_flags=tuple(flags))


def exact_update_map(
    plant: PlantModel, cost: CostSpec, config: ControllerConfig, w: np.ndarray, t: float
) -> Callable[[np.ndarray], np.ndarray]:
    """
    T(u) = Proj(u - eta Psi(u, h(u, w))): the update with exact steady-state feedback
    """

    def update(u: np.ndarray) -> np.ndarray:
        x = plant.steady_state(u, w)
        return project(config.constraint, u - config.eta * gradient_map(cost, plant, u, x, t))

    return update


def zero_order_hold(u_k: np.ndarray, t: float, k: int, tau: float) -> np.ndarray:
    """
    u(t) = u_k for t in [k tau, (k+1) tau)
    """
    if not (k * tau <= t < (k + 1) * tau):
        raise HoldIndexError(f"t={t} outside the hold interval [{k * tau}, {(k + 1) * tau}) of sample {k}")
    return u_k
