"""
Time-varying costs phi_k(u), psi_k(x) with analytic gradients.

- make_quadratic_cost: quadratic reference-tracking cost with closed-form constants
- make_tracking_cost: waypoint tracking with a log barrier over the free workspace,
  the workspace being rebuilt at every sample from the state estimate
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import (
    DEFAULT_CAPTURE_RADIUS,
    DEFAULT_LAMBDA0,
    DEFAULT_LAMBDA_DECAY,
    DEFAULT_MARGIN_FLOOR,
    MARGIN_CLAMP_DIVISOR,
)
from .dataexchange import SampleFlag


logger = logging.getLogger(__name__)


class CostError(Exception):
    """
    Base of cost errors
    """


class InvalidCost(CostError):
    """
    Cost parameters violate their preconditions, e.g. a non-SPD weight
    """


class InfeasibleWorkspace(CostError):
    """
    The workspace cannot be built because the vehicle is inside an obstacle
    """

    def __init__(self, obstacle_id: int, message: str = None):
        super().__init__(message or f"vehicle is inside obstacle {obstacle_id}")
        self.obstacle_id = obstacle_id


class BarrierDomainError(CostError):
    """
    Barrier evaluated outside the free workspace (some margin <= 0)
    """

    def __init__(self, halfplanes: List[int], margin: float):
        super().__init__(f"barrier evaluated outside the workspace; half-planes {halfplanes}, margin {margin}")
        self.halfplanes = halfplanes
        self.margin = margin


Reference = Callable[[float], np.ndarray]


# section: references


def constant_reference(value) -> Reference:
    value = np.atleast_1d(np.asarray(value, dtype=float)).copy()
    return lambda t: value.copy()


def circular_reference(center, radius: float, speed: float, phase: float = 0.0) -> Reference:
    """
    Reference whose first two coordinates move on a circle:
    center + radius * (cos(speed t + phase), sin(speed t + phase), 0, ...)
    """
    center = np.atleast_1d(np.asarray(center, dtype=float)).copy()
    if center.size < 2:
        raise InvalidCost("circular reference needs at least two coordinates")

    def reference(t: float) -> np.ndarray:
        value = center.copy()
        angle = speed * t + phase
        value[0] += radius * math.cos(angle)
        value[1] += radius * math.sin(angle)
        return value

    return reference


def as_reference(value: Union[Reference, Sequence[float], np.ndarray]) -> Reference:
    if callable(value):
        return value
    return constant_reference(value)


# section: cost specification


@dataclass(frozen=True, eq=False)
class CostSpec:
    """
    phi(u, t), psi(x, t) with gradients and the convexity/Lipschitz constants of
    the composite map u -> phi(u, t) + psi(h(u, w), t)
    """

    phi: Callable[[np.ndarray, float], float]
    grad_phi: Callable[[np.ndarray, float], np.ndarray]
    psi: Callable[[np.ndarray, float], float]
    grad_psi: Callable[[np.ndarray, float], np.ndarray]
    mu: float
    ell_u: float
    ell_x: float
    name: str = "cost"
    # state gradient with barrier margins clamped from below; only barrier costs have one
    grad_psi_clamped: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    workspace: Optional[Workspace] = None
    target: Optional[np.ndarray] = None
    # events raised while producing this snapshot
    flags: Tuple[SampleFlag, ...] = ()

    def __post_init__(self):
        if self.mu <= 0:
            raise InvalidCost(f"strong convexity constant must be positive; got {self.mu}")
        if self.ell_u < 0 or self.ell_x < 0:
            raise InvalidCost("gradient Lipschitz constants must be nonnegative")

    def composite_lipschitz(self, ell_hu: float) -> float:
        """
        ell = ell_u + ell_hu^2 * ell_x
        """
        return self.ell_u + ell_hu**2 * self.ell_x

    def at_sample(self, k: int, t: float, x_hat: np.ndarray) -> CostSpec:
        """
        The cost in force at sample k. Static costs are their own snapshot.
        """
        return self

    def reset(self):
        pass


def _check_spd(matrix, name: str) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape[0] != matrix.shape[1] or not np.allclose(matrix, matrix.T):
        raise InvalidCost(f"{name} must be a symmetric square matrix")
    if np.linalg.eigvalsh(matrix)[0] <= 0:
        raise InvalidCost(f"{name} must be positive definite")
    return matrix


def make_quadratic_cost(Ru, Rx, u_ref, x_ref, H=None) -> CostSpec:
    """
    phi = 1/2 (u - u_ref)' Ru (u - u_ref), psi = 1/2 (x - x_ref)' Rx (x - x_ref).

    mu = lambda_min(Ru + H' Rx H) for the constant input Jacobian H (lambda_min(Ru) if H is
    not given), ell_u = lambda_max(Ru), ell_x = lambda_max(Rx).

    :param u_ref: callable t -> input vector, or a constant vector
    :param x_ref: callable t -> state vector, or a constant vector
    :param H: constant steady-state input Jacobian of the plant
    """
    Ru = _check_spd(Ru, "Ru")
    Rx = _check_spd(Rx, "Rx")
    u_ref = as_reference(u_ref)
    x_ref = as_reference(x_ref)
    if H is None:
        curvature = Ru
    else:
        H = np.atleast_2d(np.asarray(H, dtype=float))
        if H.shape != (Rx.shape[0], Ru.shape[0]):
            raise InvalidCost(f"H shape {H.shape} does not match Rx {Rx.shape} and Ru {Ru.shape}")
        curvature = Ru + H.T @ Rx @ H

    def phi(u, t):
        d = u - u_ref(t)
        return 0.5 * float(d @ Ru @ d)

    def psi(x, t):
        d = x - x_ref(t)
        return 0.5 * float(d @ Rx @ d)

    return CostSpec(
        phi=phi,
        grad_phi=lambda u, t: Ru @ (u - u_ref(t)),
        psi=psi,
        grad_psi=lambda x, t: Rx @ (x - x_ref(t)),
        mu=float(np.linalg.eigvalsh(0.5 * (curvature + curvature.T))[0]),
        ell_u=float(np.linalg.eigvalsh(Ru)[-1]),
        ell_x=float(np.linalg.eigvalsh(Rx)[-1]),
        name="quadratic",
    )


# section: free workspace


@dataclass(frozen=True, eq=False)
class Obstacle:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise InvalidCost(f"obstacle radius must be positive; got {self.radius}")
        if self.center.shape != (2,):
            raise InvalidCost(f"obstacle center must be a position; got shape {self.center.shape}")


@dataclass(frozen=True, eq=False)
class Workspace:
    """
    Polyhedral free workspace {x : directions[i]' x - offsets[i] >= 0}.
    Half-plane i separates the vehicle from obstacle obstacle_ids[i].
    """

    directions: np.ndarray
    offsets: np.ndarray
    built_at: np.ndarray
    obstacle_ids: Tuple[int, ...]
    snapshot_id: int = 0

    @property
    def halfplanes(self) -> List[Tuple[np.ndarray, float]]:
        return [(self.directions[i], float(self.offsets[i])) for i in range(len(self.obstacle_ids))]

    @property
    def is_empty(self) -> bool:
        return len(self.obstacle_ids) == 0

    def margins(self, x: np.ndarray) -> np.ndarray:
        return self.directions @ x - self.offsets


def build_workspace(x_k, obstacles: Sequence[Obstacle], snapshot_id: int = 0) -> Workspace:
    """
    For obstacle i with center c_i and radius r_i: a_i = c_i - x_k, and the boundary passes
    through the midpoint m_i = x_k + a_i (1 - r_i/||a_i||)/2 between the vehicle and the
    obstacle surface, b_i = a_i' m_i. Stored as (-a_i, -b_i) so the vehicle side is feasible.
    """
    position = np.asarray(x_k, dtype=float)
    directions = np.zeros((len(obstacles), 2))
    offsets = np.zeros(len(obstacles))
    for index, obstacle in enumerate(obstacles):
        a = obstacle.center - position
        distance = float(np.linalg.norm(a))
        if distance <= obstacle.radius:
            raise InfeasibleWorkspace(index)
        midpoint = position + a * (1.0 - obstacle.radius / distance) / 2.0
        directions[index] = -a
        offsets[index] = -float(a @ midpoint)
    directions.setflags(write=False)
    offsets.setflags(write=False)
    return Workspace(
        directions=directions,
        offsets=offsets,
        built_at=position.copy(),
        obstacle_ids=tuple(range(len(obstacles))),
        snapshot_id=snapshot_id,
    )


# section: barrier cost


def barrier_weight(k: int, lambda0: float = DEFAULT_LAMBDA0, decay: float = DEFAULT_LAMBDA_DECAY) -> float:
    """
    lambda_k = lambda0 * exp(-decay * k)
    """
    return lambda0 * math.exp(-decay * k)


def _checked_margins(workspace: Workspace, x: np.ndarray) -> np.ndarray:
    margins = workspace.margins(x)
    outside = np.flatnonzero(margins <= 0)
    if outside.size:
        raise BarrierDomainError(outside.tolist(), float(margins[outside[0]]))
    return margins


def barrier_cost(
    x,
    k: int,
    workspace: Workspace,
    target,
    lambda0: float = DEFAULT_LAMBDA0,
    decay: float = DEFAULT_LAMBDA_DECAY,
) -> float:
    """
    1/2 ||x - target||^2 - lambda_k sum_i log(margin_i(x))
    """
    x = np.asarray(x, dtype=float)
    quadratic = 0.5 * float(np.sum((x - target) ** 2))
    if workspace.is_empty:
        return quadratic
    margins = _checked_margins(workspace, x)
    return quadratic - barrier_weight(k, lambda0, decay) * float(np.sum(np.log(margins)))


def barrier_gradient(
    x,
    k: int,
    workspace: Workspace,
    target,
    lambda0: float = DEFAULT_LAMBDA0,
    decay: float = DEFAULT_LAMBDA_DECAY,
    clamp_floor: float = None,
) -> np.ndarray:
    """
    (x - target) - lambda_k sum_i direction_i / margin_i(x).

    :param clamp_floor: when given, margins are clamped from below at this value
        instead of raising on leaving the workspace
    """
    x = np.asarray(x, dtype=float)
    gradient = x - target
    if workspace.is_empty:
        return gradient
    if clamp_floor is None:
        margins = _checked_margins(workspace, x)
    else:
        margins = np.maximum(workspace.margins(x), clamp_floor)
    return gradient - barrier_weight(k, lambda0, decay) * (workspace.directions.T @ (1.0 / margins))


# section: waypoint tracking


@dataclass(frozen=True, eq=False)
class WaypointSchedule:
    checkpoints: np.ndarray
    capture_radius: float = DEFAULT_CAPTURE_RADIUS

    def __post_init__(self):
        checkpoints = np.atleast_2d(np.asarray(self.checkpoints, dtype=float))
        if checkpoints.shape[0] == 0 or checkpoints.shape[1] != 2:
            raise InvalidCost(f"checkpoints must be a nonempty list of positions; got shape {checkpoints.shape}")
        if self.capture_radius <= 0:
            raise InvalidCost(f"capture radius must be positive; got {self.capture_radius}")
        object.__setattr__(self, "checkpoints", checkpoints)

    def __len__(self):
        return self.checkpoints.shape[0]


class TrackingCost:
    """
    Waypoint tracking with a log barrier. Holds the per-run progress along the schedule
    and produces one immutable CostSpec snapshot per sample:
    phi = 0, psi = barrier cost towards the current checkpoint over the workspace built
    at the position estimate.

    Costs act on the position block (the first two state components); gradients are
    zero-padded to state_dim.
    """

    def __init__(
        self,
        schedule: WaypointSchedule,
        obstacles: Sequence[Obstacle],
        lambda0: float = DEFAULT_LAMBDA0,
        decay: float = DEFAULT_LAMBDA_DECAY,
        margin_floor: float = DEFAULT_MARGIN_FLOOR,
        state_dim: int = 2,
    ):
        if lambda0 < 0 or decay <= 0:
            raise InvalidCost(f"barrier schedule needs lambda0 >= 0 and decay > 0; got {lambda0}, {decay}")
        if margin_floor <= 0:
            raise InvalidCost(f"margin floor must be positive; got {margin_floor}")
        if state_dim < 2:
            raise InvalidCost("tracking costs need at least a planar position")
        self.schedule = schedule
        self.obstacles = list(obstacles)
        self.lambda0 = lambda0
        self.decay = decay
        self.margin_floor = margin_floor
        self.state_dim = state_dim
        self.name = "tracking"
        self.reset()

    def reset(self):
        self.target_index = 0
        # (checkpoint index, sample index) for every capture
        self.captures: List[Tuple[int, int]] = []
        self.workspace: Optional[Workspace] = None
        self.snapshot_count = 0

    @property
    def current_target(self) -> np.ndarray:
        return self.schedule.checkpoints[self.target_index]

    @property
    def finished(self) -> bool:
        return len(self.captures) == len(self.schedule)

    def _pad(self, position_gradient: np.ndarray) -> np.ndarray:
        gradient = np.zeros(self.state_dim)
        gradient[:2] = position_gradient
        return gradient

    def _advance(self, k: int, position: np.ndarray) -> List[SampleFlag]:
        if self.finished:
            return []
        if np.linalg.norm(position - self.current_target) > self.schedule.capture_radius:
            return []
        self.captures.append((self.target_index, k))
        logger.info(f"checkpoint {self.target_index} captured at sample {k}")
        if self.target_index + 1 < len(self.schedule):
            self.target_index += 1
        return [SampleFlag.TargetCaptured]

    def at_sample(self, k: int, t: float, x_hat) -> CostSpec:
        position = np.asarray(x_hat, dtype=float)[:2]
        flags = self._advance(k, position)
        try:
            workspace = build_workspace(position, self.obstacles, snapshot_id=self.snapshot_count)
            self.snapshot_count += 1
        except InfeasibleWorkspace as ex:
            if self.workspace is None:
                raise
            logger.warning(f"sample {k}: {ex}; reusing workspace snapshot {self.workspace.snapshot_id}")
            workspace = self.workspace
            flags.append(SampleFlag.WorkspaceReused)
        self.workspace = workspace
        return self.snapshot(k, workspace, self.current_target.copy(), tuple(flags))

    def snapshot(self, k: int, workspace: Workspace, target: np.ndarray, flags: Tuple[SampleFlag, ...] = ()) -> CostSpec:
        """
        Frozen cost for sample k over the given workspace.

        mu = 1 from the quadratic term (the barrier is convex). ell_x bounds the barrier
        Hessian on {x : margin_i(x) >= margin_floor}: 1 + lambda_k sum_i ||direction_i||^2 / floor^2.
        """
        lambda0, decay, floor = self.lambda0, self.decay, self.margin_floor
        weight = barrier_weight(k, lambda0, decay)
        curvature = float(np.sum(workspace.directions**2)) / floor**2

        def psi(x, t):
            return barrier_cost(x[:2], k, workspace, target, lambda0, decay)

        def grad_psi(x, t):
            return self._pad(barrier_gradient(x[:2], k, workspace, target, lambda0, decay))

        def grad_psi_clamped(x, t):
            return self._pad(barrier_gradient(x[:2], k, workspace, target, lambda0, decay, clamp_floor=floor / MARGIN_CLAMP_DIVISOR))

        return CostSpec(
            phi=lambda u, t: 0.0,
            grad_phi=lambda u, t: np.zeros_like(u, dtype=float),
            psi=psi,
            grad_psi=grad_psi,
            mu=1.0,
            ell_u=0.0,
            ell_x=1.0 + weight * curvature,
            name="tracking",
            grad_psi_clamped=grad_psi_clamped,
            workspace=workspace,
            target=target,
            flags=flags,
        )


def make_tracking_cost(
    schedule: WaypointSchedule,
    obstacles: Sequence[Obstacle],
    lambda0: float = DEFAULT_LAMBDA0,
    decay: float = DEFAULT_LAMBDA_DECAY,
    margin_floor: float = DEFAULT_MARGIN_FLOOR,
    state_dim: int = 2,
) -> TrackingCost:
    return TrackingCost(schedule, obstacles, lambda0, decay, margin_floor, state_dim)
