"""
Optimizer oracle: solves

    u*(t) = argmin_{u in Uc} phi(u, t) + psi(h(u, w), t)

with the true steady-state map and the true disturbance, which the controller never sees.
Projected gradient with backtracking; infeasible trial points (barrier domain) are
treated as +inf and shrink the step.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from .constants import ORACLE_MAX_ITERATIONS, ORACLE_RESIDUAL_TOL
from .controller import ConstraintSet, gradient_map, project
from .costs import BarrierDomainError, CostSpec
from .plant import PlantModel


logger = logging.getLogger(__name__)

# smallest step tried before giving up on a line search
MIN_STEP = 1e-20


class OracleNotConverged(Exception):
    """
    Projected gradient did not reach the residual tolerance
    """

    def __init__(self, residual: float, iterations: int):
        super().__init__(f"oracle did not converge: residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class OracleSolution:
    u_star: np.ndarray
    x_star: np.ndarray
    iterations: int
    # fixed-point gap ||u - Proj(u - grad F(u))||
    residual: float


def reduced_cost(plant: PlantModel, cost: CostSpec, u: np.ndarray, w: np.ndarray, t: float) -> float:
    return cost.phi(u, t) + cost.psi(plant.steady_state(u, w), t)


def reduced_gradient(plant: PlantModel, cost: CostSpec, u: np.ndarray, w: np.ndarray, t: float) -> np.ndarray:
    return gradient_map(cost, plant, u, plant.steady_state(u, w), t)


def fixed_point_residual(
    plant: PlantModel, cost: CostSpec, constraint: ConstraintSet, u: np.ndarray, w: np.ndarray, t: float
) -> float:
    return float(np.linalg.norm(u - project(constraint, u - reduced_gradient(plant, cost, u, w, t))))


def _value(plant, cost, u, w, t) -> float:
    try:
        return reduced_cost(plant, cost, u, w, t)
    except BarrierDomainError:
        return math.inf


def solve_oracle(
    plant: PlantModel,
    cost: CostSpec,
    w_k: np.ndarray,
    t: float,
    warm_start: np.ndarray,
    constraint: ConstraintSet,
    fallback: np.ndarray = None,
    tol: float = ORACLE_RESIDUAL_TOL,
    max_iterations: int = ORACLE_MAX_ITERATIONS,
) -> OracleSolution:
    """
    :param fallback: start used when the warm start is outside the cost's domain
    """
    u = project(constraint, np.asarray(warm_start, dtype=float))
    value = _value(plant, cost, u, w_k, t)
    if not math.isfinite(value) and fallback is not None:
        logger.debug("warm start outside the cost domain; using the fallback start")
        u = project(constraint, np.asarray(fallback, dtype=float))
        value = _value(plant, cost, u, w_k, t)
    if not math.isfinite(value):
        raise BarrierDomainError([], math.nan)

    gradient = reduced_gradient(plant, cost, u, w_k, t)
    residual = float(np.linalg.norm(u - project(constraint, u - gradient)))
    step = 1.0
    iterations = 0
    while residual > tol:
        if iterations >= max_iterations:
            raise OracleNotConverged(residual, iterations)
        while True:
            candidate = project(constraint, u - step * gradient)
            move = candidate - u
            candidate_value = _value(plant, cost, candidate, w_k, t)
            # sufficient decrease for projected gradient; the last term absorbs rounding
            bound = value + float(gradient @ move) + float(move @ move) / (2.0 * step) + 1e-15 * max(1.0, abs(value))
            if candidate_value <= bound:
                break
            step /= 2.0
            if step < MIN_STEP:
                raise OracleNotConverged(residual, iterations)
        u, value = candidate, candidate_value
        gradient = reduced_gradient(plant, cost, u, w_k, t)
        residual = float(np.linalg.norm(u - project(constraint, u - gradient)))
        step *= 2.0
        iterations += 1

    logger.debug(f"oracle converged in {iterations} iterations, residual {residual:.3e}")
    return OracleSolution(u_star=u, x_star=plant.steady_state(u, w_k), iterations=iterations, residual=residual)
