"""
Parameter sweeps: one closed-loop run per value of a dotted scenario key.

Runs are independent (own scenario instance, own seed from the scenario) and may execute
in worker processes; results are put back in value order.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import spearmanr

from .dataexchange import RunStatus
from .harness import compute_tracking_series, run_closed_loop, tail_error, terminal_error
from .scenario import Scenario, ScenarioError, scenario_from_text


logger = logging.getLogger(__name__)

# ISS sweeps accept a correlation at or above this
MIN_SPEARMAN = 0.9


@dataclass(frozen=True)
class SweepPoint:
    value: Any
    tail_error: float
    terminal_error: float
    status: RunStatus
    sup_w_rate: float
    delta_u_star: float
    max_perception_error: float
    abort_reason: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "tail_error": self.tail_error,
            "terminal_error": self.terminal_error,
            "status": self.status.name,
            "sup_w_rate": self.sup_w_rate,
            "delta_u_star": self.delta_u_star,
            "max_perception_error": self.max_perception_error,
            "abort_reason": self.abort_reason,
        }


@dataclass(frozen=True)
class SweepResult:
    param: str
    points: Tuple[SweepPoint, ...]
    # rank correlation of (value, tail error); NaN when either side is constant
    spearman: float

    @property
    def values(self) -> List[Any]:
        return [point.value for point in self.points]

    @property
    def tail_errors(self) -> np.ndarray:
        return np.array([point.tail_error for point in self.points])

    @property
    def all_completed(self) -> bool:
        return all(point.status == RunStatus.Completed for point in self.points)

    @property
    def monotone(self) -> bool:
        """
        tail errors nondecreasing in value order, up to rounding
        """
        tails = self.tail_errors
        return bool(np.all(np.diff(tails) >= -1e-12 * np.maximum(1.0, np.abs(tails[:-1]))))

    def passes(self, min_correlation: float = MIN_SPEARMAN) -> bool:
        return self.all_completed and self.monotone and self.spearman >= min_correlation

    def to_dict(self) -> dict:
        return {
            "param": self.param,
            "spearman": self.spearman,
            "monotone": self.monotone,
            "points": [point.to_dict() for point in self.points],
        }


def magnitude(value) -> float:
    """
    scalar used to rank a swept value: the value itself, or the norm of an array
    """
    if isinstance(value, bool):
        return float(value)
    if isinstance(value, (int, float)):
        return float(value)
    return float(np.linalg.norm(np.asarray(value, dtype=float)))


def _run_point(job: Tuple[int, Any, str, Optional[str], Dict[str, Any]]) -> Tuple[int, SweepPoint]:
    """
    worker entry: rebuild the scenario from its text so nothing unpicklable crosses processes
    """
    index, value, text, source_path, overrides = job
    scenario = scenario_from_text(text, source_path=source_path, overrides=overrides)
    return index, _evaluate(scenario, value)


def _evaluate(scenario: Scenario, value: Any) -> SweepPoint:
    trace = run_closed_loop(scenario)
    series = compute_tracking_series(trace, scenario.disturbance.sup_rate)
    return SweepPoint(
        value=value,
        tail_error=tail_error(trace),
        terminal_error=terminal_error(trace),
        status=trace.status,
        sup_w_rate=series.sup_w_rate,
        delta_u_star=series.delta_u_star,
        max_perception_error=series.max_perception_error,
        abort_reason=trace.abort_reason,
    )


def _spearman(values: Sequence[Any], tails: np.ndarray) -> float:
    x = [magnitude(value) for value in values]
    if len(x) < 2 or len(set(x)) < 2 or np.all(tails == tails[0]) or np.any(np.isnan(tails)):
        return math.nan
    rho, _ = spearmanr(x, tails)
    return float(rho)


def run_sweep(scenario: Scenario, param: str, values: Sequence[Any], workers: int = 1) -> SweepResult:
    """
    Run scenario once per value of the dotted key param.

    :param workers: number of worker processes; 1 runs in this process
    """
    if not values:
        raise ScenarioError("sweep needs at least one value")
    # validate every point before running any
    scenarios = [scenario.with_overrides({param: value}) for value in values]
    logger.info(f"sweeping [{param}] over {len(values)} values with {workers} worker(s)")

    points: List[Optional[SweepPoint]] = [None] * len(values)
    if workers <= 1:
        for index, (point_scenario, value) in enumerate(zip(scenarios, values)):
            points[index] = _evaluate(point_scenario, value)
            logger.info(f"[{param}] = {value}: tail error {points[index].tail_error:.6g}")
    else:
        jobs = [
            (index, value, scenario.source_text, scenario.source_path, {**dict(scenario.overrides), param: value})
            for index, value in enumerate(values)
        ]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(_run_point, job) for job in jobs]
            for future in as_completed(futures):
                index, point = future.result()
                points[index] = point
                logger.info(f"[{param}] = {point.value}: tail error {point.tail_error:.6g}")

    tails = np.array([point.tail_error for point in points])
    return SweepResult(param=param, points=tuple(points), spearman=_spearman(values, tails))


def iss_sweep(
    scenario: Scenario, param: str, values: Sequence[Any], workers: int = 1, min_correlation: float = MIN_SPEARMAN
) -> SweepResult:
    """
    Sweep one input of the tracking bound (disturbance rate, optimizer drift or
    perception error) upward and check that the tail tracking error grows with it.
    """
    magnitudes = [magnitude(value) for value in values]
    if any(b < a for a, b in zip(magnitudes, magnitudes[1:])):
        raise ScenarioError(f"ISS sweep values must be nondecreasing; got {list(values)}")
    result = run_sweep(scenario, param, values, workers)
    if result.passes(min_correlation):
        logger.info(f"ISS sweep [{param}]: monotone, spearman={result.spearman:.3f}")
    else:
        logger.warning(
            f"ISS sweep [{param}] failed: monotone={result.monotone}, spearman={result.spearman:.3f}, "
            f"completed={result.all_completed}"
        )
    return result
