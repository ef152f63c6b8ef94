"""
The closed-loop executor.

At every sample t_k = k tau:
    x_k       state sampled from the integrated flow
    x_hat_k   estimate from the perception channel (the controller never sees x_k otherwise)
    cost_k    cost snapshot, built from x_hat_k for tracking costs
    u_k       projected-gradient step from u_{k-1}
    u*_k      oracle solution of the same snapshot with the true steady-state map and w(t_k)
and u_k is held over [t_k, t_k + tau) while the plant is integrated.
"""
import logging
import math
import platform
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .certificates import CertificateError, CertificateInputs
from .constants import TRACE_FORMAT_VERSION, VERSION
from .controller import ControllerError, controller_step, initial_state
from .costs import CostError
from .dataexchange import PerceptionMode, RunStatus, SampleFlag
from .oracle import OracleNotConverged, solve_oracle
from .perception import PerceptionError, PerceptionModel, load_model, make_channel
from .plant import PlantError, integrate_flow_path
from .scenario import Scenario, ScenarioError


logger = logging.getLogger(__name__)


@dataclass(eq=False)
class RunTrace:
    """
    Record of one closed-loop run. Per-sample arrays have one row per completed sample;
    fine arrays have substeps rows per completed sample.
    """

    scenario_name: str
    status: RunStatus
    tau: float
    substeps: int
    times: np.ndarray
    states: np.ndarray
    estimates: np.ndarray
    u: np.ndarray
    u_star: np.ndarray
    x_star: np.ndarray
    disturbance: np.ndarray
    z_norm: np.ndarray
    # W_k = sqrt(V(x_k, u_k, w_k)); NaN when the plant has no explicit Lyapunov function
    lyapunov: np.ndarray
    perception_error: np.ndarray
    # (||u*_{k+1} - u*_k||, ||e_{k+1}||); the last row is NaN
    nu: np.ndarray
    snapshot_ids: np.ndarray
    # workspace margins of the true position, one column per obstacle
    margins: np.ndarray
    # min over obstacles of ||position - center|| - radius; NaN without obstacles
    clearance: np.ndarray
    oracle_iterations: np.ndarray
    oracle_residual: np.ndarray
    flags: List[Tuple[SampleFlag, ...]]
    fine_times: np.ndarray
    fine_states: np.ndarray
    fine_inputs: np.ndarray
    fine_z_norm: np.ndarray
    # (checkpoint index, sample index)
    captures: List[Tuple[int, int]] = field(default_factory=list)
    abort_reason: Optional[str] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def samples(self) -> int:
        return len(self.times)

    @property
    def completed(self) -> bool:
        return self.status == RunStatus.Completed

    @property
    def has_lyapunov(self) -> bool:
        return self.samples > 0 and not np.any(np.isnan(self.lyapunov))


class _Recorder:
    """
    Accumulates per-sample and per-substep records of a run
    """

    def __init__(self):
        self.samples: Dict[str, list] = {
            key: []
            for key in (
                "times",
                "states",
                "estimates",
                "u",
                "u_star",
                "x_star",
                "disturbance",
                "z_norm",
                "lyapunov",
                "perception_error",
                "snapshot_ids",
                "margins",
                "clearance",
                "oracle_iterations",
                "oracle_residual",
                "flags",
            )
        }
        self.fine: Dict[str, list] = {key: [] for key in ("fine_times", "fine_states", "fine_inputs", "fine_z_norm")}

    def add_sample(self, **values):
        for key, value in values.items():
            self.samples[key].append(value)

    def add_interval(self, times, states, inputs, z_norm):
        self.fine["fine_times"].append(times)
        self.fine["fine_states"].append(states)
        self.fine["fine_inputs"].append(inputs)
        self.fine["fine_z_norm"].append(z_norm)

    def arrays(self, plant, n_obstacles: int) -> Dict[str, Any]:
        n, m, d = plant.state_dim, plant.input_dim, plant.dist_dim
        shapes = {
            "states": (0, n),
            "estimates": (0, n),
            "u": (0, m),
            "u_star": (0, m),
            "x_star": (0, n),
            "disturbance": (0, d),
            "margins": (0, n_obstacles),
        }
        out = {}
        for key, values in self.samples.items():
            if key == "flags":
                out[key] = list(values)
            elif key in ("snapshot_ids", "oracle_iterations"):
                out[key] = np.array(values, dtype=int)
            elif values:
                out[key] = np.array(values, dtype=float)
            else:
                out[key] = np.zeros(shapes.get(key, (0,)))
        fine_shapes = {"fine_times": (0,), "fine_states": (0, n), "fine_inputs": (0, m), "fine_z_norm": (0,)}
        for key, chunks in self.fine.items():
            out[key] = np.concatenate(chunks) if chunks else np.zeros(fine_shapes[key])
        return out


def _z_norm(plant, x, x_star, u, u_star) -> float:
    return float(math.sqrt(np.sum(plant.tracking_block(x - x_star) ** 2) + np.sum((u - u_star) ** 2)))


def _clearance(obstacles, position) -> float:
    if not obstacles:
        return math.nan
    return min(float(np.linalg.norm(position - o.center)) - o.radius for o in obstacles)


def _channel(scenario: Scenario, model: Optional[PerceptionModel]):
    settings = scenario.perception
    if settings.mode == PerceptionMode.TrainedModel and model is None:
        resp = load_model(settings.model_path)
        if not resp.success:
            raise ScenarioError(resp.error_message)
        model = resp.body
    rng = np.random.default_rng(scenario.run.seed)
    return make_channel(settings.mode, scenario.plant, eps=settings.noise, model=model, rng=rng), model


def declared_perception_error(scenario: Scenario, model: Optional[PerceptionModel] = None) -> float:
    """
    Perception error bound that enters the certificate: the noise radius, the model's
    measured validation error, or 0 for exact feedback
    """
    settings = scenario.perception
    if settings.mode == PerceptionMode.NoisyExact:
        return settings.noise
    if settings.mode == PerceptionMode.TrainedModel and model is not None and model.measured_error is not None:
        return float(model.measured_error)
    return 0.0


def run_closed_loop(scenario: Scenario, model: PerceptionModel = None) -> RunTrace:
    """
    Execute the sampled-data loop for scenario.horizon samples.

    Runtime failures (integration divergence, oracle failure, barrier domain errors)
    end the run early with a trace marked aborted. A missing perception model is a
    scenario problem and raises ScenarioError.

    :param model: perception model to use instead of loading scenario.perception.model_path
    """
    plant = scenario.plant
    config = scenario.controller
    tau, substeps, horizon = config.tau, scenario.run.substeps, scenario.horizon
    channel, model = _channel(scenario, model)
    cost = scenario.build_cost()
    cost.reset()
    obstacles = list(scenario.cost.obstacles)
    w = scenario.disturbance

    logger.info(f"running [{scenario.name}]: {horizon} samples, tau={tau}, perception={scenario.perception.mode.name}")
    recorder = _Recorder()
    state = initial_state(config, scenario.u0)
    x = scenario.initial_state()
    u_star_prev = None
    status, reason = RunStatus.Completed, None
    for k in range(horizon):
        t = k * tau
        try:
            w_k = w(t)
            reading = channel.observe(x, k)
            cost_k = cost.at_sample(k, t, reading.estimate)
            u_k, state = controller_step(state, config, cost_k, plant, reading.estimate)

            fallback = cost_k.workspace.built_at if cost_k.workspace is not None else u_k
            solution = solve_oracle(
                plant,
                cost_k,
                w_k,
                t,
                warm_start=u_k if u_star_prev is None else u_star_prev,
                constraint=config.constraint,
                fallback=fallback,
            )
            u_star = solution.u_star

            path = integrate_flow_path(plant, x, u_k, w, t, tau, substeps)
            fine_targets = np.array([plant.steady_state(u_star, w(s)) for s in path.times])
            input_error = float(np.sum((u_k - u_star) ** 2))
            fine_z = np.sqrt(np.sum(plant.tracking_block(path.states - fine_targets) ** 2, axis=1) + input_error)
        except (PlantError, CostError, ControllerError, PerceptionError, OracleNotConverged) as ex:
            status, reason = RunStatus.Aborted, f"sample {k}: {type(ex).__name__}: {ex}"
            logger.warning(f"run [{scenario.name}] aborted at {reason}")
            break

        position = x[:2]
        workspace = cost_k.workspace
        recorder.add_sample(
            times=t,
            states=x.copy(),
            estimates=np.array(reading.estimate, dtype=float),
            u=u_k.copy(),
            u_star=u_star.copy(),
            x_star=solution.x_star.copy(),
            disturbance=w_k.copy(),
            z_norm=_z_norm(plant, x, solution.x_star, u_k, u_star),
            lyapunov=math.sqrt(plant.lyapunov_value(x, u_k, w_k)) if plant.has_lyapunov_function else math.nan,
            perception_error=reading.error,
            snapshot_ids=-1 if workspace is None else workspace.snapshot_id,
            margins=workspace.margins(position) if workspace is not None else np.zeros(len(obstacles)),
            clearance=_clearance(obstacles, position),
            oracle_iterations=solution.iterations,
            oracle_residual=solution.residual,
            flags=tuple(cost_k.flags) + tuple(reading.flags) + tuple(state.last_flags),
        )
        recorder.add_interval(path.times, path.states, np.tile(u_k, (substeps, 1)), fine_z)
        u_star_prev = u_star
        x = path.final

    arrays = recorder.arrays(plant, len(obstacles))
    nu = np.full((len(arrays["times"]), 2), math.nan)
    if len(arrays["times"]) > 1:
        nu[:-1, 0] = np.linalg.norm(np.diff(arrays["u_star"], axis=0), axis=1)
        nu[:-1, 1] = arrays["perception_error"][1:]

    trace = RunTrace(
        scenario_name=scenario.name,
        status=status,
        tau=tau,
        substeps=substeps,
        nu=nu,
        captures=list(getattr(cost, "captures", [])),
        abort_reason=reason,
        **arrays,
    )
    trace.metadata = _metadata(scenario, trace, model)
    logger.info(
        f"run [{scenario.name}] {status.name}: {trace.samples} samples, "
        f"final |z|={trace.z_norm[-1] if trace.samples else math.nan:.3e}"
    )
    return trace


def _metadata(scenario: Scenario, trace: RunTrace, model: Optional[PerceptionModel]) -> Dict[str, Any]:
    eps = declared_perception_error(scenario, model)
    inputs = None
    if trace.samples:
        series = compute_tracking_series(trace, scenario.disturbance.sup_rate)
        try:
            inputs = certificate_inputs(scenario, series.delta_u_star, max(eps, series.max_perception_error)).to_dict()
        except (CostError, CertificateError) as ex:
            logger.warning(f"no certificate inputs for [{scenario.name}]: {ex}")
    return {
        "format": TRACE_FORMAT_VERSION,
        "scenario": scenario.name,
        "scenario_hash": scenario.source_hash,
        "scenario_source": scenario.source_text,
        "overrides": [[key, value] for key, value in scenario.overrides],
        "seed": scenario.run.seed,
        "horizon": scenario.horizon,
        "plant": scenario.plant.name,
        "cost": scenario.cost.kind,
        "perception": scenario.perception.mode.name,
        "perception_error_bound": eps,
        "eta": scenario.controller.eta,
        "sup_w_rate": scenario.disturbance.sup_rate,
        "obstacles": [[float(o.center[0]), float(o.center[1]), o.radius] for o in scenario.cost.obstacles],
        "certificate_inputs": inputs,
        "versions": {"fbopt": VERSION, "numpy": np.__version__, "python": platform.python_version()},
    }


def certificate_inputs(scenario: Scenario, delta_u_star: float = 0.0, eps_perception: float = 0.0) -> CertificateInputs:
    return CertificateInputs.from_models(
        scenario.plant,
        scenario.reference_cost(),
        scenario.controller,
        sup_w_rate=scenario.disturbance.sup_rate,
        delta_u_star=delta_u_star,
        eps_perception=eps_perception,
    )


# section: post-processing


@dataclass(frozen=True, eq=False)
class TrackingSeries:
    z_norm: np.ndarray
    delta_u_star: float
    sup_w_rate: float
    max_perception_error: float
    partial: bool = False


def compute_tracking_series(trace: RunTrace, sup_w_rate: float = None) -> TrackingSeries:
    """
    ||z_k||, sup_k ||u*_k - u*_{k-1}|| from the oracle sequence, and sup ||w'||.

    :param sup_w_rate: analytic disturbance rate bound; read from the trace metadata when omitted
    """
    if not trace.completed:
        logger.warning(f"trace of [{trace.scenario_name}] is aborted ({trace.abort_reason}); series is partial")
    if sup_w_rate is None:
        sup_w_rate = float(trace.metadata.get("sup_w_rate", 0.0))
    delta = 0.0
    if trace.samples > 1:
        delta = float(np.max(np.linalg.norm(np.diff(trace.u_star, axis=0), axis=1)))
    max_error = float(np.max(trace.perception_error)) if trace.samples else 0.0
    return TrackingSeries(
        z_norm=trace.z_norm.copy(),
        delta_u_star=delta,
        sup_w_rate=sup_w_rate,
        max_perception_error=max_error,
        partial=not trace.completed,
    )


def tail_error(trace: RunTrace) -> float:
    """
    sup of ||z(t)|| over the second half of the run
    """
    if len(trace.fine_times) == 0:
        return math.nan
    end = trace.samples * trace.tau
    tail = trace.fine_times >= end / 2.0
    return float(np.max(trace.fine_z_norm[tail]))


def terminal_error(trace: RunTrace) -> float:
    """
    ||z|| at the last sample
    """
    return float(trace.z_norm[-1]) if trace.samples else math.nan


def checkpoints_in_order(trace: RunTrace, count: int) -> bool:
    """
    True when checkpoints 0..count-1 were captured, each once, in order
    """
    return [index for index, _ in trace.captures] == list(range(count))


def min_fine_clearance(trace: RunTrace) -> float:
    """
    min over the fine trajectory and the run's obstacles of ||position - center|| - radius
    """
    obstacles = trace.metadata.get("obstacles") or []
    if not obstacles or len(trace.fine_states) == 0:
        return math.inf
    positions = trace.fine_states[:, :2]
    return min(float(np.min(np.linalg.norm(positions - np.array([a, b]), axis=1))) - r for a, b, r in obstacles)
