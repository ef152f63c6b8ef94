"""
Scenario files: loading, validation and construction of a run's components.

A scenario file is parsed into nested tables (see lang_parser), overrides are applied by
dotted key, and every table is validated into typed settings. Validation keeps going
after the first bad key so that one load reports everything wrong with a file.
"""
from __future__ import annotations

import copy
import hashlib
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import (
    DEFAULT_ARCH,
    DEFAULT_BATCH_SIZE,
    DEFAULT_CAPTURE_RADIUS,
    DEFAULT_EPOCHS,
    DEFAULT_JITTER,
    DEFAULT_LAMBDA0,
    DEFAULT_LAMBDA_DECAY,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MARGIN_FLOOR,
    DEFAULT_MOMENTUM,
    DEFAULT_OPTIMIZER,
    DEFAULT_SUBSTEPS,
    DEFAULT_VALIDATION_GRID,
    OPTIMIZERS,
    ORACLE_MAX_ITERATIONS,
    ORACLE_RESIDUAL_TOL,
    RASTER_DOMAIN,
)
from .controller import ConstraintSet, ControllerConfig, ControllerError
from .costs import (
    CostError,
    CostSpec,
    Obstacle,
    TrackingCost,
    WaypointSchedule,
    circular_reference,
    constant_reference,
    make_quadratic_cost,
    make_tracking_cost,
)
from .dataexchange import PerceptionMode, Response
from .lang_parser.frontend import parse_document
from .lang_parser.utils import ParseError
from .oracle import solve_oracle
from .perception import PerceptionError, RasterConfig, Region, region_within
from .plant import (
    DisturbanceSignal,
    PlantError,
    PlantModel,
    constant_disturbance,
    make_lti_plant,
    make_unicycle_plant,
    ramp_disturbance,
    sinusoid_disturbance,
)


logger = logging.getLogger(__name__)


class ScenarioError(Exception):
    """
    Scenario cannot be loaded or used
    """


class ScenarioSyntaxError(ScenarioError):
    """
    Scenario text does not parse
    """


class ScenarioValidationError(ScenarioError):
    """
    Scenario parses but one or more values are invalid
    """

    def __init__(self, problems: Sequence[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


PERCEPTION_MODES = {
    "exact": PerceptionMode.Exact,
    "noisy": PerceptionMode.NoisyExact,
    "model": PerceptionMode.TrainedModel,
}


# section: settings


@dataclass
class RunConfig:
    """
    Run-level settings of a scenario
    """

    horizon: int
    substeps: int = DEFAULT_SUBSTEPS
    seed: int = 0
    initial_offset: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class CostSettings:
    kind: str
    # quadratic costs are immutable and built once
    quadratic: Optional[CostSpec] = None
    schedule: Optional[WaypointSchedule] = None
    obstacles: Tuple[Obstacle, ...] = ()
    lambda0: float = DEFAULT_LAMBDA0
    decay: float = DEFAULT_LAMBDA_DECAY
    margin_floor: float = DEFAULT_MARGIN_FLOOR


@dataclass(frozen=True)
class TrainingSettings:
    region: Region
    grid: int
    arch: Tuple[int, ...] = DEFAULT_ARCH
    epochs: int = DEFAULT_EPOCHS
    learning_rate: float = DEFAULT_LEARNING_RATE
    batch_size: int = DEFAULT_BATCH_SIZE
    momentum: float = DEFAULT_MOMENTUM
    jitter: float = DEFAULT_JITTER
    seed: int = 0
    validation_grid: int = DEFAULT_VALIDATION_GRID
    optimizer: str = DEFAULT_OPTIMIZER
    # error bound is measured over this region; None measures over the training region
    validation_region: Optional[Region] = None


@dataclass(frozen=True)
class PerceptionSettings:
    mode: PerceptionMode = PerceptionMode.Exact
    # radius of the injected noise (noisy mode)
    noise: float = 0.0
    model_path: Optional[str] = None
    raster: RasterConfig = field(default_factory=RasterConfig)
    training: Optional[TrainingSettings] = None


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    plant: PlantModel
    cost: CostSettings
    controller: ControllerConfig
    u0: np.ndarray
    disturbance: DisturbanceSignal
    perception: PerceptionSettings
    run: RunConfig
    # parsed document with overrides applied
    document: Dict[str, Any]
    source_text: str = ""
    source_path: Optional[str] = None
    overrides: Tuple[Tuple[str, Any], ...] = ()

    @property
    def source_hash(self) -> str:
        return hashlib.sha256(self.source_text.encode("utf-8")).hexdigest()

    @property
    def horizon(self) -> int:
        return self.run.horizon

    @property
    def tau(self) -> float:
        return self.controller.tau

    def build_cost(self) -> Union[CostSpec, TrackingCost]:
        """
        Cost for one run; tracking costs carry per-run progress, so each call builds a new one
        """
        if self.cost.kind == "quadratic":
            return self.cost.quadratic
        return make_tracking_cost(
            self.cost.schedule,
            self.cost.obstacles,
            self.cost.lambda0,
            self.cost.decay,
            self.cost.margin_floor,
            state_dim=self.plant.state_dim,
        )

    def initial_state(self) -> np.ndarray:
        """
        x(0) = h(u0, w(0)) + initial_offset
        """
        x0 = self.plant.steady_state(self.u0, self.disturbance(0.0))
        if self.run.initial_offset is not None:
            x0 = x0 + self.run.initial_offset
        return x0

    def reference_cost(self) -> CostSpec:
        """
        The cost in force at the first sample, as seen from the initial state
        """
        return self.build_cost().at_sample(0, 0.0, self.initial_state())

    def with_overrides(self, overrides: Dict[str, Any], require_model: bool = True) -> Scenario:
        document = copy.deepcopy(self.document)
        apply_overrides(document, overrides)
        return scenario_from_document(
            document,
            source_text=self.source_text,
            source_path=self.source_path,
            require_model=require_model,
            overrides=self.overrides + tuple(overrides.items()),
        )


# section: typed table access

_MISSING = object()


class _Table:
    """
    Typed read access to one table of a scenario document.
    Problems are appended to a shared list instead of raised.
    """

    def __init__(self, body: Any, path: str, problems: List[str]):
        self.body = body if isinstance(body, dict) else {}
        self.present = isinstance(body, dict)
        self.path = path
        self.problems = problems
        self.seen = set()

    def where(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def problem(self, key: str, message: str):
        self.problems.append(f"[{self.where(key)}] {message}")

    def has(self, key: str) -> bool:
        return key in self.body

    def raw(self, key: str, default: Any = _MISSING) -> Any:
        self.seen.add(key)
        if key not in self.body:
            if default is _MISSING:
                self.problem(key, "is required")
                return None
            return default
        return self.body[key]

    def number(self, key: str, default: Any = _MISSING, positive=False, minimum=None, integer=False):
        if key not in self.body and default is not _MISSING:
            self.seen.add(key)
            return default
        value = self.raw(key)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.problem(key, f"must be a number; got {value!r}")
            return None
        if integer and not isinstance(value, int):
            self.problem(key, f"must be an integer; got {value!r}")
            return None
        if not math.isfinite(value):
            self.problem(key, f"must be finite; got {value!r}")
            return None
        if positive and not value > 0:
            self.problem(key, f"must be positive; got {value!r}")
            return None
        if minimum is not None and value < minimum:
            self.problem(key, f"must be >= {minimum}; got {value!r}")
            return None
        return value if integer else float(value)

    def string(self, key: str, default: Any = _MISSING, choices: Sequence[str] = None):
        if key not in self.body and default is not _MISSING:
            self.seen.add(key)
            return default
        value = self.raw(key)
        if value is None:
            return None
        if not isinstance(value, str):
            self.problem(key, f"must be a string; got {value!r}")
            return None
        if choices is not None and value not in choices:
            self.problem(key, f"must be one of {list(choices)}; got {value!r}")
            return None
        return value

    def boolean(self, key: str, default: bool) -> bool:
        value = self.raw(key, default)
        if not isinstance(value, bool):
            self.problem(key, f"must be true or false; got {value!r}")
            return default
        return value

    def array(self, key: str, shape: Tuple[Optional[int], ...], default: Any = _MISSING) -> Optional[np.ndarray]:
        """
        :param shape: expected shape; None entries match any size. A scalar given for a
            vector is broadcast when the length is known.
        """
        if key not in self.body and default is not _MISSING:
            self.seen.add(key)
            return default
        value = self.raw(key)
        if value is None:
            return None
        if isinstance(value, (dict, str)) or _has_non_numbers(value):
            self.problem(key, f"must be a numeric array; got {value!r}")
            return None
        try:
            array = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            self.problem(key, "must be a rectangular numeric array")
            return None
        if array.ndim == 0 and len(shape) == 1 and shape[0] is not None:
            array = np.full(shape[0], float(array))
        if array.ndim != len(shape) or any(want is not None and got != want for got, want in zip(array.shape, shape)):
            expected = "x".join("?" if want is None else str(want) for want in shape)
            self.problem(key, f"must have shape {expected}; got {array.shape}")
            return None
        if not np.all(np.isfinite(array)):
            self.problem(key, "must be finite")
            return None
        return array

    def table(self, key: str, required: bool = False) -> _Table:
        value = self.raw(key, _MISSING if required else None)
        if value is not None and not isinstance(value, dict):
            self.problem(key, "must be a table")
        return _Table(value, self.where(key), self.problems)

    def tables(self, key: str) -> List[_Table]:
        value = self.raw(key, [])
        if not isinstance(value, list) or not all(isinstance(item, dict) for item in value):
            self.problem(key, "must be an array of tables")
            return []
        return [_Table(item, f"{self.where(key)}[{index}]", self.problems) for index, item in enumerate(value)]

    def check_unknown(self):
        for key in self.body:
            if key not in self.seen:
                self.problem(key, "unknown key")


def _has_non_numbers(value) -> bool:
    if isinstance(value, list):
        return any(_has_non_numbers(item) for item in value)
    return isinstance(value, bool) or not isinstance(value, (int, float))


def _region(table: _Table, key: str, default: Any = _MISSING) -> Optional[Region]:
    corners = table.array(key, (2, 2), default)
    if corners is None or not isinstance(corners, np.ndarray):
        return corners
    (a_min, b_min), (a_max, b_max) = corners.tolist()
    if not (a_min < a_max and b_min < b_max):
        table.problem(key, f"must be [[a_min, b_min], [a_max, b_max]] with a_min < a_max, b_min < b_max")
        return None
    return (a_min, b_min), (a_max, b_max)


# section: table validators


def _plant(table: _Table) -> Optional[PlantModel]:
    kind = table.string("kind", choices=("lti", "unicycle"))
    plant = None
    try:
        if kind == "lti":
            A = table.array("A", (None, None))
            n = A.shape[0] if A is not None else None
            B = table.array("B", (n, None))
            E = table.array("E", (n, None))
            Q = table.array("Q", (n, n), default=None)
            if A is not None and B is not None and E is not None:
                plant = make_lti_plant(A, B, E, Q)
        elif kind == "unicycle":
            kappa = table.number("kappa", positive=True)
            if kappa is not None:
                plant = make_unicycle_plant(kappa)
    except PlantError as ex:
        table.problem("kind", f"invalid plant: {ex}")
    table.check_unknown()
    return plant


def _reference(table: _Table, key: str, dim: int):
    if not table.has(key):
        table.seen.add(key)
        return constant_reference(np.zeros(dim))
    if not isinstance(table.body[key], dict):
        value = table.array(key, (dim,))
        return None if value is None else constant_reference(value)
    sub = table.table(key)
    kind = sub.string("kind", default="constant", choices=("constant", "circle"))
    reference = None
    if kind == "constant":
        value = sub.array("value", (dim,))
        reference = None if value is None else constant_reference(value)
    elif kind == "circle":
        center = sub.array("center", (dim,))
        radius = sub.number("radius", minimum=0.0)
        speed = sub.number("speed", default=0.0)
        phase = sub.number("phase", default=0.0)
        if dim < 2:
            sub.problem("kind", "circular references need at least two coordinates")
        elif center is not None and radius is not None and speed is not None and phase is not None:
            reference = circular_reference(center, radius, speed, phase)
    sub.check_unknown()
    return reference


def _cost(table: _Table, plant: Optional[PlantModel], u0) -> Optional[CostSettings]:
    kind = table.string("kind", choices=("quadratic", "tracking"))
    settings = None
    if plant is None:
        # dimensions unknown; plant problems are already recorded
        table.seen.update(table.body.keys())
        return None
    n, m = plant.state_dim, plant.input_dim
    try:
        if kind == "quadratic":
            Ru = table.array("Ru", (m, m))
            Rx = table.array("Rx", (n, n))
            u_ref = _reference(table, "u_ref", m)
            x_ref = _reference(table, "x_ref", n)
            H = plant.input_jacobian(u0 if u0 is not None else np.zeros(m))
            if Ru is not None and Rx is not None and u_ref is not None and x_ref is not None:
                settings = CostSettings(kind="quadratic", quadratic=make_quadratic_cost(Ru, Rx, u_ref, x_ref, H=H))
        elif kind == "tracking":
            lambda0 = table.number("lambda0", default=DEFAULT_LAMBDA0, minimum=0.0)
            decay = table.number("decay", default=DEFAULT_LAMBDA_DECAY, positive=True)
            margin_floor = table.number("margin_floor", default=DEFAULT_MARGIN_FLOOR, positive=True)
            schedule_table = table.table("schedule", required=True)
            checkpoints = schedule_table.array("checkpoints", (None, 2))
            capture_radius = schedule_table.number("capture_radius", default=DEFAULT_CAPTURE_RADIUS, positive=True)
            schedule_table.check_unknown()
            obstacles = []
            for obstacle_table in table.tables("obstacles"):
                center = obstacle_table.array("center", (2,))
                radius = obstacle_table.number("radius", positive=True)
                obstacle_table.check_unknown()
                if center is not None and radius is not None:
                    obstacles.append(Obstacle(center, radius))
            if m != 2:
                table.problem("kind", f"tracking costs command planar positions; plant has {m} inputs")
            elif checkpoints is not None and None not in (lambda0, decay, margin_floor, capture_radius):
                settings = CostSettings(
                    kind="tracking",
                    schedule=WaypointSchedule(checkpoints, capture_radius),
                    obstacles=tuple(obstacles),
                    lambda0=lambda0,
                    decay=decay,
                    margin_floor=margin_floor,
                )
    except CostError as ex:
        table.problem("kind", f"invalid cost: {ex}")
    table.check_unknown()
    return settings


def _constraint(table: _Table, m: int) -> Optional[ConstraintSet]:
    kind = table.string("kind", choices=("box", "ball"))
    cset = None
    try:
        if kind == "box":
            lower = table.array("lower", (m,))
            upper = table.array("upper", (m,))
            if lower is not None and upper is not None:
                cset = ConstraintSet.box(lower, upper)
        elif kind == "ball":
            center = table.array("center", (m,))
            radius = table.number("radius", positive=True)
            if center is not None and radius is not None:
                cset = ConstraintSet.ball(center, radius)
    except ControllerError as ex:
        table.problem("kind", f"invalid constraint set: {ex}")
    table.check_unknown()
    return cset


def _disturbance(table: _Table, d: int) -> Optional[DisturbanceSignal]:
    if not table.present:
        return constant_disturbance(np.zeros(d))
    kind = table.string("kind", default="constant", choices=("constant", "sinusoid", "ramp"))
    signal = None
    try:
        if kind == "constant":
            value = table.array("value", (d,), default=np.zeros(d))
            if value is not None:
                signal = constant_disturbance(value)
        elif kind == "sinusoid":
            amplitude = table.array("amplitude", (d,))
            frequency = table.number("frequency", minimum=0.0)
            offset = table.array("offset", (d,), default=np.zeros(d))
            phase = table.array("phase", (d,), default=np.zeros(d))
            if frequency is not None and all(v is not None for v in (amplitude, offset, phase)):
                signal = sinusoid_disturbance(amplitude, frequency, offset, phase)
        elif kind == "ramp":
            value = table.array("value", (d,), default=np.zeros(d))
            slope = table.array("slope", (d,))
            if value is not None and slope is not None:
                signal = ramp_disturbance(value, slope)
    except PlantError as ex:
        table.problem("kind", f"invalid disturbance: {ex}")
    table.check_unknown()
    return signal


def _training(table: _Table, raster: RasterConfig) -> Optional[TrainingSettings]:
    if not table.present:
        return None
    region = _region(table, "region")
    grid = table.number("grid", integer=True, minimum=2)
    arch = table.array("arch", (None,), default=None)
    if arch is not None:
        if np.any(arch != np.round(arch)) or np.any(arch < 1) or arch.size < 2:
            table.problem("arch", "must list at least two positive integer widths")
            arch = None
        else:
            arch = tuple(int(width) for width in arch)
            if arch[0] != raster.size:
                table.problem("arch", f"input width {arch[0]} does not match the raster size {raster.size}")
            if arch[-1] != 2:
                table.problem("arch", f"output width must be 2; got {arch[-1]}")
    settings = dict(
        epochs=table.number("epochs", default=DEFAULT_EPOCHS, integer=True, minimum=1),
        learning_rate=table.number("learning_rate", default=DEFAULT_LEARNING_RATE, positive=True),
        batch_size=table.number("batch_size", default=DEFAULT_BATCH_SIZE, integer=True, minimum=1),
        momentum=table.number("momentum", default=DEFAULT_MOMENTUM, minimum=0.0),
        jitter=table.number("jitter", default=DEFAULT_JITTER, minimum=0.0),
        seed=table.number("seed", default=0, integer=True, minimum=0),
        validation_grid=table.number("validation_grid", default=DEFAULT_VALIDATION_GRID, integer=True, minimum=2),
        optimizer=table.string("optimizer", default=DEFAULT_OPTIMIZER, choices=OPTIMIZERS),
    )
    validation_region = _region(table, "validation_region", default=None)
    table.check_unknown()
    if region is None or grid is None or any(value is None for value in settings.values()):
        return None
    if not settings["momentum"] < 1.0:
        table.problem("momentum", "must be in [0, 1)")
        return None
    if validation_region is not None and not region_within(validation_region, region):
        table.problem("validation_region", f"must lie inside the training region {list(region)}")
        return None
    return TrainingSettings(
        region=region,
        grid=grid,
        arch=arch or (raster.size,) + tuple(DEFAULT_ARCH[1:]),
        validation_region=validation_region,
        **settings,
    )


def _perception(table: _Table, plant: Optional[PlantModel], base_dir: str, require_model: bool) -> PerceptionSettings:
    mode_name = table.string("mode", default="exact", choices=tuple(PERCEPTION_MODES))
    noise = table.number("noise", default=0.0, minimum=0.0)
    model_path = table.string("model", default=None)

    raster_table = table.table("raster")
    raster = RasterConfig()
    if raster_table.present:
        width = raster_table.number("width", default=raster.width, integer=True, minimum=1)
        height = raster_table.number("height", default=raster.height, integer=True, minimum=1)
        domain = _region(raster_table, "domain", default=RASTER_DOMAIN)
        blob_sigma = raster_table.number("blob_sigma", default=raster.blob_sigma, positive=True)
        raster_table.check_unknown()
        if None not in (width, height, domain, blob_sigma):
            try:
                raster = RasterConfig(width, height, domain, blob_sigma)
            except PerceptionError as ex:
                raster_table.problem("domain", str(ex))
    training = _training(table.table("training"), raster)
    table.check_unknown()

    mode = PERCEPTION_MODES.get(mode_name, PerceptionMode.Exact)
    if model_path is not None and not os.path.isabs(model_path):
        model_path = os.path.normpath(os.path.join(base_dir, model_path))
    if mode == PerceptionMode.TrainedModel:
        if model_path is None:
            table.problem("model", "is required when mode = \"model\"")
        elif require_model and not os.path.exists(model_path):
            table.problem("model", f"file [{model_path}] not found")
        if plant is not None and plant.observed_dims != 2:
            table.problem("mode", f"trained perception estimates planar positions; plant observes {plant.observed_dims}")
    if mode != PerceptionMode.NoisyExact and noise:
        table.problem("noise", "only applies when mode = \"noisy\"")
    return PerceptionSettings(mode=mode, noise=noise or 0.0, model_path=model_path, raster=raster, training=training)


# section: documents


def apply_overrides(document: Dict[str, Any], overrides: Dict[str, Any]):
    """
    Set document values by dotted key, creating tables as needed
    """
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        if not all(parts):
            raise ScenarioValidationError([f"[{dotted}] is not a dotted key"])
        table = document
        for part in parts[:-1]:
            table = table.setdefault(part, {})
            if not isinstance(table, dict):
                raise ScenarioValidationError([f"[{dotted}] does not name a table value"])
        table[parts[-1]] = value


def parse_override_value(text: str) -> Any:
    """
    Parse one value with the scenario grammar: numbers, strings, booleans and arrays
    """
    try:
        return parse_document(f"value = {text}\n")["value"]
    except ParseError as ex:
        raise ScenarioSyntaxError(f"invalid value [{text}]: {ex}")


def scenario_from_document(
    document: Dict[str, Any],
    source_text: str = "",
    source_path: str = None,
    require_model: bool = True,
    overrides: Tuple[Tuple[str, Any], ...] = (),
) -> Scenario:
    """
    Validate a parsed document. Raises ScenarioValidationError listing every problem.

    :param require_model: check that a referenced perception model file exists
    """
    problems: List[str] = []
    root = _Table(document, "", problems)
    base_dir = os.path.dirname(os.path.abspath(source_path)) if source_path else os.getcwd()
    default_name = os.path.splitext(os.path.basename(source_path))[0] if source_path else "scenario"

    name = root.string("name", default=default_name)
    horizon = root.number("horizon", integer=True, minimum=1)
    substeps = root.number("substeps", default=DEFAULT_SUBSTEPS, integer=True, minimum=1)
    seed = root.number("seed", default=0, integer=True, minimum=0)

    plant = _plant(root.table("plant", required=True))
    offset = None
    if plant is not None:
        offset = root.array("initial_offset", (plant.state_dim,), default=None)
    else:
        root.seen.add("initial_offset")

    controller_table = root.table("controller", required=True)
    eta = controller_table.number("eta", positive=True)
    tau = controller_table.number("tau", positive=True)
    certify = controller_table.boolean("certify", False)
    u0 = controller_table.array("u0", (plant.input_dim,)) if plant is not None else controller_table.raw("u0")
    constraint = None
    if plant is not None:
        constraint = _constraint(controller_table.table("constraint", required=True), plant.input_dim)
    else:
        controller_table.seen.add("constraint")
    controller_table.check_unknown()

    cost = _cost(root.table("cost", required=True), plant, u0 if isinstance(u0, np.ndarray) else None)
    disturbance = None
    if plant is not None:
        disturbance = _disturbance(root.table("disturbance"), plant.dist_dim)
    else:
        root.seen.add("disturbance")
    perception = _perception(root.table("perception"), plant, base_dir, require_model)
    root.check_unknown()

    controller = None
    if None not in (eta, tau, constraint, cost) and isinstance(u0, np.ndarray):
        try:
            mu = ell = None
            if certify:
                reference = _first_snapshot(plant, cost, u0, disturbance, offset)
                mu, ell = reference.mu, reference.composite_lipschitz(plant.constants.ell_hu)
            controller = ControllerConfig(eta=eta, tau=tau, constraint=constraint, certify=certify, mu=mu, ell=ell)
        except (ControllerError, CostError) as ex:
            problems.append(f"[controller] {ex}")

    if problems:
        raise ScenarioValidationError(problems)
    logger.debug(f"validated scenario [{name}]")
    return Scenario(
        name=name,
        plant=plant,
        cost=cost,
        controller=controller,
        u0=u0,
        disturbance=disturbance,
        perception=perception,
        run=RunConfig(horizon=horizon, substeps=substeps, seed=seed, initial_offset=offset),
        document=document,
        source_text=source_text,
        source_path=source_path,
        overrides=tuple(overrides),
    )


def _first_snapshot(plant, cost: CostSettings, u0, disturbance, offset) -> CostSpec:
    if cost.kind == "quadratic":
        return cost.quadratic
    x0 = plant.steady_state(u0, disturbance(0.0) if disturbance is not None else np.zeros(plant.dist_dim))
    if offset is not None:
        x0 = x0 + offset
    tracking = make_tracking_cost(cost.schedule, cost.obstacles, cost.lambda0, cost.decay, cost.margin_floor, plant.state_dim)
    return tracking.at_sample(0, 0.0, x0)


def scenario_from_text(
    text: str, source_path: str = None, overrides: Dict[str, Any] = None, require_model: bool = True
) -> Scenario:
    """
    Parse and validate scenario text. Raises ScenarioSyntaxError or ScenarioValidationError.
    """
    try:
        document = parse_document(text)
    except ParseError as ex:
        raise ScenarioSyntaxError(str(ex))
    if overrides:
        apply_overrides(document, overrides)
    return scenario_from_document(
        document,
        source_text=text,
        source_path=source_path,
        require_model=require_model,
        overrides=tuple((overrides or {}).items()),
    )


def load_scenario(filepath: str, overrides: Dict[str, Any] = None, require_model: bool = True) -> Response:
    """
    Read, parse and validate a scenario file.

    :return: Response with a Scenario body; on failure error_message lists the problems
        and status holds the exception
    """
    if not os.path.exists(filepath):
        return Response(False, error_message=f"scenario file [{filepath}] not found")
    try:
        with open(filepath) as fp:
            text = fp.read()
    except OSError as ex:
        return Response(False, error_message=f"unable to read scenario [{filepath}]: {ex}")
    try:
        scenario = scenario_from_text(text, source_path=filepath, overrides=overrides, require_model=require_model)
    except ScenarioSyntaxError as ex:
        return Response(False, error_message=f"scenario [{filepath}] does not parse: {ex}", status=ex)
    except ScenarioValidationError as ex:
        return Response(False, error_message=f"scenario [{filepath}] is invalid: {ex}", status=ex)
    logger.info(f"loaded scenario [{scenario.name}] from {filepath}")
    return Response(True, body=scenario)


# section: loop-independent quantities


def optimizer_sequence(scenario: Scenario) -> Optional[np.ndarray]:
    """
    u*_k for k = 0..K, when the optimizer sequence does not depend on the closed loop
    (quadratic costs). None for tracking costs, whose workspace follows the estimate.
    """
    if scenario.cost.kind != "quadratic":
        return None
    cost = scenario.cost.quadratic
    plant = scenario.plant
    u_star = scenario.u0
    sequence = []
    for k in range(scenario.horizon + 1):
        t = k * scenario.tau
        solution = solve_oracle(
            plant,
            cost,
            scenario.disturbance(t),
            t,
            warm_start=u_star,
            constraint=scenario.controller.constraint,
            tol=ORACLE_RESIDUAL_TOL,
            max_iterations=ORACLE_MAX_ITERATIONS,
        )
        u_star = solution.u_star
        sequence.append(u_star)
    return np.array(sequence)


def estimate_optimizer_drift(scenario: Scenario) -> Optional[float]:
    """
    sup_k ||u*_{k+1} - u*_k|| over the horizon, computed before any closed-loop run
    """
    sequence = optimizer_sequence(scenario)
    if sequence is None:
        return None
    if len(sequence) < 2:
        return 0.0
    return float(np.max(np.linalg.norm(np.diff(sequence, axis=0), axis=1)))
