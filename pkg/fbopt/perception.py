"""
Perception in the loop.

A synthetic sensor renders a position as a Gaussian blob on a W x H raster (the generative
map q). A feedforward network trained on (position, observation) pairs inverts it (p_hat).
The sup of ||p_hat(q(x)) - x|| over a validation grid is the perception error that the
certificates consume.

Channels feed the closed loop with an estimate: exact state, exact state plus bounded
noise, or the trained network applied to the rendered observation.
"""
import json
import logging
import math
import os
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .constants import (
    BLOB_SIGMA,
    DEFAULT_ARCH,
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_JITTER,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MOMENTUM,
    DEFAULT_OPTIMIZER,
    DEFAULT_VALIDATION_GRID,
    MODEL_FORMAT_VERSION,
    RASTER_DOMAIN,
    RASTER_HEIGHT,
    RASTER_WIDTH,
)
from .dataexchange import PerceptionMode, Response, SampleFlag
from .network import FeedForwardNetwork, NetworkError, TrainingConfig, TrainingDiverged, train_network
from .plant import PlantModel


logger = logging.getLogger(__name__)

# ((a_min, b_min), (a_max, b_max))
Region = Tuple[Tuple[float, float], Tuple[float, float]]

__all__ = [
    "PerceptionError",
    "OutOfDomain",
    "ShapeMismatch",
    "ModelFormatError",
    "TrainingDiverged",
    "RasterConfig",
    "GenerativeMap",
    "TrainingSet",
    "PerceptionModel",
    "render_observation",
    "generate_training_set",
    "train_perception",
    "estimate_state",
    "measure_error_bound",
    "validation_errors",
    "save_model",
    "load_model",
    "PerceptionReading",
    "ExactChannel",
    "NoisyChannel",
    "LearnedChannel",
    "make_channel",
]


class PerceptionError(Exception):
    """
    Base of perception errors
    """


class OutOfDomain(PerceptionError):
    """
    Position or region outside the raster domain
    """


class ShapeMismatch(PerceptionError):
    pass


class ModelFormatError(PerceptionError):
    """
    Stored model is malformed or has an unknown version header
    """


# section: generative map


@dataclass(frozen=True)
class RasterConfig:
    """
    Geometry of the synthetic sensor
    """

    width: int = RASTER_WIDTH
    height: int = RASTER_HEIGHT
    domain: Region = RASTER_DOMAIN
    blob_sigma: float = BLOB_SIGMA

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise PerceptionError("raster needs positive width and height")
        (a_min, b_min), (a_max, b_max) = self.domain
        if not (a_min < a_max and b_min < b_max):
            raise PerceptionError(f"degenerate raster domain {self.domain}")
        if not self.blob_sigma > 0:
            raise PerceptionError("blob sigma must be positive")

    @property
    def size(self) -> int:
        return self.width * self.height

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "domain": [list(self.domain[0]), list(self.domain[1])],
            "blob_sigma": self.blob_sigma,
        }

    @classmethod
    def from_dict(cls, body: dict) -> "RasterConfig":
        (a_min, b_min), (a_max, b_max) = body["domain"]
        return cls(
            width=int(body["width"]),
            height=int(body["height"]),
            domain=((float(a_min), float(b_min)), (float(a_max), float(b_max))),
            blob_sigma=float(body["blob_sigma"]),
        )


class GenerativeMap:
    """
    q: position -> raster of exp(-||c - position||^2 / (2 sigma^2)) at the cell centers c.
    Cells are flattened row by row: index j * width + i holds column i of row j.
    """

    def __init__(self, config: RasterConfig = None):
        self.config = config or RasterConfig()
        (a_min, b_min), (a_max, b_max) = self.config.domain
        step_a = (a_max - a_min) / self.config.width
        step_b = (b_max - b_min) / self.config.height
        columns = a_min + (np.arange(self.config.width) + 0.5) * step_a
        rows = b_min + (np.arange(self.config.height) + 0.5) * step_b
        grid_a, grid_b = np.meshgrid(columns, rows)
        self.cell_centers = np.column_stack([grid_a.ravel(), grid_b.ravel()])
        self.cell_centers.setflags(write=False)

    @property
    def width(self) -> int:
        return self.config.width

    @property
    def height(self) -> int:
        return self.config.height

    @property
    def domain(self) -> Region:
        return self.config.domain

    @property
    def blob_sigma(self) -> float:
        return self.config.blob_sigma

    def contains(self, position) -> bool:
        (a_min, b_min), (a_max, b_max) = self.domain
        return a_min <= position[0] <= a_max and b_min <= position[1] <= b_max

    def contains_region(self, region: Region) -> bool:
        (a_min, b_min), (a_max, b_max) = region
        return a_min <= a_max and b_min <= b_max and self.contains((a_min, b_min)) and self.contains((a_max, b_max))

    def render(self, position) -> np.ndarray:
        return render_observation(self, position)


def render_observation(gmap: GenerativeMap, position) -> np.ndarray:
    position = np.asarray(position, dtype=float)
    if position.shape != (2,):
        raise ShapeMismatch(f"render expects a planar position; got shape {position.shape}")
    if not gmap.contains(position):
        raise OutOfDomain(f"position {position} outside the raster domain {gmap.domain}")
    squared = np.sum((gmap.cell_centers - position) ** 2, axis=1)
    return np.exp(-squared / (2.0 * gmap.blob_sigma**2))


# section: training set


@dataclass(frozen=True, eq=False)
class TrainingSet:
    positions: np.ndarray
    observations: np.ndarray
    region: Region
    seed: int
    generative_map: GenerativeMap

    def __len__(self):
        return self.positions.shape[0]


def _grid(region: Region, n: int) -> np.ndarray:
    (a_min, b_min), (a_max, b_max) = region
    ticks_a = np.linspace(a_min, a_max, n)
    ticks_b = np.linspace(b_min, b_max, n)
    grid_a, grid_b = np.meshgrid(ticks_a, ticks_b)
    return np.column_stack([grid_a.ravel(), grid_b.ravel()])


def region_within(inner: Region, outer: Region) -> bool:
    (ia_min, ib_min), (ia_max, ib_max) = inner
    (oa_min, ob_min), (oa_max, ob_max) = outer
    return oa_min <= ia_min <= ia_max <= oa_max and ob_min <= ib_min <= ib_max <= ob_max


def generate_training_set(
    gmap: GenerativeMap, region: Region, n_per_axis: int, seed: int, jitter: float = DEFAULT_JITTER
) -> TrainingSet:
    """
    n_per_axis^2 grid points over the region, each moved by a seeded uniform jitter of up to
    jitter * spacing / 2 per axis and clipped to the region, rendered through gmap.
    """
    if n_per_axis < 1:
        raise PerceptionError(f"n_per_axis must be positive; got {n_per_axis}")
    if not gmap.contains_region(region):
        raise OutOfDomain(f"training region {region} exceeds the raster domain {gmap.domain}")
    lower = np.array(region[0], dtype=float)
    upper = np.array(region[1], dtype=float)
    grid = _grid(region, n_per_axis)
    spacing = (upper - lower) / max(1, n_per_axis - 1)
    rng = np.random.default_rng(seed)
    offsets = rng.uniform(-1.0, 1.0, size=grid.shape) * jitter * spacing / 2.0
    positions = np.clip(grid + offsets, lower, upper)
    observations = np.stack([render_observation(gmap, p) for p in positions])
    return TrainingSet(positions=positions, observations=observations, region=region, seed=seed, generative_map=gmap)


# section: model


@dataclass(frozen=True, eq=False)
class PerceptionModel:
    network: FeedForwardNetwork
    raster: RasterConfig
    region: Region
    training_meta: dict
    # positions whose renders are the out-of-distribution reference set
    reference_positions: np.ndarray
    reference_observations: np.ndarray
    ood_threshold: float
    measured_error: Optional[float] = None

    @property
    def arch(self) -> Tuple[int, ...]:
        return self.network.widths

    def predict(self, zeta) -> np.ndarray:
        return estimate_state(self, zeta)

    def ood_distance(self, zeta) -> float:
        """
        distance from zeta to the nearest training observation
        """
        return float(np.min(np.linalg.norm(self.reference_observations - zeta, axis=1)))

    def is_out_of_distribution(self, zeta) -> bool:
        return self.ood_distance(zeta) > self.ood_threshold


def train_perception(
    training_set: TrainingSet,
    arch: Sequence[int] = DEFAULT_ARCH,
    epochs: int = DEFAULT_EPOCHS,
    lr: float = DEFAULT_LEARNING_RATE,
    seed: int = 0,
    batch_size: int = DEFAULT_BATCH_SIZE,
    momentum: float = DEFAULT_MOMENTUM,
    validation_grid: int = DEFAULT_VALIDATION_GRID,
    optimizer: str = DEFAULT_OPTIMIZER,
    validation_region: Optional[Region] = None,
) -> PerceptionModel:
    """
    Fit p_hat by empirical risk minimization and measure its error on a validation grid.

    :param arch: layer widths, input (W * H) first, output 2 last
    :param validation_region: region the error bound is measured over, inside the training region;
        defaults to the training region
    """
    if len(training_set) == 0:
        raise PerceptionError("training set is empty")
    gmap = training_set.generative_map
    config = TrainingConfig(
        arch=tuple(arch),
        epochs=epochs,
        batch_size=batch_size,
        learning_rate=lr,
        momentum=momentum,
        seed=seed,
        optimizer=optimizer,
    )
    if config.arch[-1] != 2:
        raise ShapeMismatch(f"network must output a planar position; arch ends in {config.arch[-1]}")
    if config.arch[0] != gmap.config.size:
        raise ShapeMismatch(f"network input width {config.arch[0]} does not match the raster size {gmap.config.size}")
    validation_region = training_set.region if validation_region is None else validation_region
    if not region_within(validation_region, training_set.region):
        raise PerceptionError(
            f"validation region {validation_region} is not inside the training region {training_set.region}"
        )

    rng = np.random.default_rng(seed)
    network = FeedForwardNetwork.initialize(config.arch, rng)
    logger.info(f"training perception network {config.arch} on {len(training_set)} samples for {epochs} epochs")
    history = train_network(network, training_set.observations, training_set.positions, config, rng)
    final_rmse = math.sqrt(network.loss(training_set.observations, training_set.positions))

    norms = np.linalg.norm(training_set.observations, axis=1)
    model = PerceptionModel(
        network=network,
        raster=gmap.config,
        region=training_set.region,
        training_meta={
            "seed": seed,
            "epochs": epochs,
            "batch_size": batch_size,
            "learning_rate": lr,
            "momentum": momentum,
            "optimizer": optimizer,
            "samples": len(training_set),
            "final_loss": history.final_loss,
            "final_rmse": final_rmse,
            "epoch_losses": history.epoch_losses,
        },
        reference_positions=training_set.positions.copy(),
        reference_observations=training_set.observations.copy(),
        ood_threshold=0.5 * float(np.median(norms)),
    )
    measured = measure_error_bound(model, gmap, validation_region, validation_grid)
    logger.info(f"perception trained: rmse={final_rmse:.4g}, measured error={measured:.4g}")
    return replace(model, measured_error=measured)


def estimate_state(model: PerceptionModel, zeta) -> np.ndarray:
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape != (model.raster.size,):
        raise ShapeMismatch(f"observation of shape {zeta.shape}; model expects ({model.raster.size},)")
    return model.network.forward(zeta)


def validation_errors(model, gmap: GenerativeMap, region: Region, grid_n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    ||p_hat(q(x)) - x|| on a grid_n x grid_n grid over region.
    model is anything with predict(zeta).

    :return: grid positions, errors
    """
    if not gmap.contains_region(region):
        raise OutOfDomain(f"validation region {region} exceeds the raster domain {gmap.domain}")
    positions = _grid(region, grid_n)
    errors = np.array([np.linalg.norm(model.predict(render_observation(gmap, p)) - p) for p in positions])
    return positions, errors


def measure_error_bound(model, gmap: GenerativeMap, region: Region, grid_n: int) -> float:
    """
    max over the validation grid of ||p_hat(q(x)) - x||
    """
    _, errors = validation_errors(model, gmap, region, grid_n)
    return float(np.max(errors))


# section: persistence


def save_model(model: PerceptionModel, filepath: str) -> Response:
    body = {
        "format": MODEL_FORMAT_VERSION,
        "arch": list(model.arch),
        "seed": model.training_meta.get("seed"),
        "raster": model.raster.to_dict(),
        "region": [list(model.region[0]), list(model.region[1])],
        "training": model.training_meta,
        "measured_error": model.measured_error,
        "ood_threshold": model.ood_threshold,
        "reference_positions": model.reference_positions.tolist(),
        "network": model.network.to_dict(),
    }
    try:
        directory = os.path.dirname(os.path.abspath(filepath))
        os.makedirs(directory, exist_ok=True)
        with open(filepath, "w") as fp:
            json.dump(body, fp)
    except OSError as ex:
        return Response(False, error_message=f"unable to write model [{filepath}]: {ex}")
    logger.info(f"saved perception model to {filepath}")
    return Response(True, body=filepath)


def load_model(filepath: str) -> Response:
    """
    :return: Response with a PerceptionModel body
    """
    if not os.path.exists(filepath):
        return Response(False, error_message=f"model file [{filepath}] not found")
    try:
        with open(filepath) as fp:
            body = json.load(fp)
    except (OSError, ValueError) as ex:
        return Response(False, error_message=f"unable to read model [{filepath}]: {ex}")
    if not isinstance(body, dict) or body.get("format") != MODEL_FORMAT_VERSION:
        message = f"model [{filepath}] lacks the header [{MODEL_FORMAT_VERSION}]"
        return Response(False, error_message=message, status=ModelFormatError(message))
    try:
        raster = RasterConfig.from_dict(body["raster"])
        network = FeedForwardNetwork.from_dict(body["network"])
        (a_min, b_min), (a_max, b_max) = body["region"]
        region = ((float(a_min), float(b_min)), (float(a_max), float(b_max)))
        gmap = GenerativeMap(raster)
        positions = np.array(body["reference_positions"], dtype=float).reshape(-1, 2)
        observations = np.stack([render_observation(gmap, p) for p in positions])
        model = PerceptionModel(
            network=network,
            raster=raster,
            region=region,
            training_meta=body["training"],
            reference_positions=positions,
            reference_observations=observations,
            ood_threshold=float(body["ood_threshold"]),
            measured_error=body["measured_error"],
        )
    except (KeyError, TypeError, ValueError, NetworkError, PerceptionError) as ex:
        message = f"model [{filepath}] is malformed: {ex}"
        return Response(False, error_message=message, status=ModelFormatError(message))
    if list(model.arch) != list(body["arch"]):
        message = f"model [{filepath}] header arch does not match its layers"
        return Response(False, error_message=message, status=ModelFormatError(message))
    return Response(True, body=model)


# section: channels


@dataclass(frozen=True, eq=False)
class PerceptionReading:
    # full-length state estimate; unobserved components are 0 for non-exact channels
    estimate: np.ndarray
    # ||x_true - x_hat|| over the observed block
    error: float
    flags: Tuple[SampleFlag, ...] = ()


class ExactChannel:
    mode = PerceptionMode.Exact

    def __init__(self, plant: PlantModel):
        self.plant = plant

    def observe(self, x: np.ndarray, k: int) -> PerceptionReading:
        return PerceptionReading(estimate=np.array(x, dtype=float), error=0.0)


class NoisyChannel:
    """
    Exact observed block plus noise drawn uniformly on the sphere of radius eps
    """

    mode = PerceptionMode.NoisyExact

    def __init__(self, plant: PlantModel, eps: float, rng: np.random.Generator):
        if eps < 0:
            raise PerceptionError(f"noise radius must be nonnegative; got {eps}")
        self.plant = plant
        self.eps = eps
        self.rng = rng

    def observe(self, x: np.ndarray, k: int) -> PerceptionReading:
        observed = self.plant.observed_dims
        direction = self.rng.standard_normal(observed)
        direction /= np.linalg.norm(direction)
        estimate = np.zeros(self.plant.state_dim)
        estimate[:observed] = x[:observed] + self.eps * direction
        return PerceptionReading(estimate=estimate, error=float(np.linalg.norm(estimate[:observed] - x[:observed])))


class LearnedChannel:
    """
    x_hat = p_hat(q(position)); the heading is not estimated
    """

    mode = PerceptionMode.TrainedModel

    def __init__(self, plant: PlantModel, model: PerceptionModel):
        if plant.observed_dims != 2:
            raise PerceptionError(f"learned perception estimates planar positions; plant observes {plant.observed_dims}")
        self.plant = plant
        self.model = model
        self.gmap = GenerativeMap(model.raster)

    def observe(self, x: np.ndarray, k: int) -> PerceptionReading:
        zeta = self.gmap.render(x[:2])
        position = self.model.predict(zeta)
        estimate = np.zeros(self.plant.state_dim)
        estimate[:2] = position
        flags = ()
        if self.model.is_out_of_distribution(zeta):
            logger.warning(f"sample {k}: observation is out of distribution")
            flags = (SampleFlag.OutOfDistribution,)
        return PerceptionReading(estimate=estimate, error=float(np.linalg.norm(position - x[:2])), flags=flags)


def make_channel(mode: PerceptionMode, plant: PlantModel, eps: float = 0.0, model: PerceptionModel = None, rng=None):
    if mode == PerceptionMode.Exact:
        return ExactChannel(plant)
    if mode == PerceptionMode.NoisyExact:
        return NoisyChannel(plant, eps, rng if rng is not None else np.random.default_rng(0))
    if mode == PerceptionMode.TrainedModel:
        if model is None:
            raise PerceptionError("trained-model perception needs a model")
        return LearnedChannel(plant, model)
    raise PerceptionError(f"unknown perception mode {mode}")
