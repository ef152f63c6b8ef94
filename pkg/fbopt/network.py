"""
Feedforward regression network: tanh hidden layers, linear output.
Trained by mini-batch SGD with momentum; gradients by backpropagation.
All arithmetic is float64.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .constants import (
    ADAM_BETA2,
    ADAM_EPSILON,
    DEFAULT_ARCH,
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MOMENTUM,
    DEFAULT_OPTIMIZER,
    OPTIMIZERS,
)


logger = logging.getLogger(__name__)


class NetworkError(Exception):
    """
    Invalid network definition or input shape
    """


class TrainingDiverged(NetworkError):
    """
    Training loss became non-finite
    """

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass
class TrainingConfig:
    """
    Hyperparameters of network training
    """

    arch: Tuple[int, ...] = DEFAULT_ARCH
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_LEARNING_RATE
    momentum: float = DEFAULT_MOMENTUM
    seed: int = 0
    # "adam" or "momentum"
    optimizer: str = DEFAULT_OPTIMIZER

    def __post_init__(self):
        self.arch = tuple(int(width) for width in self.arch)
        if len(self.arch) < 2 or any(width < 1 for width in self.arch):
            raise NetworkError(f"architecture needs at least input and output widths; got {self.arch}")
        if self.epochs < 1 or self.batch_size < 1:
            raise NetworkError("epochs and batch size must be positive")
        if not self.learning_rate > 0 or not (0 <= self.momentum < 1):
            raise NetworkError("learning rate must be positive and momentum in [0, 1)")
        if self.optimizer not in OPTIMIZERS:
            raise NetworkError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")


class FeedForwardNetwork:
    """
    Layer l maps a -> a @ weights[l] + biases[l], followed by tanh on every layer but the last
    """

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise NetworkError("network needs matching, nonempty weight and bias lists")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for index, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise NetworkError(f"layer {index}: weight {w.shape} and bias {b.shape} do not fit")
            if index and w.shape[0] != self.weights[index - 1].shape[1]:
                raise NetworkError(f"layer {index} input width does not match the previous layer")

    @classmethod
    def initialize(cls, widths: Sequence[int], rng: np.random.Generator) -> "FeedForwardNetwork":
        """
        Glorot-uniform weights, zero biases
        """
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def widths(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    def _activations(self, inputs: np.ndarray) -> List[np.ndarray]:
        activations = [inputs]
        last = len(self.weights) - 1
        for index, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = activations[-1] @ w + b
            activations.append(z if index == last else np.tanh(z))
        return activations

    def forward(self, inputs) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        single = inputs.ndim == 1
        batch = inputs[None, :] if single else inputs
        if batch.shape[1] != self.input_width:
            raise NetworkError(f"input width {batch.shape[1]} does not match network input {self.input_width}")
        outputs = self._activations(batch)[-1]
        return outputs[0] if single else outputs

    def loss(self, inputs: np.ndarray, targets: np.ndarray) -> float:
        """
        mean over the batch of ||y - t||^2
        """
        residual = self.forward(inputs) - targets
        return float(np.sum(residual**2) / residual.shape[0])

    def gradients(self, inputs: np.ndarray, targets: np.ndarray) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
        """
        :return: loss, d loss / d weights, d loss / d biases
        """
        activations = self._activations(inputs)
        count = inputs.shape[0]
        residual = activations[-1] - targets
        loss = float(np.sum(residual**2) / count)

        weight_grads = [None] * len(self.weights)
        bias_grads = [None] * len(self.biases)
        delta = 2.0 * residual / count
        for index in range(len(self.weights) - 1, -1, -1):
            weight_grads[index] = activations[index].T @ delta
            bias_grads[index] = delta.sum(axis=0)
            if index:
                # tanh' = 1 - tanh^2
                delta = (delta @ self.weights[index].T) * (1.0 - activations[index] ** 2)
        return loss, weight_grads, bias_grads

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, body: dict) -> "FeedForwardNetwork":
        network = cls([np.array(w) for w in body["weights"]], [np.array(b) for b in body["biases"]])
        if list(network.widths) != list(body["widths"]):
            raise NetworkError(f"stored widths {body['widths']} do not match the stored layers {network.widths}")
        return network


@dataclass
class TrainingHistory:
    epoch_losses: List[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]


def train_network(
    network: FeedForwardNetwork,
    inputs: np.ndarray,
    targets: np.ndarray,
    config: TrainingConfig,
    rng: np.random.Generator,
) -> TrainingHistory:
    """
    Minimize the mean squared error in place, with SGD plus momentum or with adam.
    Learning rate at epoch e is learning_rate / (1 + 4 e / epochs).
    """
    count = inputs.shape[0]
    if count == 0:
        raise NetworkError("empty training set")
    params = network.weights + network.biases
    first_moment = [np.zeros_like(p) for p in params]
    second_moment = [np.zeros_like(p) for p in params]
    history = TrainingHistory()
    report_every = max(1, config.epochs // 10)
    step = 0

    for epoch in range(config.epochs):
        rate = config.learning_rate / (1.0 + 4.0 * epoch / config.epochs)
        order = rng.permutation(count)
        total = 0.0
        for start in range(0, count, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, weight_grads, bias_grads = network.gradients(inputs[batch], targets[batch])
            total += loss * batch.size
            step += 1
            grads = weight_grads + bias_grads
            if config.optimizer == "adam":
                correction1 = 1.0 - config.momentum**step
                correction2 = 1.0 - ADAM_BETA2**step
                for param, grad, m, v in zip(params, grads, first_moment, second_moment):
                    m *= config.momentum
                    m += (1.0 - config.momentum) * grad
                    v *= ADAM_BETA2
                    v += (1.0 - ADAM_BETA2) * grad * grad
                    param -= rate * (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPSILON)
            else:
                for param, grad, velocity in zip(params, grads, first_moment):
                    velocity *= config.momentum
                    velocity -= rate * grad
                    param += velocity
        epoch_loss = total / count
        if not math.isfinite(epoch_loss):
            raise TrainingDiverged(epoch, epoch_loss)
        history.epoch_losses.append(epoch_loss)
        if epoch % report_every == 0 or epoch == config.epochs - 1:
            logger.debug(f"epoch {epoch}: loss={epoch_loss:.6e}, lr={rate:.3e}")
    return history
