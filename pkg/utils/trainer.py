"""
Small seeded trainer that produces classifiers in the model format.

Dense and conv layers are trained with softmax cross-entropy and Adam. Conv
layers are run through their lowered affine form; gradients of the lowered
matrix are folded back onto the shared kernel weights.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from pydantic import BaseModel, Field

from utils.errors import DimensionMismatchError, TrainingError
from utils.metrics import MetricsReport, compute_metrics, confusion
from utils.network import (
    AffineLayer, Conv2DLayer, Network, ReluLayer, conv_index_map, dump_layers, forward_batch,
)

logger = logging.getLogger(__name__)


class ArchSpec(BaseModel):
    hidden: List[int] = Field(default_factory=list)
    conv_filters: Optional[int] = None


# named shapes from the model table; the suffix is the class count they were built for
ARCHITECTURES: Dict[str, ArchSpec] = {
    "none-2": ArchSpec(),
    "4-2": ArchSpec(hidden=[4]),
    "16-2": ArchSpec(hidden=[16]),
    "linear-25": ArchSpec(),
    "4-25": ArchSpec(conv_filters=4),
    "16-25": ArchSpec(conv_filters=16),
}

# (epochs, batch size) used for binary and family models
BINARY_SCHEDULE = (40, 128)
FAMILY_SCHEDULE = (10, 64)


class TrainConfig(BaseModel):
    hidden: List[int] = Field(default_factory=list)
    conv_filters: Optional[int] = Field(default=None, gt=0)
    kernel: int = Field(default=3, ge=1)
    stride: int = Field(default=2, ge=1)
    padding: int = Field(default=0, ge=0)
    image_shape: Optional[Tuple[int, int, int]] = None
    learning_rate: float = Field(default=1e-3, gt=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    epochs: int = Field(default=40, ge=1)
    batch_size: int = Field(default=128, ge=1)
    seed: int = Field(default=0, ge=0)
    num_classes: Optional[int] = Field(default=None, ge=1)
    labels: Optional[List[str]] = None

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "TrainConfig":
        if name not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {name!r}; choose from {', '.join(ARCHITECTURES)}")
        arch = ARCHITECTURES[name]
        epochs, batch_size = BINARY_SCHEDULE if name.endswith("-2") else FAMILY_SCHEDULE
        values = {"hidden": list(arch.hidden), "conv_filters": arch.conv_filters,
                  "epochs": epochs, "batch_size": batch_size}
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


@dataclass
class _Dense:
    W: np.ndarray
    b: np.ndarray

    def matrix(self) -> np.ndarray:
        return self.W

    def bias(self) -> np.ndarray:
        return self.b

    def params(self) -> List[np.ndarray]:
        return [self.W, self.b]

    def grads(self, dM: np.ndarray, dbias: np.ndarray) -> List[np.ndarray]:
        return [dM, dbias]

    def layer(self):
        return AffineLayer(weights=self.W, bias=self.b)


@dataclass
class _Conv:
    """Kernel weights plus the scatter map into the lowered matrix"""
    template: Conv2DLayer
    K: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.rows, self.cols, self.index = conv_index_map(self.template)
        self.spatial = self.template.out_shape[1] * self.template.out_shape[2]

    def matrix(self) -> np.ndarray:
        M = np.zeros((self.template.out_dim, self.template.in_dim))
        M[self.rows, self.cols] = self.K.reshape(-1)[self.index]
        return M

    def bias(self) -> np.ndarray:
        return np.repeat(self.b, self.spatial)

    def params(self) -> List[np.ndarray]:
        return [self.K, self.b]

    def grads(self, dM: np.ndarray, dbias: np.ndarray) -> List[np.ndarray]:
        dK = np.bincount(self.index, weights=dM[self.rows, self.cols], minlength=self.K.size)
        return [dK.reshape(self.K.shape), dbias.reshape(self.b.shape[0], self.spatial).sum(axis=1)]

    def layer(self):
        t = self.template
        return Conv2DLayer(in_shape=t.in_shape, filters=t.filters, kernel=t.kernel, stride=t.stride,
                           padding=t.padding, weights=self.K, bias=self.b)


class Trainer:
    """Seeded trainer; keeps the loss history of the last fit"""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.history: List[float] = []
        self.train_accuracy: Optional[float] = None
        self.model_text: Optional[str] = None

    def _image_shape(self, input_dim: int) -> Tuple[int, int, int]:
        if self.cfg.image_shape is not None:
            shape = tuple(self.cfg.image_shape)
            if int(np.prod(shape)) != input_dim:
                raise DimensionMismatchError(f"image shape {shape} does not hold {input_dim} inputs")
            return shape
        side = math.isqrt(input_dim)
        if side * side != input_dim:
            raise DimensionMismatchError(f"{input_dim} inputs are not a square image; set image_shape")
        return 1, side, side

    def _build(self, input_dim: int, num_classes: int, rng: np.random.Generator) -> list:
        blocks = []
        dim = input_dim
        if self.cfg.conv_filters:
            shape = self._image_shape(input_dim)
            k = self.cfg.kernel
            fan_in = shape[0] * k * k
            limit = 1.0 / math.sqrt(fan_in)
            K = rng.uniform(-limit, limit, (self.cfg.conv_filters, shape[0], k, k))
            template = Conv2DLayer(in_shape=shape, filters=self.cfg.conv_filters, kernel=(k, k),
                                   stride=(self.cfg.stride,) * 2, padding=(self.cfg.padding,) * 2,
                                   weights=K, bias=np.zeros(self.cfg.conv_filters))
            blocks.append(_Conv(template, K, np.zeros(self.cfg.conv_filters)))
            dim = template.out_dim
        for width in list(self.cfg.hidden) + [num_classes]:
            limit = 1.0 / math.sqrt(dim)
            blocks.append(_Dense(rng.uniform(-limit, limit, (width, dim)), np.zeros(width)))
            dim = width
        return blocks

    def fit(self, X: np.ndarray, y: Sequence[int]) -> Network:
        """
        Train on (X, y) and return the lowered Network.

        Args:
            X: (samples, features) inputs
            y: integer labels in [0, num_classes)

        Returns:
            Network ready for verification; the model document (conv layers kept
            in kernel form) is left in self.model_text
        """
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
            raise DimensionMismatchError(f"training data shapes {X.shape} and {y.shape} do not match")
        num_classes = self.cfg.num_classes or int(y.max()) + 1
        if y.min() < 0 or y.max() >= num_classes:
            raise TrainingError(f"labels must lie in [0, {num_classes})")

        init_seq, shuffle_seq = np.random.SeedSequence(self.cfg.seed).spawn(2)
        init_rng = np.random.Generator(np.random.PCG64(init_seq))
        shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_seq))
        blocks = self._build(X.shape[1], num_classes, init_rng)
        params = [p for block in blocks for p in block.params()]
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        step = 0
        cfg = self.cfg
        self.history = []

        for epoch in range(cfg.epochs):
            order = shuffle_rng.permutation(X.shape[0])
            losses = []
            for start in range(0, X.shape[0], cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                loss, grads = self._step(blocks, X[batch], y[batch])
                if not np.isfinite(loss):
                    raise TrainingError(f"loss became {loss} in epoch {epoch + 1}; lower the learning rate")
                losses.append(loss * batch.size)
                step += 1
                for p, g, mi, vi in zip(params, grads, m, v):
                    mi *= cfg.beta1
                    mi += (1 - cfg.beta1) * g
                    vi *= cfg.beta2
                    vi += (1 - cfg.beta2) * g * g
                    m_hat = mi / (1 - cfg.beta1 ** step)
                    v_hat = vi / (1 - cfg.beta2 ** step)
                    p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
            self.history.append(float(sum(losses) / X.shape[0]))
            logger.debug("epoch %d/%d loss %.6f", epoch + 1, cfg.epochs, self.history[-1])

        layers = []
        for index, block in enumerate(blocks):
            layers.append(block.layer())
            if index < len(blocks) - 1:
                layers.append(ReluLayer(width=block.bias().shape[0]))
        self.model_text = dump_layers(X.shape[1], num_classes, layers, cfg.labels)
        lowered = []
        for index, block in enumerate(blocks):
            lowered.append(AffineLayer(weights=block.matrix(), bias=block.bias()))
            if index < len(blocks) - 1:
                lowered.append(ReluLayer(width=block.bias().shape[0]))
        net = Network(input_dim=X.shape[1], layers=lowered, num_classes=num_classes, labels=cfg.labels)
        self.train_accuracy = evaluate(net, X, y, num_classes).accuracy
        logger.info("trained %d epochs, final loss %.4f, train accuracy %.4f",
                    cfg.epochs, self.history[-1], self.train_accuracy)
        return net

    @staticmethod
    def _step(blocks: list, X: np.ndarray, y: np.ndarray) -> Tuple[float, List[np.ndarray]]:
        """Softmax cross-entropy loss and parameter gradients for one batch"""
        activations = [X]
        matrices = [block.matrix() for block in blocks]
        h = X
        for index, (block, M) in enumerate(zip(blocks, matrices)):
            h = h @ M.T + block.bias()
            if index < len(blocks) - 1:
                h = np.maximum(h, 0.0)
            activations.append(h)
        logits = activations[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        n = X.shape[0]
        loss = float(-log_probs[np.arange(n), y].mean())

        delta = np.exp(log_probs)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads: List[List[np.ndarray]] = []
        for index in range(len(blocks) - 1, -1, -1):
            inputs = activations[index]
            grads.append(blocks[index].grads(delta.T @ inputs, delta.sum(axis=0)))
            if index > 0:
                delta = (delta @ matrices[index]) * (activations[index] > 0.0)
        return loss, [g for block_grads in reversed(grads) for g in block_grads]


def train(X: np.ndarray, y: Sequence[int], cfg: TrainConfig) -> Network:
    return Trainer(cfg).fit(X, y)


def evaluate(net: Network, X: np.ndarray, y: Sequence[int], num_classes: Optional[int] = None) -> MetricsReport:
    predictions = np.argmax(forward_batch(net, X), axis=1)
    return compute_metrics(confusion(predictions, y, num_classes or net.num_classes))
