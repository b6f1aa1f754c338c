"""
Classifier networks: the JSON model format, layer types, inference and the
lowering of convolution layers to affine form.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union
import json
import logging
import os

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from utils.errors import DimensionMismatchError, ModelFormatError

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


def _frozen_array(values, ndim: int, what: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.ndim != ndim:
        raise DimensionMismatchError(f"{what} must be {ndim}-D, got shape {array.shape}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class AffineLayer:
    """y = W x + b"""
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen_array(self.weights, 2, "dense weights"))
        object.__setattr__(self, "bias", _frozen_array(self.bias, 1, "dense bias"))
        if self.bias.shape[0] != self.weights.shape[0]:
            raise DimensionMismatchError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weights.shape[0]}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.weights @ x + self.bias


@dataclass(frozen=True)
class ReluLayer:
    width: int

    def __post_init__(self):
        if self.width < 1:
            raise DimensionMismatchError(f"relu width must be positive, got {self.width}")

    @property
    def in_dim(self) -> int:
        return self.width

    @property
    def out_dim(self) -> int:
        return self.width

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x, 0.0)


@dataclass(frozen=True)
class Conv2DLayer:
    """Channel-first 2-D convolution; flattened input and output are [c][h][w]"""
    in_shape: Tuple[int, int, int]
    filters: int
    kernel: Tuple[int, int]
    stride: Tuple[int, int]
    padding: Tuple[int, int]
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "in_shape", tuple(int(v) for v in self.in_shape))
        object.__setattr__(self, "kernel", tuple(int(v) for v in self.kernel))
        object.__setattr__(self, "stride", tuple(int(v) for v in self.stride))
        object.__setattr__(self, "padding", tuple(int(v) for v in self.padding))
        object.__setattr__(self, "weights", _frozen_array(self.weights, 4, "conv weights"))
        object.__setattr__(self, "bias", _frozen_array(self.bias, 1, "conv bias"))
        channels = self.in_shape[0]
        expected = (self.filters, channels, self.kernel[0], self.kernel[1])
        if self.weights.shape != expected:
            raise DimensionMismatchError(
                f"conv weights shape {self.weights.shape} != (filters, channels, kh, kw) {expected}"
            )
        if self.bias.shape[0] != self.filters:
            raise DimensionMismatchError(f"conv bias length {self.bias.shape[0]} != filters {self.filters}")
        if min(self.stride) < 1 or min(self.padding) < 0 or min(self.kernel) < 1:
            raise ModelFormatError("conv stride/kernel must be positive and padding non-negative")

    @property
    def out_shape(self) -> Tuple[int, int, int]:
        _, height, width = self.in_shape
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        if kh > height + 2 * ph or kw > width + 2 * pw:
            raise ModelFormatError(
                f"kernel {self.kernel} larger than padded input {(height + 2 * ph, width + 2 * pw)}"
            )
        return self.filters, (height + 2 * ph - kh) // sh + 1, (width + 2 * pw - kw) // sw + 1

    @property
    def in_dim(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def out_dim(self) -> int:
        return int(np.prod(self.out_shape))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Direct sliding-window convolution (reference semantics for lowering)"""
        channels, height, width = self.in_shape
        _, out_h, out_w = self.out_shape
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        image = np.zeros((channels, height + 2 * ph, width + 2 * pw))
        image[:, ph:ph + height, pw:pw + width] = np.asarray(x, dtype=np.float64).reshape(self.in_shape)
        out = np.empty((self.filters, out_h, out_w))
        for f in range(self.filters):
            for oy in range(out_h):
                for ox in range(out_w):
                    window = image[:, oy * sh:oy * sh + kh, ox * sw:ox * sw + kw]
                    out[f, oy, ox] = np.sum(window * self.weights[f]) + self.bias[f]
        return out.reshape(-1)


Layer = Union[AffineLayer, ReluLayer, Conv2DLayer]


def conv_index_map(layer: Conv2DLayer) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Positions of every kernel weight inside the lowered matrix.

    Returns (rows, cols, weight_index) where weight_index indexes the flattened
    (filters, channels, kh, kw) weight array. The trainer reuses this map to
    push gradients back onto shared conv weights.
    """
    channels, height, width = layer.in_shape
    _, out_h, out_w = layer.out_shape
    kh, kw = layer.kernel
    sh, sw = layer.stride
    ph, pw = layer.padding
    oy, ox = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    oy = oy.reshape(-1)
    ox = ox.reshape(-1)
    rows, cols, index = [], [], []
    for f in range(layer.filters):
        out_rows = f * out_h * out_w + oy * out_w + ox
        for c in range(channels):
            for ky in range(kh):
                iy = oy * sh + ky - ph
                for kx in range(kw):
                    ix = ox * sw + kx - pw
                    inside = (iy >= 0) & (iy < height) & (ix >= 0) & (ix < width)
                    rows.append(out_rows[inside])
                    cols.append((c * height + iy[inside]) * width + ix[inside])
                    flat = ((f * channels + c) * kh + ky) * kw + kx
                    index.append(np.full(int(inside.sum()), flat))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(index)


def lower_conv(layer: Conv2DLayer) -> AffineLayer:
    """Rewrite a convolution as the equivalent dense affine layer"""
    _, out_h, out_w = layer.out_shape
    rows, cols, index = conv_index_map(layer)
    weights = np.zeros((layer.out_dim, layer.in_dim))
    # each (row, col) pair is hit by at most one kernel tap
    weights[rows, cols] = layer.weights.reshape(-1)[index]
    bias = np.repeat(layer.bias, out_h * out_w)
    return AffineLayer(weights=weights, bias=bias)


@dataclass(frozen=True)
class Network:
    """Feed-forward ReLU classifier made of Affine and Relu layers only"""
    input_dim: int
    layers: Tuple[Union[AffineLayer, ReluLayer], ...]
    num_classes: int
    labels: Optional[Tuple[str, ...]] = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != self.num_classes:
                raise ModelFormatError(f"{len(self.labels)} labels for {self.num_classes} classes")
        if self.input_dim < 1 or self.num_classes < 1:
            raise ModelFormatError("input_dim and num_classes must be positive")
        dim = self.input_dim
        for index, layer in enumerate(self.layers):
            if isinstance(layer, Conv2DLayer):
                raise ModelFormatError("conv2d layers must be lowered before building a Network", index)
            if layer.in_dim != dim:
                raise ModelFormatError(f"expects input dim {layer.in_dim}, previous output is {dim}", index)
            dim = layer.out_dim
        if dim != self.num_classes:
            raise ModelFormatError(f"final output dim {dim} != num_classes {self.num_classes}")

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.apply(x)
        return x

    def class_name(self, index: int) -> str:
        if self.labels is not None:
            return self.labels[index]
        return str(index)


def infer(net: Network, x: Sequence[float]) -> Tuple[np.ndarray, int]:
    """Return (logits, label); ties resolve to the smallest class index"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise DimensionMismatchError(f"input has shape {x.shape}, network expects ({net.input_dim},)")
    logits = net.forward(x)
    return logits, int(np.argmax(logits))


def forward_batch(net: Network, inputs: np.ndarray) -> np.ndarray:
    """Logits for each row of inputs"""
    batch = np.asarray(inputs, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise DimensionMismatchError(f"batch has shape {batch.shape}, network expects (k, {net.input_dim})")
    for layer in net.layers:
        if isinstance(layer, AffineLayer):
            batch = batch @ layer.weights.T + layer.bias
        else:
            batch = np.maximum(batch, 0.0)
    return batch


# Model document schema

class DenseLayerDoc(BaseModel):
    type: Literal["dense"]
    weights: List[List[float]]
    bias: List[float]


class ReluLayerDoc(BaseModel):
    type: Literal["relu"]


class Conv2DLayerDoc(BaseModel):
    type: Literal["conv2d"]
    in_shape: Tuple[int, int, int]
    filters: int = Field(..., gt=0)
    kernel: Tuple[int, int]
    stride: Tuple[int, int] = (1, 1)
    padding: Tuple[int, int] = (0, 0)
    weights: List[List[List[List[float]]]]
    bias: List[float]


class ModelDocument(BaseModel):
    """Top level of a model file"""
    version: int = MODEL_FORMAT_VERSION
    input_dim: int = Field(..., gt=0)
    num_classes: int = Field(..., gt=0)
    labels: Optional[List[str]] = None
    layers: List[Dict[str, Any]]


LAYER_DOCS = {"dense": DenseLayerDoc, "relu": ReluLayerDoc, "conv2d": Conv2DLayerDoc}


def _build_layer(index: int, raw: Dict[str, Any], dim: int) -> Layer:
    layer_type = raw.get("type")
    if layer_type not in LAYER_DOCS:
        raise ModelFormatError(f"unknown layer type {layer_type!r}", index)
    try:
        doc = LAYER_DOCS[layer_type].model_validate(raw)
        if isinstance(doc, DenseLayerDoc):
            rows = {len(row) for row in doc.weights}
            if len(rows) > 1:
                raise ModelFormatError("dense weight rows have different lengths", index)
            return AffineLayer(weights=doc.weights, bias=doc.bias)
        if isinstance(doc, ReluLayerDoc):
            return ReluLayer(width=dim)
        return Conv2DLayer(
            in_shape=doc.in_shape,
            filters=doc.filters,
            kernel=doc.kernel,
            stride=doc.stride,
            padding=doc.padding,
            weights=doc.weights,
            bias=doc.bias,
        )
    except ModelFormatError as e:
        if e.layer_index is None:
            raise ModelFormatError(str(e), index) from e
        raise
    except (ValidationError, DimensionMismatchError, ValueError) as e:
        raise ModelFormatError(str(e).splitlines()[0], index) from e


def load_model(text: str, name: str = "") -> Network:
    """Parse a JSON model document; conv2d layers are lowered to affine here"""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"malformed model document: {e}") from e
    try:
        doc = ModelDocument.model_validate(raw)
    except ValidationError as e:
        raise ModelFormatError(f"malformed model document: {e.errors()[0]['msg']}") from e
    if doc.version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {doc.version}")

    layers: List[Union[AffineLayer, ReluLayer]] = []
    dim = doc.input_dim
    for index, raw_layer in enumerate(doc.layers):
        layer = _build_layer(index, raw_layer, dim)
        if layer.in_dim != dim:
            raise ModelFormatError(f"expects input dim {layer.in_dim}, previous output is {dim}", index)
        if isinstance(layer, Conv2DLayer):
            try:
                layer = lower_conv(layer)
            except ModelFormatError as e:
                raise ModelFormatError(str(e), index) from e
        layers.append(layer)
        dim = layer.out_dim

    net = Network(
        input_dim=doc.input_dim,
        layers=tuple(layers),
        num_classes=doc.num_classes,
        labels=tuple(doc.labels) if doc.labels is not None else None,
        name=name,
    )
    logger.debug("loaded model %s: %d layers, %d -> %d", name or "<text>", len(layers), net.input_dim, net.num_classes)
    return net


def load_model_file(path: str) -> Network:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    return load_model(text, name=os.path.splitext(os.path.basename(path))[0])


def layer_document(layer: Layer) -> Dict[str, Any]:
    if isinstance(layer, AffineLayer):
        return {"type": "dense", "weights": layer.weights.tolist(), "bias": layer.bias.tolist()}
    if isinstance(layer, ReluLayer):
        return {"type": "relu"}
    return {
        "type": "conv2d",
        "in_shape": list(layer.in_shape),
        "filters": layer.filters,
        "kernel": list(layer.kernel),
        "stride": list(layer.stride),
        "padding": list(layer.padding),
        "weights": layer.weights.tolist(),
        "bias": layer.bias.tolist(),
    }


def dump_layers(input_dim: int, num_classes: int, layers: Sequence[Layer],
                labels: Optional[Sequence[str]] = None) -> str:
    """Serialize layers (conv2d allowed) as a model document"""
    document: Dict[str, Any] = {
        "version": MODEL_FORMAT_VERSION,
        "input_dim": int(input_dim),
        "num_classes": int(num_classes),
    }
    if labels is not None:
        document["labels"] = list(labels)
    document["layers"] = [layer_document(layer) for layer in layers]
    return json.dumps(document)


def dump_model(net: Network) -> str:
    return dump_layers(net.input_dim, net.num_classes, net.layers, net.labels)
