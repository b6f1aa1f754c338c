"""
Byteplot conversion and input scaling.

Every byte of a binary becomes one grayscale pixel (0-255), rows of a fixed
width, last row zero-padded. Images are resized with nearest neighbour and
normalized to [0, 1]; feature vectors are standardized with z = (x - mu) / sigma.
"""

from dataclasses import dataclass
from typing import List, Sequence
import json
import logging
import math

import numpy as np
from PIL import Image
from pydantic import BaseModel, model_validator

from utils.errors import DimensionMismatchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ByteImage:
    width: int
    height: int
    pixels: bytes

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if len(self.pixels) != self.width * self.height:
            raise ValueError(f"{len(self.pixels)} pixels for a {self.width}x{self.height} image")

    def to_array(self) -> np.ndarray:
        """Pixels as a (height, width) uint8 array"""
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "ByteImage":
        array = np.asarray(array, dtype=np.uint8)
        if array.ndim != 2:
            raise ValueError(f"expected a 2-D pixel array, got shape {array.shape}")
        return cls(width=array.shape[1], height=array.shape[0], pixels=array.tobytes())


class ScalerParams(BaseModel):
    mean: List[float]
    std: List[float]

    @model_validator(mode="after")
    def check_lengths(self):
        if len(self.mean) != len(self.std):
            raise ValueError("mean and std must have the same length")
        if any(s < 0 for s in self.std):
            raise ValueError("std must be non-negative")
        return self


def read_binary(path: str) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def bytes_to_image(data: bytes, width: int) -> ByteImage:
    if width < 1:
        raise ValueError(f"width must be positive, got {width}")
    if not data:
        raise ValueError("cannot convert an empty binary")
    height = math.ceil(len(data) / width)
    padded = bytes(data) + bytes(width * height - len(data))
    return ByteImage(width=width, height=height, pixels=padded)


def resize_nearest(img: ByteImage, out_w: int, out_h: int) -> ByteImage:
    """Source index floor(i * src / dst) along each axis"""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    rows = (np.arange(out_h) * img.height) // out_h
    cols = (np.arange(out_w) * img.width) // out_w
    return ByteImage.from_array(img.to_array()[np.ix_(rows, cols)])


def normalize(img: ByteImage) -> np.ndarray:
    return img.to_array().reshape(-1).astype(np.float64) / 255.0


def save_pgm(img: ByteImage, path: str) -> None:
    """Binary portable graymap (P5)"""
    Image.fromarray(img.to_array()).save(path, format="PPM")


def load_pgm(path: str) -> ByteImage:
    with Image.open(path) as image:
        return ByteImage.from_array(np.asarray(image.convert("L")))


def image_to_csv_row(img: ByteImage) -> str:
    return ",".join(repr(float(v)) for v in normalize(img))


def fit_scaler(rows: np.ndarray) -> ScalerParams:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("fit_scaler needs at least one row")
    # population standard deviation
    return ScalerParams(mean=rows.mean(axis=0).tolist(), std=rows.std(axis=0, ddof=0).tolist())


def apply_scaler(params: ScalerParams, x: np.ndarray) -> np.ndarray:
    """Scale one row or a matrix of rows; zero-variance columns map to 0"""
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(params.mean)
    std = np.asarray(params.std)
    if x.shape[-1] != mean.shape[0]:
        raise DimensionMismatchError(f"input has {x.shape[-1]} features, scaler has {mean.shape[0]}")
    safe = np.where(std > 0.0, std, 1.0)
    return np.where(std > 0.0, (x - mean) / safe, 0.0)


def save_scaler(params: ScalerParams, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(params.model_dump_json(indent=2))


def load_scaler(path: str) -> ScalerParams:
    with open(path, "r", encoding="utf-8") as f:
        return ScalerParams.model_validate(json.load(f))


def images_from_binaries(paths: Sequence[str], width: int, size: int = 0) -> List[ByteImage]:
    """Byteplots for several files, optionally resized to size x size"""
    images = []
    for path in paths:
        img = bytes_to_image(read_binary(path), width)
        if size:
            img = resize_nearest(img, size, size)
        logger.debug("%s -> %dx%d", path, img.width, img.height)
        images.append(img)
    return images
