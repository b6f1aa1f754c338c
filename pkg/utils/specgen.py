"""
Per-sample L∞ input specifications.

Feature mode perturbs each masked feature by a percentage of that feature's
range (ranges live in the post-scaling space the model consumes, so bounds are
not clipped). Pixel mode perturbs every pixel by k/255 and clips to [0, 1].
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Set, Tuple
import json
import logging

import numpy as np
from pydantic import BaseModel, Field, model_validator

from utils.errors import DimensionMismatchError, SpecError

logger = logging.getLogger(__name__)


class FeatureKind(str, Enum):
    CONTINUOUS = "continuous"
    CATEGORICAL = "categorical"
    HASH_CATEGORICAL = "hash_categorical"
    DISCRETE_LARGE = "discrete_large"
    BINARY = "binary"
    HASH_CAT_DISCRETE = "hash_cat_discrete"
    MEMORY = "memory"
    NULL = "null"


class Feature(BaseModel):
    name: str
    kind: FeatureKind
    min: float
    max: float

    @model_validator(mode="after")
    def check_range(self):
        if self.min > self.max:
            raise ValueError(f"feature {self.name!r}: min {self.min} > max {self.max}")
        return self


class FeatureSchema(BaseModel):
    features: List[Feature] = Field(..., min_length=1)

    def __len__(self) -> int:
        return len(self.features)

    def ranges(self) -> np.ndarray:
        return np.array([f.max - f.min for f in self.features], dtype=np.float64)


class MaskPreset(str, Enum):
    ALL = "all"
    CONTINUOUS_AND_DISCRETE = "continuous_and_discrete"
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"
    CUSTOM = "custom"
    PIXELS = "pixels"


# short names used on the command line and in file names
MASK_ALIASES: Dict[str, MaskPreset] = {
    "all": MaskPreset.ALL,
    "cont-disc": MaskPreset.CONTINUOUS_AND_DISCRETE,
    "discrete": MaskPreset.DISCRETE,
    "continuous": MaskPreset.CONTINUOUS,
}

MASK_KINDS: Dict[MaskPreset, Set[FeatureKind]] = {
    MaskPreset.CONTINUOUS_AND_DISCRETE: {FeatureKind.CONTINUOUS, FeatureKind.DISCRETE_LARGE},
    MaskPreset.DISCRETE: {FeatureKind.DISCRETE_LARGE},
    MaskPreset.CONTINUOUS: {FeatureKind.CONTINUOUS},
}

# epsilon rounds per coverage: percent of feature range, or k for k/255 pixels
EPSILON_PRESETS: Dict[MaskPreset, Tuple[float, ...]] = {
    MaskPreset.ALL: (0.01, 0.05, 0.1),
    MaskPreset.CONTINUOUS_AND_DISCRETE: (0.01, 0.05, 0.1),
    MaskPreset.DISCRETE: (0.1, 0.5, 1.0),
    MaskPreset.CONTINUOUS: (1.0, 5.0, 10.0),
    MaskPreset.PIXELS: (1, 2, 3),
}


class FeatureMask(BaseModel):
    preset: MaskPreset = MaskPreset.ALL
    indices: Optional[List[int]] = None

    @classmethod
    def parse(cls, name: str) -> "FeatureMask":
        """Accept CLI aliases (cont-disc) as well as preset values"""
        if name in MASK_ALIASES:
            return cls(preset=MASK_ALIASES[name])
        return cls(preset=MaskPreset(name))

    @property
    def label(self) -> str:
        for alias, preset in MASK_ALIASES.items():
            if preset == self.preset:
                return alias
        return self.preset.value


@dataclass(frozen=True)
class InputSpec:
    """Box [lower, upper] around x, protecting class target"""
    x: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    epsilon: float
    mask: str
    target: int
    clipped: bool = False

    def __post_init__(self):
        for name in ("x", "lower", "upper"):
            array = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        if not (self.x.shape == self.lower.shape == self.upper.shape):
            raise DimensionMismatchError("x, lower and upper must have the same length")
        if np.any(self.lower > self.upper):
            raise SpecError("spec lower bound exceeds upper bound")

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    @property
    def perturbed(self) -> np.ndarray:
        return np.flatnonzero(self.upper > self.lower)

    def contains(self, point: Sequence[float], tol: float = 0.0) -> bool:
        point = np.asarray(point, dtype=np.float64)
        return bool(np.all(point >= self.lower - tol) and np.all(point <= self.upper + tol))


def load_schema(path: str) -> FeatureSchema:
    with open(path, "r", encoding="utf-8") as f:
        return FeatureSchema.model_validate(json.load(f))


def save_schema(schema: FeatureSchema, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(schema.model_dump_json(indent=2))


def schema_from_data(rows: np.ndarray, names: Optional[Sequence[str]] = None,
                     kinds: Optional[Sequence[FeatureKind]] = None) -> FeatureSchema:
    """Schema whose ranges are the column min/max of the given (scaled) data"""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise DimensionMismatchError("schema needs a non-empty 2-D data matrix")
    n = rows.shape[1]
    names = list(names) if names is not None else [f"f{i}" for i in range(n)]
    kinds = list(kinds) if kinds is not None else [FeatureKind.CONTINUOUS] * n
    if len(names) != n or len(kinds) != n:
        raise DimensionMismatchError(f"expected {n} names/kinds")
    lows = rows.min(axis=0)
    highs = rows.max(axis=0)
    return FeatureSchema(features=[
        Feature(name=name, kind=kind, min=float(lo), max=float(hi))
        for name, kind, lo, hi in zip(names, kinds, lows, highs)
    ])


def resolve_mask(mask: FeatureMask, schema: FeatureSchema) -> Set[int]:
    """Indices of the features a mask perturbs"""
    n = len(schema)
    if mask.preset in (MaskPreset.ALL, MaskPreset.PIXELS):
        return set(range(n))
    if mask.preset == MaskPreset.CUSTOM:
        indices = set(mask.indices or [])
        bad = sorted(i for i in indices if not 0 <= i < n)
        if bad:
            raise SpecError(f"mask index {bad[0]} outside [0, {n})")
        return indices
    kinds = MASK_KINDS[mask.preset]
    return {i for i, feature in enumerate(schema.features) if feature.kind in kinds}


def build_feature_spec(x: Sequence[float], y: int, eps_percent: float,
                       schema: FeatureSchema, mask: FeatureMask) -> InputSpec:
    """Masked feature i gets half-width (eps_percent / 100) * (max_i - min_i)"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (len(schema),):
        raise DimensionMismatchError(f"sample has {x.shape[0]} features, schema has {len(schema)}")
    if eps_percent < 0:
        raise SpecError(f"epsilon must be non-negative, got {eps_percent}")
    indices = sorted(resolve_mask(mask, schema))
    logger.debug("mask %s perturbs %d of %d features", mask.label, len(indices), len(schema))
    delta = np.zeros_like(x)
    delta[indices] = (eps_percent / 100.0) * schema.ranges()[indices]
    return InputSpec(x=x, lower=x - delta, upper=x + delta, epsilon=float(eps_percent),
                     mask=mask.label, target=int(y))


def pixel_budget(k: float) -> int:
    """Pixel epsilon as a whole number of grey levels; fractional values are rejected"""
    value = float(k)
    if not np.isfinite(value) or value != np.floor(value):
        raise SpecError(f"pixel epsilon k must be a whole number of grey levels, got {k}")
    if value < 0:
        raise SpecError(f"pixel epsilon k must be non-negative, got {k}")
    return int(value)


def build_pixel_spec(x: Sequence[float], y: int, k: float) -> InputSpec:
    """Every pixel gets half-width k/255; bounds are clipped to [0, 1]"""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise SpecError("pixel values must lie in [0, 1]")
    k = pixel_budget(k)
    delta = k / 255.0
    return InputSpec(x=x, lower=np.clip(x - delta, 0.0, 1.0), upper=np.clip(x + delta, 0.0, 1.0),
                     epsilon=float(k), mask=MaskPreset.PIXELS.value, target=int(y), clipped=True)
