"""
Random-example counterexample search, the first stage of every query.
"""

from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np
from pydantic import BaseModel, Field

from utils.errors import DimensionMismatchError
from utils.network import Network, forward_batch, infer
from utils.specgen import InputSpec

logger = logging.getLogger(__name__)

MAX_CORNERS = 32


class FalsifyConfig(BaseModel):
    num_samples: int = Field(default=500, ge=1)
    seed: int = Field(default=0, ge=0)
    include_corners: bool = True


def _rng(seed: int) -> np.random.Generator:
    # PCG64 so recorded seeds replay identically across numpy versions
    return np.random.Generator(np.random.PCG64(seed))


def gen_rand_examples(spec: InputSpec, cfg: FalsifyConfig,
                      hints: Optional[Sequence[Sequence[float]]] = None) -> np.ndarray:
    """
    Deterministic sample set for one spec.

    Order: base point, hints that lie in the box, up to 32 random corners,
    then uniform samples. Always exactly cfg.num_samples rows.
    """
    rng = _rng(cfg.seed)
    n = cfg.num_samples
    rows: List[np.ndarray] = [spec.x.copy()]
    for hint in hints or []:
        hint = np.asarray(hint, dtype=np.float64)
        if hint.shape == spec.x.shape and spec.contains(hint):
            rows.append(hint)
    rows = rows[:n]

    width = spec.upper - spec.lower
    if cfg.include_corners and len(rows) < n:
        corners = min(MAX_CORNERS, n - len(rows))
        pick_upper = rng.random((corners, spec.dim)) < 0.5
        rows.extend(np.where(pick_upper, spec.upper, spec.lower))
    remaining = n - len(rows)
    if remaining > 0:
        rows.extend(spec.lower + width * rng.random((remaining, spec.dim)))
    samples = np.array(rows, dtype=np.float64).reshape(n, spec.dim)
    # keep uniform draws inside the box despite rounding in lower + width * u
    return np.clip(samples, spec.lower, spec.upper)


def falsify(net: Network, spec: InputSpec, cfg: FalsifyConfig,
            hints: Optional[Sequence[Sequence[float]]] = None) -> Optional[Tuple[np.ndarray, int]]:
    """Return (counterexample, predicted class) for the first misclassified sample, or None"""
    if spec.dim != net.input_dim:
        raise DimensionMismatchError(f"spec has {spec.dim} inputs, network expects {net.input_dim}")
    samples = gen_rand_examples(spec, cfg, hints)
    predicted = np.argmax(forward_batch(net, samples), axis=1)
    for index in np.flatnonzero(predicted != spec.target):
        candidate = samples[index]
        # re-check with the scalar path so the returned point is exact under infer
        _, label = infer(net, candidate)
        if label != spec.target and spec.contains(candidate):
            logger.debug("falsified at sample %d: predicted %d, target %d", index, label, spec.target)
            return candidate.copy(), label
    return None
