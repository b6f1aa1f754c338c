"""
Dataset loaders.

Feature datasets are CSV files with one column per feature plus a `label`
column. Image datasets are directories of P5 graymaps with a `labels.csv`
(`file,label`); pixels are normalized to [0, 1].
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence
import csv
import logging
import os

import numpy as np

from utils.errors import DatasetError
from utils.preprocess import load_pgm, normalize

logger = logging.getLogger(__name__)

LABEL_COLUMN = "label"
IMAGE_LABELS_FILE = "labels.csv"


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: List[str]
    pixel_mode: bool = False
    name: str = "dataset"

    def __len__(self) -> int:
        return int(self.y.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.X.shape[1])

    def class_counts(self) -> Dict[int, int]:
        classes, counts = np.unique(self.y, return_counts=True)
        return {int(c): int(n) for c, n in zip(classes, counts)}


def _dataset_name(path: str) -> str:
    base = os.path.basename(os.path.normpath(path))
    return os.path.splitext(base)[0] or "dataset"


def load_feature_csv(path: str) -> Dataset:
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            header = reader.fieldnames or []
            if LABEL_COLUMN not in header:
                raise DatasetError(f"{path}: no '{LABEL_COLUMN}' column")
            names = [h for h in header if h != LABEL_COLUMN]
            rows, labels = [], []
            for number, record in enumerate(reader, 2):
                try:
                    rows.append([float(record[name]) for name in names])
                    labels.append(int(float(record[LABEL_COLUMN])))
                except (TypeError, ValueError) as e:
                    raise DatasetError(f"{path}: line {number}: {e}") from e
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return Dataset(X=np.array(rows, dtype=np.float64), y=np.array(labels, dtype=np.int64),
                   feature_names=names, name=_dataset_name(path))


def save_feature_csv(path: str, X: np.ndarray, y: Sequence[int],
                     feature_names: Optional[Sequence[str]] = None) -> None:
    X = np.asarray(X, dtype=np.float64)
    names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(X.shape[1])]
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(names + [LABEL_COLUMN])
        for row, label in zip(X, y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_image_dir(path: str) -> Dataset:
    labels_path = os.path.join(path, IMAGE_LABELS_FILE)
    if not os.path.isfile(labels_path):
        raise DatasetError(f"{path}: missing {IMAGE_LABELS_FILE}")
    rows, labels = [], []
    with open(labels_path, "r", encoding="utf-8", newline="") as f:
        for record in csv.DictReader(f):
            try:
                image = load_pgm(os.path.join(path, record["file"]))
                labels.append(int(record[LABEL_COLUMN]))
            except (KeyError, OSError, ValueError) as e:
                raise DatasetError(f"{labels_path}: bad entry {record}: {e}") from e
            rows.append(normalize(image))
    if not rows:
        raise DatasetError(f"{labels_path}: no images listed")
    if len({r.shape[0] for r in rows}) != 1:
        raise DatasetError(f"{path}: images have different sizes")
    names = [f"p{i}" for i in range(rows[0].shape[0])]
    return Dataset(X=np.array(rows), y=np.array(labels, dtype=np.int64), feature_names=names,
                   pixel_mode=True, name=_dataset_name(path))


def load_dataset(path: str) -> Dataset:
    """Directory → image dataset, file → feature CSV"""
    dataset = load_image_dir(path) if os.path.isdir(path) else load_feature_csv(path)
    logger.info("loaded %s: %d samples, %d inputs", dataset.name, len(dataset), dataset.num_features)
    return dataset
