"""
Benchmark harness: sweep models x masks x epsilons over a fixed verification
set and report certified robustness accuracy and average wall time.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from itertools import groupby
from typing import Dict, List, Optional, Sequence, Tuple
import csv
import logging
import os
import time

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from tqdm import tqdm

from utils.datasets import Dataset, load_dataset
from utils.errors import DatasetError, VerificationError
from utils.network import Network, load_model_file
from utils.specgen import (
    FeatureMask, FeatureSchema, MaskPreset, build_feature_spec, build_pixel_spec, load_schema,
    pixel_budget, schema_from_data,
)
from utils.verdict import Stage, VerdictCode
from verifier import VerifierConfig, run_query

logger = logging.getLogger(__name__)

REPORT_HEADER = ["model", "mask", "epsilon", "sample", "class", "verdict", "stage", "time_s", "error"]
AGGREGATE_HEADER = ["model", "mask", "epsilon", "cra_pct", "avg_time_s"]
PER_CLASS_HEADER = ["model", "mask", "epsilon", "class", "robust", "total", "train_count"]


class SampleSelection(BaseModel):
    count: Optional[int] = Field(default=None, ge=1)
    per_class: Optional[int] = Field(default=None, ge=1)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_mode(self):
        if self.count is None and self.per_class is None:
            self.count = 100
        if self.count is not None and self.per_class is not None:
            raise ValueError("choose either count or per_class, not both")
        return self


class BenchPlan(BaseModel):
    models: List[str] = Field(..., min_length=1)
    dataset: str
    schema_path: Optional[str] = None
    masks: List[str] = Field(default_factory=lambda: ["all"])
    epsilons: List[float] = Field(..., min_length=1)
    selection: SampleSelection = Field(default_factory=SampleSelection)
    verifier: VerifierConfig = Field(default_factory=VerifierConfig)
    workers: int = Field(default=1, ge=1)
    train_dataset: Optional[str] = None

    @field_validator("epsilons")
    @classmethod
    def check_ascending(cls, value: List[float]) -> List[float]:
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("epsilons must be strictly ascending")
        if any(e < 0 for e in value):
            raise ValueError("epsilons must be non-negative")
        return value


class BenchRow(BaseModel):
    model: str
    mask: str
    epsilon: float
    sample: int
    label: int
    verdict: VerdictCode
    stage: Stage
    time_s: float = Field(..., ge=0.0)
    error: Optional[str] = None


class AggregateRow(BaseModel):
    model: str
    mask: str
    epsilon: float
    cra_pct: float = Field(..., ge=0.0, le=100.0)
    avg_time_s: float
    count: int
    robust: int


class PerClassRow(BaseModel):
    model: str
    mask: str
    epsilon: float
    label: int
    robust: int
    total: int
    train_count: Optional[int] = None


class BenchReport(BaseModel):
    rows: List[BenchRow]
    aggregates: List[AggregateRow]
    per_class: List[PerClassRow]


@dataclass(frozen=True)
class SelectedSample:
    sample_id: int
    x: np.ndarray
    label: int


def select_samples(dataset: Dataset, selection: SampleSelection) -> List[SelectedSample]:
    """Uniform selection without replacement, in sample-id order; fixed by the seed"""
    if len(dataset) == 0:
        raise DatasetError("cannot select samples from an empty dataset")
    rng = np.random.Generator(np.random.PCG64(selection.seed))
    if selection.per_class is not None:
        chosen = []
        for label in sorted(dataset.class_counts()):
            members = np.flatnonzero(dataset.y == label)
            if members.size < selection.per_class:
                raise DatasetError(f"class {label} has {members.size} samples, need {selection.per_class}")
            chosen.extend(rng.choice(members, selection.per_class, replace=False).tolist())
    else:
        if selection.count > len(dataset):
            raise DatasetError(f"asked for {selection.count} samples, dataset has {len(dataset)}")
        chosen = rng.choice(len(dataset), selection.count, replace=False).tolist()
    return [SelectedSample(int(i), dataset.X[i], int(dataset.y[i])) for i in sorted(chosen)]


def _error_row(model: str, mask: str, eps: float, sample: SelectedSample, error: str) -> BenchRow:
    return BenchRow(model=model, mask=mask, epsilon=eps, sample=sample.sample_id, label=sample.label,
                    verdict=VerdictCode.UNKNOWN, stage=Stage.ERROR, time_s=0.0, error=error)


def _run_cell_sequence(model: str, net: Network, mask: Optional[FeatureMask], schema: Optional[FeatureSchema],
                       sample: SelectedSample, epsilons: Sequence[float], cfg: VerifierConfig) -> List[BenchRow]:
    """All epsilon rounds of one (model, mask, sample), ascending, reusing counterexamples"""
    rows = []
    hints: List[List[float]] = []
    mask_label = mask.label if mask is not None else MaskPreset.PIXELS.value
    for eps in epsilons:
        start = time.perf_counter()
        try:
            if mask is None:
                spec = build_pixel_spec(sample.x, sample.label, eps)
            else:
                spec = build_feature_spec(sample.x, sample.label, eps, schema, mask)
            verdict = run_query(net, spec, cfg, hints)
        except (VerificationError, ValueError) as e:
            logger.warning("%s/%s eps=%g sample %d failed: %s", model, mask_label, eps, sample.sample_id, e)
            rows.append(_error_row(model, mask_label, eps, sample, str(e)))
            continue
        elapsed = time.perf_counter() - start
        if verdict.counterexample is not None:
            hints = [verdict.counterexample]
        rows.append(BenchRow(model=model, mask=mask_label, epsilon=eps, sample=sample.sample_id,
                             label=sample.label, verdict=verdict.code, stage=verdict.stage,
                             time_s=elapsed, error=verdict.error))
    return rows


def run_benchmark(plan: BenchPlan, progress: bool = True) -> BenchReport:
    """
    Run every (model, mask, epsilon, sample) query of a plan.

    Args:
        plan: Benchmark plan
        progress: Show a tqdm progress bar on stderr

    Returns:
        BenchReport with rows sorted by (model, mask, epsilon, sample)
    """
    dataset = load_dataset(plan.dataset)
    samples = select_samples(dataset, plan.selection)
    schema = None
    masks: List[Optional[FeatureMask]] = [None]
    if dataset.pixel_mode:
        for eps in plan.epsilons:
            pixel_budget(eps)
    else:
        schema = load_schema(plan.schema_path) if plan.schema_path else schema_from_data(dataset.X, dataset.feature_names)
        masks = [FeatureMask.parse(m) for m in plan.masks]

    rows: List[BenchRow] = []
    tasks = []
    for path in plan.models:
        model_name = os.path.splitext(os.path.basename(path))[0]
        try:
            # model load is outside the timed region
            net = load_model_file(path)
        except (VerificationError, OSError) as e:
            logger.error("cannot load model %s: %s", path, e)
            for mask in masks:
                label = mask.label if mask is not None else MaskPreset.PIXELS.value
                rows.extend(_error_row(model_name, label, eps, sample, str(e))
                            for sample in samples for eps in plan.epsilons)
            continue
        tasks.extend((model_name, net, mask, sample) for mask in masks for sample in samples)

    logger.info("benchmark: %d models, %d masks, %d epsilons, %d samples",
                len(plan.models), len(masks), len(plan.epsilons), len(samples))
    with ThreadPoolExecutor(max_workers=plan.workers) as pool:
        futures = [pool.submit(_run_cell_sequence, name, net, mask, schema, sample, plan.epsilons, plan.verifier)
                   for name, net, mask, sample in tasks]
        for future in tqdm(as_completed(futures), total=len(futures), disable=not progress, desc="queries"):
            rows.extend(future.result())

    train_counts = load_dataset(plan.train_dataset).class_counts() if plan.train_dataset else None
    return make_report(rows, train_counts)


def _row_key(row: BenchRow) -> Tuple:
    return row.model, row.mask, row.epsilon, row.sample


def make_report(rows: Sequence[BenchRow], train_counts: Optional[Dict[int, int]] = None) -> BenchReport:
    ordered = sorted(rows, key=_row_key)
    return BenchReport(rows=ordered, aggregates=aggregate(ordered),
                       per_class=per_class_table(ordered, train_counts))


def aggregate(rows: Sequence[BenchRow]) -> List[AggregateRow]:
    """CRA % and mean wall time per (model, mask, epsilon)"""
    result = []
    ordered = sorted(rows, key=_row_key)
    for (model, mask, eps), group in groupby(ordered, key=lambda r: (r.model, r.mask, r.epsilon)):
        group = list(group)
        robust = sum(1 for r in group if r.verdict == VerdictCode.ROBUST)
        result.append(AggregateRow(
            model=model, mask=mask, epsilon=eps,
            cra_pct=100.0 * robust / len(group),
            avg_time_s=float(np.mean([r.time_s for r in group])),
            count=len(group), robust=robust,
        ))
    return result


def per_class_table(rows: Sequence[BenchRow], train_counts: Optional[Dict[int, int]] = None) -> List[PerClassRow]:
    """Robust count per class for every (model, mask, epsilon)"""
    table = []
    key = lambda r: (r.model, r.mask, r.epsilon, r.label)
    for (model, mask, eps, label), group in groupby(sorted(rows, key=key), key=key):
        group = list(group)
        table.append(PerClassRow(
            model=model, mask=mask, epsilon=eps, label=label,
            robust=sum(1 for r in group if r.verdict == VerdictCode.ROBUST),
            total=len(group),
            train_count=train_counts.get(label, 0) if train_counts is not None else None,
        ))
    return table


def write_report(report: BenchReport, out_dir: str) -> Dict[str, str]:
    """Write report.csv, aggregate.csv and per_class.csv; returns their paths"""
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, f"{name}.csv") for name in ("report", "aggregate", "per_class")}
    with open(paths["report"], "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_HEADER)
        for r in report.rows:
            writer.writerow([r.model, r.mask, repr(r.epsilon), r.sample, r.label, int(r.verdict),
                             r.stage.value, repr(r.time_s), r.error or ""])
    with open(paths["aggregate"], "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(AGGREGATE_HEADER)
        for a in report.aggregates:
            writer.writerow([a.model, a.mask, repr(a.epsilon), repr(a.cra_pct), repr(a.avg_time_s)])
    with open(paths["per_class"], "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(PER_CLASS_HEADER)
        for p in report.per_class:
            writer.writerow([p.model, p.mask, repr(p.epsilon), p.label, p.robust, p.total,
                             "" if p.train_count is None else p.train_count])
    logger.info("wrote %d rows to %s", len(report.rows), paths["report"])
    return paths


def load_rows(path: str) -> List[BenchRow]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != REPORT_HEADER:
            raise DatasetError(f"{path}: expected header {','.join(REPORT_HEADER)}")
        for number, record in enumerate(reader, 2):
            try:
                rows.append(BenchRow(
                    model=record["model"], mask=record["mask"], epsilon=float(record["epsilon"]),
                    sample=int(record["sample"]), label=int(record["class"]),
                    verdict=int(record["verdict"]), stage=record["stage"], time_s=float(record["time_s"]),
                    error=record["error"] or None,
                ))
            except (ValueError, ValidationError) as e:
                raise DatasetError(f"{path}: line {number}: {e}") from e
    return rows
