from enum import Enum, IntEnum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, model_validator


class VerdictCode(IntEnum):
    FALSIFIED = 0
    ROBUST = 1
    UNKNOWN = 2


class Stage(str, Enum):
    FALSIFICATION = "falsification"
    RELAX = "relax"
    APPROX = "approx"
    EXACT = "exact"
    ERROR = "error"


# words printed by `verify`, matching the holds / violated / timeout vocabulary
VERDICT_WORDS: Dict[VerdictCode, str] = {
    VerdictCode.ROBUST: "holds",
    VerdictCode.FALSIFIED: "violated",
    VerdictCode.UNKNOWN: "timeout",
}


class StageTimes(BaseModel):
    falsify: float = Field(default=0.0, ge=0.0)
    relax: float = Field(default=0.0, ge=0.0)
    approx: float = Field(default=0.0, ge=0.0)
    exact: float = Field(default=0.0, ge=0.0)
    total: float = Field(default=0.0, ge=0.0)


class Verdict(BaseModel):
    """Outcome of one robustness query"""
    code: VerdictCode
    stage: Stage
    time_s: StageTimes = Field(default_factory=StageTimes)
    counterexample: Optional[List[float]] = None
    predicted: Optional[int] = None
    seed: int = 0
    method_config: Dict[str, Any] = Field(default_factory=dict)
    error: Optional[str] = None

    @model_validator(mode="after")
    def check_counterexample(self):
        if (self.code == VerdictCode.FALSIFIED) != (self.counterexample is not None):
            raise ValueError("a counterexample is present exactly when the verdict is falsified")
        return self

    @property
    def word(self) -> str:
        return VERDICT_WORDS[self.code]

    @property
    def robust(self) -> bool:
        return self.code == VerdictCode.ROBUST


def save_verdict(verdict: Verdict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(verdict.model_dump_json(indent=2, exclude_none=True))


def load_verdict(path: str) -> Verdict:
    with open(path, "r", encoding="utf-8") as f:
        return Verdict.model_validate_json(f.read())
