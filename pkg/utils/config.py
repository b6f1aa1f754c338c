from dotenv import load_dotenv
from pydantic import BaseModel, Field
import logging
import os

# Load environment variables
load_dotenv()

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Settings(BaseModel):
    """Engine defaults, overridable through the environment or a .env file"""
    num_samples: int = Field(default=500, ge=1)
    relax_factor: float = Field(default=0.5, ge=0.0, le=1.0)
    timeout_s: float = Field(default=300.0, gt=0.0)
    max_stars: int = Field(default=10_000, ge=1)
    lp_max_iter: int = Field(default=50_000, ge=1)
    workers: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)
    log_level: str = Field(default="INFO", pattern="^(DEBUG|INFO|WARNING|ERROR|CRITICAL)$")
    image_width: int = Field(default=256, ge=1)


def load_settings() -> Settings:
    """Read MALVERIFY_* variables; pydantic rejects malformed values"""
    env = {
        "num_samples": os.getenv("MALVERIFY_NR"),
        "relax_factor": os.getenv("MALVERIFY_RELAX_FACTOR"),
        "timeout_s": os.getenv("MALVERIFY_TIMEOUT"),
        "max_stars": os.getenv("MALVERIFY_MAX_STARS"),
        "lp_max_iter": os.getenv("MALVERIFY_LP_MAX_ITER"),
        "workers": os.getenv("MALVERIFY_WORKERS"),
        "seed": os.getenv("MALVERIFY_SEED"),
        "log_level": os.getenv("MALVERIFY_LOG_LEVEL"),
        "image_width": os.getenv("MALVERIFY_IMAGE_WIDTH"),
    }
    values = {key: value for key, value in env.items() if value not in (None, "")}
    if "log_level" in values:
        values["log_level"] = values["log_level"].upper()
    return Settings(**values)


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


# Global settings instance
settings = load_settings()
