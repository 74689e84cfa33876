from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

import src.config as config

from .schedule_spec import ScheduleKind

SCHEDULE_NAMES = {"constant": ScheduleKind.CONSTANT, "step": ScheduleKind.STEP, "exp": ScheduleKind.EXP_DECAY}
VARIANTS = ("baseline", "ebcu", "ebcq", "both")
TUPLE_FIELDS = ("prompt", "alpha_s", "known_concepts")


class RunConfig(BaseModel):
    """Resolved parameters of one CLI run; written back out as the run manifest."""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    seed: int = Field(config.DEFAULT_SEED, ge=0)
    seeds: Optional[int] = Field(None, ge=1)
    workers: int = Field(config.WORKERS, ge=1)
    output: str = config.OUTPUT_DIR
    checkpoint: str = str(Path(config.OUTPUT_DIR) / "denoiser.npz")

    # noise schedule
    steps: int = Field(50, ge=1)
    beta_start: float = Field(1e-4, gt=0, lt=1)
    beta_end: float = Field(0.2, gt=0, lt=1)

    # context update
    variant: str = "ebcu"
    gamma_attn: float = Field(1.5e-2, ge=0)
    gamma_reg: float = Field(1e-2, ge=0)
    alpha: float = Field(0.0, ge=0)
    schedule: str = "constant"
    tau: int = Field(0, ge=0)
    lam: float = Field(1.0, gt=0, le=1, alias="lambda")
    emphasize: Optional[int] = Field(None, ge=0)
    gamma_search: bool = False

    # prompts and composition
    prompt: Tuple[int, ...] = (0, 1)
    alpha_s: Optional[Tuple[float, ...]] = None
    preset: Optional[str] = None

    # inpainting
    mask: Optional[str] = None
    region: str = "bottom"
    known: Optional[str] = None
    known_concepts: Tuple[int, ...] = (2,)

    # training and data
    train_steps: int = Field(2000, ge=0)
    lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(32, ge=1)
    dataset_size: int = Field(512, ge=1)

    # gradient checks and hopfield demo
    tolerance: float = Field(1e-6, gt=0)
    max_keys: int = Field(8, ge=1)
    max_queries: int = Field(16, ge=1)
    max_dim: int = Field(8, ge=1)
    patterns: int = Field(16, ge=1)
    dim: int = Field(8, ge=1)
    hopfield_beta: float = Field(1.0, gt=0)

    @field_validator(*TUPLE_FIELDS, mode="before")
    @classmethod
    def _split(cls, v):
        if isinstance(v, str):
            return tuple(item.strip() for item in v.split(",") if item.strip())
        return v

    @field_validator("schedule")
    @classmethod
    def _schedule(cls, v):
        if v not in SCHEDULE_NAMES:
            raise ValueError(f"expected one of {', '.join(SCHEDULE_NAMES)}")
        return v

    @field_validator("variant")
    @classmethod
    def _variant(cls, v):
        if v not in VARIANTS:
            raise ValueError(f"expected one of {', '.join(VARIANTS)}")
        return v

    @model_validator(mode="after")
    def _ranges(self):
        if self.beta_end <= self.beta_start:
            raise ValueError("beta_end must exceed beta_start")
        if not self.prompt:
            raise ValueError("prompt needs at least one concept")
        return self

    @property
    def ebcu(self) -> bool:
        return self.variant in ("ebcu", "both")

    @property
    def ebcq(self) -> bool:
        return self.variant in ("ebcq", "both")

    def to_cfg(self) -> str:
        """Flat ``key = value`` text that ``from_cfg`` reads back to an equal config."""
        lines = []
        for key, value in self.model_dump(by_alias=True).items():
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse_cfg(text: str) -> Dict[str, Any]:
        """Read ``key = value`` lines; '#' starts a comment."""
        values = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {number}: expected 'key = value', got '{raw.strip()}'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
        return values

    @classmethod
    def from_cfg(cls, text: str, overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        values = cls.parse_cfg(text)
        values.update(overrides or {})
        return cls.model_validate(values)
