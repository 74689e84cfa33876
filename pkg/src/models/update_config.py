from typing import Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .schedule_spec import ScheduleSpec

Rate = Union[float, Tuple[float, ...]]


class UpdateConfig(BaseModel):
    """Step sizes, energies' parameters and mask for the context update.

    ``gamma_attn`` / ``gamma_reg`` are either one rate for every token or one
    rate per context token. ``beta=None`` resolves to 1/sqrt(d_H) at call time.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    beta: Optional[float] = Field(None, gt=0)
    alpha: float = Field(0.0, ge=0)
    gamma_attn: Rate = 0.0
    gamma_reg: Rate = 0.0
    schedule: ScheduleSpec = ScheduleSpec()
    mask: Optional[Tuple[float, ...]] = None
    mask_renormalize: bool = False
    steps_per_layer: int = Field(1, ge=1)

    @field_validator("gamma_attn", "gamma_reg")
    @classmethod
    def _nonnegative(cls, v):
        values = v if isinstance(v, tuple) else (v,)
        if any(g < 0 for g in values):
            raise ValueError("step sizes must be nonnegative")
        if isinstance(v, tuple) and len(v) == 0:
            raise ValueError("per-token step sizes must be nonempty")
        return v

    @field_validator("mask")
    @classmethod
    def _binary(cls, v):
        if v is not None and any(m not in (0.0, 1.0) for m in v):
            raise ValueError("mask entries must be 0 or 1")
        return v

    @property
    def enabled(self) -> bool:
        return any(np.any(np.asarray(g) > 0) for g in (self.gamma_attn, self.gamma_reg))

    @property
    def variant(self) -> str:
        return "ebcu" if self.enabled else "baseline"

    def resolve_beta(self, d_h: int) -> float:
        return self.beta if self.beta is not None else 1.0 / np.sqrt(d_h)

    def disabled(self) -> "UpdateConfig":
        return self.model_copy(update={"gamma_attn": 0.0, "gamma_reg": 0.0})

    def __repr__(self):
        return f"<UpdateConfig(beta={self.beta}, alpha={self.alpha}, gamma_attn={self.gamma_attn}, gamma_reg={self.gamma_reg})>"
