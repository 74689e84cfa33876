from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """DDPM schedule; step t runs from 1 to T and index t-1 holds beta_t."""

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)
    sigmas: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.array(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise DomainError("noise schedule needs at least one step")
        if not (np.all(betas > 0) and np.all(betas < 1)):
            raise DomainError("betas must lie in (0, 1)")
        if np.any(np.diff(betas) <= 0):
            raise DomainError("betas must be strictly increasing")
        alphas = 1.0 - betas
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", np.cumprod(alphas))
        object.__setattr__(self, "sigmas", np.sqrt(betas))

    @classmethod
    def linear(cls, T: int = 50, beta_start: float = 1e-4, beta_end: float = 0.2) -> "NoiseSchedule":
        return cls(np.linspace(beta_start, beta_end, T))

    @property
    def T(self) -> int:
        return self.betas.size

    def alpha_bar(self, t: int) -> float:
        """Cumulative product up to step t; alpha_bar(0) = 1."""
        self.check_step(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def check_step(self, t: int, allow_zero: bool = False) -> None:
        low = 0 if allow_zero else 1
        if not low <= t <= self.T:
            raise DomainError(f"step {t} outside [{low}, {self.T}]")

    def __repr__(self):
        return f"<NoiseSchedule(T={self.T}, beta_1={self.betas[0]:.3g}, beta_T={self.betas[-1]:.3g})>"
