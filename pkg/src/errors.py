"""Exception hierarchy shared by the library and the CLI.

Every error carries a human readable ``detail`` and the process ``exit_code``
the CLI reports for it (0 success, 1 check failure, 2 config error).
"""
from typing import Optional


class EnergyAttentionError(Exception):
    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ShapeError(EnergyAttentionError, ValueError):
    """Operand shapes do not agree."""


class DomainError(EnergyAttentionError, ValueError):
    """Argument outside the operation's domain (empty input, beta <= 0, ...)."""


class NonFiniteError(EnergyAttentionError, ValueError):
    """NaN or Inf supplied to or produced by an operation."""


class ConfigError(EnergyAttentionError):
    exit_code = 2

    def __init__(self, detail: str, key: Optional[str] = None):
        super().__init__(f"{key}: {detail}" if key else detail)
        self.key = key


class CheckpointError(EnergyAttentionError):
    exit_code = 2


class TrainingError(EnergyAttentionError):
    def __init__(self, detail: str, seed: Optional[int] = None):
        super().__init__(f"{detail} (seed={seed})" if seed is not None else detail)
        self.seed = seed


class CheckFailure(EnergyAttentionError):
    def __init__(self, check: str, seed: int, error: float, tolerance: float):
        super().__init__(
            f"check '{check}' failed at seed {seed}: rel. error {error:.3e} > {tolerance:.1e}"
        )
        self.check = check
        self.seed = seed
        self.error = error
