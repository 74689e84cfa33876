from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core.numerics import Matrix, to_matrix
from ..errors import DomainError


@dataclass(frozen=True, eq=False)
class PatternStore:
    """Stored patterns as the columns of ``X`` (d x N) with inverse temperature beta."""

    X: Matrix
    beta: Optional[float] = None
    d: int = field(init=False)
    n: int = field(init=False)

    def __post_init__(self):
        X = to_matrix(self.X, "stored patterns")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "d", X.shape[0])
        object.__setattr__(self, "n", X.shape[1])
        if self.beta is None:
            object.__setattr__(self, "beta", 1.0 / np.sqrt(X.shape[0]))
        if not self.beta > 0:
            raise DomainError(f"beta must be positive, got {self.beta}")

    def __repr__(self):
        return f"<PatternStore(d={self.d}, n={self.n}, beta={self.beta:.4g})>"
