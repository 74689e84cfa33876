from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import DomainError


@dataclass(frozen=True, eq=False)
class ToySample:
    """A P x P grid of spatial tokens (flattened to P^2 rows) and the concepts it shows."""

    grid: np.ndarray  # P^2 x channels
    concept_ids: Tuple[int, ...]

    def __post_init__(self):
        if np.any(np.abs(self.grid) > 1.0):
            raise DomainError("toy sample grid values must lie in [-1, 1]")

    def __repr__(self):
        return f"<ToySample(tokens={self.grid.shape[0]}, concepts={list(self.concept_ids)})>"
