"""Synthetic concept templates and the toy dataset built from them."""
from typing import List, Sequence

import numpy as np
from scipy.linalg import hadamard

from ..errors import DomainError
from ..models import ToySample

SIDE = 8
TOKENS = SIDE * SIDE
CHANNELS = 2
N_CONCEPTS = 8
REGIONS = ("full", "top", "bottom")

# (row, column) Hadamard indices per concept; distinct pairs give orthogonal patterns
_PAIRS = ((1, 1), (1, 2), (2, 1), (2, 2), (1, 3), (3, 1), (2, 3), (3, 2))


def _templates() -> np.ndarray:
    H = hadamard(SIDE).astype(np.float64)
    out = np.empty((N_CONCEPTS, TOKENS, CHANNELS))
    for c, (a, b) in enumerate(_PAIRS):
        out[c, :, 0] = np.outer(H[a], H[b]).ravel()
        out[c, :, 1] = np.outer(H[b], H[a]).ravel()
    return out


TEMPLATES = _templates()


def region_rows(region: str) -> np.ndarray:
    rows = np.arange(TOKENS)
    if region == "full":
        return rows
    if region == "top":
        return rows[: TOKENS // 2]
    if region == "bottom":
        return rows[TOKENS // 2:]
    raise DomainError(f"unknown region '{region}', expected one of {REGIONS}")


def region_mask(region: str) -> np.ndarray:
    """Binary vector over the P^2 tokens, 1 inside ``region``."""
    mask = np.zeros(TOKENS)
    mask[region_rows(region)] = 1.0
    return mask


def compose_grid(concepts: Sequence[int], amplitude: float = 1.0) -> np.ndarray:
    """One concept fills the grid; two concepts take the top and bottom halves."""
    for c in concepts:
        if not 0 <= c < N_CONCEPTS:
            raise DomainError(f"concept {c} outside [0, {N_CONCEPTS})")
    if len(concepts) == 1:
        return amplitude * TEMPLATES[concepts[0]]
    if len(concepts) == 2:
        grid = np.empty((TOKENS, CHANNELS))
        top, bottom = region_rows("top"), region_rows("bottom")
        grid[top] = TEMPLATES[concepts[0]][top]
        grid[bottom] = TEMPLATES[concepts[1]][bottom]
        return amplitude * grid
    raise DomainError(f"a sample shows one or two concepts, got {len(concepts)}")


def make_dataset(n: int, rng: np.random.Generator, two_concept_fraction: float = 0.5) -> List[ToySample]:
    if n < 1:
        raise DomainError("dataset must be nonempty")
    samples = []
    for _ in range(n):
        if rng.random() < two_concept_fraction:
            a, b = rng.choice(N_CONCEPTS, size=2, replace=False)
            concepts = (int(a), int(b))
        else:
            concepts = (int(rng.integers(N_CONCEPTS)),)
        amplitude = float(rng.uniform(0.7, 1.0))
        samples.append(ToySample(compose_grid(concepts, amplitude), concepts))
    return samples


def template_correlation(grid: np.ndarray, concept: int, region: str = "full") -> float:
    """Pearson correlation between ``grid`` and the concept template inside ``region``."""
    rows = region_rows(region)
    x = np.asarray(grid)[rows].ravel()
    y = TEMPLATES[concept][rows].ravel()
    if np.ptp(x) == 0:
        return 0.0
    return float(np.corrcoef(x, y)[0, 1])


def neglect_score(grid: np.ndarray, concepts: Sequence[int]) -> float:
    """Smallest per-concept template correlation of a two-concept sample."""
    a, b = concepts
    return min(template_correlation(grid, a, "top"), template_correlation(grid, b, "bottom"))
