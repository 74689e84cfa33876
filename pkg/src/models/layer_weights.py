from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..core.numerics import Matrix, to_matrix
from ..errors import DomainError, ShapeError


@dataclass(frozen=True, eq=False)
class LayerWeights:
    """Query/key/value projections of one cross-attention layer."""

    W_Q: Matrix  # d_model x d_H
    W_K: Matrix  # d_c x d_H
    W_V: Matrix  # d_c x d_H

    def __post_init__(self):
        for name in ("W_Q", "W_K", "W_V"):
            object.__setattr__(self, name, to_matrix(getattr(self, name), name))
        if not (self.W_Q.shape[1] == self.W_K.shape[1] == self.W_V.shape[1]):
            raise ShapeError(
                f"projections must share d_H: {self.W_Q.shape}, {self.W_K.shape}, {self.W_V.shape}"
            )
        if self.W_K.shape[0] != self.W_V.shape[0]:
            raise ShapeError("W_K and W_V must both map from d_c")

    @property
    def d_model(self) -> int:
        return self.W_Q.shape[0]

    @property
    def d_h(self) -> int:
        return self.W_Q.shape[1]

    @property
    def d_c(self) -> int:
        return self.W_K.shape[0]

    @classmethod
    def random(cls, rng: np.random.Generator, d_model: int, d_c: int, d_h: int) -> "LayerWeights":
        return cls(
            W_Q=rng.normal(0.0, 1.0 / np.sqrt(d_model), (d_model, d_h)),
            W_K=rng.normal(0.0, 1.0 / np.sqrt(d_c), (d_c, d_h)),
            W_V=rng.normal(0.0, 1.0 / np.sqrt(d_c), (d_c, d_h)),
        )


@dataclass(frozen=True, eq=False)
class Mixer:
    """Residual feed-forward token mixer: h + relu(h W1 + b1) W2 + b2, applied after h + attention."""

    W1: Matrix
    b1: np.ndarray
    W2: Matrix
    b2: np.ndarray

    def __call__(self, latent: Matrix, attended: Matrix) -> Matrix:
        h = latent + attended
        return h + np.maximum(h @ self.W1 + self.b1, 0.0) @ self.W2 + self.b2


@dataclass(frozen=True, eq=False)
class LayerStack:
    """Cross-attention layers in forward order; a layer without a mixer passes
    the attention output straight to the next layer."""

    layers: Tuple[Tuple[LayerWeights, Optional[Mixer]], ...]
    L: int = field(init=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DomainError("a layer stack needs at least one layer")
        if len({w.d_model for w, _ in layers}) != 1:
            raise ShapeError("all layers must share d_model")
        for w, mixer in layers:
            if mixer is None and w.d_h != w.d_model:
                raise ShapeError("a layer without a mixer needs d_H == d_model")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "L", len(layers))

    @classmethod
    def attention_only(cls, weights: List[LayerWeights]) -> "LayerStack":
        return cls(tuple((w, None) for w in weights))

    def __repr__(self):
        return f"<LayerStack(L={self.L}, d_model={self.layers[0][0].d_model})>"
