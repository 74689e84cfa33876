"""Modern Hopfield energy, its update rule and the attention it reduces to."""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ..errors import ShapeError
from ..models import PatternStore
from .numerics import Matrix, Vector, check_finite, lse, row_softmax, softmax, to_matrix, to_vector

FIXED_POINT_TOL = 1e-10
MAX_ITERATIONS = 10_000


def _state(zeta, store: PatternStore) -> Vector:
    z = to_vector(zeta, "state pattern")
    if z.shape[0] != store.d:
        raise ShapeError(f"state of length {z.shape[0]} for patterns of dimension {store.d}")
    return z


def _retrieve(z: Vector, store: PatternStore) -> Vector:
    return store.X @ softmax(store.beta * (store.X.T @ z))


def hopfield_energy(zeta, store: PatternStore) -> float:
    """E(zeta) = 1/2 zeta^T zeta - lse(X^T zeta, beta)."""
    z = _state(zeta, store)
    return 0.5 * float(z @ z) - lse(store.X.T @ z, store.beta)


def hopfield_energy_grad(zeta, store: PatternStore) -> Vector:
    z = _state(zeta, store)
    return z - _retrieve(z, store)


def hopfield_update(zeta, store: PatternStore) -> Vector:
    """One CCCP step: zeta_new = X softmax(beta X^T zeta)."""
    return check_finite(_retrieve(_state(zeta, store), store), "hopfield_update")


def hopfield_gd_step(zeta, store: PatternStore, eta: float) -> Vector:
    """Gradient step zeta - eta * (zeta - X softmax(beta X^T zeta)); eta = 1 is the CCCP step."""
    z = _state(zeta, store)
    return check_finite(z - eta * (z - _retrieve(z, store)), "hopfield_gd_step")


@dataclass
class HopfieldRun:
    state: Vector
    energies: List[float]
    iterations: int
    converged: bool


def hopfield_iterate(
    zeta0,
    store: PatternStore,
    tol: float = FIXED_POINT_TOL,
    max_iter: int = MAX_ITERATIONS,
) -> HopfieldRun:
    """Iterate the update until the sup-norm step falls below ``tol``.

    ``energies[0]`` is the energy of the initial state, followed by one entry
    per iteration.
    """
    z = _state(zeta0, store)
    energies = [hopfield_energy(z, store)]
    for it in range(1, max_iter + 1):
        z_new = hopfield_update(z, store)
        energies.append(hopfield_energy(z_new, store))
        step = float(np.max(np.abs(z_new - z)))
        z = z_new
        if step < tol:
            return HopfieldRun(z, energies, it, True)
    return HopfieldRun(z, energies, max_iter, False)


def attention_forward(Q: Matrix, K: Matrix, V: Matrix, beta: Optional[float] = None) -> Matrix:
    """softmax_2(beta Q K^T) V; beta defaults to 1/sqrt(d_H)."""
    Q, K, V = to_matrix(Q, "Q"), to_matrix(K, "K"), to_matrix(V, "V")
    if Q.shape[1] != K.shape[1]:
        raise ShapeError(f"Q {Q.shape} and K {K.shape} differ in width")
    if V.shape[0] != K.shape[0]:
        raise ShapeError(f"V has {V.shape[0]} rows for {K.shape[0]} keys")
    if beta is None:
        beta = 1.0 / np.sqrt(Q.shape[1])
    return attend(Q @ K.T, V, beta)


def attend(S: Matrix, V: Matrix, beta: float) -> Matrix:
    """Attention output from a precomputed similarity S = Q K^T."""
    return check_finite(row_softmax(S, beta) @ V, "attention")
