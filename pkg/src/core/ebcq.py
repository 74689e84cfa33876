"""Energy-based composition of queries over several contexts."""
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from ..errors import DomainError, ShapeError
from ..models import ContextSet, ScheduleKind, ScheduleSpec, UpdateConfig
from .hopfield import attend
from .numerics import Matrix, check_finite, require_cols, row_lse, sq_norm_sum, to_matrix

EDITORIAL_ALPHA_RANGE = (0.5, 1.0)


@dataclass(frozen=True)
class EditPreset:
    """Source-negation / target-composition weights and per-context rates of an editing task."""

    alpha_src: float
    alpha_tgt: float
    gamma_main: float
    gamma_src: float
    gamma_tgt: float
    tau: int

    def __post_init__(self):
        low, high = EDITORIAL_ALPHA_RANGE
        if not low <= -self.alpha_src <= high:
            raise DomainError(f"source weight {self.alpha_src} outside [-{high}, -{low}]")
        if not low <= self.alpha_tgt <= high:
            raise DomainError(f"target weight {self.alpha_tgt} outside [{low}, {high}]")

    def context_set(self, main: Matrix, source: Matrix, target: Matrix) -> ContextSet:
        def rates(gamma):
            return UpdateConfig(
                gamma_attn=gamma,
                gamma_reg=gamma,
                schedule=ScheduleSpec(kind=ScheduleKind.STEP, tau=self.tau),
            )

        return ContextSet.compose(
            contexts=(main, source, target),
            alphas=(1.0, self.alpha_src, self.alpha_tgt),
            labels=("main", "source", "target"),
            updates=(rates(self.gamma_main), rates(self.gamma_src), rates(self.gamma_tgt)),
            warmups=(None, self.tau, self.tau),
        )


EDIT_PRESETS: Dict[str, EditPreset] = {
    "swap_identity": EditPreset(-0.65, 0.75, 0.0, 5e-4, 6e-4, 25),
    "swap_texture": EditPreset(-0.5, 0.6, 0.0, 4e-4, 5e-4, 15),
    "add_attribute": EditPreset(-0.6, 0.7, 0.0, 1e-3, 1e-3, 17),
}


def _beta(beta: Optional[float], d_h: int) -> float:
    return 1.0 / np.sqrt(d_h) if beta is None else beta


def _lse_sum(Q: Matrix, K: Matrix, beta: float) -> float:
    return float(np.sum(row_lse(Q @ K.T, beta)))


def query_energy(Q: Matrix, K_s: Matrix, beta: Optional[float] = None) -> float:
    """E(Q;K_s) = 1/2 tr(Q Q^T) - sum_i lse(K_s q_i^T, beta)."""
    Q, K_s = to_matrix(Q, "Q"), to_matrix(K_s, "K_s")
    require_cols(Q, K_s, "queries and keys")
    beta = _beta(beta, Q.shape[1])
    return 0.5 * sq_norm_sum(Q) - _lse_sum(Q, K_s, beta)


def compositional_energy(Q: Matrix, Ks: Sequence[Matrix], beta: Optional[float] = None) -> float:
    """1/2 tr(Q Q^T) - 1/M sum_s sum_i lse(K_s q_i^T, beta); the quadratic term is counted once."""
    if not Ks:
        raise DomainError("compositional energy needs at least one key matrix")
    Q = to_matrix(Q, "Q")
    beta = _beta(beta, Q.shape[1])
    total = 0.0
    for s, K in enumerate(Ks):
        K = to_matrix(K, f"K_{s}")
        require_cols(Q, K, "queries and keys")
        total += _lse_sum(Q, K, beta)
    return 0.5 * sq_norm_sum(Q) - total / len(Ks)


def compose(outputs: Sequence[Matrix], alphas: Sequence[float]) -> Matrix:
    """1/M sum_s alpha_s O_s, summed in concept order."""
    acc = np.zeros_like(outputs[0])
    for alpha, out in zip(alphas, outputs):
        acc = acc + alpha * out
    return acc / len(outputs)


def ebcq_forward(
    Q: Matrix,
    contexts: ContextSet,
    W_K: Matrix,
    W_V: Matrix,
    beta: Optional[float] = None,
) -> Matrix:
    """1/M sum_s alpha_s softmax_2(beta Q K_s^T) V_s with K_s = C_s W_K and V_s = C_s W_V."""
    if len(contexts) == 0:
        raise DomainError("empty context set")
    Q, W_K, W_V = to_matrix(Q, "Q"), to_matrix(W_K, "W_K"), to_matrix(W_V, "W_V")
    require_cols(Q, W_K, "queries and key projection")
    if contexts.d_c != W_K.shape[0] or contexts.d_c != W_V.shape[0]:
        raise ShapeError(f"contexts of width {contexts.d_c} for projections {W_K.shape}, {W_V.shape}")
    beta = _beta(beta, Q.shape[1])
    outputs = [attend(Q @ (C @ W_K).T, C @ W_V, beta) for C in contexts.contexts]
    return check_finite(compose(outputs, contexts.alphas), "ebcq_forward")
