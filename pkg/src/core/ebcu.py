"""Energy-based Bayesian context update.

Conditional energy E(Q;K), prior energy E(K), the gradient of the log
posterior over keys and the context update that follows it through K = C W_K.
"""
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import DomainError, ShapeError
from ..models import ScheduleKind, ScheduleSpec, UpdateConfig
from .numerics import (
    Matrix,
    Vector,
    check_finite,
    lse,
    require_cols,
    row_lse,
    row_softmax,
    row_sq_norms,
    scale_rows,
    softmax,
    sq_norm_sum,
    to_matrix,
)

# step sizes searched per sample for multi-concept generation and inpainting
GAMMA_GRID = (1e-2, 1.5e-2, 2e-2, 2.5e-2)


def _beta(beta: Optional[float], d_h: int) -> float:
    return 1.0 / np.sqrt(d_h) if beta is None else beta


def _pair(Q, K) -> Tuple[Matrix, Matrix]:
    Q, K = to_matrix(Q, "Q"), to_matrix(K, "K")
    require_cols(Q, K, "queries and keys")
    return Q, K


def cond_energy(Q: Matrix, K: Matrix, alpha: float = 0.0, beta: Optional[float] = None) -> float:
    """E(Q;K) = alpha/2 tr(K K^T) - sum_i lse(Q k_i^T, beta)."""
    Q, K = _pair(Q, K)
    beta = _beta(beta, Q.shape[1])
    return 0.5 * alpha * sq_norm_sum(K) - float(np.sum(row_lse(K @ Q.T, beta)))


def prior_energy(K: Matrix) -> float:
    """E(K) = lse(1/2 diag(K K^T), 1)."""
    K = to_matrix(K, "K")
    return lse(0.5 * row_sq_norms(K), 1.0)


def log_posterior(Q: Matrix, K: Matrix, alpha: float = 0.0, beta: Optional[float] = None) -> float:
    """log p(K|Q) up to a constant: -(E(Q;K) + E(K))."""
    return -(cond_energy(Q, K, alpha, beta) + prior_energy(K))


def regularizer_weights(K: Matrix) -> Vector:
    return softmax(0.5 * row_sq_norms(K))


def attention_term(
    Q: Matrix,
    S: Matrix,
    beta: float,
    mask: Optional[Sequence[float]] = None,
    renormalize: bool = False,
) -> Matrix:
    """softmax_2(beta K Q^T) Q from the shared similarity S = Q K^T.

    With a mask the query rows are multiplied by it after the weights are
    taken over every query; ``renormalize`` instead takes the weights over the
    unmasked rows only.
    """
    if mask is None:
        return row_softmax(S.T, beta) @ Q
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != (Q.shape[0],):
        raise ShapeError(f"mask of length {m.size} for {Q.shape[0]} query rows")
    if not renormalize:
        return row_softmax(S.T, beta) @ scale_rows(Q, m)
    keep = m > 0
    if not keep.any():
        return np.zeros((S.shape[1], Q.shape[1]))
    return row_softmax(S.T[:, keep], beta) @ Q[keep]


def grad_log_posterior(Q: Matrix, K: Matrix, alpha: float = 0.0, beta: Optional[float] = None) -> Matrix:
    """softmax_2(beta K Q^T) Q - (alpha I + D(softmax(1/2 diag(K K^T)))) K."""
    Q, K = _pair(Q, K)
    beta = _beta(beta, Q.shape[1])
    grad = attention_term(Q, Q @ K.T, beta) - alpha * K - scale_rows(K, regularizer_weights(K))
    return check_finite(grad, "grad_log_posterior")


def schedule(spec: ScheduleSpec, t: int) -> float:
    if t < 0:
        raise DomainError(f"step index must be nonnegative, got {t}")
    if spec.kind is ScheduleKind.STEP:
        return spec.gamma0 if t > spec.tau else 0.0
    if spec.kind is ScheduleKind.EXP_DECAY:
        return spec.gamma0 * spec.lam ** t
    return spec.gamma0


def _rate_vector(gamma: Union[float, Sequence[float]], n: int, name: str) -> Vector:
    g = np.asarray(gamma, dtype=np.float64)
    if g.ndim == 0:
        g = np.full(n, float(g))
    elif g.shape != (n,):
        raise ShapeError(f"{name} has {g.size} rates for {n} context tokens")
    if np.any(g < 0):
        raise DomainError(f"{name} must be nonnegative")
    return g


def resolve_rates(cfg: UpdateConfig, n: int, t: int) -> Tuple[Vector, Vector]:
    """Per-token (gamma_attn, gamma_reg) at step index ``t``."""
    factor = schedule(cfg.schedule, t)
    return (
        factor * _rate_vector(cfg.gamma_attn, n, "gamma_attn"),
        factor * _rate_vector(cfg.gamma_reg, n, "gamma_reg"),
    )


def emphasize(gamma: float, n: int, token: int, factor: float = 2.0) -> Tuple[float, ...]:
    """Per-token rates with one token's rate scaled by ``factor``."""
    if not 0 <= token < n:
        raise DomainError(f"token {token} outside [0, {n})")
    if factor < 0 or gamma < 0:
        raise DomainError("rates and emphasis factor must be nonnegative")
    rates = [gamma] * n
    rates[token] = gamma * factor
    return tuple(rates)


def update_from_similarity(
    C: Matrix,
    Q: Matrix,
    K: Matrix,
    S: Matrix,
    W_K: Matrix,
    cfg: UpdateConfig,
    t: int,
) -> Matrix:
    """Context update reusing the similarity S = Q K^T of the forward pass."""
    ga, gr = resolve_rates(cfg, C.shape[0], t)
    if not (ga.any() or gr.any()):
        return C.copy()
    beta = cfg.resolve_beta(K.shape[1])
    attn = attention_term(Q, S, beta, cfg.mask, cfg.mask_renormalize)
    reg = cfg.alpha * K + scale_rows(K, regularizer_weights(K))
    delta = (scale_rows(attn, ga) - scale_rows(reg, gr)) @ W_K.T
    return check_finite(C + delta, "context_update")


def context_update(C: Matrix, Q: Matrix, W_K: Matrix, cfg: UpdateConfig, t: int = 0) -> Matrix:
    """C + gamma_attn softmax_2(beta K Q^T) M Q W_K^T - gamma_reg D(softmax(1/2 diag(K K^T))) K W_K^T.

    ``Q`` is the projected query matrix and K = C W_K.
    """
    C, Q, W_K = to_matrix(C, "C"), to_matrix(Q, "Q"), to_matrix(W_K, "W_K")
    if C.shape[1] != W_K.shape[0]:
        raise ShapeError(f"C {C.shape} does not feed W_K {W_K.shape}")
    require_cols(Q, W_K, "queries and key projection")
    K = C @ W_K
    return update_from_similarity(C, Q, K, Q @ K.T, W_K, cfg, t)
