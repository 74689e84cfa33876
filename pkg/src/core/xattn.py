"""Cross-attention layer with the context update, and the per-step context cascade."""
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Tuple

import numpy as np

from ..errors import DomainError, ShapeError
from ..models import ContextSet, EnergyRecord, LayerStack, LayerWeights, UpdateConfig
from . import ebcu
from .ebcq import compose
from .hopfield import attend
from .numerics import Matrix, row_lse, to_matrix


@dataclass
class LayerStats:
    """Counts similarity evaluations per (layer, context index)."""

    similarity_evals: Counter = field(default_factory=Counter)

    def similarity(self, Q: Matrix, K: Matrix, layer: int, s: int) -> Matrix:
        self.similarity_evals[(layer, s)] += 1
        return Q @ K.T


class LayerOutput(NamedTuple):
    latent: Matrix
    contexts: ContextSet
    record: EnergyRecord


def _scaled(cfg: UpdateConfig, factor: float) -> UpdateConfig:
    def scale(g):
        return tuple(x * factor for x in g) if isinstance(g, tuple) else g * factor

    return cfg.model_copy(update={"gamma_attn": scale(cfg.gamma_attn), "gamma_reg": scale(cfg.gamma_reg)})


def _check_layer(latent: Matrix, contexts: ContextSet, w: LayerWeights) -> Matrix:
    latent = to_matrix(latent, "latent")
    if latent.shape[1] != w.d_model:
        raise ShapeError(f"latent width {latent.shape[1]} for W_Q of shape {w.W_Q.shape}")
    if contexts.d_c != w.d_c:
        raise ShapeError(f"contexts of width {contexts.d_c} for W_K of shape {w.W_K.shape}")
    return latent


def layer_forward(
    latent: Matrix,
    contexts: ContextSet,
    w: LayerWeights,
    cfg: UpdateConfig,
    t: int,
    layer: int = 0,
    stats: Optional[LayerStats] = None,
) -> LayerOutput:
    """Project, attend (composing over active contexts) and update every active context.

    The similarity S = Q K_s^T of each context is evaluated once and shared by
    the attention output and the update. The record holds the energies of the
    main context leaving the layer, against this layer's queries; without an
    update that is the context it entered with.
    """
    if t < 0:
        raise DomainError(f"step index must be nonnegative, got {t}")
    latent = _check_layer(latent, contexts, w)
    stats = stats if stats is not None else LayerStats()
    beta = cfg.resolve_beta(w.d_h)
    Q = latent @ w.W_Q
    members = contexts.members(t)

    keys, sims, outputs = {}, {}, []
    for s in members:
        K = contexts.contexts[s] @ w.W_K
        S = stats.similarity(Q, K, layer, s)
        keys[s], sims[s] = K, S
        outputs.append(attend(S, contexts.contexts[s] @ w.W_V, beta))
    attended = compose(outputs, [contexts.alphas[s] for s in members])

    updated = list(contexts.contexts)
    for s in members:
        cfg_s = contexts.config_for(s, cfg)
        if cfg_s.steps_per_layer > 1:
            updated[s] = _multi_step(updated[s], Q, w.W_K, cfg_s, cfg_s.steps_per_layer, t)
        else:
            updated[s] = ebcu.update_from_similarity(updated[s], Q, keys[s], sims[s], w.W_K, cfg_s, t)

    K, S = keys[0], sims[0]
    if not np.array_equal(updated[0], contexts.contexts[0]):
        K = updated[0] @ w.W_K
        S = Q @ K.T
    record = EnergyRecord(
        t=t,
        layer=layer,
        variant=contexts.config_for(0, cfg).variant,
        e_cond=-float(np.sum(row_lse(S.T, beta))),
        e_prior=ebcu.prior_energy(K),
    )
    return LayerOutput(attended, contexts.with_contexts(updated), record)


def _multi_step(C: Matrix, Q: Matrix, W_K: Matrix, cfg: UpdateConfig, k: int, t: int) -> Matrix:
    step_cfg = _scaled(cfg, 1.0 / k)
    for _ in range(k):
        C = ebcu.context_update(C, Q, W_K, step_cfg, t)
    return C


def multi_step_update(
    latent: Matrix,
    contexts: ContextSet,
    w: LayerWeights,
    cfg: UpdateConfig,
    k: int,
    t: int = 0,
) -> ContextSet:
    """Apply the context update ``k`` times within one layer with rates divided by ``k``."""
    if k < 1:
        raise DomainError(f"number of updates must be at least 1, got {k}")
    latent = _check_layer(latent, contexts, w)
    Q = latent @ w.W_Q
    updated = list(contexts.contexts)
    for s in contexts.members(t):
        updated[s] = _multi_step(updated[s], Q, w.W_K, contexts.config_for(s, cfg), k, t)
    return contexts.with_contexts(updated)


def cascade_step(
    latent: Matrix,
    init_contexts: ContextSet,
    stack: LayerStack,
    cfg: UpdateConfig,
    t: int,
    stats: Optional[LayerStats] = None,
    on_layer: Optional[Callable[[int, ContextSet], None]] = None,
    on_exit: Optional[Callable[[ContextSet], None]] = None,
) -> Tuple[Matrix, List[EnergyRecord]]:
    """Thread contexts through the stack for one sampling step.

    Contexts start from ``init_contexts`` on every call. The contexts leaving
    the last layer go to ``on_exit`` and are then dropped.
    """
    contexts = init_contexts
    records = []
    for layer, (w, mixer) in enumerate(stack.layers):
        if on_layer is not None:
            on_layer(layer, contexts)
        out = layer_forward(latent, contexts, w, cfg, t, layer=layer, stats=stats)
        latent = out.latent if mixer is None else mixer(latent, out.latent)
        contexts = out.contexts
        records.append(out.record)
    if on_exit is not None:
        on_exit(contexts)
    return latent, records
