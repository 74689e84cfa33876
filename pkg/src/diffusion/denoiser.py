"""Toy cross-attention noise predictor with hand-derived backpropagation."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from ..core.gradcheck import FD_STEP, relative_error
from ..core.hopfield import attention_forward
from ..core.xattn import LayerStats, cascade_step
from ..errors import CheckpointError, DomainError, ShapeError
from ..models import ContextSet, EnergyRecord, LayerStack, LayerWeights, Mixer, UpdateConfig
from .data import CHANNELS, N_CONCEPTS, TOKENS

Params = Dict[str, np.ndarray]

BOS = N_CONCEPTS
PAD = N_CONCEPTS + 1
PROMPT_TOKENS = 3


@dataclass(frozen=True)
class DenoiserShape:
    tokens: int = TOKENS
    channels: int = CHANNELS
    d_model: int = 32
    d_c: int = 16
    hidden: int = 64
    time_features: int = 16
    layers: int = 4
    T: int = 50

    def as_array(self) -> np.ndarray:
        return np.array([self.tokens, self.channels, self.d_model, self.d_c, self.hidden,
                         self.time_features, self.layers, self.T])


@dataclass
class ForwardCache:
    x: np.ndarray
    time: np.ndarray
    contexts: np.ndarray
    layers: List[Tuple[np.ndarray, ...]] = field(default_factory=list)
    final: Optional[np.ndarray] = None


def grid_position_features(tokens: int, width: int) -> np.ndarray:
    """Fixed 2-D sin/cos position code for a square grid of ``tokens``.

    A quarter of ``width`` each goes to sin and cos of the row and of the
    column, at frequencies pi / 2^k; columns past the first 4 * (width // 4)
    are zero.
    """
    side = int(round(np.sqrt(tokens)))
    if side * side != tokens:
        raise DomainError(f"{tokens} tokens do not form a square grid")
    quarter = width // 4
    angles = np.arange(side)[:, None] * (np.pi / 2.0 ** np.arange(quarter))[None, :]
    axis = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    out = np.zeros((tokens, width))
    out[:, : 4 * quarter] = np.concatenate([np.repeat(axis, side, axis=0), np.tile(axis, (side, 1))], axis=1)
    return out


def _init_params(shape: DenoiserShape, rng: np.random.Generator) -> Params:
    D, H, F = shape.d_model, shape.d_model, shape.hidden

    def normal(rows, cols, scale=1.0):
        return rng.normal(0.0, scale / np.sqrt(rows), (rows, cols))

    p = {
        "W_in": normal(shape.channels, D),
        "b_in": np.zeros(D),
        "pos": grid_position_features(shape.tokens, D),
        "W_t": normal(shape.time_features, D),
        "b_t": np.zeros(D),
        "W_out": normal(D, shape.channels, 0.5),
        "b_out": np.zeros(shape.channels),
    }
    for l in range(shape.layers):
        p[f"{l}.W_Q"] = normal(D, H)
        p[f"{l}.W_K"] = normal(shape.d_c, H)
        p[f"{l}.W_V"] = normal(shape.d_c, H, 0.5)
        p[f"{l}.W1"] = normal(D, F)
        p[f"{l}.b1"] = np.zeros(F)
        p[f"{l}.W2"] = normal(F, D, 0.5)
        p[f"{l}.b2"] = np.zeros(D)
    return p


class ToyDenoiser:
    """epsilon_theta(x_t, t, concepts) over a P^2 x channels grid.

    The frozen concept table (plus token-position rows) stands in for a text
    encoder; the trainable parameters live in ``params``.
    """

    def __init__(self, shape: DenoiserShape, params: Params, embed: np.ndarray,
                 token_pos: np.ndarray, trained_steps: int = 0):
        self.shape = shape
        self.params = params
        self.embed = embed
        self.token_pos = token_pos
        self.trained_steps = trained_steps
        self.beta = 1.0 / np.sqrt(shape.d_model)

    @classmethod
    def initialize(cls, rng: np.random.Generator, shape: DenoiserShape = DenoiserShape()) -> "ToyDenoiser":
        embed = rng.normal(0.0, 1.0, (N_CONCEPTS + 2, shape.d_c))
        token_pos = rng.normal(0.0, 0.3, (PROMPT_TOKENS, shape.d_c))
        return cls(shape, _init_params(shape, rng), embed, token_pos)

    @property
    def T(self) -> int:
        return self.shape.T

    @property
    def parameter_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def copy(self, params: Optional[Params] = None, trained_steps: Optional[int] = None) -> "ToyDenoiser":
        params = params if params is not None else self.params
        return ToyDenoiser(
            self.shape,
            {k: v.copy() for k, v in params.items()},
            self.embed.copy(),
            self.token_pos.copy(),
            self.trained_steps if trained_steps is None else trained_steps,
        )

    # prompts -> contexts

    def prompt_tokens(self, prompt: Sequence[int]) -> np.ndarray:
        if not 1 <= len(prompt) <= PROMPT_TOKENS - 1:
            raise DomainError(f"a prompt names one or two concepts, got {list(prompt)}")
        for c in prompt:
            if not 0 <= c < N_CONCEPTS:
                raise DomainError(f"concept {c} outside [0, {N_CONCEPTS})")
        ids = [BOS, *prompt]
        return np.array(ids + [PAD] * (PROMPT_TOKENS - len(ids)))

    def context_matrix(self, prompt: Sequence[int]) -> np.ndarray:
        return self.embed[self.prompt_tokens(prompt)] + self.token_pos

    def contexts(self, prompt: Sequence[int]) -> ContextSet:
        return ContextSet.single(self.context_matrix(prompt), label="+".join(map(str, prompt)))

    # forward paths

    def time_features(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64)) / self.T
        freqs = np.geomspace(1.0, 100.0, self.shape.time_features // 2)
        angles = t[:, None] * freqs[None, :]
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)

    def embed_input(self, x: np.ndarray, t: int) -> np.ndarray:
        p = self.params
        temb = self.time_features(t)[0] @ p["W_t"] + p["b_t"]
        return x @ p["W_in"] + p["b_in"] + p["pos"] + temb

    def layer(self, l: int) -> Tuple[LayerWeights, Mixer]:
        p = self.params
        return (
            LayerWeights(p[f"{l}.W_Q"], p[f"{l}.W_K"], p[f"{l}.W_V"]),
            Mixer(p[f"{l}.W1"], p[f"{l}.b1"], p[f"{l}.W2"], p[f"{l}.b2"]),
        )

    def stack(self) -> LayerStack:
        return LayerStack(tuple(self.layer(l) for l in range(self.shape.layers)))

    def predict(
        self,
        x_t: np.ndarray,
        t: int,
        contexts: ContextSet,
        cfg: UpdateConfig,
        step_index: int,
        stats: Optional[LayerStats] = None,
        on_layer: Optional[Callable[[int, ContextSet], None]] = None,
        on_exit: Optional[Callable[[ContextSet], None]] = None,
    ) -> Tuple[np.ndarray, List[EnergyRecord]]:
        """Noise prediction through the context cascade; EBCU/EBCQ act here."""
        self._check_grid(x_t)
        if cfg.beta is None:
            cfg = cfg.model_copy(update={"beta": self.beta})
        h = self.embed_input(x_t, t)
        h, records = cascade_step(
            h, contexts, self.stack(), cfg, step_index, stats=stats, on_layer=on_layer, on_exit=on_exit,
        )
        return h @ self.params["W_out"] + self.params["b_out"], records

    def predict_plain(self, x_t: np.ndarray, t: int, context: np.ndarray) -> np.ndarray:
        """Noise prediction with plain cross-attention and no context update."""
        self._check_grid(x_t)
        h = self.embed_input(x_t, t)
        for l in range(self.shape.layers):
            w, mixer = self.layer(l)
            attended = attention_forward(h @ w.W_Q, context @ w.W_K, context @ w.W_V, self.beta)
            h = mixer(h, attended)
        return h @ self.params["W_out"] + self.params["b_out"]

    def _check_grid(self, x: np.ndarray) -> None:
        if x.shape != (self.shape.tokens, self.shape.channels):
            raise ShapeError(f"grid of shape {x.shape}, expected {(self.shape.tokens, self.shape.channels)}")

    # batched training path

    def forward_batch(self, params: Params, x: np.ndarray, t: np.ndarray, C: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        """x: B x P x channels, t: B, C: B x N x d_c -> predicted noise and the backprop cache."""
        te = self.time_features(t)
        h = x @ params["W_in"] + params["b_in"] + params["pos"][None] + (te @ params["W_t"] + params["b_t"])[:, None, :]
        cache = ForwardCache(x=x, time=te, contexts=C)
        for l in range(self.shape.layers):
            Q = h @ params[f"{l}.W_Q"]
            K = C @ params[f"{l}.W_K"]
            V = C @ params[f"{l}.W_V"]
            A = special.softmax(self.beta * np.einsum("bph,bnh->bpn", Q, K), axis=-1)
            h1 = h + np.einsum("bpn,bnh->bph", A, V)
            Z = h1 @ params[f"{l}.W1"] + params[f"{l}.b1"]
            R = np.maximum(Z, 0.0)
            cache.layers.append((h, Q, K, V, A, h1, Z, R))
            h = h1 + R @ params[f"{l}.W2"] + params[f"{l}.b2"]
        cache.final = h
        return h @ params["W_out"] + params["b_out"], cache

    def backward_batch(self, params: Params, cache: ForwardCache, d_eps: np.ndarray) -> Params:
        g = {}
        g["W_out"] = np.einsum("bpd,bpk->dk", cache.final, d_eps)
        g["b_out"] = d_eps.sum(axis=(0, 1))
        dh = d_eps @ params["W_out"].T
        C = cache.contexts
        for l in reversed(range(self.shape.layers)):
            h, Q, K, V, A, h1, Z, R = cache.layers[l]
            g[f"{l}.W2"] = np.einsum("bpf,bpd->fd", R, dh)
            g[f"{l}.b2"] = dh.sum(axis=(0, 1))
            dZ = (dh @ params[f"{l}.W2"].T) * (Z > 0)
            g[f"{l}.W1"] = np.einsum("bpd,bpf->df", h1, dZ)
            g[f"{l}.b1"] = dZ.sum(axis=(0, 1))
            dh1 = dh + dZ @ params[f"{l}.W1"].T
            dA = np.einsum("bph,bnh->bpn", dh1, V)
            dV = np.einsum("bpn,bph->bnh", A, dh1)
            dS = self.beta * A * (dA - np.sum(dA * A, axis=-1, keepdims=True))
            dQ = np.einsum("bpn,bnh->bph", dS, K)
            dK = np.einsum("bpn,bph->bnh", dS, Q)
            g[f"{l}.W_Q"] = np.einsum("bpd,bph->dh", h, dQ)
            g[f"{l}.W_K"] = np.einsum("bnc,bnh->ch", C, dK)
            g[f"{l}.W_V"] = np.einsum("bnc,bnh->ch", C, dV)
            dh = dh1 + dQ @ params[f"{l}.W_Q"].T
        g["W_in"] = np.einsum("bpc,bpd->cd", cache.x, dh)
        g["b_in"] = dh.sum(axis=(0, 1))
        g["pos"] = dh.sum(axis=0)
        d_time = dh.sum(axis=1)
        g["W_t"] = cache.time.T @ d_time
        g["b_t"] = d_time.sum(axis=0)
        return g

    def loss_and_grad(self, params: Params, x: np.ndarray, t: np.ndarray, C: np.ndarray,
                      noise: np.ndarray) -> Tuple[float, Params]:
        eps, cache = self.forward_batch(params, x, t, C)
        residual = eps - noise
        loss = float(np.mean(residual ** 2))
        return loss, self.backward_batch(params, cache, 2.0 * residual / residual.size)

    def loss(self, params: Params, x: np.ndarray, t: np.ndarray, C: np.ndarray, noise: np.ndarray) -> float:
        eps, _ = self.forward_batch(params, x, t, C)
        return float(np.mean((eps - noise) ** 2))

    def __repr__(self):
        return f"<ToyDenoiser(layers={self.shape.layers}, d_model={self.shape.d_model}, params={self.parameter_count})>"


def save_checkpoint(path: Path, denoiser: ToyDenoiser) -> None:
    arrays = {f"param:{k}": v for k, v in denoiser.params.items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(
            f,
            shape=denoiser.shape.as_array(),
            embed=denoiser.embed,
            token_pos=denoiser.token_pos,
            trained_steps=np.array(denoiser.trained_steps),
            **arrays,
        )


def load_checkpoint(path: Path) -> ToyDenoiser:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path) as data:
            shape = DenoiserShape(*(int(v) for v in data["shape"]))
            params = {k.split(":", 1)[1]: data[k] for k in data.files if k.startswith("param:")}
            return ToyDenoiser(shape, params, data["embed"], data["token_pos"], int(data["trained_steps"]))
    except (KeyError, ValueError, OSError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc


def gradient_check(
    denoiser: ToyDenoiser,
    rng: np.random.Generator,
    batch: int = 2,
    coords_per_param: int = 3,
    step: float = FD_STEP,
) -> float:
    """Max relative error of backward_batch against central differences on sampled coordinates."""
    shape = denoiser.shape
    x = rng.uniform(-1.0, 1.0, (batch, shape.tokens, shape.channels))
    t = rng.integers(1, shape.T + 1, batch)
    C = np.stack([denoiser.context_matrix([int(c)]) for c in rng.integers(0, N_CONCEPTS, batch)])
    noise = rng.normal(size=x.shape)
    params = denoiser.params
    _, grads = denoiser.loss_and_grad(params, x, t, C, noise)

    worst = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        picks = rng.choice(flat.size, size=min(coords_per_param, flat.size), replace=False)
        analytic, numeric = [], []
        for i in picks:
            h = step * max(1.0, abs(flat[i]))
            original = flat[i]
            flat[i] = original + h
            up = denoiser.loss(params, x, t, C, noise)
            flat[i] = original - h
            down = denoiser.loss(params, x, t, C, noise)
            flat[i] = original
            numeric.append((up - down) / (2.0 * h))
            analytic.append(grads[name].reshape(-1)[i])
        worst = max(worst, relative_error(np.array(analytic), np.array(numeric)))
    return worst
