"""Finite-difference oracles for the analytic gradients.

Each check draws a seeded random instance, evaluates the analytic gradient and
compares it with central differences of the corresponding scalar function.
"""
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from ..models import PatternStore, UpdateConfig
from . import ebcu, hopfield
from .numerics import lse, row_sq_norms, softmax, sq_norm_sum

FD_STEP = 1e-5
REL_TOL = 1e-6
ALPHAS = (0.0, 0.5)
BETAS = (0.25, 1.0)


@dataclass(frozen=True)
class SizeSpec:
    min_keys: int = 1
    max_keys: int = 8
    min_queries: int = 1
    max_queries: int = 16
    max_dim: int = 8


@dataclass(frozen=True)
class CheckResult:
    check: str
    seeds: int
    max_rel_error: float
    worst_seed: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``; the step is scaled by max(1, |x_i|)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        h = step * max(1.0, abs(x[idx]))
        orig = x[idx]
        x[idx] = orig + h
        f_plus = f(x)
        x[idx] = orig - h
        f_minus = f(x)
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Sup-norm error relative to the gradient scale, floored at one."""
    scale = max(1.0, float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))))
    return float(np.max(np.abs(np.asarray(analytic) - numeric))) / scale


def _instance(rng: np.random.Generator, sizes: SizeSpec):
    n = int(rng.integers(sizes.min_keys, sizes.max_keys + 1))
    p = int(rng.integers(sizes.min_queries, sizes.max_queries + 1))
    d = int(rng.integers(1, sizes.max_dim + 1))
    return rng.normal(size=(p, d)), rng.normal(size=(n, d)), float(rng.choice(ALPHAS)), float(rng.choice(BETAS))


def check_log_posterior(rng: np.random.Generator, sizes: SizeSpec) -> float:
    Q, K, alpha, beta = _instance(rng, sizes)
    numeric = central_difference(lambda k: ebcu.log_posterior(Q, k, alpha, beta), K)
    return relative_error(ebcu.grad_log_posterior(Q, K, alpha, beta), numeric)


def check_context_chain_rule(rng: np.random.Generator, sizes: SizeSpec) -> float:
    Q, K, _, beta = _instance(rng, sizes)
    d_c = int(rng.integers(1, sizes.max_dim + 1))
    C = rng.normal(size=(K.shape[0], d_c))
    W_K = rng.normal(size=(d_c, K.shape[1])) / np.sqrt(d_c)
    gamma = 1e-2
    cfg = UpdateConfig(beta=beta, gamma_attn=gamma, gamma_reg=gamma)
    analytic = (ebcu.context_update(C, Q, W_K, cfg) - C) / gamma
    numeric = central_difference(lambda c: ebcu.log_posterior(Q, c @ W_K, 0.0, beta), C)
    return relative_error(analytic, numeric)


def check_lse(rng: np.random.Generator, sizes: SizeSpec) -> float:
    x = rng.normal(size=int(rng.integers(1, sizes.max_queries + 1)))
    beta = float(rng.choice(BETAS))
    return relative_error(softmax(beta * x), central_difference(lambda v: lse(v, beta), x))


def check_squared_norm(rng: np.random.Generator, sizes: SizeSpec) -> float:
    _, K, _, _ = _instance(rng, sizes)
    i = int(rng.integers(K.shape[0]))
    analytic = np.zeros_like(K)
    analytic[i] = 2.0 * K[i]
    errors = [
        relative_error(analytic, central_difference(lambda k: row_sq_norms(k)[i], K)),
        relative_error(2.0 * K, central_difference(sq_norm_sum, K)),
    ]
    return max(errors)


def check_key_lse(rng: np.random.Generator, sizes: SizeSpec) -> float:
    Q, K, _, beta = _instance(rng, sizes)
    i = int(rng.integers(K.shape[0]))
    analytic = np.zeros_like(K)
    analytic[i] = softmax(beta * (Q @ K[i])) @ Q
    return relative_error(analytic, central_difference(lambda k: lse(Q @ k[i], beta), K))


def check_prior(rng: np.random.Generator, sizes: SizeSpec) -> float:
    _, K, _, _ = _instance(rng, sizes)
    analytic = ebcu.regularizer_weights(K)[:, None] * K
    return relative_error(analytic, central_difference(ebcu.prior_energy, K))


def check_hopfield(rng: np.random.Generator, sizes: SizeSpec) -> float:
    d = int(rng.integers(1, sizes.max_dim + 1))
    n = int(rng.integers(1, sizes.max_queries + 1))
    store = PatternStore(rng.normal(size=(d, n)), float(rng.uniform(0.1, 4.0)))
    zeta = rng.normal(size=d)
    numeric = central_difference(lambda z: hopfield.hopfield_energy(z, store), zeta)
    return relative_error(hopfield.hopfield_energy_grad(zeta, store), numeric)


CHECKS: Dict[str, Callable[[np.random.Generator, SizeSpec], float]] = {
    "log_posterior_grad": check_log_posterior,
    "context_chain_rule": check_context_chain_rule,
    "lse_grad": check_lse,
    "squared_norm_grad": check_squared_norm,
    "key_lse_grad": check_key_lse,
    "prior_energy_grad": check_prior,
    "hopfield_energy_grad": check_hopfield,
}


def run_suite(seeds: int = 100, sizes: SizeSpec = SizeSpec(), tolerance: float = REL_TOL) -> List[CheckResult]:
    results = []
    for idx, (name, check) in enumerate(CHECKS.items()):
        errors = [check(np.random.default_rng([idx, seed]), sizes) for seed in range(seeds)]
        worst = int(np.argmax(errors))
        results.append(CheckResult(name, seeds, errors[worst], worst, tolerance))
    return results
