"""Noise-prediction training of the toy denoiser with hand-written Adam."""
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from ..errors import DomainError, TrainingError
from ..models import NoiseSchedule, ToySample
from ..utils.log import logger
from .denoiser import Params, ToyDenoiser

LOG_EVERY = 250


class Batch(NamedTuple):
    x_t: np.ndarray
    t: np.ndarray
    contexts: np.ndarray
    noise: np.ndarray


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    def step(self, params: Params, grads: Params) -> None:
        """Update ``params`` in place."""
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_batch(
    samples: Sequence[ToySample],
    denoiser: ToyDenoiser,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> Batch:
    """Noised grids at uniformly drawn steps, with the prompt contexts of each sample."""
    x0 = np.stack([s.grid for s in samples])
    t = rng.integers(1, schedule.T + 1, len(samples))
    noise = rng.normal(size=x0.shape)
    abar = schedule.alpha_bars[t - 1][:, None, None]
    x_t = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise
    contexts = np.stack([denoiser.context_matrix(s.concept_ids) for s in samples])
    return Batch(x_t, t, contexts, noise)


def batch_loss(denoiser: ToyDenoiser, batch: Batch) -> float:
    return denoiser.loss(denoiser.params, batch.x_t, batch.t, batch.contexts, batch.noise)


def shuffle_labels(dataset: Sequence[ToySample], rng: np.random.Generator) -> List[ToySample]:
    """Same grids with the concept labels permuted across samples."""
    order = rng.permutation(len(dataset))
    return [ToySample(s.grid, dataset[j].concept_ids) for s, j in zip(dataset, order)]


def train(
    dataset: Sequence[ToySample],
    denoiser: ToyDenoiser,
    schedule: NoiseSchedule,
    steps: int,
    rng: np.random.Generator,
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: Optional[int] = None,
) -> ToyDenoiser:
    """Minimise ||eps_theta(x_t, t, concepts) - eps||^2 with plain cross-attention.

    Returns a new denoiser; ``denoiser`` itself is left untouched.
    """
    if not dataset:
        raise DomainError("training needs a nonempty dataset")
    if steps < 0:
        raise DomainError(f"steps must be nonnegative, got {steps}")
    if schedule.T != denoiser.T:
        raise DomainError(f"schedule has {schedule.T} steps, denoiser was built for {denoiser.T}")
    model = denoiser.copy()
    if steps == 0:
        return model

    optimizer = Adam(lr=lr)
    logger.info("Training %r for %d steps (batch %d, lr %g)", model, steps, batch_size, lr)
    for step in range(1, steps + 1):
        idx = rng.integers(0, len(dataset), batch_size)
        batch = make_batch([dataset[i] for i in idx], model, schedule, rng)
        loss, grads = model.loss_and_grad(model.params, *batch)
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged at step {step}", seed=seed)
        optimizer.step(model.params, grads)
        if step % LOG_EVERY == 0 or step == steps:
            logger.info("step %d/%d loss %.4f", step, steps, loss)
    model.trained_steps = denoiser.trained_steps + steps
    return model
