"""Ancestral DDPM sampling with the context cascade active in every noise prediction."""
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from ..core.numerics import Matrix, check_finite, to_vector
from ..errors import DomainError, ShapeError
from ..models import ContextSet, EnergyTrace, NoiseSchedule, UpdateConfig
from ..utils.log import logger
from ..utils.rng import make_rng
from .schedule import forward_noising

SOFT_RANGE = 1.5
TRAJECTORY_STREAM = 0
KNOWN_STREAM = 1


def reverse_step(
    x_t: Matrix,
    t: int,
    denoiser,
    contexts: ContextSet,
    schedule: NoiseSchedule,
    cfg: UpdateConfig,
    rng: np.random.Generator,
    trace: Optional[EnergyTrace] = None,
    on_exit: Optional[Callable[[ContextSet], None]] = None,
) -> Matrix:
    """x_{t-1} = (x_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_t) + sigma_t z.

    No noise is added at t = 1. Records from the cascade go to ``trace``; the
    contexts leaving its last layer go to ``on_exit``.
    """
    if schedule.T != denoiser.T:
        raise DomainError(f"schedule has {schedule.T} steps, denoiser was built for {denoiser.T}")
    schedule.check_step(t)
    eps, records = denoiser.predict(x_t, t, contexts, cfg, step_index=schedule.T - t, on_exit=on_exit)
    if trace is not None:
        trace.extend(records)
    alpha = schedule.alphas[t - 1]
    abar = schedule.alpha_bars[t - 1]
    x = (x_t - (1.0 - alpha) / np.sqrt(1.0 - abar) * eps) / np.sqrt(alpha)
    if t > 1:
        x = x + schedule.sigmas[t - 1] * rng.normal(size=x.shape)
    return check_finite(x, f"reverse step at t={t}")


def _initial(denoiser, seed: int):
    rng = make_rng(seed, TRAJECTORY_STREAM)
    return rng, rng.normal(size=(denoiser.shape.tokens, denoiser.shape.channels))


def _warn_untrained(denoiser) -> None:
    if getattr(denoiser, "trained_steps", 0) == 0:
        logger.warning("Sampling from an untrained denoiser")


def _range_check(x: Matrix) -> None:
    peak = float(np.max(np.abs(x)))
    if peak > SOFT_RANGE:
        logger.warning("Sample leaves the soft range: max |x| = %.3f", peak)


def sample(
    denoiser,
    prompt: Sequence[int],
    schedule: NoiseSchedule,
    cfg: UpdateConfig,
    seed: int,
    contexts: Optional[ContextSet] = None,
    on_exit: Optional[Callable[[ContextSet], None]] = None,
):
    """Draw x_T ~ N(0, I) from the seed and run T reverse steps.

    Returns the final grid and the energy trace (T x L records). ``on_exit``
    sees the contexts leaving the last layer at every step.
    """
    _warn_untrained(denoiser)
    contexts = contexts if contexts is not None else denoiser.contexts(prompt)
    rng, x = _initial(denoiser, seed)
    trace = EnergyTrace()
    logger.debug("Sampling prompt %s with %r, seed %d", list(prompt), cfg, seed)
    for t in range(schedule.T, 0, -1):
        x = reverse_step(x, t, denoiser, contexts, schedule, cfg, rng, trace, on_exit=on_exit)
    _range_check(x)
    return x, trace


def inpaint(
    denoiser,
    known: Matrix,
    mask,
    prompt: Sequence[int],
    schedule: NoiseSchedule,
    cfg: UpdateConfig,
    seed: int,
    contexts: Optional[ContextSet] = None,
) -> Matrix:
    """Generate the tokens where ``mask`` is 1 and keep ``known`` elsewhere.

    After every reverse step the kept region is replaced by ``known`` noised
    to the new step, so the final grid matches ``known`` there exactly. The
    context update attends only to the generated tokens.
    """
    known = np.asarray(known, dtype=np.float64)
    mask = to_vector(mask, "mask")
    if mask.size != known.shape[0]:
        raise ShapeError(f"mask of length {mask.size} for a grid of {known.shape[0]} tokens")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise DomainError("mask entries must be 0 or 1")
    if not mask.any():
        logger.warning("Inpainting mask selects no tokens; returning the known grid")
        return known.copy()

    _warn_untrained(denoiser)
    if cfg.mask is None:
        cfg = cfg.model_copy(update={"mask": tuple(float(m) for m in mask)})
    contexts = contexts if contexts is not None else denoiser.contexts(prompt)
    rng, x = _initial(denoiser, seed)
    known_rng = make_rng(seed, KNOWN_STREAM)
    m = mask[:, None]
    for t in range(schedule.T, 0, -1):
        x = reverse_step(x, t, denoiser, contexts, schedule, cfg, rng)
        x = (1.0 - m) * forward_noising(known, t - 1, schedule, known_rng) + m * x
    _range_check(x)
    return x


class ContextShift(NamedTuple):
    context: Matrix
    updated: Matrix
    grid: Matrix
    relative_shift: float


def context_shift(
    denoiser,
    prompt: Sequence[int],
    schedule: NoiseSchedule,
    cfg: UpdateConfig,
    seed: int,
    contexts: Optional[ContextSet] = None,
) -> ContextShift:
    """Sample with the update into ``updated`` and keep the main context
    leaving the last layer at the last step; ``grid`` resamples the same seed
    with that context held fixed under plain attention.

    ``relative_shift`` is ||C_T - C|| / ||C|| for the prompt's main context C.
    """
    contexts = contexts if contexts is not None else denoiser.contexts(prompt)
    exits = []
    updated, _ = sample(denoiser, prompt, schedule, cfg, seed, contexts=contexts, on_exit=exits.append)
    final = exits[-1].contexts[0]
    grid, _ = sample(
        denoiser, prompt, schedule, cfg.disabled(), seed,
        contexts=ContextSet.single(final, label=f"{contexts.labels[0]}@T"),
    )
    start = contexts.contexts[0]
    shift = float(np.linalg.norm(final - start) / np.linalg.norm(start))
    logger.debug("Final context moved %.3g of its norm for seed %d", shift, seed)
    return ContextShift(final, updated, grid, shift)
