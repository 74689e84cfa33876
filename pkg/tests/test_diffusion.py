import logging

import numpy as np
import pytest

from src.diffusion import (
    ToyDenoiser,
    batch_loss,
    context_shift,
    forward_noising,
    gradient_check,
    inpaint,
    load_checkpoint,
    make_batch,
    make_dataset,
    neglect_score,
    region_mask,
    reverse_step,
    sample,
    save_checkpoint,
    template_correlation,
    train,
)
from src.diffusion.data import N_CONCEPTS, TEMPLATES, compose_grid
from src.diffusion.denoiser import grid_position_features
from src.errors import CheckpointError, DomainError, ShapeError, TrainingError
from src.models import ContextSet, NoiseSchedule, UpdateConfig
from src.utils.rng import make_rng

EBCU = UpdateConfig(gamma_attn=1.5e-2, gamma_reg=1e-2)


def test_forward_noising(rng):
    schedule = NoiseSchedule.linear()
    x0 = rng.uniform(-1.0, 1.0, (64, 2))
    np.testing.assert_array_equal(forward_noising(x0, 0, schedule, rng), x0)
    np.testing.assert_allclose(
        forward_noising(x0, 10, schedule, rng, z=np.zeros_like(x0)), np.sqrt(schedule.alpha_bar(10)) * x0
    )
    with pytest.raises(DomainError):
        forward_noising(x0, 51, schedule, rng)


def test_forward_noising_variance():
    schedule = NoiseSchedule.linear()
    x = forward_noising(np.zeros((100, 100)), 20, schedule, np.random.default_rng(11))
    assert np.var(x) == pytest.approx(1.0 - schedule.alpha_bar(20), rel=0.05)


def test_templates_and_correlation():
    flat = TEMPLATES.reshape(N_CONCEPTS, -1)
    gram = flat @ flat.T
    np.testing.assert_allclose(gram - np.diag(np.diag(gram)), 0.0, atol=1e-12)
    assert template_correlation(TEMPLATES[3], 3) == pytest.approx(1.0)
    assert template_correlation(np.zeros((64, 2)), 3) == 0.0
    assert neglect_score(compose_grid((1, 5)), (1, 5)) == pytest.approx(1.0)
    assert region_mask("top").sum() == 32


def test_make_dataset(rng):
    samples = make_dataset(40, rng)
    assert len(samples) == 40
    assert {len(s.concept_ids) for s in samples} == {1, 2}
    assert all(np.max(np.abs(s.grid)) <= 1.0 for s in samples)
    with pytest.raises(DomainError):
        make_dataset(0, rng)


def test_denoiser_size_and_prompts(denoiser):
    assert denoiser.parameter_count < 100_000
    np.testing.assert_array_equal(denoiser.context_matrix([4])[0], denoiser.context_matrix([2, 6])[0])
    assert len(denoiser.contexts([1, 2])) == 1
    with pytest.raises(DomainError):
        denoiser.context_matrix([N_CONCEPTS])
    with pytest.raises(DomainError):
        denoiser.context_matrix([0, 1, 2])


def test_backprop_matches_finite_differences(denoiser):
    assert gradient_check(denoiser, np.random.default_rng(5)) < 1e-4


def test_disabled_update_predicts_like_plain_attention(denoiser, rng):
    x = rng.normal(size=(64, 2))
    contexts = denoiser.contexts([2, 5])
    eps, records = denoiser.predict(x, 3, contexts, UpdateConfig(), step_index=2)
    np.testing.assert_array_equal(eps, denoiser.predict_plain(x, 3, denoiser.context_matrix([2, 5])))
    assert len(records) == denoiser.shape.layers
    with pytest.raises(ShapeError):
        denoiser.predict(x[:10], 3, contexts, UpdateConfig(), step_index=2)


def test_checkpoint_round_trip(denoiser, tmp_path, rng):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, denoiser)
    loaded = load_checkpoint(path)
    x = rng.normal(size=(64, 2))
    C = denoiser.context_matrix([1])
    np.testing.assert_array_equal(loaded.predict_plain(x, 2, C), denoiser.predict_plain(x, 2, C))
    assert loaded.shape == denoiser.shape
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.npz")
    (tmp_path / "junk.npz").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.npz")


def test_zero_steps_returns_initial_weights(denoiser, short_schedule, rng):
    trained = train(make_dataset(8, rng), denoiser, short_schedule, 0, rng)
    assert trained is not denoiser
    for name, value in denoiser.params.items():
        np.testing.assert_array_equal(trained.params[name], value)
    assert trained.trained_steps == 0


def test_training_lowers_held_out_loss(denoiser, short_schedule):
    dataset = make_dataset(64, make_rng(1, 2))
    held_out = make_batch(make_dataset(32, make_rng(1, 5)), denoiser, short_schedule, make_rng(1, 6))
    trained = train(dataset, denoiser, short_schedule, 150, make_rng(1, 4), lr=3e-3, batch_size=16)
    assert batch_loss(trained, held_out) < batch_loss(denoiser, held_out)
    assert trained.trained_steps == 150


def test_divergence_reports_the_seed(denoiser, short_schedule, rng, monkeypatch):
    monkeypatch.setattr(ToyDenoiser, "loss_and_grad", lambda self, *args: (float("nan"), {}))
    with pytest.raises(TrainingError, match="seed=17"):
        train(make_dataset(4, rng), denoiser, short_schedule, 3, rng, seed=17)


def test_schedule_must_match_the_denoiser(denoiser, rng):
    with pytest.raises(DomainError):
        train(make_dataset(4, rng), denoiser, NoiseSchedule.linear(), 1, rng)


class ZeroNoise:
    T = 10

    def predict(self, x_t, t, contexts, cfg, step_index, on_exit=None):
        return np.zeros_like(x_t), []


def test_reverse_step_with_zero_noise_prediction(rng):
    schedule = NoiseSchedule.linear(10)
    x = rng.normal(size=(64, 2))
    out = reverse_step(x, 1, ZeroNoise(), None, schedule, UpdateConfig(), rng)
    np.testing.assert_array_equal(out, x / np.sqrt(schedule.alphas[0]))
    z = np.random.default_rng(3).normal(size=x.shape)
    out = reverse_step(x, 4, ZeroNoise(), None, schedule, UpdateConfig(), np.random.default_rng(3))
    np.testing.assert_allclose(out, x / np.sqrt(schedule.alphas[3]) + schedule.sigmas[3] * z, atol=1e-15)
    with pytest.raises(DomainError):
        reverse_step(x, 1, ZeroNoise(), None, NoiseSchedule.linear(), UpdateConfig(), rng)
    with pytest.raises(DomainError):
        reverse_step(x, 0, ZeroNoise(), None, schedule, UpdateConfig(), rng)


def _plain_sampler(denoiser, prompt, schedule, seed):
    rng = make_rng(seed, 0)
    x = rng.normal(size=(64, 2))
    C = denoiser.context_matrix(prompt)
    for t in range(schedule.T, 0, -1):
        eps = denoiser.predict_plain(x, t, C)
        alpha, abar = schedule.alphas[t - 1], schedule.alpha_bars[t - 1]
        x = (x - (1.0 - alpha) / np.sqrt(1.0 - abar) * eps) / np.sqrt(alpha)
        if t > 1:
            x = x + schedule.sigmas[t - 1] * rng.normal(size=x.shape)
    return x


def test_disabled_sampler_matches_plain_sampler(denoiser, short_schedule):
    grid, trace = sample(denoiser, [1, 6], short_schedule, UpdateConfig(), seed=9)
    np.testing.assert_array_equal(grid, _plain_sampler(denoiser, [1, 6], short_schedule, 9))
    assert len(trace) == short_schedule.T * denoiser.shape.layers
    assert {r.variant for r in trace.records} == {"baseline"}


def test_sampling_is_deterministic(denoiser, short_schedule, caplog):
    with caplog.at_level(logging.WARNING):
        a, trace_a = sample(denoiser, [0, 3], short_schedule, EBCU, seed=7)
    b, trace_b = sample(denoiser, [0, 3], short_schedule, EBCU, seed=7)
    np.testing.assert_array_equal(a, b)
    assert trace_a.to_csv() == trace_b.to_csv()
    assert "untrained" in caplog.text
    assert sorted({r.t for r in trace_a.records}) == list(range(short_schedule.T))


def test_update_changes_the_trajectory(denoiser, short_schedule):
    base, _ = sample(denoiser, [0, 3], short_schedule, UpdateConfig(), seed=2)
    ebcu, trace = sample(denoiser, [0, 3], short_schedule, EBCU, seed=2)
    assert not np.array_equal(base, ebcu)
    assert {r.variant for r in trace.records} == {"ebcu"}


def test_inpaint_keeps_the_known_region(denoiser, short_schedule):
    known = compose_grid((4,))
    mask = region_mask("bottom")
    out = inpaint(denoiser, known, mask, [2], short_schedule, EBCU, seed=1)
    top = mask == 0
    assert np.max(np.abs(out[top] - known[top])) < 1e-6
    assert not np.allclose(out[~top], known[~top])


def test_inpaint_edge_masks(denoiser, short_schedule, caplog):
    known = compose_grid((4,))
    with caplog.at_level(logging.WARNING):
        out = inpaint(denoiser, known, np.zeros(64), [2], short_schedule, EBCU, seed=1)
    np.testing.assert_array_equal(out, known)
    assert "no tokens" in caplog.text
    full = inpaint(denoiser, known, np.ones(64), [2], short_schedule, EBCU, seed=1)
    np.testing.assert_array_equal(full, sample(denoiser, [2], short_schedule, EBCU, seed=1)[0])
    with pytest.raises(ShapeError):
        inpaint(denoiser, known, np.ones(10), [2], short_schedule, EBCU, seed=1)


def test_grid_position_features():
    pos = grid_position_features(64, 32)
    assert pos.shape == (64, 32)
    # token 8 r + c: the row code fills the first half, the column code the second
    np.testing.assert_allclose(pos[8 * 3 + 5, :16], pos[8 * 3, :16])
    np.testing.assert_allclose(pos[8 * 3 + 5, 16:], pos[5, 16:])
    np.testing.assert_allclose(pos[:, 0], np.sin(np.pi * np.repeat(np.arange(8), 8)), atol=1e-12)
    np.testing.assert_allclose(pos[:, 8], (-1.0) ** np.repeat(np.arange(8), 8), atol=1e-12)
    assert len({tuple(np.round(row, 12)) for row in pos}) == 64
    assert not grid_position_features(64, 30)[:, 28:].any()
    with pytest.raises(DomainError):
        grid_position_features(60, 32)


def test_position_rows_start_from_the_grid_code():
    a = ToyDenoiser.initialize(make_rng(0, 3))
    b = ToyDenoiser.initialize(make_rng(1, 3))
    np.testing.assert_array_equal(a.params["pos"], grid_position_features(64, a.shape.d_model))
    np.testing.assert_array_equal(a.params["pos"], b.params["pos"])


def test_sampler_reports_exit_contexts_every_step(denoiser, short_schedule):
    exits = []
    sample(denoiser, [0, 3], short_schedule, EBCU, seed=4, on_exit=exits.append)
    assert len(exits) == short_schedule.T
    C = denoiser.context_matrix([0, 3])
    assert all(not np.array_equal(c.contexts[0], C) for c in exits)


def test_context_shift_resamples_with_the_final_context(denoiser, short_schedule):
    shift = context_shift(denoiser, [0, 3], short_schedule, EBCU, seed=4)
    exits = []
    updated, _ = sample(denoiser, [0, 3], short_schedule, EBCU, seed=4, on_exit=exits.append)
    np.testing.assert_array_equal(shift.updated, updated)
    np.testing.assert_array_equal(shift.context, exits[-1].contexts[0])
    fixed, _ = sample(denoiser, [0, 3], short_schedule, UpdateConfig(), seed=4, contexts=ContextSet.single(shift.context))
    np.testing.assert_array_equal(shift.grid, fixed)
    C = denoiser.context_matrix([0, 3])
    assert shift.relative_shift == pytest.approx(np.linalg.norm(shift.context - C) / np.linalg.norm(C))
    assert shift.relative_shift > 0.0


def test_context_shift_without_update_is_the_baseline(denoiser, short_schedule):
    shift = context_shift(denoiser, [2], short_schedule, EBCU.disabled(), seed=1)
    base, _ = sample(denoiser, [2], short_schedule, UpdateConfig(), seed=1)
    assert shift.relative_shift == 0.0
    np.testing.assert_array_equal(shift.grid, base)
    np.testing.assert_array_equal(shift.updated, base)
