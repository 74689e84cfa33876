import numpy as np
import pytest

from src.core import ebcu
from src.core.hopfield import attention_forward
from src.core.xattn import LayerStats, cascade_step, layer_forward, multi_step_update
from src.errors import DomainError, ShapeError
from src.models import ContextSet, LayerStack, LayerWeights, UpdateConfig

EBCU = UpdateConfig(gamma_attn=2e-2, gamma_reg=1e-2)


def test_disabled_layer_is_plain_attention(rng, contexts, attention_stack):
    w, _ = attention_stack.layers[0]
    latent = rng.normal(size=(8, 6))
    out = layer_forward(latent, contexts, w, UpdateConfig(), t=0)
    C = contexts.contexts[0]
    np.testing.assert_array_equal(out.latent, attention_forward(latent @ w.W_Q, C @ w.W_K, C @ w.W_V))
    np.testing.assert_array_equal(out.contexts.contexts[0], C)
    assert out.record.variant == "baseline"


def test_similarity_is_evaluated_once_per_context(rng, attention_stack):
    w, _ = attention_stack.layers[0]
    contexts = ContextSet.compose([rng.normal(size=(4, 5)), rng.normal(size=(2, 5))], [1.0, 0.7], ["a", "b"])
    stats = LayerStats()
    layer_forward(rng.normal(size=(8, 6)), contexts, w, EBCU, t=0, layer=2, stats=stats)
    assert stats.similarity_evals == {(2, 0): 1, (2, 1): 1}


def test_record_uses_main_context_leaving_the_layer(rng, contexts, attention_stack):
    w, _ = attention_stack.layers[0]
    latent = rng.normal(size=(8, 6))
    out = layer_forward(latent, contexts, w, EBCU, t=3, layer=1)
    K = out.contexts.contexts[0] @ w.W_K
    Q = latent @ w.W_Q
    beta = 1.0 / np.sqrt(6)
    assert (out.record.t, out.record.layer, out.record.variant) == (3, 1, "ebcu")
    assert out.record.e_cond == pytest.approx(ebcu.cond_energy(Q, K, beta=beta), abs=1e-12)
    assert out.record.e_prior == pytest.approx(ebcu.prior_energy(K), abs=1e-12)
    entering = ebcu.cond_energy(Q, contexts.contexts[0] @ w.W_K, beta=beta)
    attention_only = layer_forward(latent, contexts, w, UpdateConfig(gamma_attn=2e-2), t=3)
    assert attention_only.record.e_cond < entering


def test_repeated_call_sees_lower_energy(rng, contexts, attention_stack):
    w, _ = attention_stack.layers[0]
    latent = rng.normal(size=(8, 6))
    cfg = UpdateConfig(gamma_attn=1e-3)
    first = layer_forward(latent, contexts, w, cfg, t=0)
    second = layer_forward(latent, first.contexts, w, cfg, t=0)
    assert second.record.e_cond < first.record.e_cond


def test_multi_step_with_one_step_is_the_layer_update(rng, contexts, attention_stack):
    w, _ = attention_stack.layers[0]
    latent = rng.normal(size=(8, 6))
    once = layer_forward(latent, contexts, w, EBCU, t=0).contexts
    np.testing.assert_allclose(
        multi_step_update(latent, contexts, w, EBCU, 1).contexts[0], once.contexts[0], atol=1e-12
    )


def test_multi_step_keeps_lowering_energy(rng, contexts, attention_stack):
    w, _ = attention_stack.layers[0]
    latent = rng.normal(size=(8, 6))
    Q = latent @ w.W_Q
    cfg = UpdateConfig(gamma_attn=4e-3)
    energies = [ebcu.cond_energy(Q, contexts.contexts[0] @ w.W_K)]
    for k in (1, 2, 4):
        C = multi_step_update(latent, contexts, w, cfg, k).contexts[0]
        energies.append(ebcu.cond_energy(Q, C @ w.W_K))
    assert all(e < energies[0] for e in energies[1:])
    with pytest.raises(DomainError):
        multi_step_update(latent, contexts, w, cfg, 0)


def test_steps_per_layer_config(rng, contexts, attention_stack):
    w, _ = attention_stack.layers[0]
    latent = rng.normal(size=(8, 6))
    cfg = EBCU.model_copy(update={"steps_per_layer": 3})
    np.testing.assert_allclose(
        layer_forward(latent, contexts, w, cfg, t=0).contexts.contexts[0],
        multi_step_update(latent, contexts, w, EBCU, 3).contexts[0],
        atol=1e-12,
    )


def test_warmup_keeps_editorial_concept_out(rng, attention_stack):
    w, _ = attention_stack.layers[0]
    C_main, C_edit = rng.normal(size=(4, 5)), rng.normal(size=(3, 5))
    contexts = ContextSet.compose([C_main, C_edit], [1.0, 0.8], ["main", "edit"], warmups=[None, 5])
    latent = rng.normal(size=(8, 6))
    stats = LayerStats()
    early = layer_forward(latent, contexts, w, EBCU, t=5, stats=stats)
    assert stats.similarity_evals == {(0, 0): 1}
    np.testing.assert_array_equal(early.contexts.contexts[1], C_edit)
    np.testing.assert_array_equal(
        early.latent, layer_forward(latent, ContextSet.single(C_main), w, EBCU, t=5).latent
    )
    late = layer_forward(latent, contexts, w, EBCU, t=6)
    assert not np.array_equal(late.contexts.contexts[1], C_edit)


def test_cascade_restarts_from_initial_contexts(rng, contexts, attention_stack):
    latent = rng.normal(size=(8, 6))
    seen = []
    out1, records = cascade_step(latent, contexts, attention_stack, EBCU, t=4, on_layer=lambda l, c: seen.append((l, c)))
    out2, _ = cascade_step(latent, contexts, attention_stack, EBCU, t=4)
    np.testing.assert_array_equal(out1, out2)
    assert [l for l, _ in seen] == [0, 1, 2]
    assert seen[0][1] is contexts
    assert not np.array_equal(seen[1][1].contexts[0], contexts.contexts[0])
    assert [(r.t, r.layer) for r in records] == [(4, 0), (4, 1), (4, 2)]


def test_cascade_without_updates_is_a_plain_stack(rng, contexts, attention_stack):
    latent = rng.normal(size=(8, 6))
    out, _ = cascade_step(latent, contexts, attention_stack, UpdateConfig(), t=0)
    C = contexts.contexts[0]
    expected = latent
    for w, _ in attention_stack.layers:
        expected = attention_forward(expected @ w.W_Q, C @ w.W_K, C @ w.W_V)
    np.testing.assert_array_equal(out, expected)


def test_shape_checks(rng, contexts):
    w = LayerWeights.random(rng, 6, 5, 6)
    with pytest.raises(ShapeError):
        layer_forward(rng.normal(size=(8, 7)), contexts, w, EBCU, t=0)
    with pytest.raises(ShapeError):
        layer_forward(rng.normal(size=(8, 6)), ContextSet.single(rng.normal(size=(4, 3))), w, EBCU, t=0)
    with pytest.raises(DomainError):
        layer_forward(rng.normal(size=(8, 6)), contexts, w, EBCU, t=-1)
    with pytest.raises(ShapeError):
        LayerStack.attention_only([LayerWeights.random(rng, 6, 5, 4)])


def test_three_layer_cascade_matches_hand_threaded_layers(rng, contexts, attention_stack):
    latent = rng.normal(size=(8, 6))
    exits = []
    out, records = cascade_step(latent, contexts, attention_stack, EBCU, t=2, on_exit=exits.append)

    h, C = latent, contexts.contexts[0]
    entering = []
    for w, _ in attention_stack.layers:
        entering.append(C)
        Q = h @ w.W_Q
        h = attention_forward(Q, C @ w.W_K, C @ w.W_V)
        C = ebcu.context_update(C, Q, w.W_K, EBCU, t=2)
        assert records[len(entering) - 1].e_cond == pytest.approx(ebcu.cond_energy(Q, C @ w.W_K), abs=1e-12)

    np.testing.assert_allclose(out, h, atol=1e-12, rtol=0)
    seen = []
    cascade_step(latent, contexts, attention_stack, EBCU, t=2, on_layer=lambda l, c: seen.append(c.contexts[0]))
    for got, expected in zip(seen, entering):
        np.testing.assert_allclose(got, expected, atol=1e-12, rtol=0)
    assert len(exits) == 1
    np.testing.assert_allclose(exits[0].contexts[0], C, atol=1e-12, rtol=0)


def test_four_small_steps_beat_one_step_on_most_instances():
    cfg = UpdateConfig(gamma_attn=1e-2)
    wins = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        w = LayerWeights.random(rng, 6, 5, 6)
        contexts = ContextSet.single(rng.normal(size=(4, 5)))
        latent = rng.normal(size=(8, 6))
        Q = latent @ w.W_Q
        once = multi_step_update(latent, contexts, w, cfg, 1).contexts[0]
        four = multi_step_update(latent, contexts, w, cfg, 4).contexts[0]
        wins += ebcu.cond_energy(Q, four @ w.W_K) <= ebcu.cond_energy(Q, once @ w.W_K)
    assert wins >= 90


def test_zero_rates_leave_contexts_for_any_step_count(rng, contexts, attention_stack):
    w, _ = attention_stack.layers[0]
    latent = rng.normal(size=(8, 6))
    for k in (1, 3, 7):
        unchanged = multi_step_update(latent, contexts, w, UpdateConfig(), k).contexts[0]
        np.testing.assert_array_equal(unchanged, contexts.contexts[0])
