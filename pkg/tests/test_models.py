import numpy as np
import pytest
from pydantic import ValidationError

from src.errors import DomainError, ShapeError
from src.models import (
    ContextSet,
    EnergyRecord,
    EnergyTrace,
    NoiseSchedule,
    RunConfig,
    ToySample,
    UpdateConfig,
    compare_traces,
)


def test_default_noise_schedule():
    schedule = NoiseSchedule.linear()
    assert schedule.T == 50
    assert schedule.alpha_bar(schedule.T) < 0.01
    assert schedule.alpha_bar(1) > 0.95
    assert schedule.alpha_bar(0) == 1.0
    assert np.all(np.diff(schedule.alpha_bars) < 0)
    np.testing.assert_allclose(schedule.sigmas ** 2, schedule.betas)


def test_noise_schedule_validation():
    with pytest.raises(DomainError):
        NoiseSchedule(np.array([0.1, 0.1]))
    with pytest.raises(DomainError):
        NoiseSchedule(np.array([0.0, 0.1]))
    with pytest.raises(DomainError):
        NoiseSchedule.linear().check_step(51)


def test_update_config():
    cfg = UpdateConfig()
    assert not cfg.enabled and cfg.variant == "baseline"
    assert cfg.resolve_beta(16) == pytest.approx(0.25)
    assert UpdateConfig(gamma_reg=1e-2).variant == "ebcu"
    assert not UpdateConfig(gamma_attn=1e-2, gamma_reg=1e-2).disabled().enabled
    with pytest.raises(ValidationError):
        UpdateConfig(gammma_attn=1e-2)
    with pytest.raises(ValidationError):
        UpdateConfig(beta=0.0)
    with pytest.raises(ValidationError):
        UpdateConfig(mask=(1.0, 0.5))


def test_context_set_validation(rng):
    with pytest.raises(DomainError):
        ContextSet.compose([], [], [])
    with pytest.raises(ShapeError):
        ContextSet.compose([rng.normal(size=(2, 3))], [1.0, 1.0], ["a"])
    with pytest.raises(ShapeError):
        ContextSet.compose([rng.normal(size=(2, 3)), rng.normal(size=(2, 4))], [1.0, 1.0], ["a", "b"])


def test_context_set_members(rng):
    cs = ContextSet.compose(
        [rng.normal(size=(2, 3)) for _ in range(3)], [1.0, -0.5, 0.7], ["m", "s", "t"], warmups=[7, 3, None]
    )
    assert cs.members(0) == [0, 2]
    assert cs.members(4) == [0, 1, 2]
    replaced = cs.with_contexts([np.zeros((2, 3))] * 3)
    assert replaced.alphas == cs.alphas and replaced.warmups == cs.warmups


def test_toy_sample_range():
    with pytest.raises(DomainError):
        ToySample(np.full((4, 2), 1.5), (0,))


def _trace(values, variant):
    return EnergyTrace([
        EnergyRecord(t, layer, variant, e, 0.1 * e) for (t, layer), e in values.items()
    ])


def test_trace_csv_round_trip():
    trace = _trace({(0, 0): -1.25, (0, 1): 1 / 3, (1, 0): -7e-9}, "ebcu")
    text = trace.to_csv()
    assert text.splitlines()[0] == "t,layer,variant,e_cond,e_prior"
    assert EnergyTrace.from_csv(text).records == trace.records
    with pytest.raises(ShapeError):
        EnergyTrace.from_csv("a,b\n1,2\n")


def test_duplicate_cells_are_rejected():
    trace = _trace({(0, 0): 1.0}, "ebcu")
    trace.append(EnergyRecord(0, 0, "ebcu", 2.0, 0.0))
    with pytest.raises(ShapeError):
        trace.cells()


def test_identical_traces_compare_as_a_tie():
    cells = {(t, l): float(t - l) for t in range(3) for l in range(2)}
    cmp = compare_traces([_trace(cells, "baseline")] * 2, [_trace(cells, "baseline")] * 2)
    assert cmp.fraction_lower == 0.5
    np.testing.assert_array_equal(cmp.cumulative_gap, np.zeros(3))


def test_lower_energy_variant():
    base = {(t, l): 1.0 for t in range(3) for l in range(2)}
    lower = {k: v - 0.5 for k, v in base.items()}
    cmp = compare_traces([_trace(base, "baseline")], [_trace(lower, "ebcu")])
    assert cmp.fraction_lower == 1.0
    assert cmp.cells[0] == (0, 0) and cmp.steps == (0, 1, 2)
    # per step: 2 layers x 0.55 posterior gap
    np.testing.assert_allclose(cmp.cumulative_gap, [1.1, 2.2, 3.3])
    with pytest.raises(ShapeError):
        compare_traces([_trace(base, "baseline")], [])


def test_run_config_round_trip():
    run = RunConfig.from_cfg("seed = 7\nprompt = 3, 4  # two concepts\nalpha_s = 1,-1\nlambda = 0.9\n")
    assert run.prompt == (3, 4) and run.alpha_s == (1.0, -1.0) and run.lam == 0.9
    assert RunConfig.from_cfg(run.to_cfg()) == run


def test_run_config_rejects_bad_input():
    with pytest.raises(ValidationError):
        RunConfig.from_cfg("gamma_atn = 0.1\n")
    with pytest.raises(ValidationError):
        RunConfig.from_cfg("schedule = cosine\n")
    with pytest.raises(ValidationError):
        RunConfig.from_cfg("tau = -1\n")
    with pytest.raises(ValueError):
        RunConfig.from_cfg("just a line\n")
    with pytest.raises(ValidationError):
        RunConfig.from_cfg("", {"beta_start": 0.3, "beta_end": 0.2})
