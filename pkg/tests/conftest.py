import numpy as np
import pytest

from src.diffusion import DenoiserShape, ToyDenoiser
from src.models import ContextSet, LayerStack, LayerWeights, NoiseSchedule
from src.utils.rng import make_rng

SHORT_T = 5


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def attention_stack(rng):
    """Three attention-only layers, d_model = d_H = 6, d_c = 5."""
    return LayerStack.attention_only([LayerWeights.random(rng, 6, 5, 6) for _ in range(3)])


@pytest.fixture
def contexts(rng):
    return ContextSet.single(rng.normal(size=(4, 5)))


@pytest.fixture
def short_schedule():
    return NoiseSchedule.linear(SHORT_T)


@pytest.fixture
def denoiser():
    return ToyDenoiser.initialize(make_rng(0, 3), DenoiserShape(T=SHORT_T))
