import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by (seed, *stream)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))
