from typing import Optional

import numpy as np

from ..core.numerics import Matrix, check_finite
from ..models import NoiseSchedule


def forward_noising(
    x0: Matrix,
    t: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    z: Optional[Matrix] = None,
) -> Matrix:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) z; t = 0 returns x0 unchanged."""
    x0 = check_finite(np.asarray(x0, dtype=np.float64), "x0")
    abar = schedule.alpha_bar(t)
    if t == 0:
        return x0.copy()
    if z is None:
        z = rng.normal(size=x0.shape)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * z
