"""Fan seeded runs out over a bounded process pool."""
from multiprocessing import Pool
from typing import Callable, List, Sequence, Tuple, TypeVar

from ..utils.log import logger

R = TypeVar("R")


def run_seeds(fn: Callable[[int], R], seeds: Sequence[int], workers: int) -> List[Tuple[int, R]]:
    """Run ``fn(seed)`` for every seed; results come back sorted by seed.

    ``fn`` must be picklable when ``workers > 1``. Each run derives its own
    generator from its seed, so the pool size never changes the results.
    """
    seeds = sorted(seeds)
    workers = max(1, min(workers, len(seeds)))
    logger.info("Running %d seeds on %d worker(s)", len(seeds), workers)
    if workers == 1:
        results = [fn(seed) for seed in seeds]
    else:
        with Pool(workers) as pool:
            results = pool.map(fn, seeds)
    return list(zip(seeds, results))
