import csv
import io
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from ..errors import ShapeError

TRACE_HEADER = ("t", "layer", "variant", "e_cond", "e_prior")


@dataclass(frozen=True)
class EnergyRecord:
    t: int
    layer: int
    variant: str
    e_cond: float
    e_prior: float

    @property
    def e_posterior(self) -> float:
        return self.e_cond + self.e_prior


@dataclass
class EnergyTrace:
    """Per (step, layer, variant) energies of one sampling run."""

    records: List[EnergyRecord] = field(default_factory=list)

    def append(self, record: EnergyRecord) -> None:
        self.records.append(record)

    def extend(self, records: Iterable[EnergyRecord]) -> None:
        self.records.extend(records)

    def __len__(self) -> int:
        return len(self.records)

    def cells(self) -> Dict[Tuple[int, int], EnergyRecord]:
        out = {}
        for r in self.records:
            key = (r.t, r.layer)
            if key in out:
                raise ShapeError(f"duplicate record for step {r.t}, layer {r.layer}")
            out[key] = r
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for r in self.records:
            writer.writerow((r.t, r.layer, r.variant, f"{r.e_cond:.17g}", f"{r.e_prior:.17g}"))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EnergyTrace":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != TRACE_HEADER:
            raise ShapeError(f"energy trace CSV must start with header {','.join(TRACE_HEADER)}")
        return cls([
            EnergyRecord(int(t), int(layer), variant, float(e_cond), float(e_prior))
            for t, layer, variant, e_cond, e_prior in rows[1:]
        ])


@dataclass(frozen=True)
class TraceComparison:
    """Seed-aggregated comparison of a baseline and an EBCU variant."""

    cells: Tuple[Tuple[int, int], ...]  # (t, layer) in sampling order
    mean_baseline: np.ndarray
    std_baseline: np.ndarray
    mean_ebcu: np.ndarray
    std_ebcu: np.ndarray
    steps: Tuple[int, ...]
    cumulative_gap: np.ndarray  # per step, running sum of posterior-energy (baseline - ebcu)

    @property
    def fraction_lower(self) -> float:
        """Share of cells where the EBCU mean is lower; ties count one half."""
        lower = (self.mean_ebcu < self.mean_baseline).astype(float)
        ties = self.mean_ebcu == self.mean_baseline
        return float(np.mean(lower + 0.5 * ties))


def compare_traces(baseline: Sequence[EnergyTrace], ebcu: Sequence[EnergyTrace]) -> TraceComparison:
    """Aggregate paired runs cell by cell.

    Cells are ordered by sampling-step index then layer.
    """
    if not baseline or len(baseline) != len(ebcu):
        raise ShapeError("need the same, nonzero number of baseline and EBCU runs")
    base_cells = [tr.cells() for tr in baseline]
    ebcu_cells = [tr.cells() for tr in ebcu]
    keys = sorted(base_cells[0])
    for cells in base_cells + ebcu_cells:
        if set(cells) != set(keys):
            raise ShapeError("paired runs must cover the same (step, layer) cells")

    def stack(runs, attr):
        return np.array([[getattr(run[k], attr) for k in keys] for run in runs])

    cond_b, cond_e = stack(base_cells, "e_cond"), stack(ebcu_cells, "e_cond")
    post_gap = (stack(base_cells, "e_posterior") - stack(ebcu_cells, "e_posterior")).mean(axis=0)
    steps = sorted({t for t, _ in keys})
    per_step = np.array([sum(g for (t, _), g in zip(keys, post_gap) if t == s) for s in steps])
    return TraceComparison(
        cells=tuple(keys),
        mean_baseline=cond_b.mean(axis=0),
        std_baseline=cond_b.std(axis=0),
        mean_ebcu=cond_e.mean(axis=0),
        std_ebcu=cond_e.std(axis=0),
        steps=tuple(steps),
        cumulative_gap=np.cumsum(per_step),
    )
