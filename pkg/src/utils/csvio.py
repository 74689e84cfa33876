"""CSV codecs for matrices and result tables; floats use 17 significant digits."""
import csv
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from ..core.numerics import Matrix, to_matrix
from ..errors import ShapeError
from ..models import ToySample

FLOAT_FORMAT = "%.17g"
DATASET_HEADER = ("sample", "concepts", "token", "ch0", "ch1")


def fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % value
    return str(value)


def dump_matrix(path: Path, A: Matrix) -> None:
    np.savetxt(path, to_matrix(A, "matrix"), fmt=FLOAT_FORMAT, delimiter=",")


def load_matrix(path: Path) -> Matrix:
    try:
        return to_matrix(np.loadtxt(path, delimiter=",", ndmin=2), str(path))
    except ValueError as exc:
        raise ShapeError(f"{path} is not a numeric CSV matrix: {exc}") from exc


def write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_rows(path: Path) -> Tuple[List[str], List[List[str]]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ShapeError(f"{path} is empty")
    return rows[0], rows[1:]


def dataset_rows(samples: Sequence[ToySample]):
    for i, s in enumerate(samples):
        label = "+".join(str(c) for c in s.concept_ids)
        for token, values in enumerate(s.grid):
            yield (i, label, token, *values)


def dump_dataset(path: Path, samples: Sequence[ToySample]) -> None:
    write_rows(path, DATASET_HEADER, dataset_rows(samples))


def load_dataset(path: Path) -> List[ToySample]:
    header, rows = read_rows(path)
    if tuple(header) != DATASET_HEADER:
        raise ShapeError(f"{path} must start with header {','.join(DATASET_HEADER)}")
    grids, labels = {}, {}
    for sample, concepts, _, *values in rows:
        grids.setdefault(int(sample), []).append([float(v) for v in values])
        labels[int(sample)] = tuple(int(c) for c in concepts.split("+"))
    return [ToySample(np.array(grids[i]), labels[i]) for i in sorted(grids)]
