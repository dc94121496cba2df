"""Balanced under-sampling of a test set: by label, by protected group, or both."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataio import Dataset, make_rng

STRATEGIES = ("class_based", "pa_based", "wae")


class DegenerateSampleError(ValueError):
    """A stratum that must be balanced against is empty."""


@dataclass(frozen=True)
class SampleSelection:
    strategy: str
    selected_ids: tuple[int, ...]
    seed: int

    def to_json(self) -> str:
        return json.dumps({"strategy": self.strategy, "seed": self.seed, "ids": list(self.selected_ids)})


def _balance(test: Dataset, cells: list[np.ndarray], strategy: str, seed: int) -> SampleSelection:
    """Keep ``min(|cell|)`` rows from each cell, sampled uniformly without replacement."""
    sizes = [int(c.sum()) for c in cells]
    if min(sizes) == 0:
        raise DegenerateSampleError(f"{strategy}: empty stratum (sizes {sizes})")
    m = min(sizes)
    rng = make_rng(seed)
    keep = []
    for cell in cells:
        pos = np.flatnonzero(cell)
        if len(pos) > m:
            pos = np.sort(rng.choice(pos, size=m, replace=False))
        keep.append(pos)
    ids = np.sort(test.row_ids[np.concatenate(keep)])
    return SampleSelection(strategy, tuple(int(i) for i in ids), int(seed))


def class_balanced(test: Dataset, seed: int) -> SampleSelection:
    y = test.labels
    return _balance(test, [y == 1, y == 0], "class_based", seed)


def pa_balanced(test: Dataset, seed: int) -> SampleSelection:
    g = test.pa
    return _balance(test, [g == 1, g == 0], "pa_based", seed)


def wae_balanced(test: Dataset, seed: int) -> SampleSelection:
    y, g = test.labels, test.pa
    cells = [(y == a) & (g == b) for a in (1, 0) for b in (1, 0)]
    return _balance(test, cells, "wae", seed)


SAMPLERS = {"class_based": class_balanced, "pa_based": pa_balanced, "wae": wae_balanced}
