"""Shuffled k-fold partitions of case ids."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..voxcore import Rng


@dataclass(frozen=True)
class FoldSplit:
    index: int
    train: tuple
    val: tuple


def make_folds(case_ids, k: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Partition ``case_ids`` into k near-equal validation blocks.

    The ids are shuffled once with ``Rng(seed)``; block sizes differ by at
    most one, larger blocks first. Each case validates exactly once.
    """
    ids = list(case_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("case ids must be unique")
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    if k > len(ids):
        raise ValueError(f"cannot make {k} folds from {len(ids)} cases")
    order = Rng(seed).permutation(len(ids))
    blocks = np.array_split(order, k)
    folds = []
    for i, block in enumerate(blocks):
        held = set(block.tolist())
        val = tuple(ids[j] for j in block)
        train = tuple(ids[j] for j in order if j not in held)
        folds.append(FoldSplit(i, train, val))
    return folds
