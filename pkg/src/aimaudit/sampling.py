"""Deterministic stratified sampling helpers."""

from __future__ import annotations

import random
from typing import Sequence

from .records import Dataset


def largest_remainder(weights: Sequence[float], total: int) -> list:
    """Allocate `total` integer units proportionally to `weights`.

    Hamilton / largest-remainder apportionment: each group gets the floor
    of its exact quota, leftover units go to the largest fractional
    remainders (ties broken by group order).  Every allocation is within
    one unit of the exact quota.
    """
    if total < 0:
        raise ValueError("total must be non-negative")
    weight_sum = float(sum(weights))
    if weight_sum <= 0:
        raise ValueError("weights must have positive sum")
    quotas = [total * w / weight_sum for w in weights]
    alloc = [int(q) for q in quotas]
    leftover = total - sum(alloc)
    remainders = sorted(
        range(len(weights)), key=lambda i: (-(quotas[i] - alloc[i]), i)
    )
    for i in remainders[:leftover]:
        alloc[i] += 1
    return alloc


def stratified_indices(strata: Sequence, n: int, seed: int) -> list:
    """Pick `n` indices so each stratum keeps its population share.

    Within each stratum membership is a seeded shuffle + stable take;
    the returned indices preserve the original ordering.
    """
    if n > len(strata):
        raise ValueError(f"sample size {n} exceeds population {len(strata)}")
    groups = {}
    for idx, value in enumerate(strata):
        groups.setdefault(value, []).append(idx)
    keys = sorted(groups, key=str)
    take = largest_remainder([len(groups[k]) for k in keys], n)
    rng = random.Random(seed)
    chosen = []
    for key, count in zip(keys, take):
        members = list(groups[key])
        rng.shuffle(members)
        chosen.extend(members[:count])
    return sorted(chosen)


def stratified_sample(ds: Dataset, n: int, strata_field: str, seed: int) -> Dataset:
    """Stratified subsample of a dataset, deterministic given the seed."""
    if not ds.records:
        raise ValueError("empty dataset")
    if not hasattr(ds.records[0], strata_field):
        raise ValueError(f"unknown strata field {strata_field!r}")
    values = [getattr(rec, strata_field) for rec in ds]
    picked = stratified_indices(values, n, seed)
    return Dataset([ds.records[i] for i in picked], ds.provenance)
