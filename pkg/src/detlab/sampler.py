"""Minibatch construction under soft and hard positive/negative sampling ratios.

Soft mode honors the target positive fraction only when enough positives exist;
otherwise every available positive is used and negatives fill the batch. Hard
mode enforces the fraction exactly by repeating positives (multiplicity > 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingPolicy:
    mode: str  # "soft" | "hard"
    ratio: tuple[int, int]  # (pos_parts, neg_parts)
    batch_size: int

    def __post_init__(self):
        if self.mode not in ("soft", "hard"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        p, n = self.ratio
        if p < 1 or n < 1:
            raise ValueError("ratio parts must be positive integers")
        if self.batch_size < p + n:
            raise ValueError("batch size smaller than one ratio unit")
        if self.pos_target < 1:
            raise ValueError("positive target must be >= 1")

    @property
    def pos_target(self) -> int:
        p, n = self.ratio
        return math.floor(self.batch_size * p / (p + n))

    @property
    def pos_fraction(self) -> float:
        p, n = self.ratio
        return p / (p + n)


@dataclass(frozen=True)
class SampledBatch:
    indices: np.ndarray  # indices into the proposal pool
    multiplicities: np.ndarray  # same length, all >= 1
    pos_count_unique: int
    pos_count_effective: int
    neg_count: int


def _class_array(labeled) -> np.ndarray:
    if isinstance(labeled, np.ndarray):
        return labeled.astype(np.int64)
    if hasattr(labeled, "classes"):  # ProposalSet
        return np.asarray(labeled.classes, dtype=np.int64)
    return np.array([lab.class_id for lab in labeled], dtype=np.int64)


def _split_pool(labeled, policy: SamplingPolicy):
    classes = _class_array(labeled)
    if len(classes) < policy.batch_size:
        raise SamplerError(
            f"pool of {len(classes)} proposals cannot fill a batch of {policy.batch_size}"
        )
    pos = np.flatnonzero(classes > 0)
    neg = np.flatnonzero(classes == 0)
    return pos, neg


def _pick(rng: np.random.Generator, pool: np.ndarray, k: int) -> np.ndarray:
    if k >= len(pool):
        return pool.copy()
    return rng.choice(pool, size=k, replace=False)


def _fill_negatives(rng, pos, neg, n_pos_take, policy):
    """Take positives then negatives; if the negative pool is short, top up with
    extra positives so the batch is always exactly full."""
    b = policy.batch_size
    take_pos = _pick(rng, pos, n_pos_take)
    n_neg = min(b - len(take_pos), len(neg))
    take_neg = _pick(rng, neg, n_neg)
    shortfall = b - len(take_pos) - len(take_neg)
    if shortfall > 0:
        remaining = np.setdiff1d(pos, take_pos, assume_unique=True)
        take_pos = np.concatenate([take_pos, _pick(rng, remaining, shortfall)])
    return take_pos, take_neg


def sample_soft(labeled, policy: SamplingPolicy, rng_seed: int) -> SampledBatch:
    """All multiplicities 1; positives capped at the target, never padded."""
    if policy.mode != "soft":
        raise SamplerError("sample_soft requires a soft policy")
    pos, neg = _split_pool(labeled, policy)
    rng = np.random.default_rng(rng_seed)
    n_pos_take = min(len(pos), policy.pos_target)
    take_pos, take_neg = _fill_negatives(rng, pos, neg, n_pos_take, policy)
    indices = np.concatenate([take_pos, take_neg]).astype(np.int64)
    return SampledBatch(
        indices=indices,
        multiplicities=np.ones(len(indices), dtype=np.int64),
        pos_count_unique=len(take_pos),
        pos_count_effective=len(take_pos),
        neg_count=len(take_neg),
    )


def sample_hard(labeled, policy: SamplingPolicy, rng_seed: int) -> SampledBatch:
    """Repeats scarce positives so their effective count hits the target exactly.

    Copies are spread as evenly as possible (multiplicities differ by at most 1,
    extras go to the lowest pool indices). With zero positives the batch falls
    back to all negatives.
    """
    if policy.mode != "hard":
        raise SamplerError("sample_hard requires a hard policy")
    pos, neg = _split_pool(labeled, policy)
    rng = np.random.default_rng(rng_seed)
    target = policy.pos_target
    if len(pos) == 0 or len(pos) >= target:
        n_pos_take = min(len(pos), target)
        take_pos, take_neg = _fill_negatives(rng, pos, neg, n_pos_take, policy)
        indices = np.concatenate([take_pos, take_neg]).astype(np.int64)
        return SampledBatch(
            indices=indices,
            multiplicities=np.ones(len(indices), dtype=np.int64),
            pos_count_unique=len(take_pos),
            pos_count_effective=len(take_pos),
            neg_count=len(take_neg),
        )
    take_pos = np.sort(pos)
    base, extra = divmod(target, len(take_pos))
    mults = np.full(len(take_pos), base, dtype=np.int64)
    mults[:extra] += 1
    take_neg = _pick(rng, neg, policy.batch_size - target)
    shortfall = policy.batch_size - target - len(take_neg)
    if shortfall > 0:
        # negative pool exhausted; absorb the remainder into positive copies
        extra_each, extra_rem = divmod(shortfall, len(take_pos))
        mults += extra_each
        mults[:extra_rem] += 1
    indices = np.concatenate([take_pos, take_neg]).astype(np.int64)
    multiplicities = np.concatenate(
        [mults, np.ones(len(take_neg), dtype=np.int64)]
    )
    return SampledBatch(
        indices=indices,
        multiplicities=multiplicities,
        pos_count_unique=len(take_pos),
        pos_count_effective=int(mults.sum()),
        neg_count=len(take_neg),
    )


def sample(labeled, policy: SamplingPolicy, rng_seed: int) -> SampledBatch:
    if policy.mode == "soft":
        return sample_soft(labeled, policy, rng_seed)
    return sample_hard(labeled, policy, rng_seed)


def count_positives(batch: SampledBatch) -> tuple[int, int]:
    return batch.pos_count_unique, batch.pos_count_effective
