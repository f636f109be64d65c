"""Gradient annealing for the classifier/regressor heads.

Head-parameter gradients are magnified by a factor that decays linearly from
an initial value to 1 over training; backbone gradients are left untouched.
A constant-factor variant supports ablations against the annealed schedule.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .net import BackboneParams, Gradients, HeadParams


@dataclass(frozen=True)
class AnnealSchedule:
    lambda0: float
    total_steps: int
    constant: bool = False

    def __post_init__(self):
        if self.lambda0 < 1.0:
            raise ValueError("initial magnification must be >= 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")


def constant_factor_mode(lambda0: float, total_steps: int) -> AnnealSchedule:
    """Schedule variant that holds the magnification fixed for the whole run."""
    return AnnealSchedule(lambda0=lambda0, total_steps=total_steps, constant=True)


def anneal_factor(t: int, sched: AnnealSchedule) -> float:
    """Magnification at optimization step t: lambda0 at 0, decaying linearly to 1."""
    if not (0 <= t <= sched.total_steps):
        raise ValueError(f"step {t} outside [0, {sched.total_steps}]")
    if sched.constant:
        return sched.lambda0
    return sched.lambda0 - (sched.lambda0 - 1.0) * t / sched.total_steps


def apply_rga(grads: Gradients, lam: float) -> Gradients:
    """Scale every head-parameter gradient by `lam`; backbone gradients pass
    through unchanged (same arrays)."""
    if lam < 1.0:
        raise ValueError(f"magnification {lam} violates the schedule (must be >= 1)")
    scaled_heads = [
        HeadParams(*[lam * a for a in head.arrays()]) for head in grads.heads
    ]
    return Gradients(backbone=grads.backbone, heads=scaled_heads)
