"""Synthetic scenes and simulated region proposals with a training-time quality ramp.

Early in training the simulated proposal source is noisy (large jitter), so few
proposals overlap any object well enough to count as positive; as quality rises
the jitter shrinks and positives become plentiful. Scene difficulty is driven
by a configurable mixture over ground-truth counts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .geometry import Box, GroundTruthInstance, ProposalLabel, iou_matrix, label_arrays
from .seeding import rng_for

POS_IOU_THRESHOLD = 0.5

DEFAULT_GT_COUNT_WEIGHTS = {
    1: 0.12, 2: 0.12, 3: 0.12,
    4: 0.08, 5: 0.08, 6: 0.08,
    8: 0.14, 10: 0.13, 12: 0.13,
}


@dataclass(frozen=True)
class SceneConfig:
    extent: tuple[float, float] = (100.0, 100.0)
    num_classes: int = 3
    gt_count_weights: dict[int, float] = field(
        default_factory=lambda: dict(DEFAULT_GT_COUNT_WEIGHTS)
    )
    box_size_range: tuple[float, float] = (8.0, 30.0)

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("need at least one foreground class")
        total = sum(self.gt_count_weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"gt_count_weights must sum to 1, got {total}")
        if any(c < 0 for c in self.gt_count_weights):
            raise ValueError("gt counts must be non-negative")
        lo, hi = self.box_size_range
        if not (0 < lo <= hi):
            raise ValueError("invalid box size range")
        if lo > min(self.extent):
            raise ValueError("minimum box size exceeds scene extent")


@dataclass(frozen=True)
class RpnQualityModel:
    """Jitter magnitudes (as fractions of box size) and proposal counts."""

    jitter_start: float = 0.6
    jitter_end: float = 0.03
    fg_per_gt: int = 8
    bg_per_scene: int = 56

    def __post_init__(self):
        if not (self.jitter_start >= self.jitter_end >= 0.0):
            raise ValueError("jitter must be non-negative and non-increasing")
        if self.fg_per_gt < 1 or self.bg_per_scene < 1:
            raise ValueError("proposal counts must be >= 1")

    def sigma(self, q: float) -> float:
        return self.jitter_start + q * (self.jitter_end - self.jitter_start)


@dataclass(frozen=True)
class FeatureModel:
    """Surrogate RoI features: IoU-scaled class one-hot plus gaussian noise."""

    noise_dims: int = 8
    noise_sigma: float = 0.25

    def dim(self, num_classes: int) -> int:
        return num_classes + self.noise_dims


@dataclass(frozen=True)
class Scene:
    id: int
    extent: tuple[float, float]
    instances: tuple[GroundTruthInstance, ...]

    @property
    def gt_boxes(self) -> np.ndarray:
        if not self.instances:
            return np.zeros((0, 4), dtype=np.float64)
        return np.stack([g.box.as_array() for g in self.instances])

    @property
    def gt_classes(self) -> np.ndarray:
        return np.array([g.class_id for g in self.instances], dtype=np.int64)


@dataclass(frozen=True)
class Proposal:
    box: Box
    feature: np.ndarray
    label: ProposalLabel


class ProposalSet:
    """Struct-of-arrays view of a scene's labeled, featurized proposals."""

    def __init__(self, boxes, classes, max_ious, matched, reg_targets, features):
        self.boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        self.classes = np.asarray(classes, dtype=np.int64)
        self.max_ious = np.asarray(max_ious, dtype=np.float64)
        self.matched = np.asarray(matched, dtype=np.int64)
        self.reg_targets = np.asarray(reg_targets, dtype=np.float64).reshape(-1, 4)
        self.features = np.asarray(features, dtype=np.float64)
        n = len(self.classes)
        if not (len(self.boxes) == len(self.max_ious) == len(self.matched)
                == len(self.reg_targets) == len(self.features) == n):
            raise ValueError("mismatched proposal array lengths")

    def __len__(self) -> int:
        return len(self.classes)

    def __getitem__(self, i: int) -> Proposal:
        if self.classes[i] > 0:
            label = ProposalLabel(
                class_id=int(self.classes[i]),
                max_iou=float(self.max_ious[i]),
                matched_gt=int(self.matched[i]),
                regression_target=tuple(float(v) for v in self.reg_targets[i]),
            )
        else:
            label = ProposalLabel(class_id=0, max_iou=float(self.max_ious[i]))
        return Proposal(box=Box.from_array(self.boxes[i]), feature=self.features[i], label=label)

    def to_proposals(self) -> list[Proposal]:
        return [self[i] for i in range(len(self))]


def generate_scene(config: SceneConfig, rng_seed: int) -> Scene:
    """Draw a scene whose instance count follows the configured mixture."""
    rng = np.random.default_rng(rng_seed)
    counts = sorted(config.gt_count_weights)
    weights = np.array([config.gt_count_weights[c] for c in counts])
    count = int(rng.choice(counts, p=weights / weights.sum()))
    lo, hi = config.box_size_range
    w_ext, h_ext = config.extent
    instances = []
    for _ in range(count):
        bw = rng.uniform(lo, min(hi, w_ext))
        bh = rng.uniform(lo, min(hi, h_ext))
        x1 = rng.uniform(0.0, w_ext - bw)
        y1 = rng.uniform(0.0, h_ext - bh)
        cls = int(rng.integers(1, config.num_classes + 1))
        instances.append(GroundTruthInstance(Box(x1, y1, x1 + bw, y1 + bh), cls))
    return Scene(id=rng_seed & 0x7FFFFFFF, extent=config.extent, instances=tuple(instances))


def quality_at(t: int, total_steps: int) -> float:
    """Linear proposal-quality ramp from 0 at the first step to 1 at the last."""
    if not (0 <= t <= total_steps):
        raise ValueError(f"step {t} outside [0, {total_steps}]")
    return t / total_steps


def proposal_features(
    classes: np.ndarray,
    max_ious: np.ndarray,
    num_classes: int,
    feat: FeatureModel,
    rng: np.random.Generator,
) -> np.ndarray:
    """Features for labeled proposals.

    The class dimension of the max-IoU ground truth carries the overlap value,
    so near-miss proposals below the positive threshold still look partly like
    their class. Proposals with zero overlap are pure noise.
    """
    classes = np.asarray(classes, dtype=np.int64)
    max_ious = np.asarray(max_ious, dtype=np.float64)
    n = len(classes)
    d = feat.dim(num_classes)
    out = rng.normal(0.0, feat.noise_sigma, size=(n, d)) if feat.noise_sigma > 0 else np.zeros((n, d))
    pos = classes > 0
    out[pos, classes[pos] - 1] += max_ious[pos]
    return out


def _jitter_boxes(gt_boxes: np.ndarray, copies: int, sigma: float,
                  rng: np.random.Generator) -> np.ndarray:
    boxes = np.repeat(gt_boxes, copies, axis=0)
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    scale = np.stack([sigma * w, sigma * h, sigma * w, sigma * h], axis=1)
    jittered = boxes + rng.normal(0.0, 1.0, size=boxes.shape) * scale
    # heavy jitter can cross the corners; repair to keep boxes valid
    x1 = np.minimum(jittered[:, 0], jittered[:, 2])
    x2 = np.maximum(jittered[:, 0], jittered[:, 2])
    y1 = np.minimum(jittered[:, 1], jittered[:, 3])
    y2 = np.maximum(jittered[:, 1], jittered[:, 3])
    x2 = np.maximum(x2, x1 + 0.1)
    y2 = np.maximum(y2, y1 + 0.1)
    return np.stack([x1, y1, x2, y2], axis=1)


def generate_proposals(
    scene: Scene,
    q: float,
    model: RpnQualityModel,
    rng_seed: int,
    feat: FeatureModel = FeatureModel(),
    num_classes: Optional[int] = None,
    box_size_range: tuple[float, float] = (8.0, 30.0),
    pos_threshold: float = POS_IOU_THRESHOLD,
) -> ProposalSet:
    """Simulated proposals at quality `q`: jittered copies of each instance plus
    uniform background boxes, labeled and featurized."""
    if not (0.0 <= q <= 1.0):
        raise ValueError("quality must lie in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    gt_boxes = scene.gt_boxes
    sigma = model.sigma(q)
    if len(gt_boxes):
        fg = _jitter_boxes(gt_boxes, model.fg_per_gt, sigma, rng)
    else:
        fg = np.zeros((0, 4))
    lo, hi = box_size_range
    w_ext, h_ext = scene.extent
    bw = rng.uniform(lo, min(hi, w_ext), size=model.bg_per_scene)
    bh = rng.uniform(lo, min(hi, h_ext), size=model.bg_per_scene)
    bx = rng.uniform(0.0, 1.0, size=model.bg_per_scene) * (w_ext - bw)
    by = rng.uniform(0.0, 1.0, size=model.bg_per_scene) * (h_ext - bh)
    bg = np.stack([bx, by, bx + bw, by + bh], axis=1)
    boxes = np.concatenate([fg, bg], axis=0)
    classes, max_ious, matched, reg = label_arrays(
        boxes, gt_boxes, scene.gt_classes, pos_threshold
    )
    if num_classes is None:
        num_classes = int(scene.gt_classes.max()) if len(gt_boxes) else 1
    if len(gt_boxes):
        nearest = np.argmax(iou_matrix(boxes, gt_boxes), axis=1)
        signal_classes = np.where(max_ious > 0.0, scene.gt_classes[nearest], 0)
    else:
        signal_classes = np.zeros(len(boxes), dtype=np.int64)
    features = proposal_features(signal_classes, max_ious, num_classes, feat, rng)
    return ProposalSet(boxes, classes, max_ious, matched, reg, features)


def generate_dataset(config: SceneConfig, n_scenes: int, base_seed: int,
                     tag: str = "scene") -> list[Scene]:
    """Scenes with per-scene derived seeds; embarrassingly parallel by design."""
    scenes = []
    for i in range(n_scenes):
        seed = int(rng_for(base_seed, tag, i).integers(0, 2**63))
        scenes.append(dataclasses.replace(generate_scene(config, seed), id=i))
    return scenes


# --- line-delimited dataset serialization ----------------------------------

Record = Union[Scene, tuple[Scene, Optional[ProposalSet]]]


def save_dataset(records: Iterable[Record], path) -> None:
    """One scene per record: a header line, then instance and proposal lines.

    Floats are written with `repr` so the round trip is lossless.
    """
    lines = []
    for rec in records:
        scene, props = rec if isinstance(rec, tuple) else (rec, None)
        n_prop = len(props) if props is not None else 0
        lines.append(
            f"scene {scene.id} {scene.extent[0]!r} {scene.extent[1]!r} "
            f"{len(scene.instances)} {n_prop}"
        )
        for g in scene.instances:
            b = g.box
            lines.append(f"inst {g.class_id} {b.x1!r} {b.y1!r} {b.x2!r} {b.y2!r}")
        if props is not None:
            for i in range(len(props)):
                fields = [
                    "prop",
                    str(int(props.classes[i])),
                    repr(float(props.max_ious[i])),
                    str(int(props.matched[i])),
                ]
                fields += [repr(float(v)) for v in props.boxes[i]]
                fields += [repr(float(v)) for v in props.reg_targets[i]]
                fields += [repr(float(v)) for v in props.features[i]]
                lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> list[tuple[Scene, Optional[ProposalSet]]]:
    lines = Path(path).read_text().splitlines()
    records: list[tuple[Scene, Optional[ProposalSet]]] = []
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] != "scene":
            raise ValueError(f"expected scene header at line {i + 1}")
        sid, w, h, n_inst, n_prop = (
            int(parts[1]), float(parts[2]), float(parts[3]), int(parts[4]), int(parts[5])
        )
        i += 1
        instances = []
        for _ in range(n_inst):
            p = lines[i].split()
            instances.append(
                GroundTruthInstance(
                    Box(float(p[2]), float(p[3]), float(p[4]), float(p[5])), int(p[1])
                )
            )
            i += 1
        scene = Scene(id=sid, extent=(w, h), instances=tuple(instances))
        props = None
        if n_prop:
            classes, max_ious, matched = [], [], []
            boxes, regs, feats = [], [], []
            for _ in range(n_prop):
                p = lines[i].split()
                classes.append(int(p[1]))
                max_ious.append(float(p[2]))
                matched.append(int(p[3]))
                boxes.append([float(v) for v in p[4:8]])
                regs.append([float(v) for v in p[8:12]])
                feats.append([float(v) for v in p[12:]])
                i += 1
            props = ProposalSet(boxes, classes, max_ious, matched, regs, feats)
        records.append((scene, props))
    return records
