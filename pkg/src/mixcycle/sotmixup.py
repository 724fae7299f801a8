"""Point-count mixup for single-object tracking and its loss weights."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .geometry import Box7, PointCloud, as_cloud, from_box_frame, points_in_box, to_box_frame


class ProposalLabel(IntEnum):
    IGNORE = -1
    NEGATIVE = 0
    POSITIVE = 1


@dataclass(frozen=True)
class MixConfig:
    eta: float = 0.5

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("Beta shape parameter eta must be positive")


@dataclass(frozen=True)
class MixedSample:
    cloud: PointCloud
    label_box: Box7
    lam: float
    fg_mask: np.ndarray
    n_background: int
    k_a: int
    k_b: int

    @property
    def n_object(self) -> int:
        return self.k_a + self.k_b


def segment_fg_bg(pc: PointCloud, box: Box7) -> tuple[PointCloud, PointCloud]:
    """Split a cloud into (object points, background points)."""
    pc = as_cloud(pc)
    inside = points_in_box(pc, box)
    return pc[inside], pc[~inside]


def sample_lambda(cfg: MixConfig, rng: np.random.Generator) -> float:
    return float(rng.beta(cfg.eta, cfg.eta))


def sotmixup(
    p_a: PointCloud,
    box_a: Box7,
    p_b: PointCloud,
    box_b: Box7,
    lam: float,
    rng: np.random.Generator,
) -> MixedSample:
    """Replace a ``1 - lam`` share of A's object points with donor points from B.

    Donor object points are moved from ``box_b``'s pose onto ``box_a``'s, so
    they land where A's object sits. The object-region point count of A is
    preserved; donor points falling outside ``box_a`` are background.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixing rate must lie in [0, 1], got {lam}")
    obj_a, bg_a = segment_fg_bg(p_a, box_a)
    obj_b, _ = segment_fg_bg(p_b, box_b)
    n = len(obj_a)

    if n == 0 or len(obj_b) == 0:
        # nothing to mix (or nothing to mix in): pass A through unchanged
        cloud = as_cloud(p_a).copy()
        return MixedSample(cloud, box_a, 1.0, points_in_box(cloud, box_a), len(bg_a), n, 0)

    k_a = int(math.floor(lam * n + 0.5))
    k_b = n - k_a
    pick_a = np.sort(rng.choice(n, size=k_a, replace=False))
    replace = len(obj_b) < k_b
    pick_b = rng.choice(len(obj_b), size=k_b, replace=replace)
    if not replace:
        pick_b = np.sort(pick_b)
    # re-pose the whole donor object first so coordinates do not depend on the pick
    donor = from_box_frame(to_box_frame(obj_b, box_b), box_a)[pick_b]

    cloud = np.concatenate([bg_a, obj_a[pick_a], donor])
    return MixedSample(cloud, box_a, float(lam), points_in_box(cloud, box_a), len(bg_a), k_a, k_b)


def mix_loss_weights(lam: float, proposal_labels, point_fg_labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-term BCE weights: ``lam`` on positives/foreground, 1 on negatives/background.

    Proposals in the ignore band get weight 0.
    """
    labels = np.asarray(proposal_labels, dtype=int)
    prop_w = np.where(labels == ProposalLabel.POSITIVE, lam, 1.0)
    prop_w[labels == ProposalLabel.IGNORE] = 0.0
    fg = np.asarray(point_fg_labels, dtype=bool)
    point_w = np.where(fg, lam, 1.0)
    return prop_w.astype(float), point_w.astype(float)
