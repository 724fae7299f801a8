"""Tracking loss terms, mixing-rate weighting, and the combined cycle objective."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import Box7, normalize_yaw
from .sotmixup import ProposalLabel, mix_loss_weights

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    rho: tuple = (1.0, 1.0, 1.0, 1.0)  # cla, prop, reg, box
    gamma1: float = 1.0
    gamma2: float = 2.0
    pos_dist: float = 0.3
    neg_dist: float = 0.6

    def __post_init__(self):
        if len(self.rho) != 4 or min(self.rho) < 0:
            raise ValueError("rho needs four non-negative weights")
        if min(self.gamma1, self.gamma2, self.pos_dist, self.neg_dist) < 0:
            raise ValueError("loss settings must be non-negative")
        if not self.pos_dist < self.neg_dist:
            raise ValueError("pos_dist must be smaller than neg_dist")


@dataclass(frozen=True)
class LossReport:
    l_cla: float
    l_prop: float
    l_reg: float
    l_box: float
    total: float
    lambda_used: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def label_proposals(centers, gt: Box7, cfg: LossConfig) -> np.ndarray:
    """Positive under ``pos_dist`` from the GT center, negative over ``neg_dist``."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    d = np.linalg.norm(centers - gt.center, axis=1)
    labels = np.full(len(d), int(ProposalLabel.IGNORE))
    labels[d < cfg.pos_dist] = ProposalLabel.POSITIVE
    labels[d > cfg.neg_dist] = ProposalLabel.NEGATIVE
    return labels


def _check_scores(scores: np.ndarray, what: str) -> None:
    if scores.size and not (np.all(np.isfinite(scores)) and scores.min() > 0 and scores.max() < 1):
        raise FloatingPointError(f"{what} must lie strictly inside (0, 1)")


def bce_terms(scores, targets) -> np.ndarray:
    """Unweighted per-term binary cross entropy, scores clamped to [eps, 1-eps]."""
    s = np.clip(np.asarray(scores, dtype=float), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(targets, dtype=bool)
    return -np.where(y, np.log(s), np.log1p(-s))


def smooth_l1(x) -> np.ndarray:
    a = np.abs(np.asarray(x, dtype=float))
    return np.where(a < 1.0, 0.5 * a * a, a - 0.5)


def sot_loss(out, pseudo_label: Box7, fg_mask, lam: float, cfg: LossConfig) -> "LossReport":
    """Four-term tracking loss against a (pseudo) label box.

    ``out`` is a tracker output; ``fg_mask`` marks the search points inside
    the label box. Positives and foreground points are weighted by ``lam``.
    """
    fg_mask = np.asarray(fg_mask, dtype=bool)
    point_scores = np.asarray(out.point_fg_scores, dtype=float)
    if len(fg_mask) != len(point_scores):
        raise ValueError("fg_mask is not aligned with the tracker's point scores")
    prop_scores = np.asarray(out.proposal_scores, dtype=float)
    _check_scores(point_scores, "point foreground scores")
    _check_scores(prop_scores, "proposal scores")

    labels = label_proposals(out.proposal_boxes[:, :3], pseudo_label, cfg)
    prop_w, point_w = mix_loss_weights(lam, labels, fg_mask)

    l_cla = float(np.mean(point_w * bce_terms(point_scores, fg_mask))) if len(fg_mask) else 0.0

    scored = labels != ProposalLabel.IGNORE
    positive = labels == ProposalLabel.POSITIVE
    if scored.any():
        terms = prop_w * bce_terms(prop_scores, positive)
        l_prop = float(terms[scored].sum() / scored.sum())
    else:
        l_prop = 0.0

    if positive.any():
        boxes = out.proposal_boxes
        l_reg = float(np.mean(smooth_l1(boxes[positive, :3] - pseudo_label.center)))
        pos_idx = np.flatnonzero(positive)
        best = pos_idx[np.argmax(prop_scores[pos_idx])]
        diff = np.append(
            boxes[best, :3] - pseudo_label.center,
            normalize_yaw(boxes[best, 6] - pseudo_label.yaw),
        )
        l_box = float(np.mean(smooth_l1(diff)))
    else:
        l_reg = l_box = 0.0

    r1, r2, r3, r4 = cfg.rho
    total = r1 * l_cla + r2 * l_prop + r3 * l_reg + r4 * l_box
    return LossReport(l_cla, l_prop, l_reg, l_box, float(total), float(lam))


def mixcycle_loss(l_self: LossReport, l_con0: LossReport, cfg: LossConfig) -> float:
    return cfg.gamma1 * l_self.total + cfg.gamma2 * l_con0.total


def mean_report(reports) -> LossReport:
    reports = list(reports)
    if not reports:
        return LossReport(0.0, 0.0, 0.0, 0.0, 0.0, math.nan)
    arr = np.array(
        [[r.l_cla, r.l_prop, r.l_reg, r.l_box, r.total, r.lambda_used] for r in reports]
    )
    return LossReport(*(float(x) for x in arr.mean(axis=0)))
