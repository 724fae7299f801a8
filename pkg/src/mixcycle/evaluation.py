"""One-pass evaluation and the Success / Precision area-under-curve metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .dataio import DEFAULT_TEMPLATE_CAP, Template, Tracklet, object_points, template_update
from .geometry import (
    DEFAULT_SEARCH_RADIUS,
    box_from_frame,
    box_in_frame,
    box_iou_3d,
    center_distance,
    crop_search_area,
    to_box_frame,
    unit_box,
)

SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 101)
PRECISION_THRESHOLDS = np.linspace(0.0, 2.0, 101)


def success_auc(ious) -> float:
    """Mean over IoU thresholds 0, 0.01, ..., 1 of the share of frames with IoU above it, in percent."""
    ious = np.asarray(ious, dtype=float).ravel()
    if ious.size == 0:
        raise ValueError("success is undefined for an empty set of frames")
    frac = (ious[None, :] > SUCCESS_THRESHOLDS[:, None]).mean(axis=1)
    return float(frac.mean() * 100.0)


def precision_auc(dists) -> float:
    """Mean over distance thresholds 0, 0.02, ..., 2 m of the share of frames closer than it, in percent."""
    dists = np.asarray(dists, dtype=float).ravel()
    if dists.size == 0:
        raise ValueError("precision is undefined for an empty set of frames")
    frac = (dists[None, :] < PRECISION_THRESHOLDS[:, None]).mean(axis=1)
    return float(frac.mean() * 100.0)


@dataclass(frozen=True)
class OPEResult:
    tracklet_id: str
    category: str
    frame_indices: tuple
    ious: np.ndarray
    center_dists: np.ndarray
    success: float
    precision: float

    @property
    def frame_count(self) -> int:
        return len(self.ious)


def run_ope(
    tracker,
    tracklet: Tracklet,
    radius: float = DEFAULT_SEARCH_RADIUS,
    template_cap: int = DEFAULT_TEMPLATE_CAP,
    seed: int = 0,
) -> OPEResult:
    """Track frame by frame from the ground-truth first box.

    Frame 0 is scored with its ground-truth box, so a perfect tracker reaches
    IoU 1 on every frame. Ground truth of later frames is only read for
    scoring, and handed to trackers that declare ``needs_truth``.
    """
    frames = tracklet.frames
    if len(frames) < 2:
        raise ValueError(f"tracklet {tracklet.id!r} needs at least 2 frames for evaluation")
    if any(f.label is None for f in frames):
        raise ValueError(f"tracklet {tracklet.id!r} has frames without ground truth")

    rng = np.random.default_rng(seed)
    gt0 = frames[0].label
    size = gt0.size
    first_target = object_points(frames[0].cloud, gt0)
    template_cloud = first_target
    prev = gt0
    ious, dists = [1.0], [0.0]
    for fr in frames[1:]:
        search = to_box_frame(crop_search_area(fr.cloud, prev, radius), prev)
        truth = box_in_frame(fr.label, prev) if tracker.needs_truth else None
        out = tracker.track(search, Template(template_cloud, unit_box(size)), truth)
        sel = out.selected
        pred = box_from_frame(sel, prev)
        ious.append(box_iou_3d(pred, fr.label))
        dists.append(center_distance(pred, fr.label))
        template_cloud = template_update(
            first_target, to_box_frame(out.predicted_target, sel), template_cap, rng
        )
        prev = pred
    ious, dists = np.array(ious), np.array(dists)
    return OPEResult(
        tracklet.id,
        tracklet.category,
        tuple(f.frame_index for f in frames),
        ious,
        dists,
        success_auc(ious),
        precision_auc(dists),
    )


@dataclass(frozen=True)
class CategorySummary:
    category: str
    tracklets: int
    frames: int
    success: float
    precision: float


def summarize(results) -> list[CategorySummary]:
    """Per-category rows (sorted by name) followed by a frame-weighted ``Mean`` row."""
    results = list(results)
    if not results:
        raise ValueError("nothing to summarize")
    rows = []
    for cat in sorted({r.category for r in results}):
        rs = [r for r in results if r.category == cat]
        ious = np.concatenate([r.ious for r in rs])
        dists = np.concatenate([r.center_dists for r in rs])
        rows.append(CategorySummary(cat, len(rs), len(ious), success_auc(ious), precision_auc(dists)))
    frames = np.array([r.frames for r in rows], dtype=float)
    w = frames / frames.sum()
    rows.append(
        CategorySummary(
            "Mean",
            sum(r.tracklets for r in rows),
            int(frames.sum()),
            float(np.dot(w, [r.success for r in rows])),
            float(np.dot(w, [r.precision for r in rows])),
        )
    )
    return rows


def frames_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tracklet", "category", "frame", "iou", "center_dist_m"])
    for r in results:
        for idx, iou, d in zip(r.frame_indices, r.ious, r.center_dists):
            w.writerow([r.tracklet_id, r.category, idx, repr(float(iou)), repr(float(d))])
    return buf.getvalue()


def summary_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["category", "tracklets", "frames", "success", "precision"])
    for r in rows:
        w.writerow([r.category, r.tracklets, r.frames, repr(r.success), repr(r.precision)])
    return buf.getvalue()


def evaluate(tracker, tracklets, seed: int = 0) -> list[OPEResult]:
    return [run_ope(tracker, t, seed=seed) for t in tracklets]
