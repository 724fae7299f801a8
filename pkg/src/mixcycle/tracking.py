"""Tracker contract plus two implementations: a GT oracle and a grid matcher.

A tracker receives a search cloud expressed in the reference frame (the
prior box sits at ``template.prior_box``, normally the origin) and returns
scored box proposals, per-point foreground scores and the selected box.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Protocol

import numpy as np
from scipy import ndimage

from .dataio import Template
from .geometry import (
    Box7,
    PointCloud,
    as_cloud,
    points_in_box,
    rotz,
    signed_distance_to_box,
)

ORACLE_EPS = 1e-6
FG_SOFTNESS = 0.1  # meters; sigmoid scale of the point foreground score
_MAX_YAW = math.radians(5.0)
_SCORE_CLIP = (1e-300, 1.0 - 1e-12)


@dataclass(frozen=True, eq=False)
class TrackerOutput:
    proposal_boxes: np.ndarray  # (K, 7) rows of [cx, cy, cz, w, l, h, yaw]
    proposal_scores: np.ndarray  # (K,)
    point_fg_scores: np.ndarray  # (N,) aligned with the search cloud
    selected_index: int
    predicted_target: PointCloud

    @property
    def selected(self) -> Box7:
        return Box7.from_array(self.proposal_boxes[self.selected_index])

    @property
    def proposals(self):
        return [(Box7.from_array(b), float(s)) for b, s in zip(self.proposal_boxes, self.proposal_scores)]


class Tracker(Protocol):
    needs_truth: bool

    def track(self, search: PointCloud, template: Template, truth: Box7 | None = None) -> TrackerOutput:
        ...


def fallback_output(template: Template) -> TrackerOutput:
    """Empty search area: stay at the prior pose with an undecided score."""
    return TrackerOutput(
        template.prior_box.to_array()[None, :],
        np.array([0.5]),
        np.zeros(0),
        0,
        np.zeros((0, 3)),
    )


def _fg_scores(search: PointCloud, box: Box7) -> np.ndarray:
    sd = signed_distance_to_box(search, box)
    s = 0.5 * (1.0 + np.tanh(-0.5 * sd / FG_SOFTNESS))  # overflow-free sigmoid
    return np.clip(s, ORACLE_EPS, 1.0 - ORACLE_EPS)


class OracleTracker:
    """Answers with the ground-truth box the harness hands in. Test use only."""

    needs_truth = True

    def track(self, search, template, truth=None) -> TrackerOutput:
        if truth is None:
            raise ValueError("the oracle tracker needs the hidden ground-truth box")
        search = as_cloud(search)
        inside = points_in_box(search, truth)
        fg = np.where(inside, 1.0 - ORACLE_EPS, ORACLE_EPS)
        return TrackerOutput(
            truth.to_array()[None, :],
            np.array([1.0 - ORACLE_EPS]),
            fg,
            0,
            search[inside],
        )


def oracle_track(search, template, hidden_gt: Box7) -> TrackerOutput:
    return OracleTracker().track(search, template, hidden_gt)


@dataclass(frozen=True)
class GridMatchParams:
    sigma: float = 0.3
    motion_weight: float = 0.1
    temperature: float = 10.0
    grid_extent: float = 1.5
    grid_step: float = 0.15
    yaw_steps: int = 5

    def __post_init__(self):
        if not (self.sigma > 0 and self.temperature > 0 and self.grid_step > 0):
            raise ValueError("sigma, temperature and grid_step must be positive")
        if self.motion_weight < 0:
            raise ValueError("motion_weight must be non-negative")
        if self.grid_step > self.grid_extent:
            raise ValueError("grid_step must not exceed grid_extent")
        if int(self.yaw_steps) != self.yaw_steps or self.yaw_steps < 1:
            raise ValueError("yaw_steps must be an integer >= 1")

    # the scalars a derivative-free fit may move
    FITTED = ("sigma", "motion_weight", "temperature", "grid_extent", "grid_step")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GridMatchParams":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise KeyError(f"unknown parameter(s): {sorted(unknown)}")
        kw = dict(d)
        if "yaw_steps" in kw:
            kw["yaw_steps"] = int(kw["yaw_steps"])
        return cls(**kw)


def candidate_offsets(params: GridMatchParams) -> tuple[np.ndarray, np.ndarray]:
    """XY offsets in row-major order and yaw offsets ordered by magnitude."""
    k = int(math.floor(params.grid_extent / params.grid_step + 1e-9))
    g = np.arange(-k, k + 1) * params.grid_step
    gx, gy = np.meshgrid(g, g, indexing="ij")
    xy = np.column_stack([gx.ravel(), gy.ravel()])
    if params.yaw_steps == 1:
        yaws = np.zeros(1)
    else:
        yaws = np.linspace(-_MAX_YAW, _MAX_YAW, params.yaw_steps)
        yaws = yaws[np.argsort(np.abs(yaws), kind="stable")]
    return xy, yaws


def _affinity_table(cloud, lo, shape, voxel, sigma):
    """Gaussian nearest-point affinity of every voxel center to ``cloud``.

    Nearest distances come from a Euclidean distance transform, so they are
    exact between voxel centers and off by at most a voxel diagonal for
    arbitrary query points snapped to their voxel.
    """
    idx = np.floor((cloud - lo) / voxel + 0.5).astype(np.intp)
    ok = np.all((idx >= 0) & (idx < shape), axis=1)
    if not ok.any():
        return np.zeros(int(np.prod(shape)))
    free = np.ones(shape, dtype=bool)
    free[tuple(idx[ok].T)] = False
    d = ndimage.distance_transform_edt(free, sampling=voxel)
    return np.exp(-(d * d).ravel() / (2.0 * sigma * sigma))


class GridTracker:
    """Exhaustive appearance-plus-motion matching over a grid of pose offsets.

    Each candidate (dx, dy, dyaw) places the template at the offset pose and
    scores it by the mean Gaussian affinity of every template point to its
    nearest search point, minus ``motion_weight`` times the planar offset.
    """

    needs_truth = False

    def __init__(
        self,
        params: GridMatchParams | None = None,
        max_template_points: int = 64,
        voxel: tuple = (0.1, 0.1, 0.4),
    ):
        self.params = params or GridMatchParams()
        self.max_template_points = max_template_points
        self.voxel = voxel
        self._xy, self._yaws = candidate_offsets(self.params)

    def __repr__(self):
        return f"GridTracker({self.params})"

    @property
    def n_candidates(self) -> int:
        return len(self._xy) * len(self._yaws)

    def candidate_boxes(self, prior: Box7) -> np.ndarray:
        n_xy, n_yaw = len(self._xy), len(self._yaws)
        off = np.zeros((n_xy, 3))
        off[:, :2] = self._xy
        centers = off @ rotz(prior.yaw).T + prior.center
        boxes = np.empty((n_xy, n_yaw, 7))
        boxes[:, :, :3] = centers[:, None, :]
        boxes[:, :, 3:6] = prior.size
        yaw = prior.yaw + self._yaws
        boxes[:, :, 6] = math.pi - np.mod(math.pi - yaw, 2 * math.pi)
        return boxes.reshape(-1, 7)

    def _template_sample(self, cloud: PointCloud) -> PointCloud:
        if len(cloud) <= self.max_template_points:
            return cloud
        keep = np.linspace(0, len(cloud) - 1, self.max_template_points).round().astype(int)
        return cloud[keep]

    def raw_scores(self, search: PointCloud, template: Template) -> np.ndarray:
        """Unnormalized candidate scores in candidate order."""
        p = self.params
        prior = template.prior_box
        motion = p.motion_weight * np.linalg.norm(self._xy, axis=1)
        tpl = self._template_sample(template.cloud)
        if len(tpl) == 0 or len(search) == 0:
            return np.repeat(-motion, len(self._yaws))

        # everything below lives in the prior box frame
        local = (search - prior.center) @ rotz(-prior.yaw).T
        rotated = np.stack([tpl @ rotz(y).T for y in self._yaws])  # (Y, m, 3)
        voxel = np.asarray(self.voxel, dtype=float)
        margin = 3.0 * p.sigma
        reach = np.array([p.grid_extent, p.grid_extent, 0.0]) + margin + voxel
        lo = rotated.reshape(-1, 3).min(axis=0) - reach
        hi = rotated.reshape(-1, 3).max(axis=0) + reach
        shape = np.ceil((hi - lo) / voxel).astype(np.intp) + 1
        table = _affinity_table(local, lo, shape, voxel, p.sigma)

        tv = (rotated - lo) / voxel + 0.5
        ov = self._xy / voxel[:2]
        ix = np.floor(tv[None, :, :, 0] + ov[:, None, None, 0]).astype(np.intp)
        iy = np.floor(tv[None, :, :, 1] + ov[:, None, None, 1]).astype(np.intp)
        iz = np.floor(tv[:, :, 2]).astype(np.intp)
        flat = (ix * shape[1] + iy) * shape[2] + iz[None]
        affinity = table[flat].mean(axis=2)  # (M, Y)
        return (affinity - motion[:, None]).ravel()

    def track(self, search, template, truth=None) -> TrackerOutput:
        search = as_cloud(search)
        if len(search) == 0:
            return fallback_output(template)
        raw = self.raw_scores(search, template)
        boxes = self.candidate_boxes(template.prior_box)
        if len(template.cloud) == 0:
            # motion prior alone: the zero-offset, smallest-yaw candidate sits at the prior
            best = (len(self._xy) // 2) * len(self._yaws)
        else:
            best = int(np.argmax(raw))
        z = self.params.temperature * (raw - raw.max())
        scores = np.exp(z)
        scores /= scores.sum()
        np.clip(scores, *_SCORE_CLIP, out=scores)
        selected = Box7.from_array(boxes[best])
        return TrackerOutput(
            boxes,
            scores,
            _fg_scores(search, selected),
            best,
            search[points_in_box(search, selected)],
        )


def grid_track(search, template, params: GridMatchParams) -> TrackerOutput:
    return GridTracker(params).track(search, template)
