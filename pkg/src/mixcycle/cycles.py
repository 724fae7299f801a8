"""Self and forward-backward tracking cycles, and a derivative-free fit of tracker parameters.

Everything here works in the object frame of a labeled box: search areas
are canonicalized so the reference box sits at the origin with yaw 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataio import (
    DEFAULT_TEMPLATE_CAP,
    Template,
    make_training_triplet,
    object_points,
    template_update,
)
from .errors import ConfigError
from .geometry import (
    DEFAULT_SEARCH_RADIUS,
    DEFAULT_XFORM_BOUNDS,
    Box7,
    XformBounds,
    apply_xform,
    box_from_frame,
    box_in_frame,
    crop_search_area,
    points_in_box,
    sample_xform,
    to_box_frame,
    transform_box,
    unit_box,
)
from .losses import LossConfig, LossReport, mixcycle_loss, sot_loss
from .sotmixup import MixConfig, sample_lambda, sotmixup
from .tracking import GridMatchParams, GridTracker


@dataclass(frozen=True)
class CycleConfig:
    n_steps: int = 2
    xform_bounds: XformBounds = DEFAULT_XFORM_BOUNDS
    mix: MixConfig = field(default_factory=MixConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    search_radius: float = DEFAULT_SEARCH_RADIUS
    template_cap: int = DEFAULT_TEMPLATE_CAP

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be an integer >= 1")


# name -> (low, high); the fit searches the box these bounds span
DEFAULT_PARAM_BOUNDS = {
    "sigma": (0.05, 1.0),
    "motion_weight": (0.0, 1.0),
    "temperature": (1.0, 50.0),
    "grid_extent": (0.3, 2.0),
    "grid_step": (0.1, 0.3),
}


@dataclass(frozen=True)
class FitConfig:
    method: str = "cem"
    population: int = 32
    elite_frac: float = 0.25
    iterations: int = 30
    batch_size: int = 16
    init_std: float = 0.25  # in the [0, 1]-normalized parameter box
    min_std: float = 0.02
    param_bounds: dict = field(default_factory=lambda: dict(DEFAULT_PARAM_BOUNDS))
    objective: str = "mixcycle"  # or "supervised"

    @property
    def n_elite(self) -> int:
        return max(1, int(math.floor(self.elite_frac * self.population + 0.5)))

    def __post_init__(self):
        if self.method != "cem":
            raise ConfigError(f"unknown fit method {self.method!r}")
        if self.objective not in ("mixcycle", "supervised"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if not 0.0 < self.elite_frac < 1.0:
            raise ConfigError("elite_frac must lie in (0, 1)")
        if self.population < 2 * self.n_elite:
            raise ConfigError("population must be at least twice the elite count")
        if self.iterations < 0 or self.batch_size < 1:
            raise ConfigError("iterations must be >= 0 and batch_size >= 1")
        unknown = set(self.param_bounds) - set(GridMatchParams.FITTED)
        if unknown:
            raise ConfigError(f"no fittable parameter named {sorted(unknown)}")
        for name, (lo, hi) in self.param_bounds.items():
            if not lo <= hi:
                raise ConfigError(f"bounds for {name} are inverted")


def _track(tracker, search, template, truth):
    return tracker.track(search, template, truth if tracker.needs_truth else None)


def _canonical(cloud, box: Box7, radius: float):
    return to_box_frame(crop_search_area(cloud, box, radius), box), unit_box(box.size)


def _transformed_loss(tracker, cloud, label, template, lam, fg_mask, cfg, rng) -> LossReport:
    """Move (cloud, label) by a fresh random transform, track around the origin, score."""
    alpha = sample_xform(cfg.xform_bounds, rng)
    moved, pseudo = apply_xform(cloud, label, alpha)
    out = _track(tracker, moved, template, pseudo)
    if fg_mask is None:
        fg_mask = points_in_box(moved, pseudo)
    return sot_loss(out, pseudo, fg_mask, lam, cfg.loss)


def self_cycle(tracker, labeled_frame, donor_frame, cfg: CycleConfig, rng, lam=None) -> LossReport:
    """Track from a labeled frame into a mixed, randomly moved copy of itself.

    ``labeled_frame`` and ``donor_frame`` are (cloud, box) pairs. ``lam``
    overrides the Beta draw when given.
    """
    search, label = _canonical(*labeled_frame, cfg.search_radius)
    template = Template(object_points(search, label), label)
    if lam is None:
        lam = sample_lambda(cfg.mix, rng)
    donor_cloud, donor_box = donor_frame
    mixed = sotmixup(search, label, donor_cloud, donor_box, lam, rng)
    return _transformed_loss(
        tracker, mixed.cloud, label, template, mixed.lam, mixed.fg_mask, cfg, rng
    )


def supervised_loss(tracker, labeled_frame, cfg: CycleConfig, rng) -> LossReport:
    """Baseline objective: re-locate the labeled object in a randomly moved copy of its frame."""
    search, label = _canonical(*labeled_frame, cfg.search_radius)
    template = Template(object_points(search, label), label)
    return _transformed_loss(tracker, search, label, template, 1.0, None, cfg, rng)


def forward_backward_cycle(tracker, frames, label0: Box7, cfg: CycleConfig, rng, truths=None):
    """Track forward through ``frames[1:]``, then back to frame 0.

    ``frames`` are clouds sharing one coordinate frame; only ``label0`` is
    known. ``truths`` (boxes for every frame) is forwarded solely to trackers
    that declare ``needs_truth``. Returns ``[L_con0, ..., L_con(n-1)]``.
    """
    n = len(frames) - 1
    if n < 1:
        raise ValueError("a forward-backward cycle needs at least two frames")
    unit = unit_box(label0.size)
    first_target = object_points(frames[0], label0)

    def truth_in(k, ref):
        return None if truths is None else box_in_frame(truths[k], ref)

    # forward: plain search areas, template refreshed after each step
    template = Template(first_target, unit)
    refs = [label0]
    target = first_target
    for k in range(1, n + 1):
        prev = refs[-1]
        search = to_box_frame(crop_search_area(frames[k], prev, cfg.search_radius), prev)
        out = _track(tracker, search, template, truth_in(k, prev))
        sel = out.selected
        refs.append(box_from_frame(sel, prev))
        target = to_box_frame(out.predicted_target, sel)
        template = Template(template_update(first_target, target, cfg.template_cap, rng), unit)

    # backward: starts from the last forward target; frame-0 points stay unseen
    back_first = target
    template = Template(back_first, unit)
    reports = [None] * n
    for k in range(n - 1, -1, -1):
        ref = refs[k]
        search = to_box_frame(crop_search_area(frames[k], ref, cfg.search_radius), ref)
        alpha = sample_xform(cfg.xform_bounds, rng)
        moved, pseudo = apply_xform(search, unit, alpha)
        truth = truth_in(k, ref)
        if truth is not None:
            truth = transform_box(truth, alpha)
        out = _track(tracker, moved, template, truth)
        reports[k] = sot_loss(out, pseudo, points_in_box(moved, pseudo), 1.0, cfg.loss)
        target = to_box_frame(out.predicted_target, out.selected)
        template = Template(template_update(back_first, target, cfg.template_cap, rng), unit)
    return reports


# ---------------------------------------------------------------------------
# training data and objectives


@dataclass(frozen=True)
class TrainingItem:
    """One labeled frame, its cycle triplet (if it has two successors) and a donor."""

    frame: tuple  # (cloud, box)
    triplet_clouds: tuple | None
    donor: tuple  # (cloud, box)
    source: tuple
    seed: int


def build_training_items(tracklets, mask, cycle_cfg: CycleConfig, rng) -> list[TrainingItem]:
    """Everything the objectives read, built once so later draws never touch hidden labels."""
    if cycle_cfg.n_steps > 2:
        raise ConfigError("training triplets hold three frames, so n_steps can be 1 or 2")
    labeled = []
    for t in tracklets:
        for i, fr in enumerate(t.frames):
            if mask.is_labeled(t.id, i):
                if fr.label is None:
                    raise ConfigError(f"frame {i} of {t.id!r} is marked labeled but has no box")
                labeled.append((t, i))
    items = []
    for pos, (t, i) in enumerate(labeled):
        fr = t.frames[i]
        trip = make_training_triplet(t, i, cycle_cfg.xform_bounds, rng, cycle_cfg.search_radius)
        clouds = None
        if trip is not None:
            # cycle frames need n_steps successors; the triplet covers n = 2
            clouds = tuple(f.cloud for f in trip.frames[: cycle_cfg.n_steps + 1])
        if len(labeled) > 1:
            j = int(rng.integers(len(labeled) - 1))
            j += j >= pos
        else:
            j = 0
        dt, di = labeled[j]
        donor = (dt.frames[di].cloud, dt.frames[di].label)
        items.append(
            TrainingItem((fr.cloud, fr.label), clouds, donor, (t.id, i), int(rng.integers(2**31)))
        )
    return items


def item_objective(tracker, item: TrainingItem, cycle_cfg: CycleConfig, objective: str) -> float:
    rng = np.random.default_rng(item.seed)
    if objective == "supervised":
        return supervised_loss(tracker, item.frame, cycle_cfg, rng).total
    l_self = self_cycle(tracker, item.frame, item.donor, cycle_cfg, rng)
    box = item.frame[1]
    canon = unit_box(box.size)
    cons = forward_backward_cycle(tracker, item.triplet_clouds, canon, cycle_cfg, rng)
    return mixcycle_loss(l_self, cons[0], cycle_cfg.loss)


def batch_objective(params: GridMatchParams, items, cycle_cfg: CycleConfig, objective: str) -> float:
    tracker = GridTracker(params)
    return float(np.mean([item_objective(tracker, it, cycle_cfg, objective) for it in items]))


# ---------------------------------------------------------------------------
# cross-entropy-method fit


def _normalize(params: GridMatchParams, names, bounds) -> np.ndarray:
    d = params.to_dict()
    out = []
    for n in names:
        lo, hi = bounds[n]
        out.append(0.5 if hi == lo else (d[n] - lo) / (hi - lo))
    return np.clip(np.array(out, dtype=float), 0.0, 1.0)


def _denormalize(z, base: GridMatchParams, names, bounds) -> GridMatchParams:
    d = base.to_dict()
    for n, v in zip(names, z):
        lo, hi = bounds[n]
        d[n] = float(lo + v * (hi - lo))
    d["grid_step"] = min(d["grid_step"], d["grid_extent"])
    return GridMatchParams.from_dict(d)


@dataclass(frozen=True)
class FitResult:
    params: GridMatchParams
    log: list
    initial_loss: float
    best_loss: float

    def log_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.log)


def fit(
    initial: GridMatchParams,
    tracklets,
    mask,
    cycle_cfg: CycleConfig,
    fit_cfg: FitConfig,
    n_jobs: int = 1,
) -> FitResult:
    """Minimize the chosen objective over the tracker's fitted scalars.

    Every candidate is scored on the same seeded mini-batch with the same
    per-item random streams, so objective differences come from the
    parameters alone.
    """
    root = np.random.default_rng(cycle_cfg.seed)
    items = build_training_items(tracklets, mask, cycle_cfg, root)
    if fit_cfg.objective == "mixcycle":
        items = [it for it in items if it.triplet_clouds is not None]
    if not items:
        raise ConfigError("no labeled frame has the successor frames a training sample needs")
    if len(items) > fit_cfg.batch_size:
        pick = np.sort(root.choice(len(items), size=fit_cfg.batch_size, replace=False))
        items = [items[i] for i in pick]

    names = [n for n in GridMatchParams.FITTED if n in fit_cfg.param_bounds]
    bounds = fit_cfg.param_bounds

    def evaluate(z_batch):
        plist = [_denormalize(z, initial, names, bounds) for z in z_batch]
        if n_jobs == 1:
            vals = [batch_objective(p, items, cycle_cfg, fit_cfg.objective) for p in plist]
        else:
            from joblib import Parallel, delayed

            vals = Parallel(n_jobs=n_jobs)(
                delayed(batch_objective)(p, items, cycle_cfg, fit_cfg.objective) for p in plist
            )
        return plist, np.array(vals)

    init_loss = batch_objective(initial, items, cycle_cfg, fit_cfg.objective)
    best_params, best = initial, init_loss
    log = [{"iter": 0, "best": best, "mean": init_loss, "params": initial.to_dict()}]

    mean = _normalize(initial, names, bounds)
    std = np.full(len(names), fit_cfg.init_std)
    cem_rng = np.random.default_rng(root.integers(2**63))
    for it in range(1, fit_cfg.iterations + 1):
        z = np.clip(mean + std * cem_rng.standard_normal((fit_cfg.population, len(names))), 0, 1)
        plist, vals = evaluate(z)
        order = np.argsort(vals, kind="stable")
        if vals[order[0]] < best:
            best, best_params = float(vals[order[0]]), plist[order[0]]
        elite = z[order[: fit_cfg.n_elite]]
        mean = elite.mean(axis=0)
        std = np.maximum(elite.std(axis=0), fit_cfg.min_std)
        log.append(
            {"iter": it, "best": best, "mean": float(vals.mean()), "params": best_params.to_dict()}
        )
    return FitResult(best_params, log, init_loss, best)
