"""Acceptance criteria; each test records its criterion number and a one-line detail."""

import time

import numpy as np
import pytest

from conftest import random_box
from mixcycle.benchmark import BenchmarkConfig, RUN_SEEDS, run_benchmark
from mixcycle.cli import main
from mixcycle.cycles import CycleConfig, forward_backward_cycle, self_cycle
from mixcycle.dataio import SuiteConfig, Template, make_training_triplet, object_points, synth_suite
from mixcycle.evaluation import precision_auc, run_ope, success_auc, summarize
from mixcycle.geometry import (
    DEFAULT_XFORM_BOUNDS,
    ZERO_XFORM_BOUNDS,
    Box7,
    box_iou_3d,
    crop_search_area,
    from_box_frame,
    points_in_box,
    to_box_frame,
    unit_box,
)
from mixcycle.losses import LossConfig, sot_loss
from mixcycle.sotmixup import MixConfig, sample_lambda, segment_fg_bg, sotmixup
from mixcycle.tracking import GridTracker, OracleTracker, TrackerOutput


def _record(record_property, n, detail):
    record_property("criterion", n)
    record_property("detail", detail)


def _mc_iou(a: Box7, b: Box7, n: int, rng) -> float:
    local = (rng.random((n, 3)) - 0.5) * np.array([a.size[1], a.size[0], a.size[2]])
    inside_b = points_in_box(from_box_frame(local, a), b).mean()
    va, vb = np.prod(a.size), np.prod(b.size)
    inter = inside_b * va
    return inter / (va + vb - inter)


def test_criterion_1_iou_matches_monte_carlo(record_property):
    rng = np.random.default_rng(101)
    t0 = time.time()
    worst = 0.0
    for _ in range(100):
        a = random_box(rng, 0.5)
        b = random_box(rng, 0.5)
        worst = max(worst, abs(box_iou_3d(a, b) - _mc_iou(a, b, 10**6, rng)))
    dt = time.time() - t0
    _record(record_property, 1, f"max |iou - mc| = {worst:.4f} over 100 pairs, {dt:.1f}s")
    assert worst <= 0.01 and dt < 60


def _rows(a):
    return sorted(map(tuple, a))


def test_criterion_2_sotmixup_exactness(record_property):
    rng = np.random.default_rng(202)
    _record(record_property, 2, "failed during the 1000-input sweep")
    checked = 0
    for _ in range(1000):
        box_a, box_b = random_box(rng), random_box(rng)
        n_in_a, n_in_b = rng.integers(0, 80, 2)
        pa = np.vstack([
            from_box_frame((rng.random((n_in_a, 3)) - 0.5) * 0.95 * np.array([box_a.size[1], box_a.size[0], box_a.size[2]]), box_a),
            rng.uniform(-30, 30, (rng.integers(0, 60), 3)) + 40,
        ])
        pb = np.vstack([
            from_box_frame((rng.random((n_in_b, 3)) - 0.5) * 0.95 * np.array([box_b.size[1], box_b.size[0], box_b.size[2]]), box_b),
            rng.uniform(-30, 30, (rng.integers(0, 60), 3)) + 40,
        ])
        obj_a, bg_a = segment_fg_bg(pa, box_a)
        lam = float(rng.random())
        m = sotmixup(pa, box_a, pb, box_b, lam, rng)
        assert len(m.cloud) == len(bg_a) + len(obj_a)
        one = sotmixup(pa, box_a, pb, box_b, 1.0, rng)
        assert _rows(one.cloud[one.fg_mask]) == _rows(obj_a)
        assert _rows(one.cloud) == _rows(pa)
        if len(obj_a) and len(segment_fg_bg(pb, box_b)[0]):
            zero = sotmixup(pa, box_a, pb, box_b, 0.0, rng)
            donor = {tuple(r) for r in from_box_frame(to_box_frame(segment_fg_bg(pb, box_b)[0], box_b), box_a)}
            region = zero.cloud[zero.n_background :]
            assert zero.k_a == 0 and len(region) == len(obj_a)
            assert all(tuple(r) in donor for r in region)
            checked += 1
    _record(record_property, 2, f"1000 inputs exact; lambda=0 donor check on {checked} with both objects present")


def _batch(rng, centers):
    n = len(centers)
    boxes = np.column_stack([centers, np.tile([1.8, 4.2, 1.6], (n, 1)), np.zeros(n)])
    scores = rng.uniform(0.02, 0.98, n)
    return TrackerOutput(boxes, scores, rng.uniform(0.02, 0.98, 40), int(np.argmax(scores)), np.zeros((0, 3)))


def test_criterion_3_lambda_weighting(record_property):
    rng = np.random.default_rng(303)
    gt = Box7([0, 0, 0], [1.8, 4.2, 1.6])
    cfg = LossConfig()
    pos_err = neg_err = 0.0
    for _ in range(50):
        out = _batch(rng, rng.uniform(-0.1, 0.1, (30, 3)))
        base = sot_loss(out, gt, np.ones(40, bool), 1.0, cfg)
        neg = _batch(rng, rng.uniform(2.0, 5.0, (30, 3)))
        neg_base = sot_loss(neg, gt, np.zeros(40, bool), 1.0, cfg)
        for lam in rng.random(5):
            r = sot_loss(out, gt, np.ones(40, bool), lam, cfg)
            pos_err = max(pos_err, abs(r.l_prop - lam * base.l_prop), abs(r.l_cla - lam * base.l_cla))
            rn = sot_loss(neg, gt, np.zeros(40, bool), lam, cfg)
            neg_err = max(neg_err, abs(rn.l_prop - neg_base.l_prop), abs(rn.l_cla - neg_base.l_cla))
    _record(record_property, 3, f"positive err {pos_err:.2e}, negative err {neg_err:.2e}")
    assert pos_err <= 1e-9 and neg_err <= 1e-12


def test_criterion_4_oracle_sanity(record_property):
    tracklets = synth_suite(SuiteConfig(n_tracklets=20, n_frames=20), 404)
    mean = summarize([run_ope(OracleTracker(), t) for t in tracklets])[-1]
    rng = np.random.default_rng(4)
    cfg = CycleConfig()
    worst = 0.0
    n_cycles = 0
    for i, t in enumerate(tracklets):
        donor = tracklets[(i + 1) % len(tracklets)].frames[0]
        for f in (0, 7, 15):
            fr = t.frames[f]
            rep = self_cycle(OracleTracker(), (fr.cloud, fr.label), (donor.cloud, donor.label), cfg, rng)
            worst = max(worst, rep.l_box, rep.l_reg)
            trip = make_training_triplet(t, f, DEFAULT_XFORM_BOUNDS, rng, keep_hidden=True)
            reps = forward_backward_cycle(
                OracleTracker(), [x.cloud for x in trip.frames], trip.label, cfg, rng, truths=trip.hidden
            )
            worst = max([worst] + [max(r.l_box, r.l_reg) for r in reps])
            n_cycles += 1 + len(reps)
    _record(
        record_property,
        4,
        f"Success {mean.success:.2f}, Precision {mean.precision:.2f}; max l_box/l_reg {worst} over {n_cycles} cycles",
    )
    assert mean.success >= 99 and mean.precision >= 99 and worst == 0.0


def test_criterion_5_cycle_reduction(record_property):
    tracklets = synth_suite(SuiteConfig(n_tracklets=10, n_frames=5), 505)
    cfg = CycleConfig(xform_bounds=ZERO_XFORM_BOUNDS)
    worst = 0.0
    for i, t in enumerate(tracklets):
        cloud, box = t.frames[0].cloud, t.frames[0].label
        donor = tracklets[(i + 1) % len(tracklets)].frames[0]
        tracker = GridTracker()
        rep = self_cycle(tracker, (cloud, box), (donor.cloud, donor.label), cfg, np.random.default_rng(i), lam=1.0)
        search = to_box_frame(crop_search_area(cloud, box), box)
        label = unit_box(box.size)
        out = tracker.track(search, Template(object_points(search, label), label))
        plain = sot_loss(out, label, points_in_box(search, label), 1.0, cfg.loss)
        for k in ("l_cla", "l_prop", "l_reg", "l_box", "total"):
            worst = max(worst, abs(getattr(rep, k) - getattr(plain, k)))
    _record(record_property, 5, f"max term difference {worst:.2e} over 10 frames")
    assert worst <= 1e-9


def test_criterion_6_semi_supervised_gain(record_property):
    t0 = time.time()
    outcomes = run_benchmark(RUN_SEEDS, BenchmarkConfig())
    dt = time.time() - t0
    sup = np.array([o.supervised_success for o in outcomes])
    mix = np.array([o.mixcycle_success for o in outcomes])
    gain = float(np.mean(mix - sup))
    per_seed = " ".join(f"{g:+.1f}" for g in mix - sup)
    _record(
        record_property,
        6,
        f"Success supervised {sup.mean():.2f} vs cycle {mix.mean():.2f}, mean gain {gain:+.2f} "
        f"(per seed {per_seed}), {dt / 60:.1f} min",
    )
    assert mix.mean() > sup.mean() and gain >= 2.0 and dt < 15 * 60


def test_criterion_7_metric_closed_forms(record_property):
    s = success_auc(np.full(50, 0.5))
    p = precision_auc(np.full(50, 1.0))
    rng = np.random.default_rng(707)
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        ious, d = rng.random(n), rng.uniform(0, 3, n)
        k = rng.integers(n)
        up, down = ious.copy(), d.copy()
        up[k] = min(1.0, up[k] + rng.random())
        down[k] = max(0.0, down[k] - rng.random())
        violations += success_auc(up) < success_auc(ious)
        violations += precision_auc(down) < precision_auc(d)
    _record(record_property, 7, f"success(0.5) = {s:.2f}, precision(1 m) = {p:.2f}, {violations} monotonicity violations")
    assert abs(s - 50) <= 1 and abs(p - 50) <= 1 and violations == 0


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_criterion_8_determinism(record_property, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n_tracklets = 4\nn_frames = 8\npopulation = 6\niterations = 2\nbatch_size = 4\n")
    data, labels = tmp_path / "data", tmp_path / "labels"
    assert main(["synth", "--config", str(cfg), "--seed", "8", "--out", str(data)]) == 0
    assert main(["sample-labels", "--dataset", str(data), "--rate", "0.25", "--seed", "8", "--out", str(labels)]) == 0
    mask = labels / "label_mask.json"
    out = {}
    for run in ("a", "b"):
        tr, ev = tmp_path / run / "train", tmp_path / run / "eval"
        assert main(["train", "--config", str(cfg), "--dataset", str(data), "--mask", str(mask), "--seed", "8", "--out", str(tr)]) == 0
        params = tmp_path / "a" / "train" / "params.json"
        assert main(["eval", "--config", str(cfg), "--dataset", str(data), "--params", str(params), "--seed", "8", "--out", str(ev)]) == 0
        out[run] = (_files(tr), _files(ev))
    same_train = out["a"][0] == out["b"][0]
    same_eval = out["a"][1] == out["b"][1]
    n = len(out["a"][0]) + len(out["a"][1])
    _record(record_property, 8, f"train identical: {same_train}, eval identical: {same_eval} ({n} files)")
    assert same_train and same_eval


def test_criterion_9_beta_sampler(record_property):
    rng = np.random.default_rng(909)
    draws = np.array([sample_lambda(MixConfig(eta=0.5), rng) for _ in range(10**5)])
    m, v = draws.mean(), draws.var()
    _record(record_property, 9, f"mean {m:.4f}, variance {v:.4f}")
    assert abs(m - 0.5) <= 0.02 and abs(v - 0.125) <= 0.01
