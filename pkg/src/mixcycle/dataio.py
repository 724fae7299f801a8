"""Tracklets, KITTI-style ingestion, label sampling and training-sample plumbing."""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import LoadError, ParseError
from .geometry import (
    DEFAULT_SEARCH_RADIUS,
    Box7,
    PointCloud,
    XformBounds,
    as_cloud,
    box_from_frame,
    box_in_frame,
    crop_search_area,
    points_in_box,
    rotz,
    sample_xform,
    to_box_frame,
    transform_box,
    unit_box,
)

DEFAULT_TEMPLATE_CAP = 512


@dataclass(frozen=True)
class Frame:
    cloud: PointCloud
    label: Box7 | None
    frame_index: int

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        object.__setattr__(self, "cloud", as_cloud(self.cloud))


@dataclass(frozen=True)
class Tracklet:
    frames: tuple
    category: str
    id: str

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError(f"tracklet {self.id!r} has no frames")
        idx = [f.frame_index for f in frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"tracklet {self.id!r}: frame indices must strictly increase")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class Template:
    """Target appearance in its own box frame plus the box it is tracked with."""

    cloud: PointCloud
    prior_box: Box7

    def __post_init__(self):
        object.__setattr__(self, "cloud", as_cloud(self.cloud))


@dataclass
class LabelMask:
    """Which frames may be used as labeled training data."""

    flags: dict[str, np.ndarray]
    sampling_rate: float
    seed: int

    def is_labeled(self, tracklet_id: str, position: int) -> bool:
        return bool(self.flags[tracklet_id][position])

    @property
    def n_labeled(self) -> int:
        return int(sum(int(v.sum()) for v in self.flags.values()))

    @property
    def n_frames(self) -> int:
        return int(sum(len(v) for v in self.flags.values()))

    def to_json(self) -> str:
        payload = {
            "sampling_rate": self.sampling_rate,
            "seed": self.seed,
            "flags": {k: [bool(x) for x in v] for k, v in self.flags.items()},
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LabelMask":
        d = json.loads(text)
        flags = {k: np.asarray(v, dtype=bool) for k, v in d["flags"].items()}
        return cls(flags, float(d["sampling_rate"]), int(d["seed"]))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_labels(tracklets, rate: float, seed: int) -> LabelMask:
    """Mark ``max(1, round(rate * N))`` frames as labeled, sampled over the whole pool."""
    if not (0.0 < rate <= 1.0):
        raise ValueError(f"sampling rate must lie in (0, 1], got {rate}")
    pool = [(t.id, i) for t in tracklets for i in range(len(t))]
    flags = {t.id: np.zeros(len(t), dtype=bool) for t in tracklets}
    if pool:
        k = min(len(pool), max(1, _round_half_up(rate * len(pool))))
        rng = np.random.default_rng(seed)
        for j in rng.choice(len(pool), size=k, replace=False):
            tid, i = pool[j]
            flags[tid][i] = True
    return LabelMask(flags, float(rate), int(seed))


def strip_unlabeled(tracklets, mask: LabelMask) -> list[Tracklet]:
    """Copies of the tracklets with every unlabeled frame's box removed."""
    out = []
    for t in tracklets:
        frames = [
            f if mask.is_labeled(t.id, i) else replace(f, label=None)
            for i, f in enumerate(t.frames)
        ]
        out.append(Tracklet(tuple(frames), t.category, t.id))
    return out


def template_update(
    first_target: PointCloud,
    prev_pred_target: PointCloud,
    cap: int = DEFAULT_TEMPLATE_CAP,
    rng: np.random.Generator | None = None,
) -> PointCloud:
    """Merge the first-frame target with the latest prediction, capped at ``cap`` points."""
    if cap <= 0:
        raise ValueError("template cap must be positive")
    merged = np.concatenate([as_cloud(first_target), as_cloud(prev_pred_target)])
    if len(merged) <= cap:
        return merged
    rng = np.random.default_rng(0) if rng is None else rng
    keep = np.sort(rng.choice(len(merged), size=cap, replace=False))
    return merged[keep]


def object_points(cloud: PointCloud, box: Box7) -> PointCloud:
    """Points inside ``box``, expressed in the box frame."""
    cloud = as_cloud(cloud)
    return to_box_frame(cloud[points_in_box(cloud, box)], box)


@dataclass(frozen=True)
class TrainingTriplet:
    """Three consecutive search areas in the object frame of the labeled first frame.

    ``frames[0].label`` is the labeled box (a unit box at the origin); the
    other frames carry no label. ``hidden`` holds the true boxes of all three
    frames and is only filled for test harnesses that ask for it.
    """

    frames: tuple
    source: tuple
    hidden: tuple | None = None

    @property
    def label(self) -> Box7:
        return self.frames[0].label


def make_training_triplet(
    tracklet: Tracklet,
    labeled_index: int,
    bounds: XformBounds,
    rng: np.random.Generator,
    radius: float = DEFAULT_SEARCH_RADIUS,
    keep_hidden: bool = False,
) -> TrainingTriplet | None:
    """Crop frames f, f+1, f+2 for a cycle. Returns None when f+2 is past the end."""
    f = labeled_index
    if f < 0 or f + 2 >= len(tracklet.frames):
        return None
    first = tracklet.frames[f]
    gt = first.label
    if gt is None:
        raise ValueError(f"frame {f} of tracklet {tracklet.id!r} carries no label")
    label0 = unit_box(gt.size)
    frames = [Frame(to_box_frame(crop_search_area(first.cloud, gt, radius), gt), label0, 0)]
    for j in (1, 2):
        # objects barely move between neighbouring frames: crop around a jittered copy of B_f
        jittered = box_from_frame(transform_box(label0, sample_xform(bounds, rng)), gt)
        raw = tracklet.frames[f + j].cloud
        frames.append(Frame(to_box_frame(crop_search_area(raw, jittered, radius), gt), None, j))
    hidden = None
    if keep_hidden:
        hidden = tuple(
            [label0] + [box_in_frame(tracklet.frames[f + j].label, gt) for j in (1, 2)]
        )
    return TrainingTriplet(tuple(frames), (tracklet.id, f), hidden)


# ---------------------------------------------------------------------------
# binary clouds and the JSON-lines manifest


def read_cloud_bin(path) -> PointCloud:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise LoadError(path) from exc
    if len(data) % 16:
        raise ParseError(
            path, 0, f"{len(data)} bytes is not a whole number of 4-float (x,y,z,i) records"
        )
    raw = np.frombuffer(data, dtype="<f4")
    return raw.reshape(-1, 4)[:, :3].astype(np.float64)


def write_cloud_bin(path, cloud: PointCloud) -> None:
    cloud = as_cloud(cloud)
    rec = np.zeros((len(cloud), 4), dtype="<f4")
    rec[:, :3] = cloud
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    rec.tofile(path)


def _split_id(tid: str) -> tuple[str, str]:
    seq, _, track = tid.partition(":")
    return seq, track or "0"


def write_dataset(tracklets, out_dir) -> Path:
    """Write clouds as ``.bin`` files and one manifest line per frame."""
    out_dir = Path(out_dir)
    (out_dir / "clouds").mkdir(parents=True, exist_ok=True)
    lines = []
    for t in tracklets:
        seq, track = _split_id(t.id)
        for fr in t.frames:
            rel = f"clouds/{seq}_{track}_{fr.frame_index:06d}.bin"
            write_cloud_bin(out_dir / rel, fr.cloud)
            lines.append(
                json.dumps(
                    {
                        "seq": seq,
                        "frame": fr.frame_index,
                        "cloud_path": rel,
                        "box": None if fr.label is None else fr.label.to_list(),
                        "track_id": track,
                        "category": t.category,
                    }
                )
            )
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("".join(line + "\n" for line in lines))
    return manifest


_MANIFEST_KEYS = ("seq", "frame", "cloud_path", "box", "track_id", "category")


def load_kitti_tracklets(scene_dir, manifest) -> list[Tracklet]:
    """Read a JSON-lines manifest; one tracklet per (sequence, track id)."""
    scene_dir, manifest = Path(scene_dir), Path(manifest)
    try:
        text = manifest.read_text()
    except OSError as exc:
        raise LoadError(manifest) from exc

    groups: OrderedDict = OrderedDict()
    clouds: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(manifest, lineno, f"invalid JSON ({exc.msg})") from exc
        if not isinstance(rec, dict):
            raise ParseError(manifest, lineno, "expected a JSON object")
        missing = [k for k in _MANIFEST_KEYS if k not in rec]
        if missing:
            raise ParseError(manifest, lineno, f"missing keys {missing}")
        box = rec["box"]
        try:
            label = None if box is None else Box7.from_array(box)
            frame_index = int(rec["frame"])
        except (TypeError, ValueError) as exc:
            raise ParseError(manifest, lineno, f"bad label: {exc}") from exc
        path = scene_dir / rec["cloud_path"]
        if path not in clouds:
            clouds[path] = read_cloud_bin(path)
        key = (str(rec["seq"]), str(rec["track_id"]))
        entry = groups.setdefault(key, {"category": str(rec["category"]), "frames": []})
        entry["frames"].append(Frame(clouds[path], label, frame_index))

    out = []
    for (seq, track), entry in groups.items():
        frames = sorted(entry["frames"], key=lambda fr: fr.frame_index)
        out.append(Tracklet(tuple(frames), entry["category"], f"{seq}:{track}"))
    return out


# ---------------------------------------------------------------------------
# synthetic sequences


@dataclass(frozen=True)
class SynthConfig:
    """One synthetic object moving on flat ground, with clutter and distractors.

    ``velocity`` is in the object's own heading frame (m/frame); ``yaw_rate``
    is rad/frame. Clutter is spread uniformly over the trajectory footprint
    grown by ``arena_margin`` and up to ``arena_height``.
    """

    category: str = "car"
    size: tuple = (1.8, 4.2, 1.6)
    n_points: int = 200
    velocity: tuple = (0.0, 0.0, 0.0)
    yaw_rate: float = 0.0
    n_frames: int = 20
    start_center: tuple = (0.0, 0.0)
    start_yaw: float = 0.0
    clutter_density: float = 0.0  # points per square meter
    arena_margin: float = 6.0
    arena_height: float = 3.0
    dropout: float = 0.0
    noise_std: float = 0.0
    n_distractors: int = 0
    distractor_gap: tuple = (2.0, 3.0)  # lateral center offset range, meters
    surface_inset: float = 0.05  # shape sits this far inside the label box

    def __post_init__(self):
        if self.n_frames < 1 or self.n_points < 0:
            raise ValueError("n_frames must be >= 1 and n_points >= 0")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must lie in [0, 1)")


def sample_box_surface(size, n: int, rng: np.random.Generator) -> PointCloud:
    """Points uniform over the surface of a box centered at the origin."""
    w, l, h = size
    half = np.array([l / 2, w / 2, h / 2])
    # face areas for the +-x, +-y, +-z pairs
    areas = np.array([w * h, l * h, l * w])
    axis = rng.choice(3, size=n, p=areas / areas.sum())
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    sign = rng.choice([-1.0, 1.0], size=n)
    pts[np.arange(n), axis] = sign * half[axis]
    return pts


def _float32_exact(pc: np.ndarray) -> np.ndarray:
    # clouds survive the .bin round trip bit-for-bit
    return pc.astype(np.float32).astype(np.float64)


def synth_sequence(cfg: SynthConfig, seed: int, tracklet_id: str = "synth:0") -> Tracklet:
    rng = np.random.default_rng(seed)
    size = np.asarray(cfg.size, dtype=float)
    shape_size = np.maximum(size - 2.0 * cfg.surface_inset, 1e-3)
    shape = sample_box_surface(shape_size, cfg.n_points, rng)

    centers, yaws = [], []
    c = np.array([cfg.start_center[0], cfg.start_center[1], size[2] / 2])
    yaw = cfg.start_yaw
    vel = np.asarray(cfg.velocity, dtype=float)
    for _ in range(cfg.n_frames):
        centers.append(c.copy())
        yaws.append(yaw)
        c = c + rotz(yaw) @ vel
        yaw = yaw + cfg.yaw_rate
    labels = [Box7(cc, size, yy) for cc, yy in zip(centers, yaws)]

    distractors = []
    for _ in range(cfg.n_distractors):
        k = int(rng.integers(cfg.n_frames))
        gap = rng.uniform(*cfg.distractor_gap) * rng.choice([-1.0, 1.0])
        pos = centers[k] + rotz(yaws[k]) @ np.array([rng.uniform(-1.0, 1.0), gap, 0.0])
        dbox = Box7(pos, size, yaws[k] + rng.normal(0.0, 0.1))
        distractors.append((dbox, sample_box_surface(shape_size, cfg.n_points, rng)))

    xy = np.array(centers)[:, :2]
    lo = xy.min(axis=0) - cfg.arena_margin
    hi = xy.max(axis=0) + cfg.arena_margin
    n_clutter = _round_half_up(cfg.clutter_density * float(np.prod(hi - lo)))

    frames = []
    for k, box in enumerate(labels):
        parts = []
        for b, pts in [(box, shape)] + distractors:
            keep = rng.random(len(pts)) >= cfg.dropout
            local = pts[keep]
            if cfg.noise_std > 0:
                local = local + rng.normal(0.0, cfg.noise_std, size=local.shape)
            parts.append(local @ rotz(b.yaw).T + b.center)
        if n_clutter:
            clutter = np.column_stack(
                [
                    rng.uniform(lo[0], hi[0], n_clutter),
                    rng.uniform(lo[1], hi[1], n_clutter),
                    rng.uniform(0.0, cfg.arena_height, n_clutter),
                ]
            )
            parts.append(clutter)
        frames.append(Frame(_float32_exact(np.concatenate(parts)), box, k))
    return Tracklet(tuple(frames), cfg.category, tracklet_id)


@dataclass(frozen=True)
class SuiteConfig:
    """Ranges from which per-tracklet :class:`SynthConfig` values are drawn."""

    n_tracklets: int = 10
    n_frames: int = 20
    categories: tuple = ("car",)
    width_m: tuple = (1.6, 2.0)
    length_m: tuple = (3.8, 4.8)
    height_m: tuple = (1.4, 1.8)
    n_points: tuple = (80, 250)
    speed_m_per_frame: tuple = (0.2, 1.2)
    yaw_rate_deg_per_frame: tuple = (-2.0, 2.0)
    clutter_density_per_m2: float = 1.0
    dropout: tuple = (0.1, 0.4)
    noise_std_m: float = 0.02
    n_distractors: tuple = (0, 3)
    distractor_gap_m: tuple = (2.0, 3.0)
    arena_margin_m: float = 6.0


def synth_suite(cfg: SuiteConfig, seed: int) -> list[Tracklet]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(cfg.n_tracklets):
        category = cfg.categories[int(rng.integers(len(cfg.categories)))]
        scfg = SynthConfig(
            category=category,
            size=(
                rng.uniform(*cfg.width_m),
                rng.uniform(*cfg.length_m),
                rng.uniform(*cfg.height_m),
            ),
            n_points=int(rng.integers(cfg.n_points[0], cfg.n_points[1] + 1)),
            velocity=(rng.uniform(*cfg.speed_m_per_frame), 0.0, 0.0),
            yaw_rate=math.radians(rng.uniform(*cfg.yaw_rate_deg_per_frame)),
            n_frames=cfg.n_frames,
            start_center=(rng.uniform(-20, 20), rng.uniform(-20, 20)),
            start_yaw=rng.uniform(-math.pi, math.pi),
            clutter_density=cfg.clutter_density_per_m2,
            arena_margin=cfg.arena_margin_m,
            dropout=rng.uniform(*cfg.dropout),
            noise_std=cfg.noise_std_m,
            n_distractors=int(rng.integers(cfg.n_distractors[0], cfg.n_distractors[1] + 1)),
            distractor_gap=cfg.distractor_gap_m,
        )
        out.append(synth_sequence(scfg, int(rng.integers(2**31)), f"syn{i:04d}:0"))
    return out


__all__ = [
    "DEFAULT_TEMPLATE_CAP",
    "Frame",
    "LabelMask",
    "SuiteConfig",
    "SynthConfig",
    "Template",
    "TrainingTriplet",
    "Tracklet",
    "load_kitti_tracklets",
    "make_training_triplet",
    "object_points",
    "read_cloud_bin",
    "sample_box_surface",
    "sample_labels",
    "strip_unlabeled",
    "synth_sequence",
    "synth_suite",
    "template_update",
    "write_cloud_bin",
    "write_dataset",
]
