"""Oriented 7-DoF boxes, up-axis rigid transforms and point-cloud geometry.

Point clouds are plain ``(N, 3)`` float64 arrays in meters. Boxes follow the
convention ``size = (width, length, height)`` with the length along the box's
local x-axis (its heading) and the width along local y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PointCloud = np.ndarray

DEFAULT_SEARCH_RADIUS = 2.0
_CONTAIN_EPS = 1e-9


def as_cloud(points) -> PointCloud:
    """Coerce anything array-like into an ``(N, 3)`` float64 cloud."""
    pc = np.asarray(points, dtype=np.float64)
    if pc.size == 0:
        return np.zeros((0, 3))
    if pc.ndim != 2 or pc.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {pc.shape}")
    return pc


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    yaw = float(yaw)
    if -math.pi < yaw <= math.pi:
        return yaw
    wrapped = math.pi - math.fmod(math.pi - yaw, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    elif wrapped > math.pi:
        wrapped -= 2.0 * math.pi
    return wrapped


def rotz(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Box7:
    """Oriented box: center (x, y, z), size (width, length, height), yaw."""

    center: np.ndarray
    size: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        center = np.array(self.center, dtype=np.float64).reshape(3)
        size = np.array(self.size, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(center)) or not np.all(np.isfinite(size)):
            raise ValueError("box center and size must be finite")
        if np.any(size <= 0):
            raise ValueError(f"box size must be strictly positive, got {size.tolist()}")
        center.flags.writeable = False
        size.flags.writeable = False
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @classmethod
    def from_array(cls, values) -> "Box7":
        """Build from ``[cx, cy, cz, w, l, h, yaw]``."""
        v = [float(x) for x in values]
        if len(v) != 7:
            raise ValueError(f"a box needs 7 values, got {len(v)}")
        return cls(v[0:3], v[3:6], v[6])

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.center, self.size, [self.yaw]])

    def to_list(self) -> list[float]:
        return [float(x) for x in self.to_array()]

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))

    def moved(self, center=None, yaw=None) -> "Box7":
        return Box7(
            self.center if center is None else center,
            self.size,
            self.yaw if yaw is None else yaw,
        )

    def enlarged(self, margin: float) -> "Box7":
        """Same pose, each face pushed outward by ``margin``."""
        return Box7(self.center, self.size + 2.0 * margin, self.yaw)

    def bev_corners(self) -> np.ndarray:
        """Footprint corners in counter-clockwise order, shape (4, 2)."""
        w, l, _ = self.size
        local = np.array(
            [[l / 2, w / 2], [-l / 2, w / 2], [-l / 2, -w / 2], [l / 2, -w / 2]]
        )
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center[:2]

    def __eq__(self, other):
        if not isinstance(other, Box7):
            return NotImplemented
        return (
            np.array_equal(self.center, other.center)
            and np.array_equal(self.size, other.size)
            and self.yaw == other.yaw
        )

    def __repr__(self):
        c = ", ".join(f"{x:.4g}" for x in self.center)
        s = ", ".join(f"{x:.4g}" for x in self.size)
        return f"Box7(center=({c}), size=({s}), yaw={self.yaw:.4g})"


def unit_box(size, yaw: float = 0.0) -> Box7:
    """A box of the given size sitting at the origin."""
    return Box7(np.zeros(3), size, yaw)


@dataclass(frozen=True)
class RigidXform:
    """Rotation ``dtheta`` about the up-axis through the origin, then translation."""

    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    dtheta: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.dx, self.dy, self.dz, self.dtheta)):
            raise ValueError("transform components must be finite")

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz])

    def is_identity(self) -> bool:
        return self.dx == 0 and self.dy == 0 and self.dz == 0 and self.dtheta == 0

    def inverse(self) -> "RigidXform":
        # p = R^T (p' - t) = R(-theta) p' - R(-theta) t
        t = rotz(-self.dtheta) @ self.translation
        return RigidXform(-t[0], -t[1], -t[2], -self.dtheta)


@dataclass(frozen=True)
class XformBounds:
    max_dx: float = 0.0
    max_dy: float = 0.0
    max_dz: float = 0.0
    max_dtheta: float = 0.0

    def __post_init__(self):
        if min(self.max_dx, self.max_dy, self.max_dz, self.max_dtheta) < 0:
            raise ValueError("transform bounds must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.max_dx, self.max_dy, self.max_dz, self.max_dtheta])


# (0.3 m, 0.3 m, 0 m, 5 degrees)
DEFAULT_XFORM_BOUNDS = XformBounds(0.3, 0.3, 0.0, math.radians(5.0))
ZERO_XFORM_BOUNDS = XformBounds()


def transform_points(pc: PointCloud, t: RigidXform) -> PointCloud:
    pc = as_cloud(pc)
    if t.is_identity():
        return pc.copy()
    return pc @ rotz(t.dtheta).T + t.translation


def transform_box(box: Box7, t: RigidXform) -> Box7:
    if t.is_identity():
        return box
    center = rotz(t.dtheta) @ box.center + t.translation
    return Box7(center, box.size, box.yaw + t.dtheta)


def apply_xform(pc: PointCloud, box: Box7, t: RigidXform) -> tuple[PointCloud, Box7]:
    """Move a cloud and its box together by the same rigid transform."""
    return transform_points(pc, t), transform_box(box, t)


def sample_xform(bounds: XformBounds, rng: np.random.Generator) -> RigidXform:
    """Draw each component uniformly in ``[-bound, +bound]``."""
    b = bounds.as_array()
    u = rng.uniform(-1.0, 1.0, size=4)
    v = u * b
    # keep degenerate bounds exactly zero (no signed zeros leaking through)
    v[b == 0] = 0.0
    return RigidXform(*(float(x) for x in v))


def to_box_frame(pc: PointCloud, box: Box7) -> PointCloud:
    """Express points in the box's local frame (box center at origin, yaw 0)."""
    pc = as_cloud(pc)
    if box.yaw == 0 and not np.any(box.center):
        return pc.copy()
    return (pc - box.center) @ rotz(-box.yaw).T


def from_box_frame(pc: PointCloud, box: Box7) -> PointCloud:
    """Inverse of :func:`to_box_frame`."""
    pc = as_cloud(pc)
    if box.yaw == 0 and not np.any(box.center):
        return pc.copy()
    return pc @ rotz(box.yaw).T + box.center


def box_in_frame(box: Box7, ref: Box7) -> Box7:
    """Pose of ``box`` expressed in the local frame of ``ref``."""
    center = rotz(-ref.yaw) @ (box.center - ref.center)
    return Box7(center, box.size, box.yaw - ref.yaw)


def box_from_frame(box: Box7, ref: Box7) -> Box7:
    """Inverse of :func:`box_in_frame`."""
    center = rotz(ref.yaw) @ box.center + ref.center
    return Box7(center, box.size, box.yaw + ref.yaw)


def points_in_box(pc: PointCloud, box: Box7) -> np.ndarray:
    """Boolean mask of points inside the oriented box, boundary inclusive."""
    pc = as_cloud(pc)
    if len(pc) == 0:
        return np.zeros(0, dtype=bool)
    local = to_box_frame(pc, box)
    w, l, h = box.size
    half = np.array([l / 2, w / 2, h / 2]) + _CONTAIN_EPS
    return np.all(np.abs(local) <= half, axis=1)


def crop_search_area(
    pc: PointCloud, ref_box: Box7, radius: float = DEFAULT_SEARCH_RADIUS
) -> PointCloud:
    """Keep points within the reference box grown by ``radius`` on every side."""
    if radius <= 0:
        raise ValueError("search radius must be positive")
    pc = as_cloud(pc)
    return pc[points_in_box(pc, ref_box.enlarged(radius))]


def signed_distance_to_box(pc: PointCloud, box: Box7) -> np.ndarray:
    """Approximate signed distance to the box surface (negative inside)."""
    local = np.abs(to_box_frame(pc, box))
    w, l, h = box.size
    q = local - np.array([l / 2, w / 2, h / 2])
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    inside = np.minimum(q.max(axis=1), 0.0)
    return outside + inside


def _clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of a polygon by a convex CCW polygon."""
    output = list(subject)
    n = len(clipper)
    for i in range(n):
        if not output:
            break
        a, b = clipper[i], clipper[(i + 1) % n]
        edge = b - a
        inputs, output = output, []

        def side(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])

        prev = inputs[-1]
        s_prev = side(prev)
        for cur in inputs:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    output.append(prev + (cur - prev) * (s_prev / (s_prev - s_cur)))
                output.append(cur)
            elif s_prev >= 0:
                output.append(prev + (cur - prev) * (s_prev / (s_prev - s_cur)))
            prev, s_prev = cur, s_cur
    return np.array(output).reshape(-1, 2)


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def bev_intersection_area(a: Box7, b: Box7) -> float:
    # clipping can emit tiny negative areas for numerically parallel edges
    return max(polygon_area(_clip_polygon(a.bev_corners(), b.bev_corners())), 0.0)


def box_iou_3d(a: Box7, b: Box7) -> float:
    """Volume IoU of two oriented boxes (up-axis rotation only)."""
    za = (a.center[2] - a.size[2] / 2, a.center[2] + a.size[2] / 2)
    zb = (b.center[2] - b.size[2] / 2, b.center[2] + b.size[2] / 2)
    dz = min(za[1], zb[1]) - max(za[0], zb[0])
    if dz <= 0:
        return 0.0
    # cheap reject on circumscribed circles
    ra = 0.5 * math.hypot(a.size[0], a.size[1])
    rb = 0.5 * math.hypot(b.size[0], b.size[1])
    if np.linalg.norm(a.center[:2] - b.center[:2]) > ra + rb:
        return 0.0
    inter = bev_intersection_area(a, b) * dz
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def center_distance(a: Box7, b: Box7) -> float:
    return float(np.linalg.norm(a.center - b.center))
