"""Synthetic two-view scene generation with ground-truth labels.

Scenes live in a z-up world frame with the road plane at z = 0. Ground
points are sampled by casting previous-frame pixel rays onto the road, so
static road correspondences are exact; object points are sampled from
axis-aligned boxes advected by a per-frame velocity. Everything is
deterministic for a given seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import (
    CameraIntrinsics,
    RoadFrame,
    horizon_direction,
    project_many,
    unproject_many,
)
from .constraints import CameraPose
from .triangulate import triangulate_rays

CATEGORIES = (
    "crossing",
    "overtaking",
    "preceding",
    "approaching",
    "static-obstacle",
    "static-ego",
)

# velocity-direction tolerance for category validation
ANGLE_TOL_DEG = 10.0


class SceneError(Exception):
    """Scene specification or generation failure."""


class EmptySceneError(SceneError):
    """No sample projects into both frames."""


@dataclass(frozen=True)
class ObjectSpec:
    """Axis-aligned box of sample points moving at a constant velocity."""

    category: str
    center: np.ndarray
    size: np.ndarray
    velocity: np.ndarray
    sample_step: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "size", np.asarray(self.size, dtype=float).reshape(3))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3))
        if self.category not in CATEGORIES:
            raise SceneError(f"objects.category: unknown category {self.category!r}")
        if np.any(self.size <= 0):
            raise SceneError("objects.size: box extents must be positive")
        if self.sample_step <= 0:
            raise SceneError("objects.sample_step: must be positive")

    def points(self) -> np.ndarray:
        axes = []
        for lo, hi, ext in zip(self.center - self.size / 2, self.center + self.size / 2, self.size):
            n = max(2, int(math.floor(ext / self.sample_step)) + 1)
            axes.append(np.linspace(lo, hi, n))
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=-1)


@dataclass
class SceneSpec:
    """Full description of a synthetic scene."""

    intrinsics: CameraIntrinsics
    road_frame: RoadFrame
    poses: list[CameraPose]
    objects: list[ObjectSpec] = field(default_factory=list)
    frames: int = 1
    seed: int = 0
    noise_sigma: float = 0.0
    ground_pixel_stride: int = 5
    ground_max_distance: float = 14.0
    name: str = "scene"

    def __post_init__(self):
        if self.frames < 1:
            raise SceneError("frames: must be at least 1")
        if len(self.poses) != self.frames + 1:
            raise SceneError(
                f"ego.poses: need frames+1 = {self.frames + 1} poses, got {len(self.poses)}"
            )
        if self.noise_sigma < 0:
            raise SceneError("noise_sigma: must be non-negative")
        if self.ground_pixel_stride < 1:
            raise SceneError("ground.pixel_stride: must be at least 1")
        self._validate_world_frame()
        self._validate_categories()

    def _validate_world_frame(self):
        h = horizon_direction(self.road_frame)
        if not np.allclose(h, [0.0, 0.0, -1.0], atol=1e-9):
            raise SceneError("camera.r_c: simulator requires a z-up world (h = (0,0,-1))")
        for i, pose in enumerate(self.poses):
            if abs(pose.c[2] - self.road_frame.eta_c) > 1e-9:
                raise SceneError(
                    f"ego.poses[{i}]: camera z {pose.c[2]} must equal eta_c {self.road_frame.eta_c}"
                )

    def _validate_categories(self):
        ego_v = self.poses[1].c - self.poses[0].c
        ego_speed = float(np.linalg.norm(ego_v))
        ego_dir = ego_v / ego_speed if ego_speed > 1e-12 else None
        tol = math.radians(ANGLE_TOL_DEG)
        for i, obj in enumerate(self.objects):
            speed = float(np.linalg.norm(obj.velocity))
            where = f"objects[{i}].velocity"
            if obj.category == "static-obstacle":
                if speed > 1e-12:
                    raise SceneError(f"{where}: static-obstacle must not move")
                continue
            if obj.category == "static-ego":
                if ego_speed > 1e-9:
                    raise SceneError(f"{where}: static-ego requires a static camera")
                if speed <= 0:
                    raise SceneError(f"{where}: static-ego object must move")
                continue
            if ego_dir is None:
                raise SceneError(f"{where}: category {obj.category} needs a moving camera")
            if speed <= 0:
                raise SceneError(f"{where}: category {obj.category} must move")
            ang = math.acos(np.clip(np.dot(obj.velocity / speed, ego_dir), -1.0, 1.0))
            if obj.category == "crossing" and abs(ang - math.pi / 2) > tol:
                raise SceneError(f"{where}: crossing motion must be perpendicular to ego")
            if obj.category == "approaching" and abs(ang - math.pi) > tol:
                raise SceneError(f"{where}: approaching motion must oppose ego")
            if obj.category in ("overtaking", "preceding"):
                if ang > tol:
                    raise SceneError(f"{where}: {obj.category} motion must parallel ego")
                if obj.category == "overtaking" and speed <= ego_speed:
                    raise SceneError(f"{where}: overtaking must exceed ego speed {ego_speed}")
                if obj.category == "preceding" and speed >= ego_speed:
                    raise SceneError(f"{where}: preceding must be slower than ego {ego_speed}")


@dataclass
class FrameSamples:
    """Array-of-structs view of all correspondences of one frame pair."""

    uv_prev: np.ndarray
    uv_curr: np.ndarray
    p_prev: np.ndarray
    p_curr: np.ndarray
    point_prev: np.ndarray
    point_curr: np.ndarray
    is_moving: np.ndarray
    category: np.ndarray
    range_m: np.ndarray

    def __len__(self):
        return self.uv_prev.shape[0]

    def sample(self, i: int) -> "LabelledCorrespondence":
        return LabelledCorrespondence(
            uv_prev=self.uv_prev[i],
            uv_curr=self.uv_curr[i],
            p_prev=self.p_prev[i],
            p_curr=self.p_curr[i],
            point_prev=self.point_prev[i],
            point_curr=self.point_curr[i],
            is_moving=bool(self.is_moving[i]),
            category=str(self.category[i]),
            range_m=float(self.range_m[i]),
        )


@dataclass(frozen=True)
class LabelledCorrespondence:
    """One correspondence with its generating ground truth."""

    uv_prev: np.ndarray
    uv_curr: np.ndarray
    p_prev: np.ndarray
    p_curr: np.ndarray
    point_prev: np.ndarray
    point_curr: np.ndarray
    is_moving: bool
    category: str
    range_m: float


@dataclass
class FrameObservation:
    """Poses and labelled correspondences for one consecutive frame pair."""

    index: int
    prev: CameraPose
    curr: CameraPose
    samples: FrameSamples


def straight_poses(start, velocity, frames: int, heading=None) -> list[CameraPose]:
    """Constant-velocity trajectory with a forward-facing camera.

    The camera optical axis points along the heading (default: the velocity
    direction, or +x when static), x to the right of travel, y down.
    """
    start = np.asarray(start, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    if heading is None:
        speed = np.linalg.norm(velocity)
        heading = velocity / speed if speed > 1e-12 else np.array([1.0, 0.0, 0.0])
    heading = np.asarray(heading, dtype=float)
    heading = heading / np.linalg.norm(heading)
    y_cam = np.array([0.0, 0.0, -1.0])
    x_cam = np.cross(y_cam, heading)
    x_cam = x_cam / np.linalg.norm(x_cam)
    r = np.column_stack([x_cam, y_cam, heading])
    return [CameraPose(c=start + k * velocity, r=r) for k in range(frames + 1)]


def _project_world(points, pose: CameraPose, K: CameraIntrinsics):
    rays_cam = (points - pose.c) @ pose.r
    norms = np.linalg.norm(rays_cam, axis=-1)
    ok = norms > 1e-12
    rays_cam = rays_cam / np.where(ok, norms, 1.0)[:, None]
    uv, valid = project_many(rays_cam, K)
    return uv, valid & ok


def _ground_points(spec: SceneSpec, pose: CameraPose):
    K = spec.intrinsics
    half = (spec.ground_pixel_stride - 1) / 2.0
    us = np.arange(half, K.width, spec.ground_pixel_stride)
    vs = np.arange(half, K.height, spec.ground_pixel_stride)
    gu, gv = np.meshgrid(us, vs)
    uv = np.stack([gu.ravel(), gv.ravel()], axis=-1)
    rays, valid = unproject_many(uv, K)
    rays_world = rays @ pose.r.T
    # cast onto the road plane z = 0; s is the metric distance along the ray
    going_down = rays_world[:, 2] < -1e-9
    s = np.where(going_down, pose.c[2] / np.where(going_down, -rays_world[:, 2], 1.0), np.inf)
    keep = valid & going_down & (s <= spec.ground_max_distance)
    points = pose.c + s[:, None] * rays_world
    return uv[keep], points[keep]


FOOTPRINT_MARGIN_PX = 2.0


def _footprint_boxes(uv, valid):
    """Pixel bounding box of an object's projected samples, with margin."""
    if not np.any(valid):
        return None
    pts = uv[valid]
    lo = pts.min(axis=0) - FOOTPRINT_MARGIN_PX
    hi = pts.max(axis=0) + FOOTPRINT_MARGIN_PX
    return lo, hi


def _inside_any(uv, boxes):
    hit = np.zeros(len(uv), dtype=bool)
    for lo, hi in boxes:
        hit |= np.all((uv >= lo) & (uv <= hi), axis=-1)
    return hit


def generate(spec: SceneSpec) -> list[FrameObservation]:
    """Generate labelled correspondences for every consecutive frame pair.

    Ground samples whose pixels fall under an object's image footprint (in
    either frame) are removed: a sensor sees one surface per pixel. Full
    occlusion modeling between objects is not attempted.
    """
    K = spec.intrinsics
    observations = []
    for f in range(spec.frames):
        prev, curr = spec.poses[f], spec.poses[f + 1]

        uv_prev_parts, pts_prev_parts, pts_curr_parts = [], [], []
        moving_parts, cat_parts = [], []

        g_uv, g_pts = _ground_points(spec, prev)
        boxes_prev, boxes_curr = [], []
        for obj in spec.objects:
            base = obj.points()
            o_prev = base + f * obj.velocity
            o_curr = o_prev + obj.velocity
            uv_p, ok_p = _project_world(o_prev, prev, K)
            uv_c, ok_c = _project_world(o_curr, curr, K)
            box_p = _footprint_boxes(uv_p, ok_p)
            box_c = _footprint_boxes(uv_c, ok_c)
            if box_p is not None:
                boxes_prev.append(box_p)
            if box_c is not None:
                boxes_curr.append(box_c)
        if len(g_uv) and boxes_prev:
            keep_g = ~_inside_any(g_uv, boxes_prev)
            g_uv, g_pts = g_uv[keep_g], g_pts[keep_g]
        if len(g_uv) and boxes_curr:
            g_uv_curr, _ = _project_world(g_pts, curr, K)
            keep_g = ~_inside_any(g_uv_curr, boxes_curr)
            g_uv, g_pts = g_uv[keep_g], g_pts[keep_g]
        if len(g_uv):
            uv_prev_parts.append(g_uv)
            pts_prev_parts.append(g_pts)
            pts_curr_parts.append(g_pts)
            moving_parts.append(np.zeros(len(g_uv), dtype=bool))
            cat_parts.append(np.full(len(g_uv), "ground", dtype=object))

        for obj in spec.objects:
            base = obj.points()
            p_prev = base + f * obj.velocity
            p_curr = p_prev + obj.velocity
            uv, ok = _project_world(p_prev, prev, K)
            if not np.any(ok):
                continue
            uv_prev_parts.append(uv[ok])
            pts_prev_parts.append(p_prev[ok])
            pts_curr_parts.append(p_curr[ok])
            moving = np.linalg.norm(obj.velocity) > 1e-12
            moving_parts.append(np.full(ok.sum(), moving, dtype=bool))
            cat_parts.append(np.full(ok.sum(), obj.category, dtype=object))

        if not uv_prev_parts:
            raise EmptySceneError(f"frame {f}: no sample projects into the previous view")

        uv_prev = np.concatenate(uv_prev_parts)
        pts_prev = np.concatenate(pts_prev_parts)
        pts_curr = np.concatenate(pts_curr_parts)
        is_moving = np.concatenate(moving_parts)
        category = np.concatenate(cat_parts)

        uv_curr, ok_curr = _project_world(pts_curr, curr, K)
        if spec.noise_sigma > 0:
            rng = np.random.default_rng((spec.seed, f))
            uv_curr = uv_curr + rng.normal(0.0, spec.noise_sigma, uv_curr.shape)

        rays_prev, ok_prev = unproject_many(uv_prev, K)
        rays_curr, ok_reproj = unproject_many(uv_curr, K)
        keep = ok_curr & ok_prev & ok_reproj
        if not np.any(keep):
            raise EmptySceneError(f"frame {f}: no sample projects into both views")

        samples = FrameSamples(
            uv_prev=uv_prev[keep],
            uv_curr=uv_curr[keep],
            p_prev=rays_prev[keep] @ prev.r.T,
            p_curr=rays_curr[keep] @ curr.r.T,
            point_prev=pts_prev[keep],
            point_curr=pts_curr[keep],
            is_moving=is_moving[keep],
            category=category[keep],
            range_m=np.linalg.norm(pts_curr[keep] - curr.c, axis=-1),
        )
        observations.append(FrameObservation(index=f, prev=prev, curr=curr, samples=samples))
    return observations


def triangulate_oracle(p, p_curr, c_prev, c_curr):
    """Midpoint triangulation of one observed ray pair (the oracle)."""
    return triangulate_rays(p, p_curr, c_prev, c_curr)


def road_height(point, c_prev, rf: RoadFrame) -> float:
    """Height of a world point above the road plane in the evaluation frame."""
    h = horizon_direction(rf)
    return float(-np.dot(point, h) + np.dot(c_prev, h) + rf.eta_c)


def classify_oracle(
    lc: LabelledCorrespondence,
    prev: CameraPose,
    curr: CameraPose,
    rf: RoadFrame,
    margin_e: float = 1e-9,
    margin_z: float = 1e-9,
    eps_t: float = 1e-4,
) -> set[str]:
    """Predict which constraints should fire, from reconstruction alone.

    Returns a subset of {"e", "d", "h", "p"}, or {"flow"} for a static
    camera with residual spherical flow. The prediction never touches the
    constraint formulas: the epipolar check uses the plane spanned by the
    true previous point and the baseline, the rest uses the midpoint
    triangulation of the observed rays.
    """
    t = prev.c - curr.c
    if np.linalg.norm(t) < eps_t:
        flow = np.linalg.norm(np.cross(lc.p_curr, lc.p_prev))
        return {"flow"} if flow > margin_e else set()

    expected = set()
    n_plane = np.cross(lc.point_prev - prev.c, t)
    norm = np.linalg.norm(n_plane)
    if norm < 1e-12:
        return expected  # feature on the baseline: nothing well defined
    ray_curr = lc.point_curr - curr.c
    off_plane = abs(np.dot(n_plane / norm, ray_curr / np.linalg.norm(ray_curr)))
    if off_plane > margin_e:
        expected.add("e")

    tri = triangulate_rays(lc.p_prev, lc.p_curr, prev.c, curr.c)
    if not tri.convergent:
        return expected
    if tri.s_curr < 0:
        expected.add("d")
        return expected

    h = horizon_direction(rf)
    if np.dot(lc.p_prev, h) > 0 and np.dot(lc.p_curr, h) > 0:
        z = road_height(tri.point, prev.c, rf)
        if z < -margin_z:
            expected.add("h")
        elif z > margin_z:
            expected.add("p")
    return expected
