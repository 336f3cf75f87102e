"""Fisheye camera model: pixel <-> unit-ray mapping and road/horizon geometry.

All rays are unit vectors on the projection sphere, represented as numpy
arrays of shape (3,) or (N, 3). The camera frame follows the usual computer
vision convention: x right, y down, z along the optical axis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

DOWN = np.array([0.0, 0.0, -1.0])


class CameraError(Exception):
    """Base class for camera-model failures."""


class OutOfDomainError(CameraError):
    """Pixel outside the image bounds or beyond the lens field of view."""


class OutsideFovError(CameraError):
    """Ray incidence angle exceeds the maximum half field of view."""


class OutOfImageError(CameraError):
    """Projected pixel falls outside the image bounds."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Calibrated intrinsics for a central projection camera.

    model: "equidistant" (r = f * theta) or "pinhole".
    f: focal length in pixels.
    cu, cv: principal point in pixels.
    theta_max: maximum incidence half-angle in radians.
    width, height: image size in pixels.
    """

    model: str
    f: float
    cu: float
    cv: float
    theta_max: float
    width: int
    height: int

    def __post_init__(self):
        if self.model not in MODEL_REGISTRY:
            raise ValueError(f"unknown camera model {self.model!r}")
        if self.f <= 0:
            raise ValueError("focal length must be positive")
        if not 0.0 < self.theta_max <= math.pi:
            raise ValueError("theta_max must lie in (0, pi]")
        if not (0 <= self.cu < self.width and 0 <= self.cv < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(
            model=d.get("model", "equidistant"),
            f=float(d["f"]),
            cu=float(d["cu"]),
            cv=float(d["cv"]),
            theta_max=math.radians(float(d.get("theta_max_deg", 95.0))),
            width=int(d["width"]),
            height=int(d["height"]),
        )

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "f": self.f,
            "cu": self.cu,
            "cv": self.cv,
            "theta_max_deg": math.degrees(self.theta_max),
            "width": self.width,
            "height": self.height,
        }


@dataclass(frozen=True)
class RoadFrame:
    """Camera placement relative to the road plane.

    eta_c: camera height above the road in meters.
    r_c: rotation taking the road frame (z up) into the frame in which
         rays are evaluated; identity when evaluating in a z-up world frame.
    """

    eta_c: float
    r_c: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r_c, dtype=float)
        object.__setattr__(self, "r_c", r)
        if self.eta_c <= 0:
            raise ValueError("camera height eta_c must be positive")
        if r.shape != (3, 3):
            raise ValueError("r_c must be a 3x3 matrix")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ValueError("r_c must be orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("r_c must have determinant +1")

    @classmethod
    def from_dict(cls, d: dict) -> "RoadFrame":
        return cls(eta_c=float(d["eta_c"]), r_c=np.array(d["r_c"], dtype=float).reshape(3, 3))

    def to_dict(self) -> dict:
        return {"eta_c": self.eta_c, "r_c": [float(x) for x in self.r_c.ravel()]}


def load_camera_config(path) -> tuple[CameraIntrinsics, RoadFrame]:
    """Read intrinsics and road frame from one JSON file."""
    with open(path) as fh:
        d = json.load(fh)
    return CameraIntrinsics.from_dict(d), RoadFrame.from_dict(d)


def save_camera_config(path, intr: CameraIntrinsics, rf: RoadFrame) -> None:
    d = intr.to_dict()
    d.update(rf.to_dict())
    with open(path, "w") as fh:
        json.dump(d, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- unprojection / projection -------------------------------------------

def _equidistant_unproject(uv, K):
    du = uv[..., 0] - K.cu
    dv = uv[..., 1] - K.cv
    r = np.hypot(du, dv)
    theta = r / K.f
    # azimuth is undefined at the principal point; sin(theta)=0 there anyway
    phi = np.arctan2(dv, du)
    st = np.sin(theta)
    rays = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)
    return rays, theta <= K.theta_max + 1e-12


def _equidistant_project(rays, K):
    x, y, z = rays[..., 0], rays[..., 1], rays[..., 2]
    theta = np.arccos(np.clip(z, -1.0, 1.0))
    r = K.f * theta
    rho = np.hypot(x, y)
    safe = np.where(rho > 0, rho, 1.0)
    uv = np.stack([K.cu + r * x / safe, K.cv + r * y / safe], axis=-1)
    return uv, theta <= K.theta_max + 1e-12


def _pinhole_unproject(uv, K):
    du = (uv[..., 0] - K.cu) / K.f
    dv = (uv[..., 1] - K.cv) / K.f
    rays = np.stack([du, dv, np.ones_like(du)], axis=-1)
    rays = rays / np.linalg.norm(rays, axis=-1, keepdims=True)
    theta = np.arccos(np.clip(rays[..., 2], -1.0, 1.0))
    return rays, theta <= K.theta_max + 1e-12


def _pinhole_project(rays, K):
    z = rays[..., 2]
    theta = np.arccos(np.clip(z, -1.0, 1.0))
    ok = (z > 1e-12) & (theta <= K.theta_max + 1e-12)
    safe = np.where(z > 1e-12, z, 1.0)
    uv = np.stack(
        [K.cu + K.f * rays[..., 0] / safe, K.cv + K.f * rays[..., 1] / safe], axis=-1
    )
    return uv, ok


# model name -> (unproject, project); extend to plug in other lens models
MODEL_REGISTRY = {
    "equidistant": (_equidistant_unproject, _equidistant_project),
    "pinhole": (_pinhole_unproject, _pinhole_project),
}


def in_bounds(uv, K: CameraIntrinsics):
    """Boolean mask of pixels inside [0, W) x [0, H)."""
    uv = np.asarray(uv, dtype=float)
    return (
        (uv[..., 0] >= 0)
        & (uv[..., 0] < K.width)
        & (uv[..., 1] >= 0)
        & (uv[..., 1] < K.height)
    )


def unproject_many(uv, K: CameraIntrinsics):
    """Map pixels (..., 2) to unit rays (..., 3) plus a validity mask.

    Invalid entries (out of bounds or past theta_max) still carry a ray value
    but are flagged false in the mask.
    """
    uv = np.asarray(uv, dtype=float)
    rays, in_fov = MODEL_REGISTRY[K.model][0](uv, K)
    return rays, in_fov & in_bounds(uv, K)


def project_many(rays, K: CameraIntrinsics):
    """Map unit rays (..., 3) to pixels (..., 2) plus a validity mask."""
    rays = np.asarray(rays, dtype=float)
    uv, in_fov = MODEL_REGISTRY[K.model][1](rays, K)
    return uv, in_fov & in_bounds(uv, K)


def unproject(pt, K: CameraIntrinsics) -> np.ndarray:
    """Unproject a single pixel to a unit ray in the camera frame.

    Raises OutOfDomainError if the pixel is outside the image or past the
    lens field of view.
    """
    uv = np.asarray(pt, dtype=float)
    if not in_bounds(uv, K):
        raise OutOfDomainError(f"pixel {tuple(uv)} outside image bounds")
    ray, ok = MODEL_REGISTRY[K.model][0](uv, K)
    if not ok:
        raise OutOfDomainError(f"pixel {tuple(uv)} beyond theta_max")
    return ray


def project(ray, K: CameraIntrinsics) -> np.ndarray:
    """Project a single unit ray to a pixel; exact inverse of unproject.

    Raises OutsideFovError past theta_max and OutOfImageError when the pixel
    lands outside the image.
    """
    v = np.asarray(ray, dtype=float)
    uv, in_fov = MODEL_REGISTRY[K.model][1](v, K)
    if not in_fov:
        raise OutsideFovError("ray incidence angle exceeds theta_max")
    if not in_bounds(uv, K):
        raise OutOfImageError(f"projected pixel {tuple(uv)} outside image")
    return uv


def horizon_direction(rf: RoadFrame) -> np.ndarray:
    """Downward road-plane normal expressed in the ray evaluation frame."""
    return rf.r_c @ DOWN


def below_horizon(p, h) -> bool:
    """True iff the ray points strictly below the horizon plane."""
    return float(np.dot(p, h)) > 0.0
