"""Geometric motion constraints on the unit projection sphere.

Implements the four constraint deviations for a pair of calibrated views
(epipolar-plane, positive depth, positive height, anti-parallel), the
degenerate static-camera measure, per-correspondence routing, and weighted
fusion into a motion likelihood in [0, 1].

All rays are unit vectors expressed in one fixed (world-oriented) frame, so
camera rotation is already compensated. Scalar functions operate on shape
(3,) arrays; ``evaluate_rays`` is the vectorized equivalent used by the
frame pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics, RoadFrame, horizon_direction, unproject

CROSS_EPS = 1e-12


class ConstraintError(Exception):
    """Base class for constraint-evaluation failures."""


class DegenerateEpipolarPlaneError(ConstraintError):
    """Feature lies along the baseline; the epipolar plane is undefined."""


class UndefinedProjectionError(ConstraintError):
    """Current ray is parallel to the plane normal; projection undefined."""


class AboveHorizonError(ConstraintError):
    """Road-plane intersection requested for a ray at or above the horizon."""


class SkippedFeatureError(ConstraintError):
    """Correspondence cannot be evaluated and must be reported as skipped."""


@dataclass(frozen=True)
class ConstraintConfig:
    """Thresholds and fusion weights for the constraint evaluation.

    lambda_h / lambda_p are expressed in sine units, matching the deviation
    magnitudes. weights order is (epipolar, depth, height, anti-parallel).
    epsilon_t is the minimum baseline length in meters below which the
    camera counts as static. k_p scales the adaptive anti-parallel
    threshold when adaptive_lambda_p is on.
    """

    lambda_h: float = 0.001
    lambda_p: float = 0.001
    weights: tuple[float, float, float, float] = (1.0, 1.0, 0.2, 0.2)
    epsilon_t: float = 1e-4
    adaptive_lambda_p: bool = False
    k_p: float = 0.25

    def __post_init__(self):
        if self.lambda_h < 0 or self.lambda_p < 0:
            raise ValueError("thresholds must be non-negative")
        if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        if self.epsilon_t <= 0:
            raise ValueError("epsilon_t must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ConstraintConfig":
        kw = {}
        for key in ("lambda_h", "lambda_p", "epsilon_t", "k_p"):
            if key in d:
                kw[key] = float(d[key])
        if "weights" in d:
            kw["weights"] = tuple(float(w) for w in d["weights"])
        if "adaptive_lambda_p" in d:
            kw["adaptive_lambda_p"] = bool(d["adaptive_lambda_p"])
        return cls(**kw)


@dataclass(frozen=True)
class CameraPose:
    """World-frame camera pose: center c (meters) and camera-to-world r."""

    c: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(3)
        r = np.asarray(self.r, dtype=float).reshape(3, 3)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "r", r)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ValueError("pose rotation must be orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("pose rotation must have determinant +1")


@dataclass(frozen=True)
class Correspondence:
    """A tracked point pair with world-oriented unit rays.

    uv_prev / uv_curr are pixel coordinates; p_prev / p_curr the matching
    rays rotated by the respective pose rotations.
    """

    uv_prev: np.ndarray
    uv_curr: np.ndarray
    p_prev: np.ndarray
    p_curr: np.ndarray

    @classmethod
    def from_pixels(
        cls,
        uv_prev,
        uv_curr,
        prev: CameraPose,
        curr: CameraPose,
        intrinsics: CameraIntrinsics,
    ) -> "Correspondence":
        p = prev.r @ unproject(uv_prev, intrinsics)
        pc = curr.r @ unproject(uv_curr, intrinsics)
        return cls(
            uv_prev=np.asarray(uv_prev, dtype=float),
            uv_curr=np.asarray(uv_curr, dtype=float),
            p_prev=p,
            p_curr=pc,
        )


@dataclass(frozen=True)
class EpipolarFrame:
    """Baseline geometry for one previous-frame ray."""

    t: np.ndarray
    degenerate: bool
    e_prime: np.ndarray | None = None
    n_prime: np.ndarray | None = None


@dataclass
class ConstraintDeviations:
    """Per-correspondence constraint deviations and fused likelihood."""

    xi_e: float = 0.0
    xi_d: float = 0.0
    xi_h: float = 0.0
    xi_p: float = 0.0
    applied_h: bool = False
    applied_p: bool = False
    xi: float = 0.0
    static_case: bool = False


def _unit(v):
    return v / np.linalg.norm(v)


def epipolar_frame(prev: CameraPose, curr: CameraPose, p, eps_t: float = 1e-4) -> EpipolarFrame:
    """Baseline t, epipole e' and epipolar-plane normal n' for ray p.

    With a baseline shorter than eps_t the frame is flagged degenerate
    (static camera). A feature lying along the baseline raises
    DegenerateEpipolarPlaneError since no unique plane exists.
    """
    t = prev.c - curr.c
    if np.linalg.norm(t) < eps_t:
        return EpipolarFrame(t=t, degenerate=True)
    e = _unit(t)
    pxe = np.cross(p, e)
    norm = np.linalg.norm(pxe)
    if norm < CROSS_EPS:
        raise DegenerateEpipolarPlaneError("feature ray parallel to the baseline")
    return EpipolarFrame(t=t, degenerate=False, e_prime=e, n_prime=pxe / norm)


def epipolar_deviation(p_curr, n_prime) -> float:
    """Distance of the current ray from the epipolar plane, as a cosine."""
    return float(abs(np.dot(n_prime, p_curr)))


def project_onto_epipolar_plane(p_curr, n_prime):
    """Unit projection of the current ray onto the epipolar plane."""
    resid = p_curr - np.dot(p_curr, n_prime) * n_prime
    norm = np.linalg.norm(resid)
    if norm < CROSS_EPS:
        raise UndefinedProjectionError("current ray is normal to the epipolar plane")
    return resid / norm


def depth_deviation(p, p_pi, n_prime) -> float:
    """Positive-depth (cheirality) deviation.

    Nonzero exactly when the two rays converge behind the camera; the value
    is the sine of the angle between the projected current ray and p.
    """
    p_n = np.cross(p_pi, p)
    if np.dot(n_prime, p_n) > 0.0:
        return float(np.linalg.norm(p_n))
    return 0.0


def road_ray(p, t, h, eta_c: float):
    """Direction from the current camera to the road point hit by ray p."""
    ph = float(np.dot(p, h))
    if ph <= 0.0:
        raise AboveHorizonError("previous ray does not meet the road plane")
    delta_r = eta_c / ph
    return _unit(delta_r * np.asarray(p, dtype=float) + t)


def signed_angle(a, b, axis) -> float:
    """Signed angle from a to b about the given unit axis."""
    return float(np.arctan2(np.dot(np.cross(a, b), axis), np.dot(a, b)))


def adaptive_lambda_p(p, p_r, cfg: ConstraintConfig) -> float:
    """Local anti-parallel threshold, floored at the configured constant.

    When adaptive mode is on the threshold scales with the road-plane
    parallax magnitude at this image location, raising it where static
    road points already move a lot on the sphere.
    """
    if not cfg.adaptive_lambda_p:
        return cfg.lambda_p
    return max(cfg.lambda_p, cfg.k_p * float(np.linalg.norm(np.cross(p, p_r))))


def height_and_antiparallel(
    p, p_pi, p_r, n_prime, cfg: ConstraintConfig, lambda_p_local: float
) -> tuple[float, float, bool, bool]:
    """Positive-height and anti-parallel deviations for a below-horizon pair.

    The projected current ray sitting between p and the road ray means the
    point triangulates at or below the road plane (height deviation);
    falling beyond the road ray, or on the opposite side, means it
    triangulates above the road (anti-parallel deviation).
    """
    v_norm = float(np.linalg.norm(np.cross(p_pi, p_r)))
    theta_obs = signed_angle(p, p_pi, n_prime)
    theta_road = signed_angle(p, p_r, n_prime)
    between = np.sign(theta_obs) == np.sign(theta_road) and abs(theta_obs) <= abs(theta_road)
    if between:
        xi_h = min(1.0, max(0.0, v_norm - cfg.lambda_h))
        return xi_h, 0.0, True, False
    xi_p = min(1.0, max(0.0, v_norm - lambda_p_local))
    return 0.0, xi_p, False, True


def static_camera_deviation(p, p_curr) -> float:
    """Residual spherical flow when the camera did not move."""
    return float(np.linalg.norm(np.cross(p_curr, p)))


def fuse(d: ConstraintDeviations, cfg: ConstraintConfig) -> float:
    """Weighted mean of the four deviations over the full weight sum."""
    mu_e, mu_d, mu_h, mu_p = cfg.weights
    total = mu_e + mu_d + mu_h + mu_p
    return (mu_e * d.xi_e + mu_d * d.xi_d + mu_h * d.xi_h + mu_p * d.xi_p) / total


def evaluate(
    corr: Correspondence,
    prev: CameraPose,
    curr: CameraPose,
    rf: RoadFrame,
    cfg: ConstraintConfig | None = None,
) -> ConstraintDeviations:
    """Evaluate all applicable constraints for one correspondence.

    Routing: a baseline below epsilon_t takes the static-camera branch.
    Otherwise the epipolar and depth deviations are always computed; the
    road constraints apply only when both rays lie below the horizon and
    the rays converge in front of the camera. Features parallel to the
    baseline raise SkippedFeatureError.
    """
    cfg = cfg or ConstraintConfig()
    p, pc = corr.p_prev, corr.p_curr

    try:
        frame = epipolar_frame(prev, curr, p, eps_t=cfg.epsilon_t)
    except DegenerateEpipolarPlaneError as exc:
        raise SkippedFeatureError(f"feature at {corr.uv_prev} skipped: {exc}") from exc
    if frame.degenerate:
        return ConstraintDeviations(xi=static_camera_deviation(p, pc), static_case=True)

    d = ConstraintDeviations()
    d.xi_e = epipolar_deviation(pc, frame.n_prime)
    try:
        p_pi = project_onto_epipolar_plane(pc, frame.n_prime)
    except UndefinedProjectionError:
        # measure-zero case: xi_e is already 1, depth/road cannot be formed
        d.xi = fuse(d, cfg)
        return d
    d.xi_d = depth_deviation(p, p_pi, frame.n_prime)

    h = horizon_direction(rf)
    converge_front = np.dot(frame.n_prime, np.cross(p_pi, p)) < 0.0
    if converge_front and np.dot(p, h) > 0.0 and np.dot(pc, h) > 0.0:
        p_r = road_ray(p, frame.t, h, rf.eta_c)
        lam = adaptive_lambda_p(p, p_r, cfg)
        d.xi_h, d.xi_p, d.applied_h, d.applied_p = height_and_antiparallel(
            p, p_pi, p_r, frame.n_prime, cfg, lam
        )
    d.xi = fuse(d, cfg)
    return d


# --- vectorized evaluation -------------------------------------------------

@dataclass
class BatchDeviations:
    """Array-valued result of evaluate_rays; one entry per correspondence."""

    xi_e: np.ndarray
    xi_d: np.ndarray
    xi_h: np.ndarray
    xi_p: np.ndarray
    xi: np.ndarray
    applied_h: np.ndarray
    applied_p: np.ndarray
    skipped: np.ndarray = field(default=None)
    static_case: bool = False

    def item(self, i: int) -> ConstraintDeviations:
        return ConstraintDeviations(
            xi_e=float(self.xi_e[i]),
            xi_d=float(self.xi_d[i]),
            xi_h=float(self.xi_h[i]),
            xi_p=float(self.xi_p[i]),
            applied_h=bool(self.applied_h[i]),
            applied_p=bool(self.applied_p[i]),
            xi=float(self.xi[i]),
            static_case=self.static_case,
        )


def evaluate_rays(
    p,
    p_curr,
    c_prev,
    c_curr,
    rf: RoadFrame,
    cfg: ConstraintConfig | None = None,
) -> BatchDeviations:
    """Vectorized constraint evaluation over (N, 3) ray arrays.

    Matches evaluate() per entry; baseline-parallel features are flagged in
    the skipped mask (their deviations are zeroed) instead of raising.
    """
    cfg = cfg or ConstraintConfig()
    p = np.asarray(p, dtype=float)
    pc = np.asarray(p_curr, dtype=float)
    n_pts = p.shape[0]
    zeros = np.zeros(n_pts)
    false = np.zeros(n_pts, dtype=bool)

    t = np.asarray(c_prev, dtype=float) - np.asarray(c_curr, dtype=float)
    t_norm = np.linalg.norm(t)
    if t_norm < cfg.epsilon_t:
        xi = np.linalg.norm(np.cross(pc, p), axis=-1)
        return BatchDeviations(
            xi_e=zeros, xi_d=zeros.copy(), xi_h=zeros.copy(), xi_p=zeros.copy(),
            xi=xi, applied_h=false, applied_p=false.copy(),
            skipped=false.copy(), static_case=True,
        )

    e = t / t_norm
    pxe = np.cross(p, e)
    pxe_norm = np.linalg.norm(pxe, axis=-1)
    skipped = pxe_norm < CROSS_EPS
    n = pxe / np.where(skipped, 1.0, pxe_norm)[:, None]

    xi_e = np.abs(np.einsum("ij,ij->i", n, pc))
    resid = pc - np.einsum("ij,ij->i", pc, n)[:, None] * n
    resid_norm = np.linalg.norm(resid, axis=-1)
    undef = resid_norm < CROSS_EPS
    p_pi = resid / np.where(undef, 1.0, resid_norm)[:, None]

    p_n = np.cross(p_pi, p)
    n_dot_pn = np.einsum("ij,ij->i", n, p_n)
    xi_d = np.where(n_dot_pn > 0.0, np.linalg.norm(p_n, axis=-1), 0.0)
    xi_d[undef] = 0.0

    h = horizon_direction(rf)
    ph = p @ h
    road_ok = (n_dot_pn < 0.0) & (ph > 0.0) & (pc @ h > 0.0) & ~skipped & ~undef

    delta_r = rf.eta_c / np.where(ph > 0.0, ph, 1.0)
    p_r_raw = delta_r[:, None] * p + t
    p_r_norm = np.linalg.norm(p_r_raw, axis=-1)
    p_r = p_r_raw / np.where(p_r_norm > 0.0, p_r_norm, 1.0)[:, None]

    v_norm = np.linalg.norm(np.cross(p_pi, p_r), axis=-1)
    theta_obs = np.arctan2(
        np.einsum("ij,ij->i", np.cross(p, p_pi), n), np.einsum("ij,ij->i", p, p_pi)
    )
    theta_road = np.arctan2(
        np.einsum("ij,ij->i", np.cross(p, p_r), n), np.einsum("ij,ij->i", p, p_r)
    )
    between = (np.sign(theta_obs) == np.sign(theta_road)) & (
        np.abs(theta_obs) <= np.abs(theta_road)
    )

    if cfg.adaptive_lambda_p:
        lam_p = np.maximum(
            cfg.lambda_p, cfg.k_p * np.linalg.norm(np.cross(p, p_r), axis=-1)
        )
    else:
        lam_p = np.full(n_pts, cfg.lambda_p)

    applied_h = road_ok & between
    applied_p = road_ok & ~between
    xi_h = np.where(applied_h, np.clip(v_norm - cfg.lambda_h, 0.0, 1.0), 0.0)
    xi_p = np.where(applied_p, np.clip(v_norm - lam_p, 0.0, 1.0), 0.0)

    for arr in (xi_e, xi_d, xi_h, xi_p):
        arr[skipped] = 0.0
    applied_h[skipped] = False
    applied_p[skipped] = False

    mu_e, mu_d, mu_h, mu_p = cfg.weights
    xi = (mu_e * xi_e + mu_d * xi_d + mu_h * xi_h + mu_p * xi_p) / sum(cfg.weights)
    xi[skipped] = 0.0

    return BatchDeviations(
        xi_e=xi_e, xi_d=xi_d, xi_h=xi_h, xi_p=xi_p, xi=xi,
        applied_h=applied_h, applied_p=applied_p,
        skipped=skipped, static_case=False,
    )
