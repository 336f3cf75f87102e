"""Bundled synthetic scenes, one per motion category plus edge cases.

Speeds are meters per frame; at 15 fps the defaults correspond to roughly
10-70 km/h, matching low-speed road scenarios. The obstacle preset mounts
the camera higher so a 2 m obstacle stays below the horizon.
"""

from __future__ import annotations

import numpy as np

from .camera import CameraIntrinsics, RoadFrame
from .simulator import ObjectSpec, SceneSpec, straight_poses


def default_camera(eta_c: float = 1.2) -> tuple[CameraIntrinsics, RoadFrame]:
    intr = CameraIntrinsics.from_dict(
        {"model": "equidistant", "f": 150.0, "cu": 320.0, "cv": 240.0,
         "theta_max_deg": 95.0, "width": 640, "height": 480}
    )
    rf = RoadFrame(eta_c=eta_c, r_c=np.eye(3))
    return intr, rf


def _scene(name, objects, frames, ego_speed=0.5, eta_c=1.2, seed=0,
           noise_sigma=0.0, stride=5, max_distance=12.0):
    intr, rf = default_camera(eta_c)
    poses = straight_poses([0.0, 0.0, eta_c], [ego_speed, 0.0, 0.0], frames)
    return SceneSpec(
        intrinsics=intr, road_frame=rf, poses=poses, objects=objects,
        frames=frames, seed=seed, noise_sigma=noise_sigma,
        ground_pixel_stride=stride, ground_max_distance=max_distance, name=name,
    )


def all_static(frames=6, seed=0, noise_sigma=0.0):
    return _scene("all_static", [], frames, seed=seed, noise_sigma=noise_sigma)


def crossing(frames=8, seed=0, noise_sigma=0.0):
    # kept below camera height: lateral motion of points near z = eta_c is
    # nearly inside their epipolar plane and invisible to the epipolar test
    obj = ObjectSpec(
        category="crossing", center=[6.0, -1.2, 0.5], size=[0.5, 0.5, 0.9],
        velocity=[0.0, 0.35, 0.0], sample_step=0.2,
    )
    return _scene("crossing", [obj], frames, seed=seed, noise_sigma=noise_sigma)


def overtaking(frames=6, seed=0, noise_sigma=0.0):
    obj = ObjectSpec(
        category="overtaking", center=[3.5, 1.8, 0.6], size=[1.8, 0.8, 1.2],
        velocity=[1.3, 0.0, 0.0], sample_step=0.2,
    )
    return _scene("overtaking", [obj], frames, seed=seed, noise_sigma=noise_sigma)


def preceding(frames=6, seed=0, noise_sigma=0.0):
    # below-road reconstruction needs a low box and a brisk ego: the height
    # deviation carries only weight 0.2 in the fusion
    obj = ObjectSpec(
        category="preceding", center=[3.8, 0.4, 0.22], size=[1.4, 0.9, 0.44],
        velocity=[0.4, 0.0, 0.0], sample_step=0.12,
    )
    return _scene("preceding", [obj], frames, ego_speed=0.9,
                  seed=seed, noise_sigma=noise_sigma)


def approaching(frames=5, seed=0, noise_sigma=0.0):
    obj = ObjectSpec(
        category="approaching", center=[7.6, -1.2, 0.4], size=[1.6, 0.9, 0.8],
        velocity=[-1.1, 0.0, 0.0], sample_step=0.15,
    )
    return _scene("approaching", [obj], frames, seed=seed, noise_sigma=noise_sigma)


def static_ego(frames=5, seed=0, noise_sigma=0.0):
    obj = ObjectSpec(
        category="static-ego", center=[5.0, -0.5, 0.8], size=[1.0, 0.8, 1.4],
        velocity=[0.25, 0.3, 0.0], sample_step=0.2,
    )
    return _scene("static_ego", [obj], frames, ego_speed=0.0,
                  seed=seed, noise_sigma=noise_sigma)


def obstacle_fp(frames=5, seed=0, noise_sigma=0.0):
    # tall static obstacle close to a high-mounted camera: the documented
    # systematic false positive of the anti-parallel constraint
    obj = ObjectSpec(
        category="static-obstacle", center=[3.2, 0.9, 1.9], size=[0.8, 0.8, 0.5],
        velocity=[0.0, 0.0, 0.0], sample_step=0.15,
    )
    return _scene("obstacle_fp", [obj], frames, eta_c=2.5,
                  seed=seed, noise_sigma=noise_sigma)


PRESETS = {
    "all_static": all_static,
    "crossing": crossing,
    "overtaking": overtaking,
    "preceding": preceding,
    "approaching": approaching,
    "static_ego": static_ego,
    "obstacle_fp": obstacle_fp,
}
