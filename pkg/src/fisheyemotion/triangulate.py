"""Midpoint triangulation of two viewing rays.

Used as the independent geometric oracle for the constraint math and for
range gating in the pipeline. The midpoint method solves the 2x2 least
squares system for the closest points on the two rays in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PARALLEL_ANGLE = 1e-6


@dataclass(frozen=True)
class Triangulation:
    """Midpoint reconstruction of a ray pair.

    point: midpoint of the shortest segment between the rays.
    s_prev / s_curr: signed ray parameters of the closest points; negative
    values place the reconstruction behind the respective camera.
    convergent: false when the rays are parallel within PARALLEL_ANGLE.
    """

    point: np.ndarray
    s_prev: float
    s_curr: float
    convergent: bool


def triangulate_rays(p, p_curr, c_prev, c_curr) -> Triangulation:
    """Triangulate one unit-ray pair anchored at the two camera centers."""
    p = np.asarray(p, dtype=float)
    pc = np.asarray(p_curr, dtype=float)
    c_prev = np.asarray(c_prev, dtype=float)
    c_curr = np.asarray(c_curr, dtype=float)

    t = c_prev - c_curr
    c = float(np.dot(p, pc))
    denom = 1.0 - c * c
    # denom = sin^2 of the ray angle
    if denom < PARALLEL_ANGLE**2:
        return Triangulation(point=(c_prev + c_curr) / 2.0, s_prev=0.0, s_curr=0.0, convergent=False)
    a = float(np.dot(p, t))
    b = float(np.dot(pc, t))
    s_prev = (c * b - a) / denom
    s_curr = (b - c * a) / denom
    point = 0.5 * ((c_prev + s_prev * p) + (c_curr + s_curr * pc))
    return Triangulation(point=point, s_prev=s_prev, s_curr=s_curr, convergent=True)


def triangulate_many(p, p_curr, c_prev, c_curr):
    """Vectorized midpoint triangulation over (N, 3) ray arrays.

    Returns (points (N,3), s_prev (N,), s_curr (N,), convergent (N,)).
    Non-convergent entries carry the baseline midpoint and zero parameters.
    """
    p = np.asarray(p, dtype=float)
    pc = np.asarray(p_curr, dtype=float)
    t = np.asarray(c_prev, dtype=float) - np.asarray(c_curr, dtype=float)

    c = np.einsum("ij,ij->i", p, pc)
    denom = 1.0 - c * c
    convergent = denom >= PARALLEL_ANGLE**2
    safe = np.where(convergent, denom, 1.0)
    a = p @ t
    b = pc @ t
    s_prev = np.where(convergent, (c * b - a) / safe, 0.0)
    s_curr = np.where(convergent, (b - c * a) / safe, 0.0)
    points = 0.5 * ((c_prev + s_prev[:, None] * p) + (c_curr + s_curr[:, None] * pc))
    return points, s_prev, s_curr, convergent
