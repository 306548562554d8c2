"""Planar fully-actuated rotorcraft: exact equations of motion with wind drag.

Generalized coordinates q = (x, y, phi) with mass-normalized thrust/torque
input u = (u1, u2, u3) applied in the body frame:

    qddot = -g_vec + R(phi) u + f_ext(q, qdot, w)

where f_ext is a quadratic drag force from the velocity relative to a constant
inertial-x wind w.  All functions are pure and accept batched arrays (leading
batch axis, coordinates last); the ground-truth simulator for data collection
and testing lives here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GRAVITY = np.array([0.0, 9.81, 0.0])


@dataclass(frozen=True)
class WindField:
    """Constant inertial-x wind speed plus drag coefficients (both > 0)."""

    w: float | np.ndarray
    beta1: float = 0.1
    beta2: float = 1.0

    def __post_init__(self):
        if not (self.beta1 > 0 and self.beta2 > 0):
            raise ValueError("drag coefficients must be positive")


def rotation(phi: float) -> np.ndarray:
    """Body-to-inertial rotation R(phi), orthogonal with determinant 1."""
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate(phi: np.ndarray, v: np.ndarray, transpose: bool = False) -> np.ndarray:
    """Batched application of R(phi) (or its transpose) to rows of v [...,3]."""
    c, s = np.cos(phi), np.sin(phi)
    out = np.empty_like(v)
    if transpose:
        out[..., 0] = c * v[..., 0] + s * v[..., 1]
        out[..., 1] = -s * v[..., 0] + c * v[..., 1]
    else:
        out[..., 0] = c * v[..., 0] - s * v[..., 1]
        out[..., 1] = s * v[..., 0] + c * v[..., 1]
    out[..., 2] = v[..., 2]
    return out


def drag_force(q: np.ndarray, qdot: np.ndarray, wind: WindField) -> np.ndarray:
    """Mass-normalized quadratic drag from the body-frame relative velocity.

    The force has no torque component and depends only on the velocity
    relative to the wind, so shifting (xdot, w) by a common constant leaves
    it unchanged.
    """
    phi = q[..., 2]
    c, s = np.cos(phi), np.sin(phi)
    rel = qdot[..., 0] - wind.w
    v1 = rel * c + qdot[..., 1] * s
    v2 = -rel * s + qdot[..., 1] * c
    d1 = wind.beta1 * v1 * np.abs(v1)
    d2 = wind.beta2 * v2 * np.abs(v2)
    f = np.zeros_like(qdot)
    f[..., 0] = -(c * d1 - s * d2)
    f[..., 1] = -(s * d1 + c * d2)
    return f


def true_dynamics(q: np.ndarray, qdot: np.ndarray, u: np.ndarray, wind: WindField) -> tuple[np.ndarray, np.ndarray]:
    """Time derivative (qdot, qddot) of the true plant under wind drag."""
    qddot = -GRAVITY + rotate(q[..., 2], u) + drag_force(q, qdot, wind)
    return qdot, qddot
