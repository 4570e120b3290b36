"""Gaze direction geometry.

Angles cross the public API in degrees; everything below converts to radians
exactly once, at the top of each function.  All functions broadcast over
leading array dimensions so a whole trace can be converted in one call.
"""

from __future__ import annotations

import numpy as np

from .errors import GazeAwayFromPlane

YAW_LIMIT_DEG = 120.0
PITCH_LIMIT_DEG = 70.0


def angles_to_unit_vector(yaw, pitch):
    """Convert gaze (yaw, pitch) in degrees to unit vectors of shape (..., 3).

    x points straight ahead, y to the gazer's left-right axis (positive yaw),
    z up (positive pitch).
    """
    th = np.radians(np.asarray(yaw, dtype=float))
    ph = np.radians(np.asarray(pitch, dtype=float))
    cp = np.cos(ph)
    return np.stack([np.cos(th) * cp, np.sin(th) * cp, np.sin(ph)], axis=-1)


def unit_vector_to_angles(u):
    """Inverse of :func:`angles_to_unit_vector`; returns (yaw, pitch) in degrees."""
    u = np.asarray(u, dtype=float)
    yaw = np.degrees(np.arctan2(u[..., 1], u[..., 0]))
    pitch = np.degrees(np.arcsin(np.clip(u[..., 2], -1.0, 1.0)))
    return yaw, pitch


def project_to_plane(u, p_x=1.0):
    """Intersect gaze rays with the plane x = p_x; returns (..., 2) as (p_y, p_z).

    Raises GazeAwayFromPlane if any ray has u_x <= 0.
    """
    u = np.asarray(u, dtype=float)
    if p_x <= 0:
        raise ValueError("p_x must be positive")
    ux = u[..., 0]
    if np.any(ux <= 0):
        raise GazeAwayFromPlane("gaze direction does not intersect the keyboard plane")
    scale = p_x / ux
    return np.stack([u[..., 1] * scale, u[..., 2] * scale], axis=-1)


def plane_to_unit_vector(p, p_x=1.0):
    """Direction from the origin to plane point(s) (p_y, p_z) on x = p_x."""
    p = np.asarray(p, dtype=float)
    v = np.concatenate([np.full(p.shape[:-1] + (1,), float(p_x)), p], axis=-1)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def rotation_to_x(normal):
    """Minimal rotation matrix R with R @ normal = (1, 0, 0).

    Rodrigues' formula about the axis normal x e_x.  The antiparallel case
    picks the z axis as the rotation axis.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    ex = np.array([1.0, 0.0, 0.0])
    axis = np.cross(n, ex)
    s = np.linalg.norm(axis)
    c = float(np.dot(n, ex))
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        return np.diag([-1.0, -1.0, 1.0])
    k = axis / s
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + s * kx + (1.0 - c) * (kx @ kx)


def rotation_from_angles(yaw, pitch, roll=0.0):
    """Rotation that turns the forward axis toward (yaw, pitch) in degrees.

    ``roll`` spins about the forward axis first.  Used by the synthetic
    generator to place keyboards and cameras.
    """
    a, b, c = np.radians([yaw, pitch, roll])
    rz = np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])
    # positive pitch lifts x toward z
    ry = np.array([[np.cos(b), 0.0, -np.sin(b)], [0.0, 1.0, 0.0], [np.sin(b), 0.0, np.cos(b)]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, np.cos(c), -np.sin(c)], [0.0, np.sin(c), np.cos(c)]])
    return rz @ ry @ rx
