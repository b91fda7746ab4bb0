"""Rotation representations, losses, and conversions.

Rotations are 3x3 right-handed orthonormal matrices acting on column
vectors. The regression-friendly 6-value form holds the first two columns
of the target matrix, flattened; quaternions are (w, x, y, z) with unit
norm and w >= 0 after canonicalization. All angles are radians.
"""
from __future__ import annotations

import numpy as np

DEGENERACY_EPS = 1e-12
ROTATION_TOL = 1e-5
GRAD_THETA_MARGIN = 1e-3


class DegenerateRotationError(ValueError):
    """Raised when a 6-value rotation input spans no plane."""


class SingularGradientError(ValueError):
    """Raised when the geodesic loss gradient is evaluated too close to 0 or pi."""


def is_rotation(m, tol=ROTATION_TOL):
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        return False
    if not np.all(np.isfinite(m)):
        return False
    if np.abs(m.T @ m - np.eye(3)).max() > tol:
        return False
    return abs(np.linalg.det(m) - 1.0) <= tol


def _check_rotation(m, name):
    m = np.asarray(m, dtype=np.float64)
    if not is_rotation(m):
        raise ValueError(f"{name} is not a rotation matrix within tolerance {ROTATION_TOL}")
    return m


def rot6d_to_matrix(r):
    """Orthonormalize a 6-value rotation into a matrix.

    The first triple is normalized into the first column; the third column
    is the normalized cross product of that with the second triple; the
    middle column completes the right-handed frame. The map is invariant to
    positive scaling of either triple and is a section: feeding the first
    two columns of any rotation back in reproduces it.
    """
    r = np.asarray(r, dtype=np.float64).reshape(6)
    a1, a2 = r[:3], r[3:]
    n1 = np.linalg.norm(a1)
    if n1 < DEGENERACY_EPS:
        raise DegenerateRotationError("first triple of the 6-value rotation is near zero")
    b1 = a1 / n1
    c = np.cross(b1, a2)
    nc = np.linalg.norm(c)
    if nc < DEGENERACY_EPS:
        raise DegenerateRotationError("6-value rotation triples are near collinear")
    b3 = c / nc
    b2 = np.cross(b3, b1)
    return np.stack([b1, b2, b3], axis=1)


def rot6d_to_matrix_many(rs):
    """Vectorized rot6d_to_matrix over rows of an (N, 6) array.

    Returns (matrices, valid) where degenerate rows are flagged False and
    filled with the identity. Row i of matrices matches rot6d_to_matrix on
    row i of the input whenever valid[i].
    """
    rs = np.asarray(rs, dtype=np.float64).reshape(-1, 6)
    a1, a2 = rs[:, :3], rs[:, 3:]
    n1 = np.linalg.norm(a1, axis=1)
    valid = n1 >= DEGENERACY_EPS
    b1 = a1 / np.where(valid, n1, 1.0)[:, None]
    c = np.cross(b1, a2)
    nc = np.linalg.norm(c, axis=1)
    valid &= nc >= DEGENERACY_EPS
    b3 = c / np.where(nc >= DEGENERACY_EPS, nc, 1.0)[:, None]
    b2 = np.cross(b3, b1)
    mats = np.stack([b1, b2, b3], axis=2)
    mats[~valid] = np.eye(3)
    return mats, valid


def matrix_to_rot6d(m):
    """First two columns of a rotation matrix, flattened."""
    m = _check_rotation(m, "rotation")
    return np.concatenate([m[:, 0], m[:, 1]])


def geodesic_loss(r_gt, r_pred):
    """Angle of the relative rotation, in [0, pi]."""
    r_gt = _check_rotation(r_gt, "r_gt")
    r_pred = _check_rotation(r_pred, "r_pred")
    tr = np.trace(r_gt.T @ r_pred)
    return float(np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0)))


def geodesic_loss_grad(r_gt, r_pred):
    """Gradient of geodesic_loss with respect to the predicted matrix entries.

    Valid away from the endpoints: raises when the angle is within 1e-3 of
    0 or pi, where the derivative blows up.
    """
    theta = geodesic_loss(r_gt, r_pred)
    if theta < GRAD_THETA_MARGIN or theta > np.pi - GRAD_THETA_MARGIN:
        raise SingularGradientError(
            f"geodesic loss gradient undefined near theta={theta:.2e}"
        )
    r_gt = np.asarray(r_gt, dtype=np.float64)
    return -r_gt / (2.0 * np.sin(theta))


def _check_quat(q, name):
    q = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.linalg.norm(q)
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"{name} must be unit norm, |q| = {n!r}")
    return q


def quat_loss(q_gt, q_pred):
    """Double-cover-safe angular distance between unit quaternions."""
    q_gt = _check_quat(q_gt, "q_gt")
    q_pred = _check_quat(q_pred, "q_pred")
    d = min(1.0, abs(float(q_gt @ q_pred)))
    return 2.0 * float(np.arccos(d))


def matrix_to_quat(m):
    """Rotation matrix to unit quaternion (w, x, y, z) with w >= 0."""
    m = _check_rotation(m, "rotation")
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([
            0.25 * s,
            (m[2, 1] - m[1, 2]) / s,
            (m[0, 2] - m[2, 0]) / s,
            (m[1, 0] - m[0, 1]) / s,
        ])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([
            (m[2, 1] - m[1, 2]) / s,
            0.25 * s,
            (m[0, 1] + m[1, 0]) / s,
            (m[0, 2] + m[2, 0]) / s,
        ])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([
            (m[0, 2] - m[2, 0]) / s,
            (m[0, 1] + m[1, 0]) / s,
            0.25 * s,
            (m[1, 2] + m[2, 1]) / s,
        ])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([
            (m[1, 0] - m[0, 1]) / s,
            (m[0, 2] + m[2, 0]) / s,
            (m[1, 2] + m[2, 1]) / s,
            0.25 * s,
        ])
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def quat_to_matrix(q):
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    q = _check_quat(q, "quaternion")
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def axis_angle_matrix(axis, angle):
    """Rotation about a (nonzero) axis by an angle, via the Rodrigues form."""
    axis = np.asarray(axis, dtype=np.float64).reshape(3)
    n = np.linalg.norm(axis)
    if n < DEGENERACY_EPS:
        raise ValueError("rotation axis is near zero")
    x, y, z = axis / n
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def random_rotation(rng):
    """Uniform random rotation from a normalized 4-normal quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return quat_to_matrix(q)


def project_to_rotation(m, tol=1e-3):
    """Nearest rotation by SVD, for near-orthonormal inputs only.

    Inputs farther than `tol` from orthonormality (max abs entry of
    M^T M - I, or det sign flipped) are rejected rather than silently
    repaired.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise ValueError(f"expected a finite 3x3 matrix, got shape {m.shape}")
    if np.abs(m.T @ m - np.eye(3)).max() > tol or np.linalg.det(m) <= 0:
        raise ValueError(f"matrix is not within {tol} of a rotation")
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt
