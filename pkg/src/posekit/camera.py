"""Pinhole camera geometry and translation regression targets.

Translations live in camera coordinates, in meters, with depth positive
along the optical axis. The regressed form is (dx, dy, tz): a pixel offset
from an anchor point plus a direct depth. Anchors and offsets are in input
image pixels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters in pixels: focal lengths and principal point."""

    fx: float
    fy: float
    px: float
    py: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def from_matrix(cls, k):
        k = np.asarray(k, dtype=np.float64).reshape(3, 3)
        fixed = [k[0, 1], k[1, 0], k[2, 0], k[2, 1]]
        if any(v != 0.0 for v in fixed) or k[2, 2] != 1.0:
            raise ValueError("matrix is not an axis-aligned pinhole calibration")
        return cls(fx=float(k[0, 0]), fy=float(k[1, 1]), px=float(k[0, 2]), py=float(k[1, 2]))

    def to_matrix(self):
        return np.array([
            [self.fx, 0.0, self.px],
            [0.0, self.fy, self.py],
            [0.0, 0.0, 1.0],
        ])


def cell_anchor(row, col, stride):
    """Center of grid cell (row, col) at a pyramid stride, in image pixels."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return ((col + 0.5) * stride, (row + 0.5) * stride)


def recover_translation(param, anchor, intrinsics):
    """Back-project (dx, dy, tz) at an anchor into a camera-space translation.

    The projected object center sits at anchor + (dx, dy); together with a
    positive depth tz the pinhole model fixes tx and ty.
    """
    dx, dy, tz = (float(v) for v in param)
    ax, ay = (float(v) for v in anchor)
    if tz <= 0:
        raise ValueError(f"depth must be positive, got tz={tz}")
    tx = (ax + dx - intrinsics.px) * tz / intrinsics.fx
    ty = (ay + dy - intrinsics.py) * tz / intrinsics.fy
    return np.array([tx, ty, tz])


def recover_translation_many(dx, dy, tz, ax, ay, intrinsics):
    """Vectorized recover_translation over parallel arrays (no depth check)."""
    tx = (ax + dx - intrinsics.px) * tz / intrinsics.fx
    ty = (ay + dy - intrinsics.py) * tz / intrinsics.fy
    return np.stack([tx, ty, tz], axis=-1)


def decompose_translation(t, anchor, intrinsics):
    """Inverse of recover_translation: translation vector to (dx, dy, tz)."""
    t = np.asarray(t, dtype=np.float64).reshape(3)
    tx, ty, tz = t
    if tz <= 0:
        raise ValueError(f"depth must be positive, got tz={tz}")
    ax, ay = (float(v) for v in anchor)
    dx = tx * intrinsics.fx / tz + intrinsics.px - ax
    dy = ty * intrinsics.fy / tz + intrinsics.py - ay
    return (dx, dy, tz)


def tran_loss_xy(pred, gt):
    """Euclidean distance between predicted and true lateral components."""
    pred = np.asarray(pred, dtype=np.float64).reshape(3)
    gt = np.asarray(gt, dtype=np.float64).reshape(3)
    return float(np.hypot(pred[0] - gt[0], pred[1] - gt[1]))


def tran_loss_z(pred, gt):
    """Absolute depth difference."""
    pred = np.asarray(pred, dtype=np.float64).reshape(3)
    gt = np.asarray(gt, dtype=np.float64).reshape(3)
    return float(abs(pred[2] - gt[2]))


def translation_error(pred, gt):
    """Full Euclidean distance between translations, in meters."""
    pred = np.asarray(pred, dtype=np.float64).reshape(3)
    gt = np.asarray(gt, dtype=np.float64).reshape(3)
    return float(np.linalg.norm(pred - gt))
