"""Deterministic synthetic scenes for exercising the evaluation pipeline.

One seed fixes everything. The generator draws, in order: per-class model
point clouds, then per image and per instance the true pose, the
perturbation axis pair, and the prediction score. Predictions perturb the
truth by an exact rotation angle and an exact translation distance, so an
evaluation run must recover those numbers as its mean errors.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .rotation import axis_angle_matrix, quat_to_matrix

MM_PER_M = 1000.0

FIXTURE_INTRINSICS = (572.4114, 573.57043, 325.2611, 242.04899)
DEFAULT_CLASSES = 5
POINTS_PER_MODEL = 96
SYMMETRIC_CLASS = 5  # the last default class gets a symmetry marking


def _random_unit(rng):
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def _random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return quat_to_matrix(q)


def _model_points(rng, n_points):
    """A blobby shell around the origin, roughly 6 cm across, in meters."""
    dirs = rng.standard_normal((n_points, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = 0.02 + 0.01 * rng.random(n_points)
    return dirs * radii[:, None]


def _write_ply(path, points_mm):
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points_mm)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    for p in points_mm:
        lines.append(" ".join(repr(float(v)) for v in p))
    path.write_text("\n".join(lines) + "\n")


def synth_fixture(out_dir, seed=0, n_images=10, n_objects=3, rot_deg=0.0,
                  trans_m=0.0, n_classes=DEFAULT_CLASSES,
                  points_per_model=POINTS_PER_MODEL):
    """Write a scene, models, and perturbed predictions under out_dir.

    rot_deg and trans_m are the exact per-instance perturbation magnitudes
    (rotation about a random axis, translation along a random direction).
    At zero noise the predictions repeat the ground-truth values verbatim.
    Returns the paths (scene_dir, models_dir, preds_csv).
    """
    out_dir = Path(out_dir)
    scene_dir = out_dir / "scene"
    models_dir = out_dir / "models"
    scene_dir.mkdir(parents=True, exist_ok=True)
    models_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    info = {}
    for cls in range(1, n_classes + 1):
        pts_m = _model_points(rng, points_per_model)
        pts_mm = pts_m * MM_PER_M
        _write_ply(models_dir / f"obj_{cls:06d}.ply", pts_mm)
        deltas = pts_mm[None, :, :] - pts_mm[:, None, :]
        diameter = float(np.sqrt((deltas ** 2).sum(axis=2).max()))
        meta = {"diameter": diameter}
        if cls == SYMMETRIC_CLASS and cls <= n_classes:
            meta["symmetries_continuous"] = [{"axis": [0, 0, 1], "offset": [0, 0, 0]}]
        info[str(cls)] = meta
    (models_dir / "models_info.json").write_text(
        json.dumps(info, indent=2, sort_keys=True) + "\n"
    )

    fx, fy, px, py = FIXTURE_INTRINSICS
    cam_k = [fx, 0.0, px, 0.0, fy, py, 0.0, 0.0, 1.0]
    angle = np.radians(rot_deg)
    scene_gt = {}
    scene_cam = {}
    pred_rows = []
    for im in range(n_images):
        entries = []
        for k in range(n_objects):
            cls = (k % n_classes) + 1
            r_gt = _random_rotation(rng)
            t_gt = np.array([
                rng.uniform(-0.25, 0.25),
                rng.uniform(-0.18, 0.18),
                rng.uniform(0.6, 1.6),
            ])
            axis_r = _random_unit(rng)
            axis_t = _random_unit(rng)
            score = rng.uniform(0.5, 1.0)
            if rot_deg == 0.0:
                r_pred = r_gt
            else:
                r_pred = r_gt @ axis_angle_matrix(axis_r, angle)
            if trans_m == 0.0:
                t_pred = t_gt
            else:
                t_pred = t_gt + trans_m * axis_t
            entries.append({
                "cam_R_m2c": [float(v) for v in r_gt.reshape(9)],
                "cam_t_m2c": [float(v) for v in t_gt * MM_PER_M],
                "obj_id": cls,
            })
            pred_rows.append(",".join([
                "0", str(im), str(cls), repr(float(score)),
                " ".join(repr(float(v)) for v in r_pred.reshape(9)),
                " ".join(repr(float(v)) for v in t_pred * MM_PER_M),
                "-1.0",
            ]))
        scene_gt[str(im)] = entries
        scene_cam[str(im)] = {"cam_K": cam_k, "depth_scale": 1.0}

    (scene_dir / "scene_gt.json").write_text(
        json.dumps(scene_gt, indent=2, sort_keys=True) + "\n"
    )
    (scene_dir / "scene_camera.json").write_text(
        json.dumps(scene_cam, indent=2, sort_keys=True) + "\n"
    )
    preds_path = out_dir / "preds.csv"
    header = "scene_id,im_id,obj_id,score,R,t,time"
    preds_path.write_text("\n".join([header] + pred_rows) + "\n")
    return scene_dir, models_dir, preds_path


def occlusion_image(size=(96, 96), box=None, occluded=False, margin=2,
                    background=(225, 225, 225), object_color=(25, 60, 140)):
    """A flat background with a colored object patch inside a box.

    The patch is inset by `margin` so boundary seeds land on background
    pixels. With occluded=True everything right of the box midline is
    painted back over in the background color, leaving only the left half
    of the object visible. Returns (image, box) where box bounds the full
    nominal object extent either way.
    """
    from .visibility import Box

    h, w = size
    if box is None:
        box = Box(w // 4, h // 4, w // 2, h // 2)
    img = np.empty((h, w, 3), dtype=np.float64)
    img[:] = background
    x0, y0 = box.x + margin, box.y + margin
    x1, y1 = box.x + box.w - margin, box.y + box.h - margin
    img[y0:y1, x0:x1] = object_color
    if occluded:
        img[y0:y1, box.x + box.w // 2:x1] = background
    return img, box
