"""Built-in invariant checks runnable from the command line.

Each check is a small deterministic assertion suite over one module's
core guarantees: quick enough for a smoke run on any install, and
independent of the development test suite.
"""
from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from . import bop, camera, fixture, fpn, heads, metrics, rotation, tensor, visibility, weights


def _conv_oracle(x, p):
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (p.padding,) * 2, (p.padding,) * 2))
    oh = (h + 2 * p.padding - p.kernel_h) // p.stride + 1
    ow = (w + 2 * p.padding - p.kernel_w) // p.stride + 1
    out = np.zeros((p.out_channels, oh, ow))
    gi = c // p.groups
    go = p.out_channels // p.groups
    for o in range(p.out_channels):
        base = (o // go) * gi
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for ci in range(gi):
                    for ki in range(p.kernel_h):
                        for kj in range(p.kernel_w):
                            acc += (p.weight[o, ci, ki, kj]
                                    * xp[base + ci, i * p.stride + ki, j * p.stride + kj])
                out[o, i, j] = acc + p.bias[o]
    return out


def check_tensor_conv():
    rng = np.random.default_rng(11)
    for _ in range(5):
        c, o = rng.integers(1, 4, 2)
        h, w = rng.integers(3, 8, 2)
        k = int(rng.choice([1, 3]))
        p = tensor.ConvParams(rng.standard_normal((o, c, k, k)), rng.standard_normal(o),
                              stride=int(rng.choice([1, 2])), padding=k // 2)
        x = rng.standard_normal((c, h, w))
        np.testing.assert_allclose(tensor.conv2d(x, p), _conv_oracle(x, p), atol=1e-10)


def check_tensor_ops():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((3, 5, 7))
    for axis in ("h", "w"):
        y = x
        for _ in range(4):
            y = tensor.rotate90(y, axis, "ccw")
        np.testing.assert_array_equal(y, x)
        np.testing.assert_array_equal(
            tensor.rotate90(tensor.rotate90(x, axis, "ccw"), axis, "cw"), x)
    cp = tensor.channel_pool(x)
    np.testing.assert_array_equal(cp[0], x.max(axis=0))
    np.testing.assert_array_equal(cp[1], x.mean(axis=0))
    grid = tensor.coord_channels(4, 6)
    assert grid[0, 0, 0] == -1.0 and grid[0, 0, -1] == 1.0
    assert grid[1, 0, 0] == -1.0 and grid[1, -1, 0] == 1.0
    up = tensor.upsample_nearest2x(x)
    assert up.shape == (3, 10, 14)
    np.testing.assert_array_equal(up[:, ::2, ::2], x)


def check_rotation_soundness():
    rng = np.random.default_rng(13)
    eye = np.eye(3)
    for _ in range(200):
        r6 = rng.uniform(-1, 1, 6)
        m = rotation.rot6d_to_matrix(r6)
        assert np.abs(m.T @ m - eye).max() < 1e-9
        assert abs(np.linalg.det(m) - 1) < 1e-9
        again = rotation.rot6d_to_matrix(np.concatenate([m[:, 0], m[:, 1]]))
        assert np.abs(again - m).max() < 1e-9


def check_rotation_losses():
    rng = np.random.default_rng(14)
    for _ in range(100):
        a = rotation.random_rotation(rng)
        b = rotation.random_rotation(rng)
        geo = rotation.geodesic_loss(a, b)
        quat = rotation.quat_loss(rotation.matrix_to_quat(a), rotation.matrix_to_quat(b))
        assert abs(geo - quat) < 1e-6


def check_camera_round_trip():
    intr = camera.CameraIntrinsics(fx=500.0, fy=500.0, px=320.0, py=240.0)
    t = camera.recover_translation((10.0, -20.0, 1.0), (400.0, 300.0), intr)
    assert t[0] == 0.18 and t[1] == 0.08 and t[2] == 1.0
    back = camera.decompose_translation(t, (400.0, 300.0), intr)
    assert abs(back[0] - 10.0) < 1e-9 and abs(back[1] + 20.0) < 1e-9


def check_fpn_fusion():
    rng = np.random.default_rng(15)
    w = fpn.make_tsfm_weights()
    fh = rng.standard_normal((2, 4, 4))
    fl = rng.standard_normal((2, 4, 4))
    fused = fpn.ts_fm_fuse(fh, fl, w)
    np.testing.assert_allclose(fused, 0.375 * (fh + fl), atol=1e-9)
    bypass = fpn.ts_fm_fuse(fh, fl, w, attention_override=1.0)
    np.testing.assert_allclose(bypass, 0.5 * ((fh + fl) + (fl + fh)), atol=0)


def check_fpn_shapes():
    w = fpn.make_tsfpn_weights((4, 4, 4), 4)
    pyr = fpn.ts_fpn_forward(np.zeros((4, 60, 80)), np.zeros((4, 30, 40)),
                             np.zeros((4, 15, 20)), w)
    shapes = [m.shape[1:] for m in pyr.maps]
    assert shapes == [(60, 80), (30, 40), (15, 20), (8, 10), (4, 5)]


def check_heads_residual():
    rng = np.random.default_rng(16)
    hw = heads.make_head_weights(num_classes=3, channels=4, width=4, gn_groups=2, rng=rng)
    zero = heads.make_head_weights(num_classes=3, channels=4, width=4, gn_groups=2)
    hw.rotation.refine = zero.rotation.refine
    f = rng.standard_normal((4, 6, 6))
    base = heads.rotation_head_forward(f, hw, iterations=0)
    np.testing.assert_array_equal(heads.rotation_head_forward(f, hw, iterations=1), base)
    np.testing.assert_array_equal(heads.rotation_head_forward(f, hw, iterations=2), base)


def check_decode_threshold():
    intr = camera.CameraIntrinsics(*fixture.FIXTURE_INTRINSICS)
    logits = np.zeros((2, 4, 5))
    r6d = np.zeros((6, 4, 5))
    r6d[0] = r6d[4] = 1.0
    trans = np.zeros((3, 4, 5))
    trans[2] = 1.0
    raw = [heads.RawGridPredictions(logits, np.zeros((4, 4, 5)), r6d, trans, stride=8)]
    res = heads.decode_predictions(raw, intr, score_thresh=0.4)
    assert len(res.estimates) == 20
    res = heads.decode_predictions(raw, intr, score_thresh=0.51)
    assert len(res.estimates) == 0 and res.num_below_threshold == 20


def check_visibility_seeds():
    b = visibility.Box(0, 0, 8, 8)
    assert len(visibility.seed_boundary(b, 4)) == 8
    assert len(visibility.seed_boundary(visibility.Box(3, 2, 10, 6), 2)) == 16
    assert len(visibility.seed_boundary(b, 1000)) == 4


def check_visibility_uniform():
    img = np.full((20, 20, 3), 120.0)
    box = visibility.Box(2, 2, 12, 10)
    seeds = visibility.seed_boundary(box, 4)
    v = visibility.discrepancy_map(img, box, seeds, alpha=0.1)
    diag = box.diagonal
    for y in range(box.h):
        for x in range(box.w):
            d = min(np.hypot(x - (sx - box.x), y - (sy - box.y)) for sx, sy in seeds)
            assert abs(v.values[y, x] - 0.1 * d / diag) < 1e-9


def check_visibility_fixture():
    img, box = fixture.occlusion_image(occluded=True)
    sel = visibility.select_positive_samples(img, [box])
    inst = sel.per_instance[0]
    assert inst.cells, "no positive cells"
    mid = (box.x + box.w // 2) // visibility_stride(inst)
    for (_, cj) in inst.cells:
        assert cj < mid


def visibility_stride(inst):
    return inst.visibility.stride


def check_metrics_add():
    rng = np.random.default_rng(17)
    model = metrics.ObjectModel(1, rng.standard_normal((40, 3)) * 0.02, diameter=0.08)
    for _ in range(25):
        pa = (rotation.random_rotation(rng), rng.standard_normal(3))
        pb = (rotation.random_rotation(rng), rng.standard_normal(3))
        assert metrics.adds_metric(model, pa, pb) <= metrics.add_metric(model, pa, pb) + 1e-12
    assert metrics.auc_metric([0.05], 0.1) == 50.0
    assert metrics.auc_metric([0.0, 0.0], 0.1) == 100.0
    assert metrics.recall_add_s([0.01], [0.2]) == 100.0
    boundary = 0.1 * 0.2  # exactly the computed threshold: excluded
    assert metrics.recall_add_s([boundary], [0.2]) == 0.0


def check_bop_round_trips():
    rng = np.random.default_rng(18)
    with tempfile.TemporaryDirectory() as td:
        path = Path(td) / "w.semw"
        tensors = {"a.weight": rng.standard_normal((2, 3)),
                   "b": rng.standard_normal(5).astype(np.float32)}
        weights.save_weights(tensors, path)
        loaded = weights.load_weights(path)
        assert set(loaded) == set(tensors)
        for k in tensors:
            np.testing.assert_array_equal(loaded[k], tensors[k])
        scene_dir, models_dir, preds = fixture.synth_fixture(
            Path(td) / "fx", seed=5, n_images=2, n_objects=2)
        scene = bop.load_scene(scene_dir)
        models = bop.load_models(models_dir)
        by_image = bop.load_predictions(preds)
        report, _ = metrics.evaluate(scene.ground_truth, models, by_image)
        assert report.mean.recall_add_s == 100.0
        assert report.mean.auc_add_s == 100.0


CHECKS = {
    "tensor": [("conv matches direct summation", check_tensor_conv),
               ("rotations, pooling, coords, upsampling", check_tensor_ops)],
    "rotation": [("orthonormal and section-stable", check_rotation_soundness),
                 ("trace and quaternion losses agree", check_rotation_losses)],
    "camera": [("translation round trip", check_camera_round_trip)],
    "fpn": [("zero-weight fusion closed form", check_fpn_fusion),
            ("pyramid shapes", check_fpn_shapes)],
    "heads": [("zero refinement is identity", check_heads_residual),
              ("score threshold is strict", check_decode_threshold)],
    "visibility": [("seed counts", check_visibility_seeds),
                   ("uniform image distance law", check_visibility_uniform),
                   ("occluded half excluded", check_visibility_fixture)],
    "metrics": [("symmetry-aware distances and curves", check_metrics_add)],
    "bop": [("container, fixture, and zero-noise eval", check_bop_round_trips)],
}


def run(module=None, out=print):
    """Run one module's checks or all of them; returns True when all pass."""
    if module is not None and module not in CHECKS:
        raise ValueError(f"unknown module {module!r}; choose from {sorted(CHECKS)}")
    ok = True
    for mod, entries in CHECKS.items():
        if module is not None and mod != module:
            continue
        for label, fn in entries:
            try:
                fn()
            except Exception as e:  # report and continue
                ok = False
                out(f"FAIL {mod}: {label} ({e})")
            else:
                out(f"PASS {mod}: {label}")
    return ok
