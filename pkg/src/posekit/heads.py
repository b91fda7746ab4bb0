"""Prediction heads over the pyramid and decoding into pose estimates.

One weight set serves every pyramid level. Classification and box towers
are four conv+norm+swish blocks plus an output conv. The three regression
branches (6-value rotation, lateral pixel offsets, depth) each run an
initialization pass over coordinate-augmented features and then refine the
output with one or more residual passes.

Decoding turns raw per-level grids into world-space pose estimates: cells
are kept when their best class score clears the threshold strictly, the
6-value rotations are orthonormalized, translations are back-projected at
the cell anchors, and near-duplicates are removed with greedy per-class
box suppression. The per-image cost is dominated by the dense grid scan,
so it does not grow with the number of detected objects.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .camera import recover_translation_many
from .fpn import Pyramid
from .rotation import rot6d_to_matrix_many
from .tensor import (
    ConvParams,
    GroupNormParams,
    concat_channels,
    conv2d,
    coord_channels,
    depthwise_separable_conv,
    ensure_chw,
    group_norm,
    sigmoid,
    swish,
)

DEFAULT_SCORE_THRESH = 0.4
DEFAULT_NMS_IOU = 0.6


@dataclass
class ConvBlock:
    conv: ConvParams
    norm: GroupNormParams


@dataclass
class DSConvBlock:
    depthwise: ConvParams
    pointwise: ConvParams
    norm: GroupNormParams


@dataclass
class PInMWeights:
    """Initialization pass: entry conv, three separable blocks, compressor."""

    entry: ConvParams
    blocks: list
    out_depthwise: ConvParams
    out_pointwise: ConvParams

    def __post_init__(self):
        if len(self.blocks) != 3:
            raise ValueError(f"initialization pass needs 3 blocks, got {len(self.blocks)}")


@dataclass
class PItMWeights:
    """Refinement pass: two separable blocks and a residual compressor."""

    blocks: list
    out_depthwise: ConvParams
    out_pointwise: ConvParams

    def __post_init__(self):
        if len(self.blocks) != 2:
            raise ValueError(f"refinement pass needs 2 blocks, got {len(self.blocks)}")


@dataclass
class IterativeHeadWeights:
    init: PInMWeights
    refine: PItMWeights


@dataclass
class HeadWeights:
    class_tower: list
    class_out: ConvParams
    bbox_tower: list
    bbox_out: ConvParams
    rotation: IterativeHeadWeights
    trans_xy: IterativeHeadWeights
    trans_z: IterativeHeadWeights

    @property
    def num_classes(self):
        return self.class_out.out_channels


def _ds_block(x, b):
    out = depthwise_separable_conv(x, b.depthwise, b.pointwise)
    return swish(group_norm(out, b.norm))


def pinm_forward(f, w):
    """Run the initialization pass; returns (trunk features, initial output)."""
    f = ensure_chw(f, "head input")
    coords = coord_channels(f.shape[1], f.shape[2])
    x = conv2d(concat_channels([f, coords]), w.entry)
    for b in w.blocks:
        x = _ds_block(x, b)
    init = depthwise_separable_conv(x, w.out_depthwise, w.out_pointwise)
    return x, init


def pitm_forward(pre, init, w):
    """One residual refinement: predicts a delta from (trunk, current) and adds it."""
    x = concat_channels([pre, init])
    for b in w.blocks:
        x = _ds_block(x, b)
    delta = depthwise_separable_conv(x, w.out_depthwise, w.out_pointwise)
    return init + delta


def iterative_head_forward(f, w, iterations=1):
    """Initialization pass plus `iterations` refinement passes (shared weights)."""
    if iterations < 0:
        raise ValueError(f"iterations must be >= 0, got {iterations}")
    pre, out = pinm_forward(f, w.init)
    for _ in range(iterations):
        out = pitm_forward(pre, out, w.refine)
    return out


def rotation_head_forward(f, hw, iterations=1):
    """6-channel rotation grid."""
    return iterative_head_forward(f, hw.rotation, iterations)


def translation_head_forward(f, hw, iterations=1):
    """3-channel grid: pixel offsets (dx, dy) and direct depth tz.

    The lateral and depth branches run independently and are concatenated.
    """
    xy = iterative_head_forward(f, hw.trans_xy, iterations)
    z = iterative_head_forward(f, hw.trans_z, iterations)
    return concat_channels([xy, z])


def _tower(f, blocks, out_conv):
    x = f
    for b in blocks:
        x = swish(group_norm(conv2d(x, b.conv), b.norm))
    return conv2d(x, out_conv)


def class_bbox_towers_forward(f, hw):
    """Per-cell class logits and (left, top, right, bottom) box distances."""
    f = ensure_chw(f, "tower input")
    return _tower(f, hw.class_tower, hw.class_out), _tower(f, hw.bbox_tower, hw.bbox_out)


@dataclass
class RawGridPredictions:
    """Dense per-level outputs, all sharing the level's spatial grid."""

    class_logits: np.ndarray
    bbox: np.ndarray
    r6d: np.ndarray
    trans: np.ndarray
    stride: int

    def __post_init__(self):
        hw = self.class_logits.shape[1:]
        for name in ("bbox", "r6d", "trans"):
            if getattr(self, name).shape[1:] != hw:
                raise ValueError(f"{name} grid does not match class grid {hw}")
        if self.bbox.shape[0] != 4 or self.r6d.shape[0] != 6 or self.trans.shape[0] != 3:
            raise ValueError("grid channel counts must be (bbox 4, r6d 6, trans 3)")


def model_forward(pyramid, hw, iterations=1):
    """Apply the shared heads to every pyramid level."""
    out = []
    for f, stride in zip(pyramid.maps, pyramid.strides):
        logits, bbox = class_bbox_towers_forward(f, hw)
        r6d = rotation_head_forward(f, hw, iterations)
        trans = translation_head_forward(f, hw, iterations)
        out.append(RawGridPredictions(logits, bbox, r6d, trans, stride))
    return out


@dataclass
class PoseEstimate:
    class_id: int
    score: float
    rotation: np.ndarray
    translation: np.ndarray
    level: int
    cell: tuple
    bbox: np.ndarray


@dataclass
class DecodeResult:
    estimates: list
    num_below_threshold: int = 0
    num_degenerate_rotation: int = 0
    num_nonpositive_depth: int = 0
    num_suppressed: int = 0
    seconds: float = 0.0


def _box_iou(a, b):
    x0 = max(a[0], b[0])
    y0 = max(a[1], b[1])
    x1 = min(a[2], b[2])
    y1 = min(a[3], b[3])
    inter = max(0.0, x1 - x0) * max(0.0, y1 - y0)
    area_a = max(0.0, a[2] - a[0]) * max(0.0, a[3] - a[1])
    area_b = max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _greedy_nms(boxes, order, iou_thresh):
    keep = []
    suppressed = bytearray(len(order))
    for oi, idx in enumerate(order):
        if suppressed[oi]:
            continue
        keep.append(idx)
        for oj in range(oi + 1, len(order)):
            if suppressed[oj]:
                continue
            if _box_iou(boxes[idx], boxes[order[oj]]) > iou_thresh:
                suppressed[oj] = 1
    return keep


def decode_predictions(raw, intrinsics, score_thresh=DEFAULT_SCORE_THRESH,
                       nms_iou=DEFAULT_NMS_IOU, tz_log_space=False):
    """Raw per-level grids to a score-sorted list of pose estimates.

    A cell survives when sigmoid of its best class logit is strictly above
    score_thresh. Degenerate rotations and non-positive depths are dropped
    and counted, never raised. With tz_log_space the depth channel is read
    as log-depth.
    """
    t0 = time.perf_counter()
    cls_ids, scores, rots, trans, levels, cells, boxes = [], [], [], [], [], [], []
    n_below = n_degen = n_baddepth = 0
    for level, grids in enumerate(raw):
        logits = grids.class_logits
        best = logits.max(axis=0)
        best_cls = logits.argmax(axis=0)
        score = sigmoid(best)
        keep = score > score_thresh
        n_below += int(keep.size - keep.sum())
        if not keep.any():
            continue
        ii, jj = np.nonzero(keep)
        r6 = grids.r6d[:, ii, jj].T
        mats, valid = rot6d_to_matrix_many(r6)
        n_degen += int((~valid).sum())

        tz = grids.trans[2, ii, jj]
        if tz_log_space:
            tz = np.exp(tz)
        depth_ok = tz > 0
        n_baddepth += int((valid & ~depth_ok).sum())
        valid &= depth_ok

        if not valid.any():
            continue
        ii, jj = ii[valid], jj[valid]
        mats = mats[valid]
        tz = tz[valid]
        s = grids.stride
        ax = (jj + 0.5) * s
        ay = (ii + 0.5) * s
        dx = grids.trans[0, ii, jj]
        dy = grids.trans[1, ii, jj]
        t3 = recover_translation_many(dx, dy, tz, ax, ay, intrinsics)

        ltrb = grids.bbox[:, ii, jj]
        boxes.append(np.stack([ax - ltrb[0], ay - ltrb[1], ax + ltrb[2], ay + ltrb[3]], axis=1))
        cls_ids.append(best_cls[ii, jj])
        scores.append(score[ii, jj])
        rots.append(mats)
        trans.append(t3)
        levels.append(np.full(ii.shape, level))
        cells.append(np.stack([ii, jj], axis=1))

    result = DecodeResult([], n_below, n_degen, n_baddepth)
    if not scores:
        result.seconds = time.perf_counter() - t0
        return result

    cls_ids = np.concatenate(cls_ids)
    scores = np.concatenate(scores)
    rots = np.concatenate(rots)
    trans = np.concatenate(trans)
    levels = np.concatenate(levels)
    cells = np.concatenate(cells)
    boxes_arr = np.concatenate(boxes)

    order = np.argsort(-scores, kind="stable")
    by_class = {}
    for idx in order.tolist():
        by_class.setdefault(int(cls_ids[idx]), []).append(idx)
    kept = []
    for c_order in by_class.values():
        kept.extend(_greedy_nms(boxes_arr, c_order, nms_iou))
    result.num_suppressed = len(scores) - len(kept)
    kept = np.asarray(kept, dtype=np.intp)
    tie_break = np.lexsort((cells[kept, 1], cells[kept, 0], levels[kept], -scores[kept]))
    kept = kept[tie_break]

    cls_list = cls_ids[kept].tolist()
    score_list = scores[kept].tolist()
    level_list = levels[kept].tolist()
    cell_list = cells[kept].tolist()
    for n, i in enumerate(kept.tolist()):
        result.estimates.append(PoseEstimate(
            class_id=cls_list[n],
            score=score_list[n],
            rotation=rots[i],
            translation=trans[i],
            level=level_list[n],
            cell=tuple(cell_list[n]),
            bbox=boxes_arr[i],
        ))
    result.seconds = time.perf_counter() - t0
    return result


def _conv(rng, out_c, in_c, k, groups=1):
    shape = (out_c, in_c // groups, k, k)
    if rng is None:
        weight = np.zeros(shape)
    else:
        weight = rng.standard_normal(shape) / np.sqrt((in_c // groups) * k * k)
    return ConvParams(weight, np.zeros(out_c), stride=1, padding=k // 2, groups=groups)


def _gn(rng, channels, groups):
    if rng is None:
        return GroupNormParams(groups, np.zeros(channels), np.zeros(channels))
    return GroupNormParams(groups, np.ones(channels), np.zeros(channels))


def _ds(rng, in_c, out_c, groups):
    return DSConvBlock(
        depthwise=_conv(rng, in_c, in_c, 3, groups=in_c),
        pointwise=_conv(rng, out_c, in_c, 1),
        norm=_gn(rng, out_c, groups),
    )


def _iterative(rng, in_c, width, out_c, groups):
    init = PInMWeights(
        entry=_conv(rng, width, in_c + 2, 3),
        blocks=[_ds(rng, width, width, groups) for _ in range(3)],
        out_depthwise=_conv(rng, width, width, 3, groups=width),
        out_pointwise=_conv(rng, out_c, width, 1),
    )
    refine = PItMWeights(
        blocks=[_ds(rng, width + out_c if i == 0 else width, width, groups) for i in range(2)],
        out_depthwise=_conv(rng, width, width, 3, groups=width),
        out_pointwise=_conv(rng, out_c, width, 1),
    )
    return IterativeHeadWeights(init, refine)


def make_head_weights(num_classes, channels=256, width=256, gn_groups=32, rng=None):
    """Zero weights by default (pass a Generator for a random init).

    The zero form also zeroes the norm affine, so every tower and branch
    output is exactly zero regardless of input.
    """
    if width % gn_groups or channels % gn_groups:
        raise ValueError("group count must divide both tower width and channels")
    return HeadWeights(
        class_tower=[
            ConvBlock(_conv(rng, channels, channels, 3), _gn(rng, channels, gn_groups))
            for _ in range(4)
        ],
        class_out=_conv(rng, num_classes, channels, 3),
        bbox_tower=[
            ConvBlock(_conv(rng, channels, channels, 3), _gn(rng, channels, gn_groups))
            for _ in range(4)
        ],
        bbox_out=_conv(rng, 4, channels, 3),
        rotation=_iterative(rng, channels, width, 6, gn_groups),
        trans_xy=_iterative(rng, channels, width, 2, gn_groups),
        trans_z=_iterative(rng, channels, width, 1, gn_groups),
    )
