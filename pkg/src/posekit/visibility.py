"""Visibility-guided positive-sample selection inside ground-truth boxes.

The salience of a pixel against the box boundary is measured with a
color barrier: along a 4-connected path from a boundary seed, the barrier
is the largest per-channel span (path max minus path min), taken over the
worst channel. Each pixel scores the minimum over seeds and paths of the
squared normalized barrier plus a small distance penalty toward the
winning seed. Production uses iterated forward/backward raster relaxation
with the per-channel extrema and originating seed carried as state; this
never undercuts the exact minimum because every relaxed value is the cost
of a genuine path.

Cell scores average the pixel field over each overlapping stride-aligned
grid cell, are normalized by the best cell, and become positive samples
when strictly above the threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_SPACING = 4
DEFAULT_ALPHA = 0.1
DEFAULT_TAU = 0.25
MAX_PASSES = 8

# Level assignment by box extent, FCOS-style upper bounds per stride.
SIZE_RANGES = (64, 128, 256, 512)


class DegenerateVisibilityError(ValueError):
    """Raised when every cell scores zero and normalization is impossible."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned pixel box: top-left corner plus positive extent."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"box needs positive extent, got {self.w}x{self.h}")

    @property
    def area(self):
        return self.w * self.h

    @property
    def diagonal(self):
        return math.hypot(self.w, self.h)


def seed_boundary(box, spacing=DEFAULT_SPACING):
    """Evenly spaced seed pixels along the box perimeter, corners included.

    Each edge is walked from its starting corner in steps of `spacing`
    along the continuous perimeter (arc lengths w, h, w, h), and every
    position is clamped onto the pixel ring. All four corner pixels are
    always present; duplicates from clamping collisions are removed. With
    no collisions the count is floor(perimeter / spacing).
    """
    if spacing < 1:
        raise ValueError(f"spacing must be >= 1, got {spacing}")
    w, h = box.w, box.h
    seeds = []
    for u in range(0, w, spacing):  # top, left to right
        seeds.append((box.x + min(u, w - 1), box.y))
    for v in range(0, h, spacing):  # right, downward
        seeds.append((box.x + w - 1, box.y + min(v, h - 1)))
    for u in range(0, w, spacing):  # bottom, right to left
        seeds.append((box.x + min(w - u, w - 1), box.y + h - 1))
    for v in range(0, h, spacing):  # left, upward
        seeds.append((box.x, box.y + min(h - v, h - 1)))
    seen = set()
    out = []
    for s in seeds:
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out


@dataclass
class DiscrepancyMap:
    """Pixel scores over a box crop plus the seed that produced each one."""

    values: np.ndarray
    seed_index: np.ndarray
    box: Box


def _check_image(image):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3), got shape {img.shape}")
    if img.min() < 0 or img.max() > 255:
        raise ValueError("image values must lie in [0, 255]")
    return img


def discrepancy_map(image, box, seeds, alpha=DEFAULT_ALPHA, max_passes=MAX_PASSES):
    """Relaxed minimum-barrier scores over the box crop.

    Seeds are image-coordinate pixels on the box boundary. Each raster
    pass sweeps forward (upper/left neighbors) then backward (lower/right
    neighbors), extending the neighbor's path state; passes stop when
    nothing changes or at the pass cap.
    """
    img = _check_image(image)
    ih, iw = img.shape[:2]
    if box.x < 0 or box.y < 0 or box.x + box.w > iw or box.y + box.h > ih:
        raise ValueError(f"box {box} extends outside the {iw}x{ih} image")
    if not seeds:
        raise ValueError("at least one seed is required")
    w, h = box.w, box.h
    crop = img[box.y:box.y + box.h, box.x:box.x + box.w]
    diag = box.diagonal
    seed_pos = []
    for sx, sy in seeds:
        lx, ly = sx - box.x, sy - box.y
        if not (0 <= lx < w and 0 <= ly < h):
            raise ValueError(f"seed ({sx}, {sy}) lies outside the box")
        seed_pos.append((lx, ly))

    n = w * h
    cr = crop[:, :, 0].ravel().tolist()
    cg = crop[:, :, 1].ravel().tolist()
    cb = crop[:, :, 2].ravel().tolist()
    inf = math.inf
    vals = [inf] * n
    hi_r = [0.0] * n
    hi_g = [0.0] * n
    hi_b = [0.0] * n
    lo_r = [0.0] * n
    lo_g = [0.0] * n
    lo_b = [0.0] * n
    sid = [-1] * n
    for idx, (lx, ly) in enumerate(seed_pos):
        i = ly * w + lx
        if vals[i] == 0.0:
            continue
        vals[i] = 0.0
        hi_r[i] = lo_r[i] = cr[i]
        hi_g[i] = lo_g[i] = cg[i]
        hi_b[i] = lo_b[i] = cb[i]
        sid[i] = idx

    inv = 1.0 / 255.0
    a_over_diag = alpha / diag
    hypot = math.hypot

    def relax(i, j, x, y):
        pr, pg, pb = cr[i], cg[i], cb[i]
        nhr = hi_r[j]
        if pr > nhr:
            nhr = pr
        nlr = lo_r[j]
        if pr < nlr:
            nlr = pr
        nhg = hi_g[j]
        if pg > nhg:
            nhg = pg
        nlg = lo_g[j]
        if pg < nlg:
            nlg = pg
        nhb = hi_b[j]
        if pb > nhb:
            nhb = pb
        nlb = lo_b[j]
        if pb < nlb:
            nlb = pb
        span = nhr - nlr
        sg = nhg - nlg
        if sg > span:
            span = sg
        sb = nhb - nlb
        if sb > span:
            span = sb
        s = sid[j]
        sx, sy = seed_pos[s]
        cost = (span * inv) ** 2 + a_over_diag * hypot(x - sx, y - sy)
        if cost < vals[i]:
            vals[i] = cost
            hi_r[i], lo_r[i] = nhr, nlr
            hi_g[i], lo_g[i] = nhg, nlg
            hi_b[i], lo_b[i] = nhb, nlb
            sid[i] = s
            return True
        return False

    for _ in range(max_passes):
        changed = False
        for y in range(h):
            base = y * w
            for x in range(w):
                i = base + x
                if y > 0 and vals[i - w] < inf and relax(i, i - w, x, y):
                    changed = True
                if x > 0 and vals[i - 1] < inf and relax(i, i - 1, x, y):
                    changed = True
        for y in range(h - 1, -1, -1):
            base = y * w
            for x in range(w - 1, -1, -1):
                i = base + x
                if y < h - 1 and vals[i + w] < inf and relax(i, i + w, x, y):
                    changed = True
                if x < w - 1 and vals[i + 1] < inf and relax(i, i + 1, x, y):
                    changed = True
        if not changed:
            break

    return DiscrepancyMap(
        values=np.array(vals).reshape(h, w),
        seed_index=np.array(sid, dtype=np.int64).reshape(h, w),
        box=box,
    )


@dataclass
class CellVisibility:
    """Normalized per-cell scores on the stride grid covering the box.

    prob and mask are indexed relative to origin = (first row, first col)
    of the covered cells in the full level grid.
    """

    prob: np.ndarray
    mask: np.ndarray
    origin: tuple
    stride: int


def cell_visibility(v, stride, tau=DEFAULT_TAU):
    """Average the pixel field per grid cell, normalize, and threshold.

    A cell is positive when its normalized score strictly exceeds tau.
    All-zero cell averages cannot be normalized and raise.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    box = v.box
    j0, j1 = box.x // stride, (box.x + box.w - 1) // stride
    i0, i1 = box.y // stride, (box.y + box.h - 1) // stride
    vbar = np.empty((i1 - i0 + 1, j1 - j0 + 1))
    for ci in range(i0, i1 + 1):
        y_lo = max(ci * stride, box.y) - box.y
        y_hi = min((ci + 1) * stride, box.y + box.h) - box.y
        for cj in range(j0, j1 + 1):
            x_lo = max(cj * stride, box.x) - box.x
            x_hi = min((cj + 1) * stride, box.x + box.w) - box.x
            vbar[ci - i0, cj - j0] = v.values[y_lo:y_hi, x_lo:x_hi].mean()
    vmax = vbar.max()
    if vmax <= 0.0:
        raise DegenerateVisibilityError("all cell scores are zero; cannot normalize")
    prob = vbar / vmax
    return CellVisibility(prob=prob, mask=prob > tau, origin=(i0, j0), stride=stride)


def assign_level(box, strides, size_ranges=SIZE_RANGES):
    """Index of the pyramid level responsible for a box of this extent."""
    m = max(box.w, box.h)
    for i, upper in enumerate(size_ranges[:len(strides) - 1]):
        if m <= upper:
            return i
    return len(strides) - 1


@dataclass
class InstanceSamples:
    index: int
    level: int
    visibility: CellVisibility
    cells: list


@dataclass
class PositiveSamples:
    per_instance: list
    level_owner: list


def select_positive_samples(image, boxes, strides=(8, 16, 32, 64, 128),
                            spacing=DEFAULT_SPACING, alpha=DEFAULT_ALPHA,
                            tau=DEFAULT_TAU):
    """Visibility-positive cells for every instance, conflicts resolved.

    Each box is assigned one level by extent, seeded along its boundary,
    scored, and thresholded. When two instances claim the same cell on the
    same level the smaller box keeps it (first come on equal areas).
    Returns per-instance winning cells in full-grid coordinates plus
    per-level owner grids (-1 where unclaimed).
    """
    img = _check_image(image)
    ih, iw = img.shape[:2]
    owners = [
        np.full((-(-ih // s), -(-iw // s)), -1, dtype=np.int64)
        for s in strides
    ]
    results = []
    for idx, box in enumerate(boxes):
        level = assign_level(box, strides)
        stride = strides[level]
        seeds = seed_boundary(box, spacing)
        v = discrepancy_map(img, box, seeds, alpha)
        cv = cell_visibility(v, stride, tau)
        results.append(InstanceSamples(index=idx, level=level, visibility=cv, cells=[]))
        owner = owners[level]
        i0, j0 = cv.origin
        for di, dj in zip(*np.nonzero(cv.mask)):
            ci, cj = i0 + int(di), j0 + int(dj)
            cur = owner[ci, cj]
            if cur < 0 or boxes[idx].area < boxes[cur].area:
                owner[ci, cj] = idx
    for inst in results:
        owner = owners[inst.level]
        i0, j0 = inst.visibility.origin
        for di, dj in zip(*np.nonzero(inst.visibility.mask)):
            ci, cj = i0 + int(di), j0 + int(dj)
            if owner[ci, cj] == inst.index:
                inst.cells.append((ci, cj))
    return PositiveSamples(per_instance=results, level_owner=owners)
