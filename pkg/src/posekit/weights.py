"""Binary weight container and the full-model weight bundle.

The container holds named float tensors. Byte layout, all little-endian:

    magic   4 bytes  "SEMW"
    version u32      currently 1
    count   u32      number of tensors
    then per tensor:
        name_len u32, name bytes (UTF-8)
        dtype    u8   0 = float32, 1 = float64
        rank     u32
        dims     rank * u64
        payload  prod(dims) * itemsize bytes, C order

Model bundles flatten the pyramid and head weight structures into such a
container under stable dotted names; convolution stride/padding/groups
and normalization group/eps settings ride along as tiny ".meta" tensors.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fpn import TSFMWeights, TSFPNWeights, make_tsfpn_weights
from .heads import (
    ConvBlock,
    DSConvBlock,
    HeadWeights,
    IterativeHeadWeights,
    PInMWeights,
    PItMWeights,
    make_head_weights,
)
from .tensor import ConvParams, GroupNormParams

MAGIC = b"SEMW"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class WeightFormatError(Exception):
    """Container violates the declared layout; carries path and byte offset."""

    def __init__(self, path, message, offset=None):
        self.path = str(path)
        self.offset = offset
        where = f"{path}" if offset is None else f"{path} (offset {offset})"
        super().__init__(f"{where}: {message}")


def save_weights(tensors, path):
    """Write a name->array mapping; arrays must be float32 or float64."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise ValueError(f"tensor {name!r} has dtype {arr.dtype}; only float32/float64")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BI", _CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_weights(path):
    """Read a container back into an ordered name->array mapping."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise WeightFormatError(path, str(e)) from e
    if blob[:4] != MAGIC:
        raise WeightFormatError(path, f"bad magic {blob[:4]!r}", offset=0)
    if len(blob) < 12:
        raise WeightFormatError(path, "truncated header", offset=len(blob))
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise WeightFormatError(path, f"unsupported version {version}", offset=4)
    off = 12
    out = {}
    for i in range(count):
        try:
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + name_len].decode("utf-8")
            if len(blob[off:off + name_len]) != name_len:
                raise struct.error("name truncated")
            off += name_len
            code, rank = struct.unpack_from("<BI", blob, off)
            off += 5
            dims = struct.unpack_from(f"<{rank}Q", blob, off)
            off += 8 * rank
        except (struct.error, UnicodeDecodeError) as e:
            raise WeightFormatError(path, f"bad tensor header #{i}: {e}", offset=off) from e
        if code not in _DTYPES:
            raise WeightFormatError(path, f"unknown dtype code {code} for {name!r}", offset=off)
        if name in out:
            raise WeightFormatError(path, f"duplicate tensor name {name!r}", offset=off)
        dtype = _DTYPES[code]
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        nbytes = size * dtype.itemsize
        if off + nbytes > len(blob):
            raise WeightFormatError(
                path, f"payload of {name!r} truncated: need {nbytes} bytes", offset=off
            )
        arr = np.frombuffer(blob[off:off + nbytes], dtype=dtype).reshape(dims).copy()
        out[name] = arr
        off += nbytes
    if off != len(blob):
        raise WeightFormatError(path, f"{len(blob) - off} trailing bytes", offset=off)
    return out


def _pack_conv(d, prefix, c):
    d[prefix + ".weight"] = c.weight
    d[prefix + ".bias"] = c.bias
    d[prefix + ".meta"] = np.array([c.stride, c.padding, c.groups], dtype=np.float64)


def _unpack_conv(d, prefix):
    meta = d[prefix + ".meta"]
    return ConvParams(
        d[prefix + ".weight"], d[prefix + ".bias"],
        stride=int(meta[0]), padding=int(meta[1]), groups=int(meta[2]),
    )


def _pack_gn(d, prefix, g):
    d[prefix + ".gamma"] = g.gamma
    d[prefix + ".beta"] = g.beta
    d[prefix + ".meta"] = np.array([g.groups, g.eps], dtype=np.float64)


def _unpack_gn(d, prefix):
    meta = d[prefix + ".meta"]
    return GroupNormParams(int(meta[0]), d[prefix + ".gamma"], d[prefix + ".beta"],
                           eps=float(meta[1]))


def _pack_ds(d, prefix, b):
    _pack_conv(d, prefix + ".dw", b.depthwise)
    _pack_conv(d, prefix + ".pw", b.pointwise)
    _pack_gn(d, prefix + ".norm", b.norm)


def _unpack_ds(d, prefix):
    return DSConvBlock(_unpack_conv(d, prefix + ".dw"), _unpack_conv(d, prefix + ".pw"),
                       _unpack_gn(d, prefix + ".norm"))


def _pack_tsfm(d, prefix, w):
    _pack_conv(d, prefix + ".spatial", w.spatial_conv)
    _pack_conv(d, prefix + ".cross_ch", w.cross_conv_ch)
    _pack_conv(d, prefix + ".cross_cw", w.cross_conv_cw)


def _unpack_tsfm(d, prefix):
    return TSFMWeights(_unpack_conv(d, prefix + ".spatial"),
                       _unpack_conv(d, prefix + ".cross_ch"),
                       _unpack_conv(d, prefix + ".cross_cw"))


def _pack_iterative(d, prefix, w):
    _pack_conv(d, prefix + ".init.entry", w.init.entry)
    for i, b in enumerate(w.init.blocks):
        _pack_ds(d, f"{prefix}.init.block{i}", b)
    _pack_conv(d, prefix + ".init.out_dw", w.init.out_depthwise)
    _pack_conv(d, prefix + ".init.out_pw", w.init.out_pointwise)
    for i, b in enumerate(w.refine.blocks):
        _pack_ds(d, f"{prefix}.refine.block{i}", b)
    _pack_conv(d, prefix + ".refine.out_dw", w.refine.out_depthwise)
    _pack_conv(d, prefix + ".refine.out_pw", w.refine.out_pointwise)


def _unpack_iterative(d, prefix):
    init = PInMWeights(
        entry=_unpack_conv(d, prefix + ".init.entry"),
        blocks=[_unpack_ds(d, f"{prefix}.init.block{i}") for i in range(3)],
        out_depthwise=_unpack_conv(d, prefix + ".init.out_dw"),
        out_pointwise=_unpack_conv(d, prefix + ".init.out_pw"),
    )
    refine = PItMWeights(
        blocks=[_unpack_ds(d, f"{prefix}.refine.block{i}") for i in range(2)],
        out_depthwise=_unpack_conv(d, prefix + ".refine.out_dw"),
        out_pointwise=_unpack_conv(d, prefix + ".refine.out_pw"),
    )
    return IterativeHeadWeights(init, refine)


@dataclass
class ModelWeights:
    """Everything the forward pass needs: pyramid plus shared heads."""

    fpn: TSFPNWeights
    heads: HeadWeights

    @property
    def num_classes(self):
        return self.heads.num_classes

    @property
    def backbone_channels(self):
        return (self.fpn.lateral3.in_channels, self.fpn.lateral4.in_channels,
                self.fpn.lateral5.in_channels)


def make_model_weights(num_classes, backbone_channels=(512, 1024, 2048),
                       channels=256, gn_groups=32, rng=None):
    return ModelWeights(
        fpn=make_tsfpn_weights(backbone_channels, channels, rng),
        heads=make_head_weights(num_classes, channels, channels, gn_groups, rng),
    )


def model_to_tensors(mw):
    d = {}
    for name in ("lateral3", "lateral4", "lateral5", "down6", "down7"):
        _pack_conv(d, "fpn." + name, getattr(mw.fpn, name))
    _pack_tsfm(d, "fpn.fuse4", mw.fpn.fuse4)
    _pack_tsfm(d, "fpn.fuse3", mw.fpn.fuse3)
    for task in ("class", "bbox"):
        tower = getattr(mw.heads, task + "_tower")
        for i, blk in enumerate(tower):
            _pack_conv(d, f"heads.{task}_tower{i}.conv", blk.conv)
            _pack_gn(d, f"heads.{task}_tower{i}.norm", blk.norm)
        _pack_conv(d, f"heads.{task}_out", getattr(mw.heads, task + "_out"))
    _pack_iterative(d, "heads.rotation", mw.heads.rotation)
    _pack_iterative(d, "heads.trans_xy", mw.heads.trans_xy)
    _pack_iterative(d, "heads.trans_z", mw.heads.trans_z)
    return d


def model_from_tensors(d):
    try:
        fpn = TSFPNWeights(
            lateral3=_unpack_conv(d, "fpn.lateral3"),
            lateral4=_unpack_conv(d, "fpn.lateral4"),
            lateral5=_unpack_conv(d, "fpn.lateral5"),
            fuse4=_unpack_tsfm(d, "fpn.fuse4"),
            fuse3=_unpack_tsfm(d, "fpn.fuse3"),
            down6=_unpack_conv(d, "fpn.down6"),
            down7=_unpack_conv(d, "fpn.down7"),
        )
        heads = HeadWeights(
            class_tower=[
                ConvBlock(_unpack_conv(d, f"heads.class_tower{i}.conv"),
                          _unpack_gn(d, f"heads.class_tower{i}.norm"))
                for i in range(4)
            ],
            class_out=_unpack_conv(d, "heads.class_out"),
            bbox_tower=[
                ConvBlock(_unpack_conv(d, f"heads.bbox_tower{i}.conv"),
                          _unpack_gn(d, f"heads.bbox_tower{i}.norm"))
                for i in range(4)
            ],
            bbox_out=_unpack_conv(d, "heads.bbox_out"),
            rotation=_unpack_iterative(d, "heads.rotation"),
            trans_xy=_unpack_iterative(d, "heads.trans_xy"),
            trans_z=_unpack_iterative(d, "heads.trans_z"),
        )
    except KeyError as e:
        raise ValueError(f"weight bundle is missing tensor {e.args[0]!r}") from e
    return ModelWeights(fpn=fpn, heads=heads)


def save_model_weights(mw, path):
    save_weights(model_to_tensors(mw), path)


def load_model_weights(path):
    return model_from_tensors(load_weights(path))
