"""BOP-format dataset access and report serialization.

Scene annotations live in scene_gt.json / scene_camera.json, object
models in ASCII or binary little-endian PLY plus models_info.json, and
results in the standard CSV with 9-value rotations and millimeter
translations. Everything is converted to meters and radians on the way
in; reports go out in centimeters and degrees.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics
from .metrics import (
    GroundTruthInstance,
    MetricReport,
    MetricRow,
    ObjectModel,
    Prediction,
)
from .rotation import project_to_rotation

MM_PER_M = 1000.0


class DataFormatError(Exception):
    """Malformed input data; carries the file path and a position when known."""

    def __init__(self, path, message, offset=None):
        self.path = str(path)
        self.offset = offset
        where = f"{path}" if offset is None else f"{path} (offset {offset})"
        super().__init__(f"{where}: {message}")


def _load_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise DataFormatError(path, str(e)) from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise DataFormatError(path, e.msg, offset=e.pos) from e


@dataclass
class SceneAnnotations:
    """Per-image ground truth and intrinsics for one scene directory."""

    ground_truth: dict
    cameras: dict


def _parse_pose(entry, path, image_key):
    try:
        r = np.asarray(entry["cam_R_m2c"], dtype=np.float64).reshape(3, 3)
        t = np.asarray(entry["cam_t_m2c"], dtype=np.float64).reshape(3) / MM_PER_M
        obj_id = int(entry["obj_id"])
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(path, f"bad ground-truth entry for image {image_key}: {e}") from e
    try:
        r = project_to_rotation(r)
    except ValueError as e:
        raise DataFormatError(
            path, f"rotation for image {image_key} is not orthonormal: {e}"
        ) from e
    if not np.all(np.isfinite(t)):
        raise DataFormatError(path, f"non-finite translation for image {image_key}")
    return GroundTruthInstance(obj_id=obj_id, rotation=r, translation=t)


def load_scene(scene_dir):
    """Read scene_gt.json and scene_camera.json from a scene directory."""
    scene_dir = Path(scene_dir)
    gt_path = scene_dir / "scene_gt.json"
    cam_path = scene_dir / "scene_camera.json"
    raw_gt = _load_json(gt_path)
    raw_cam = _load_json(cam_path)
    ground_truth = {}
    for key, entries in raw_gt.items():
        try:
            image_id = int(key)
        except ValueError as e:
            raise DataFormatError(gt_path, f"non-integer image id {key!r}") from e
        ground_truth[image_id] = [_parse_pose(e, gt_path, key) for e in entries]
    cameras = {}
    for key, entry in raw_cam.items():
        try:
            image_id = int(key)
            k = np.asarray(entry["cam_K"], dtype=np.float64).reshape(3, 3)
        except (KeyError, TypeError, ValueError) as e:
            raise DataFormatError(cam_path, f"bad camera entry for image {key}: {e}") from e
        cameras[image_id] = CameraIntrinsics.from_matrix(k)
    return SceneAnnotations(ground_truth=ground_truth, cameras=cameras)


def _ply_error(path, msg, offset=None):
    raise DataFormatError(path, msg, offset=offset)


def load_ply_vertices(path):
    """Vertex positions from an ASCII or binary_little_endian PLY file."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise DataFormatError(path, str(e)) from e
    if not blob.startswith(b"ply"):
        _ply_error(path, "missing ply magic", offset=0)
    end = blob.find(b"end_header\n")
    if end < 0:
        _ply_error(path, "missing end_header")
    header = blob[:end].decode("ascii", errors="replace").splitlines()
    body_start = end + len(b"end_header\n")

    fmt = None
    n_vertex = None
    vertex_props = []
    cur_element = None
    type_sizes = {
        "char": "b", "uchar": "B", "int8": "b", "uint8": "B",
        "short": "h", "ushort": "H", "int16": "h", "uint16": "H",
        "int": "i", "uint": "I", "int32": "i", "uint32": "I",
        "float": "f", "float32": "f", "double": "d", "float64": "d",
    }
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            cur_element = parts[1]
            if cur_element == "vertex":
                n_vertex = int(parts[2])
        elif parts[0] == "property" and cur_element == "vertex":
            if parts[1] == "list":
                _ply_error(path, "list property on vertex element is unsupported")
            if parts[1] not in type_sizes:
                _ply_error(path, f"unknown property type {parts[1]!r}")
            vertex_props.append((parts[2], type_sizes[parts[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        _ply_error(path, f"unsupported format {fmt!r}")
    if n_vertex is None:
        _ply_error(path, "no vertex element")
    names = [p[0] for p in vertex_props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            _ply_error(path, f"vertex element lacks {axis!r} property")
    ix, iy, iz = names.index("x"), names.index("y"), names.index("z")

    if fmt == "ascii":
        text = blob[body_start:].decode("ascii", errors="replace").splitlines()
        if len(text) < n_vertex:
            _ply_error(path, f"expected {n_vertex} vertex lines, found {len(text)}",
                       offset=body_start)
        out = np.empty((n_vertex, 3))
        for i in range(n_vertex):
            parts = text[i].split()
            if len(parts) < len(vertex_props):
                _ply_error(path, f"vertex line {i} has {len(parts)} fields, "
                                 f"expected {len(vertex_props)}")
            try:
                out[i] = (float(parts[ix]), float(parts[iy]), float(parts[iz]))
            except ValueError as e:
                _ply_error(path, f"vertex line {i}: {e}")
        return out

    rec = struct.Struct("<" + "".join(code for _, code in vertex_props))
    need = body_start + rec.size * n_vertex
    if len(blob) < need:
        _ply_error(path, f"vertex payload truncated: need {need} bytes, have {len(blob)}",
                   offset=len(blob))
    out = np.empty((n_vertex, 3))
    off = body_start
    for i in range(n_vertex):
        vals = rec.unpack_from(blob, off)
        out[i] = (vals[ix], vals[iy], vals[iz])
        off += rec.size
    return out


def load_model(ply_path, model_id=0, diameter=None, symmetric=False):
    """One object model from a PLY file, converted from millimeters.

    Without a given diameter the exact point spread is used.
    """
    pts = load_ply_vertices(ply_path) / MM_PER_M
    model = ObjectModel(model_id=model_id, points=pts,
                        diameter=diameter if diameter is not None else 1.0,
                        symmetric=symmetric)
    if diameter is None:
        d = model.max_pairwise_distance()
        if d <= 0:
            raise DataFormatError(ply_path, "degenerate model: zero point spread")
        model.diameter = d
    return model


def load_models(models_dir):
    """Every obj_*.ply in a directory, with models_info.json metadata.

    Diameters come from the metadata (millimeters); a symmetry entry of
    either kind marks the class symmetric. Missing metadata or a missing
    model file is a data error.
    """
    models_dir = Path(models_dir)
    info_path = models_dir / "models_info.json"
    info = _load_json(info_path)
    models = {}
    for key, meta in info.items():
        try:
            obj_id = int(key)
            diameter = float(meta["diameter"]) / MM_PER_M
        except (KeyError, TypeError, ValueError) as e:
            raise DataFormatError(info_path, f"bad metadata for object {key}: {e}") from e
        symmetric = bool(meta.get("symmetries_continuous") or meta.get("symmetries_discrete"))
        ply_path = models_dir / f"obj_{obj_id:06d}.ply"
        if not ply_path.exists():
            raise DataFormatError(ply_path, "model file missing")
        models[obj_id] = load_model(ply_path, model_id=obj_id, diameter=diameter,
                                    symmetric=symmetric)
    if not models:
        raise DataFormatError(info_path, "no models declared")
    return models


PRED_HEADER = "scene_id,im_id,obj_id,score,R,t,time"


def load_predictions(csv_path):
    """BOP result rows grouped by image id.

    Nine R values and three millimeter t values are whitespace-separated
    inside their fields. Rotations must be within tolerance of orthonormal
    and are projected exactly onto the rotation group.
    """
    csv_path = Path(csv_path)
    try:
        lines = csv_path.read_text().splitlines()
    except OSError as e:
        raise DataFormatError(csv_path, str(e)) from e
    if not lines or lines[0].strip().replace(" ", "") != PRED_HEADER:
        raise DataFormatError(csv_path, f"expected header {PRED_HEADER!r}")
    by_image = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 7:
            raise DataFormatError(csv_path, f"row {lineno} has {len(fields)} fields, expected 7")
        try:
            im_id = int(fields[1])
            obj_id = int(fields[2])
            score = float(fields[3])
            r = np.array([float(v) for v in fields[4].split()], dtype=np.float64)
            t = np.array([float(v) for v in fields[5].split()], dtype=np.float64)
        except ValueError as e:
            raise DataFormatError(csv_path, f"row {lineno}: {e}") from e
        if r.size != 9:
            raise DataFormatError(csv_path, f"row {lineno}: R has {r.size} values, expected 9")
        if t.size != 3:
            raise DataFormatError(csv_path, f"row {lineno}: t has {t.size} values, expected 3")
        try:
            rot = project_to_rotation(r.reshape(3, 3))
        except ValueError as e:
            raise DataFormatError(csv_path, f"row {lineno}: {e}") from e
        by_image.setdefault(im_id, []).append(Prediction(
            obj_id=obj_id, score=score, rotation=rot, translation=t / MM_PER_M,
        ))
    return by_image


def save_predictions(rows, csv_path):
    """Write BOP result rows: (scene_id, im_id, obj_id, score, R, t_m, time)."""
    lines = [PRED_HEADER]
    for scene_id, im_id, obj_id, score, r, t, elapsed in rows:
        r = np.asarray(r, dtype=np.float64).reshape(9)
        t = np.asarray(t, dtype=np.float64).reshape(3) * MM_PER_M
        lines.append(",".join([
            str(int(scene_id)), str(int(im_id)), str(int(obj_id)), repr(float(score)),
            " ".join(repr(float(v)) for v in r),
            " ".join(repr(float(v)) for v in t),
            repr(float(elapsed)),
        ]))
    Path(csv_path).write_text("\n".join(lines) + "\n")


REPORT_COLUMNS = (
    "label", "n_gt", "n_matched", "recall_add_s", "auc_adds", "auc_add_s",
    "mean_translation_cm", "mean_rotation_deg",
)


def _row_to_dict(row):
    return {c: getattr(row, c) for c in REPORT_COLUMNS}


def _row_from_dict(d):
    kwargs = dict(d)
    kwargs["n_gt"] = int(kwargs["n_gt"])
    kwargs["n_matched"] = int(kwargs["n_matched"])
    for c in REPORT_COLUMNS[3:]:
        kwargs[c] = None if kwargs[c] in (None, "") else float(kwargs[c])
    return MetricRow(**kwargs)


def save_report(report, path, fmt="csv"):
    """Serialize a metric report as CSV rows or a JSON document."""
    path = Path(path)
    if fmt == "json":
        doc = {
            "recall_frac": report.recall_frac,
            "auc_max": report.auc_max,
            "rows": [_row_to_dict(r) for r in report.rows],
            "mean": _row_to_dict(report.mean),
        }
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    elif fmt == "csv":
        lines = [",".join(REPORT_COLUMNS)]
        for row in list(report.rows) + [report.mean]:
            vals = []
            for c in REPORT_COLUMNS:
                v = getattr(row, c)
                if v is None:
                    vals.append("")
                elif isinstance(v, float):
                    vals.append(repr(v))
                else:
                    vals.append(str(v))
            lines.append(",".join(vals))
        header = f"# recall_frac={report.recall_frac!r} auc_max={report.auc_max!r}"
        path.write_text("\n".join([header] + lines) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def load_report(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise DataFormatError(path, str(e)) from e
    if text.lstrip().startswith("{"):
        doc = _load_json(path)
        rows = [_row_from_dict(d) for d in doc["rows"]]
        return MetricReport(rows=rows, mean=_row_from_dict(doc["mean"]),
                            recall_frac=float(doc["recall_frac"]),
                            auc_max=float(doc["auc_max"]))
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 3 or not lines[0].startswith("#"):
        raise DataFormatError(path, "not a report file")
    meta = dict(kv.split("=") for kv in lines[0][1:].split())
    cols = lines[1].split(",")
    if tuple(cols) != REPORT_COLUMNS:
        raise DataFormatError(path, f"unexpected report columns {cols}")
    rows = []
    for line in lines[2:]:
        vals = line.split(",")
        rows.append(_row_from_dict(dict(zip(cols, (v if v else None for v in vals)))))
    mean = rows.pop()
    return MetricReport(rows=rows, mean=mean, recall_frac=float(meta["recall_frac"]),
                        auc_max=float(meta["auc_max"]))


def write_pgm16(path, values):
    """16-bit binary portable graymap, big-endian samples, full-scale max.

    The array is scaled so its maximum maps to 65535; an all-zero array
    writes zeros.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"graymap needs a 2-D array, got shape {values.shape}")
    vmax = values.max()
    scaled = np.zeros_like(values) if vmax <= 0 else values / vmax * 65535.0
    data = np.round(scaled).astype(">u2")
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(data.tobytes())


def write_pbm(path, mask):
    """Binary portable bitmap; nonzero entries are black (1) bits."""
    mask = np.asarray(mask).astype(bool)
    if mask.ndim != 2:
        raise ValueError(f"bitmap needs a 2-D array, got shape {mask.shape}")
    h, w = mask.shape
    padded_w = -(-w // 8) * 8
    bits = np.zeros((h, padded_w), dtype=np.uint8)
    bits[:, :w] = mask
    packed = np.packbits(bits, axis=1)
    with open(path, "wb") as f:
        f.write(f"P4\n{w} {h}\n".encode("ascii"))
        f.write(packed.tobytes())


def read_pgm16(path):
    """Inverse of write_pgm16, returning the raw 16-bit samples."""
    blob = Path(path).read_bytes()
    if not blob.startswith(b"P5"):
        raise DataFormatError(path, "not a binary graymap", offset=0)
    parts = blob.split(b"\n", 3)
    if len(parts) < 4:
        raise DataFormatError(path, "truncated graymap header")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    if maxval != 65535:
        raise DataFormatError(path, f"expected 16-bit maxval, got {maxval}")
    data = np.frombuffer(parts[3][: w * h * 2], dtype=">u2")
    if data.size != w * h:
        raise DataFormatError(path, "truncated graymap payload", offset=len(blob))
    return data.reshape(h, w).astype(np.uint16)
