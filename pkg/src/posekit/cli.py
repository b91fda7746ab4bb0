"""Command-line batch surface: eval, visibility, forward, selftest.

Option precedence is command-line flag, then config file, then built-in
default. The config file is flat text: one `key = value` per line, `#`
comments allowed. Exit codes: 0 success, 1 data error, 2 usage error.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import selftest as selftest_mod
from .bop import (
    DataFormatError,
    load_models,
    load_predictions,
    load_scene,
    save_predictions,
    save_report,
    write_pbm,
    write_pgm16,
)
from .camera import CameraIntrinsics
from .fixture import FIXTURE_INTRINSICS
from .fpn import ts_fpn_forward
from .heads import RawGridPredictions, decode_predictions, model_forward
from .metrics import evaluate
from .visibility import (
    Box,
    cell_visibility,
    discrepancy_map,
    seed_boundary,
)
from .weights import WeightFormatError, load_weights, model_from_tensors

CONFIG_DEFAULTS = {
    "score_thresh": 0.4,
    "nms_iou": 0.6,
    "iterations": 1,
    "recall_frac": 0.1,
    "auc_max": 0.1,
    "alpha": 0.1,
    "tau": 0.25,
    "spacing": 4,
    "seed": 0,
    "format": "csv",
    "image_size": "640x480",
    "tz_log_space": 0,
    "fx": FIXTURE_INTRINSICS[0],
    "fy": FIXTURE_INTRINSICS[1],
    "px": FIXTURE_INTRINSICS[2],
    "py": FIXTURE_INTRINSICS[3],
}


def load_config(path):
    """Flat key = value lines; later lines win over earlier duplicates."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(path, f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_DEFAULTS:
            raise DataFormatError(path, f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


class Settings:
    """Resolves option values through flag > config > default."""

    def __init__(self, args):
        self.args = args
        self.config = load_config(args.config) if args.config else {}

    def get(self, key, cast=None):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        default = CONFIG_DEFAULTS[key]
        if cast is None:
            cast = type(default)
        if key in self.config:
            return cast(self.config[key])
        return default

    def intrinsics(self):
        return CameraIntrinsics(fx=self.get("fx", float), fy=self.get("fy", float),
                                px=self.get("px", float), py=self.get("py", float))


def _parse_box(text):
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("box must be x,y,w,h")
    try:
        return Box(*(int(p) for p in parts))
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _parse_size(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError as e:
        raise argparse.ArgumentTypeError("image size must be WxH") from e
    return w, h


def build_parser():
    parser = argparse.ArgumentParser(
        prog="posekit",
        description="Desk-scale 6D pose estimation toolkit",
    )
    parser.add_argument("--config", help="flat key = value option file")
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="score predictions against a scene")
    p_eval.add_argument("--gt", required=True, help="scene directory with scene_gt.json")
    p_eval.add_argument("--models", required=True, help="models directory with models_info.json")
    p_eval.add_argument("--preds", required=True, help="predictions CSV")
    p_eval.add_argument("--out", required=True, help="report output path")
    p_eval.add_argument("--format", choices=("csv", "json"))
    p_eval.add_argument("--recall-frac", dest="recall_frac", type=float)
    p_eval.add_argument("--auc-max", dest="auc_max", type=float)

    p_vis = sub.add_parser("visibility", help="score box visibility on an image")
    p_vis.add_argument("--image", required=True, help="image file")
    p_vis.add_argument("--box", required=True, type=_parse_box, help="x,y,w,h in pixels")
    p_vis.add_argument("--stride", required=True, type=int, help="cell grid stride")
    p_vis.add_argument("--alpha", type=float)
    p_vis.add_argument("--tau", type=float)
    p_vis.add_argument("--spacing", type=int)
    p_vis.add_argument("--out", required=True, help="output directory")

    p_fwd = sub.add_parser("forward", help="run the network on stored or synthetic input")
    p_fwd.add_argument("--weights", required=True, help="weight container file")
    p_fwd.add_argument("--input", required=True,
                       help="'synthetic' or a tensor container file")
    p_fwd.add_argument("--image-size", dest="image_size", type=_parse_size)
    p_fwd.add_argument("--score-thresh", dest="score_thresh", type=float)
    p_fwd.add_argument("--nms-iou", dest="nms_iou", type=float)
    p_fwd.add_argument("--iterations", type=int)
    p_fwd.add_argument("--seed", type=int)
    p_fwd.add_argument("--out", required=True, help="predictions CSV output path")

    p_self = sub.add_parser("selftest", help="run built-in invariant checks")
    p_self.add_argument("--module", help="restrict to one module")
    return parser


def cmd_eval(settings):
    args = settings.args
    scene = load_scene(args.gt)
    models = load_models(args.models)
    preds = load_predictions(args.preds)
    report, records = evaluate(
        scene.ground_truth, models, preds,
        recall_frac=settings.get("recall_frac", float),
        auc_max=settings.get("auc_max", float),
    )
    fmt = settings.get("format")
    save_report(report, args.out, fmt=fmt)
    n_un = sum(1 for r in records if not r.matched)
    print(f"evaluated {len(records)} instances over {len(scene.ground_truth)} images "
          f"({n_un} unmatched)")
    print(f"mean recall {report.mean.recall_add_s:.2f}%  "
          f"auc(add-s) {report.mean.auc_adds:.2f}%  report -> {args.out}")
    return 0


def _load_image(path):
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64)


def cmd_visibility(settings):
    args = settings.args
    img = _load_image(args.image)
    box = args.box
    seeds = seed_boundary(box, settings.get("spacing", int))
    v = discrepancy_map(img, box, seeds, alpha=settings.get("alpha", float))
    cv = cell_visibility(v, args.stride, tau=settings.get("tau", float))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_pgm16(out_dir / "discrepancy.pgm", v.values)
    write_pbm(out_dir / "positive_cells.pbm", cv.mask)
    n_pos = int(cv.mask.sum())
    print(f"{len(seeds)} seeds, {cv.mask.size} cells, {n_pos} positive "
          f"-> {out_dir / 'discrepancy.pgm'}, {out_dir / 'positive_cells.pbm'}")
    return 0


def _grids_from_tensors(tensors):
    levels = sorted({int(name.split(".")[0][5:]) for name in tensors
                     if name.startswith("level")})
    raw = []
    for lv in levels:
        try:
            raw.append(RawGridPredictions(
                class_logits=tensors[f"level{lv}.class_logits"],
                bbox=tensors[f"level{lv}.bbox"],
                r6d=tensors[f"level{lv}.r6d"],
                trans=tensors[f"level{lv}.trans"],
                stride=int(tensors[f"level{lv}.stride"][0]),
            ))
        except KeyError as e:
            raise DataFormatError("<input>", f"grid container missing {e.args[0]!r}") from e
    return raw


def cmd_forward(settings):
    args = settings.args
    mw = model_from_tensors(load_weights(args.weights))
    iterations = settings.get("iterations", int)
    t0 = time.perf_counter()
    if args.input == "synthetic":
        w, h = args.image_size or _parse_size(settings.get("image_size"))
        if w % 32 or h % 32:
            raise ValueError(f"image size {w}x{h} must be divisible by 32")
        rng = np.random.default_rng(settings.get("seed", int))
        b3, b4, b5 = mw.backbone_channels
        c3 = rng.standard_normal((b3, h // 8, w // 8))
        c4 = rng.standard_normal((b4, h // 16, w // 16))
        c5 = rng.standard_normal((b5, h // 32, w // 32))
        raw = model_forward(ts_fpn_forward(c3, c4, c5, mw.fpn), mw.heads, iterations)
    else:
        tensors = load_weights(args.input)
        if "c3" in tensors:
            raw = model_forward(
                ts_fpn_forward(tensors["c3"], tensors["c4"], tensors["c5"], mw.fpn),
                mw.heads, iterations)
        else:
            raw = _grids_from_tensors(tensors)
            if not raw:
                raise DataFormatError(args.input, "no c3/c4/c5 and no level grids")
    result = decode_predictions(
        raw, settings.intrinsics(),
        score_thresh=settings.get("score_thresh", float),
        nms_iou=settings.get("nms_iou", float),
        tz_log_space=bool(int(settings.get("tz_log_space", int))),
    )
    elapsed = time.perf_counter() - t0
    rows = [
        (0, 0, est.class_id, est.score, est.rotation, est.translation, elapsed)
        for est in result.estimates
    ]
    save_predictions(rows, args.out)
    print(f"{len(result.estimates)} estimates in {elapsed:.4f}s "
          f"({result.num_below_threshold} below threshold, "
          f"{result.num_degenerate_rotation} degenerate, "
          f"{result.num_suppressed} suppressed) -> {args.out}")
    return 0


def cmd_selftest(settings):
    ok = selftest_mod.run(settings.args.module)
    return 0 if ok else 1


COMMANDS = {
    "eval": cmd_eval,
    "visibility": cmd_visibility,
    "forward": cmd_forward,
    "selftest": cmd_selftest,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else 2
    try:
        settings = Settings(args)
        return COMMANDS[args.command](settings)
    except (DataFormatError, WeightFormatError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def run():
    raise SystemExit(main())
