"""Pose accuracy metrics and the batch evaluation pipeline.

Distances are meters internally; reports convert translation to
centimeters and rotation to degrees at the edge. Unmatched ground-truth
instances count as failures by carrying infinite error into recall and
area-under-curve summaries.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .camera import translation_error
from .rotation import geodesic_loss

logger = logging.getLogger(__name__)

DEFAULT_RECALL_FRAC = 0.1
DEFAULT_AUC_MAX = 0.1


@dataclass
class ObjectModel:
    """Sampled surface points of one object, in meters."""

    model_id: int
    points: np.ndarray
    diameter: float
    symmetric: bool = False

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or self.points.shape[0] < 1:
            raise ValueError(f"model points must be (N, 3) with N >= 1, got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("model points must be finite")
        if not (self.diameter > 0):
            raise ValueError(f"model diameter must be positive, got {self.diameter}")

    def max_pairwise_distance(self):
        """Exact largest point-to-point distance, for validating the diameter."""
        d2 = 0.0
        pts = self.points
        for i in range(len(pts) - 1):
            cand = ((pts[i + 1:] - pts[i]) ** 2).sum(axis=1).max()
            if cand > d2:
                d2 = cand
        return float(np.sqrt(d2))

    def validate_diameter(self, slack=1e-6):
        if self.diameter < self.max_pairwise_distance() * (1.0 - slack):
            raise ValueError(
                f"model {self.model_id} diameter {self.diameter} below its point spread"
            )


def transform_points(points, pose):
    r, t = pose
    r = np.asarray(r, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(3)
    return points @ r.T + t


def add_metric(model, pose_pred, pose_gt):
    """Mean distance between correspondingly transformed model points."""
    a = transform_points(model.points, pose_pred)
    b = transform_points(model.points, pose_gt)
    return float(np.linalg.norm(a - b, axis=1).mean())


def adds_metric(model, pose_pred, pose_gt):
    """Mean nearest-neighbor distance, for symmetry-tolerant comparison.

    Each predicted-pose point is matched to its closest true-pose point
    through a k-d tree over the true-pose cloud.
    """
    a = transform_points(model.points, pose_pred)
    b = transform_points(model.points, pose_gt)
    dists, _ = cKDTree(b).query(a, k=1)
    return float(np.mean(dists))


def pose_error(model, pose_pred, pose_gt):
    """ADD or ADD-S according to the model's symmetry flag."""
    if model.symmetric:
        return adds_metric(model, pose_pred, pose_gt)
    return add_metric(model, pose_pred, pose_gt)


def recall_add_s(errors, diameters, frac=DEFAULT_RECALL_FRAC):
    """Percent of instances with error strictly below frac * diameter."""
    errors = np.asarray(errors, dtype=np.float64)
    diameters = np.asarray(diameters, dtype=np.float64)
    if errors.shape != diameters.shape or errors.size == 0:
        raise ValueError("errors and diameters must be equal-length and non-empty")
    return float(100.0 * np.mean(errors < frac * diameters))


def auc_metric(errors, max_threshold=DEFAULT_AUC_MAX):
    """Percent area under the accuracy-vs-threshold step curve on [0, max].

    Accuracy at threshold t counts errors <= t; the step integral reduces
    to one minus the mean error after clipping to [0, max]. Infinite
    errors clip to the maximum and so contribute zero area.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("auc needs at least one error value")
    if not (max_threshold > 0):
        raise ValueError(f"max threshold must be positive, got {max_threshold}")
    if np.isnan(errors).any() or (errors[np.isfinite(errors)] < 0).any():
        raise ValueError("errors must be non-negative")
    clipped = np.minimum(errors, max_threshold)
    return float(100.0 * (1.0 - clipped.sum() / (errors.size * max_threshold)))


@dataclass
class GroundTruthInstance:
    obj_id: int
    rotation: np.ndarray
    translation: np.ndarray


@dataclass
class Prediction:
    obj_id: int
    score: float
    rotation: np.ndarray
    translation: np.ndarray


def match_instances(preds, gts, models):
    """Greedy same-class assignment of predictions to ground truth.

    Predictions are visited in descending score; each takes the still
    unassigned ground-truth instance of its class with the smallest
    ADD(-S). Returns (pairs, unmatched_gt_indices).
    """
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    taken = [False] * len(gts)
    pairs = []
    for pi in order:
        p = preds[pi]
        if p.obj_id not in models:
            continue
        model = models[p.obj_id]
        best_gi, best_err = -1, np.inf
        for gi, g in enumerate(gts):
            if taken[gi] or g.obj_id != p.obj_id:
                continue
            err = pose_error(model, (p.rotation, p.translation), (g.rotation, g.translation))
            if err < best_err:
                best_gi, best_err = gi, err
        if best_gi >= 0:
            taken[best_gi] = True
            pairs.append((pi, best_gi))
    unmatched = [gi for gi, t in enumerate(taken) if not t]
    return pairs, unmatched


@dataclass
class InstanceRecord:
    """Evaluation outcome for one ground-truth instance."""

    image_id: int
    obj_id: int
    matched: bool
    add_error: float = np.inf
    adds_error: float = np.inf
    rotation_error: float = np.inf
    translation_error: float = np.inf


@dataclass
class MetricRow:
    label: str
    n_gt: int
    n_matched: int
    recall_add_s: float
    auc_adds: float
    auc_add_s: float
    mean_translation_cm: float | None
    mean_rotation_deg: float | None


@dataclass
class MetricReport:
    rows: list
    mean: MetricRow
    recall_frac: float
    auc_max: float


def evaluate_image(gts, preds, models, image_id=0):
    """Per-instance records for one image after greedy matching."""
    pairs, unmatched = match_instances(preds, gts, models)
    records = []
    for pi, gi in pairs:
        p, g = preds[pi], gts[gi]
        model = models[g.obj_id]
        pose_p = (p.rotation, p.translation)
        pose_g = (g.rotation, g.translation)
        records.append(InstanceRecord(
            image_id=image_id,
            obj_id=g.obj_id,
            matched=True,
            add_error=add_metric(model, pose_p, pose_g),
            adds_error=adds_metric(model, pose_p, pose_g),
            rotation_error=geodesic_loss(g.rotation, p.rotation),
            translation_error=translation_error(p.translation, g.translation),
        ))
    for gi in unmatched:
        records.append(InstanceRecord(image_id=image_id, obj_id=gts[gi].obj_id, matched=False))
    return records


def aggregate_report(records, models, recall_frac=DEFAULT_RECALL_FRAC,
                     auc_max=DEFAULT_AUC_MAX, class_ids=None):
    """Fold instance records into per-class rows plus an unweighted mean row.

    Recall and the ADD(-S) curve use each class's symmetry flag to choose
    between ADD and ADD-S; the ADD-S curve column always uses ADD-S.
    Rotation/translation averages cover matched instances only. Requested
    classes without any instances are warned about and omitted.
    """
    by_class = {}
    for rec in records:
        by_class.setdefault(rec.obj_id, []).append(rec)
    if class_ids is not None:
        for cid in class_ids:
            if cid not in by_class:
                logger.warning("class %s has no instances; omitting from report", cid)
    rows = []
    for cid in sorted(by_class):
        recs = by_class[cid]
        model = models[cid]
        flag_err = np.array([r.adds_error if model.symmetric else r.add_error for r in recs])
        adds_err = np.array([r.adds_error for r in recs])
        diam = np.full(len(recs), model.diameter)
        matched = [r for r in recs if r.matched]
        rows.append(MetricRow(
            label=str(cid),
            n_gt=len(recs),
            n_matched=len(matched),
            recall_add_s=recall_add_s(flag_err, diam, recall_frac),
            auc_adds=auc_metric(adds_err, auc_max),
            auc_add_s=auc_metric(flag_err, auc_max),
            mean_translation_cm=(
                100.0 * float(np.mean([r.translation_error for r in matched]))
                if matched else None
            ),
            mean_rotation_deg=(
                float(np.degrees(np.mean([r.rotation_error for r in matched])))
                if matched else None
            ),
        ))
    if not rows:
        raise ValueError("no instances to aggregate")

    def col_mean(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    mean = MetricRow(
        label="mean",
        n_gt=sum(r.n_gt for r in rows),
        n_matched=sum(r.n_matched for r in rows),
        recall_add_s=float(np.mean([r.recall_add_s for r in rows])),
        auc_adds=float(np.mean([r.auc_adds for r in rows])),
        auc_add_s=float(np.mean([r.auc_add_s for r in rows])),
        mean_translation_cm=col_mean([r.mean_translation_cm for r in rows]),
        mean_rotation_deg=col_mean([r.mean_rotation_deg for r in rows]),
    )
    return MetricReport(rows=rows, mean=mean, recall_frac=recall_frac, auc_max=auc_max)


def evaluate(scene, models, predictions, recall_frac=DEFAULT_RECALL_FRAC,
             auc_max=DEFAULT_AUC_MAX):
    """Match and score every image of a scene; returns (report, records).

    `scene` maps image id to a list of GroundTruthInstance; `predictions`
    maps image id to a list of Prediction. Images are processed in sorted
    id order so the records are deterministic.
    """
    needed = {g.obj_id for gts in scene.values() for g in gts}
    needed |= {p.obj_id for preds in predictions.values() for p in preds}
    missing = sorted(needed - set(models))
    if missing:
        raise ValueError(f"no object model for class ids {missing}")
    records = []
    for image_id in sorted(scene):
        gts = scene[image_id]
        preds = predictions.get(image_id, [])
        records.extend(evaluate_image(gts, preds, models, image_id=image_id))
    report = aggregate_report(records, models, recall_frac, auc_max)
    return report, records
