"""Hard-example mining: rank dataset samples by weighted root-relative 2D
error between the estimator's projected prediction and the 2D ground truth,
then split into challenging (largest error) and non-challenging (smallest
error) sets.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .geometry import CameraIntrinsics, Pose2D, Pose3D, camera_for_bbox, project
from .skeleton import SkeletonDefinition, default_skeleton

log = logging.getLogger(__name__)

# Limb joints dominate the ranking; trunk/head joints default to zero weight.
DEFAULT_WEIGHT_TABLE = {
    "ankle": 1.0, "wrist": 1.0, "elbow": 0.5, "knee": 0.5,
    "hip": 0.25, "shoulder": 0.25,
}


@dataclass(frozen=True)
class JointWeights:
    """Per-2D-joint nonnegative weights."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if not np.isfinite(w).all() or (w < 0.0).any():
            raise DataError("weights must be finite and nonnegative")
        object.__setattr__(self, "w", w)

    @classmethod
    def from_name_table(cls, joint_names, table=None) -> "JointWeights":
        table = DEFAULT_WEIGHT_TABLE if table is None else table
        w = np.zeros(len(joint_names))
        for i, name in enumerate(joint_names):
            for key, val in table.items():
                if key in name:
                    w[i] = val
                    break
        return cls(w)


def default_weights(skel: SkeletonDefinition | None = None) -> JointWeights:
    skel = skel or default_skeleton()
    return JointWeights.from_name_table(skel.joint_names_2d)


def sample_error(pred2d: Pose2D, gt2d: Pose2D, weights: JointWeights,
                 root_index: int, norm: str = "l1") -> float:
    """Weighted sum over non-root, jointly-visible joints of the difference
    between root-relative prediction and root-relative ground truth.

    norm 'l1' sums |dx| + |dy| per joint; 'l2' uses the Euclidean norm.
    """
    if pred2d.joint_count != gt2d.joint_count:
        raise DataError("pose joint counts differ")
    if weights.w.shape[0] != gt2d.joint_count:
        raise DataError("weights length != joint count")
    if not (pred2d.visibility[root_index] and gt2d.visibility[root_index]):
        raise DataError("root joint invisible; cannot form relative coordinates")
    rel_pred = pred2d.joints - pred2d.joints[root_index]
    rel_gt = gt2d.joints - gt2d.joints[root_index]
    diff = rel_pred - rel_gt
    vis = pred2d.visibility & gt2d.visibility
    vis[root_index] = False
    if norm == "l1":
        per_joint = np.abs(diff).sum(axis=1)
    elif norm == "l2":
        per_joint = np.linalg.norm(diff, axis=1)
    else:
        raise ConfigError(f"unknown norm {norm!r}")
    return float((weights.w * per_joint * vis).sum())


@dataclass(frozen=True)
class ScoredSample:
    sample_id: str
    err: float
    pred3d: Pose3D
    pred2d: Pose2D

    def __post_init__(self):
        if not (np.isfinite(self.err) and self.err >= 0.0):
            raise DataError(f"score must be finite and >= 0, got {self.err}")


@dataclass(frozen=True)
class MinedSplit:
    """challenging sorted by descending error, non_challenging ascending."""

    challenging: tuple
    non_challenging: tuple

    def __post_init__(self):
        ids_c = [s.sample_id for s in self.challenging]
        ids_n = [s.sample_id for s in self.non_challenging]
        if set(ids_c) & set(ids_n):
            raise DataError("challenging and non-challenging sets overlap")
        object.__setattr__(self, "challenging", tuple(self.challenging))
        object.__setattr__(self, "non_challenging", tuple(self.non_challenging))


@dataclass(frozen=True)
class CameraRule:
    """Per-sample intrinsics: fixed focal, principal point at the bbox center
    (bbox taken from the sample or from the ground-truth joint extent)."""

    focal: float = 5000.0

    def for_sample(self, gt2d: Pose2D, bbox=None) -> CameraIntrinsics:
        if bbox is None:
            vis = gt2d.visibility
            if not vis.any():
                raise DataError("cannot derive a bbox from an all-invisible pose")
            pts = gt2d.joints[vis]
            lo, hi = pts.min(axis=0), pts.max(axis=0)
            size = np.maximum(hi - lo, 1.0)
            bbox = (lo[0], lo[1], size[0], size[1])
        return camera_for_bbox(bbox, focal=self.focal)


def project_prediction(pred3d: Pose3D, cam: CameraIntrinsics,
                       skel: SkeletonDefinition) -> Pose2D:
    """Project a 3D prediction and select the 2D annotation joints."""
    full = project(pred3d, cam)
    sel = skel.indices_2d_in_3d()
    return Pose2D(full.joints[sel], full.visibility[sel])


def mine(dataset, estimator, cam_rule: CameraRule, weights: JointWeights,
         k_c: int, k_nc: int, skel: SkeletonDefinition | None = None,
         root_name: str = "pelvis", norm: str = "l1") -> MinedSplit:
    """Score every sample and return the top-k_c / bottom-k_nc split.

    ``dataset`` yields (sample_id, gt2d, image_ref, bbox-or-None); the
    estimator maps (image_ref, cam) to a 3D pose.  Ties break by ascending
    sample_id.  Estimator failures skip the sample with a warning.
    """
    skel = skel or default_skeleton()
    if k_c < 0 or k_nc < 0:
        raise ConfigError("k_c and k_nc must be >= 0")
    root_index = skel.index_2d(root_name)
    scored = []
    failures = 0
    for row in dataset:
        sample_id, gt2d, image_ref = row[0], row[1], row[2]
        bbox = row[3] if len(row) > 3 else None
        try:
            cam = cam_rule.for_sample(gt2d, bbox)
            pred3d = estimator.predict(image_ref, cam)
            pred2d = project_prediction(pred3d, cam, skel)
            err = sample_error(pred2d, gt2d, weights, root_index, norm=norm)
        except Exception as exc:  # estimator failure is not fatal
            failures += 1
            log.warning("skipping sample %s: %s", sample_id, exc)
            continue
        scored.append(ScoredSample(str(sample_id), err, pred3d, pred2d))
    if k_c + k_nc > len(scored):
        raise DataError(
            f"k_c + k_nc = {k_c + k_nc} exceeds usable dataset size {len(scored)}")
    if failures:
        log.warning("mining skipped %d samples due to estimator failures", failures)

    by_err = sorted(scored, key=lambda s: (-s.err, s.sample_id))
    challenging = tuple(by_err[:k_c])
    ascending = sorted(scored, key=lambda s: (s.err, s.sample_id))
    chosen = {s.sample_id for s in challenging}
    non_challenging = tuple(s for s in ascending if s.sample_id not in chosen)[:k_nc]
    return MinedSplit(challenging, non_challenging)


def _pose3d_json(p: Pose3D):
    return {"joints": p.joints.tolist(), "visibility": p.visibility.tolist()}


def _pose2d_json(p: Pose2D):
    return {"joints": p.joints.tolist(), "visibility": p.visibility.tolist()}


def save_mined_split(split: MinedSplit, path) -> None:
    def encode(samples):
        return [{"sample_id": s.sample_id, "err": s.err,
                 "pred3d": _pose3d_json(s.pred3d), "pred2d": _pose2d_json(s.pred2d)}
                for s in samples]

    payload = {"challenging": encode(split.challenging),
               "non_challenging": encode(split.non_challenging)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_mined_split(path) -> MinedSplit:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)

    def decode(rows):
        out = []
        for r in rows:
            out.append(ScoredSample(
                r["sample_id"], float(r["err"]),
                Pose3D(np.array(r["pred3d"]["joints"]),
                       np.array(r["pred3d"]["visibility"])),
                Pose2D(np.array(r["pred2d"]["joints"]),
                       np.array(r["pred2d"]["visibility"]))))
        return tuple(out)

    return MinedSplit(decode(payload["challenging"]),
                      decode(payload["non_challenging"]))


def write_error_histogram(split: MinedSplit, path, bins: int = 20) -> None:
    errs = np.array([s.err for s in split.challenging + split.non_challenging])
    if errs.size == 0:
        counts, edges = np.zeros(bins), np.linspace(0.0, 1.0, bins + 1)
    else:
        counts, edges = np.histogram(errs, bins=bins)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            writer.writerow([repr(float(lo)), repr(float(hi)), int(c)])
