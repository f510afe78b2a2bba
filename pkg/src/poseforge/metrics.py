"""Pose-estimation evaluation metrics.

All 3D metrics take poses in meters and report millimeters.  Joints invisible
in either pose are excluded rather than imputed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateGeometryError
from .geometry import Pose2D, Pose3D

M_TO_MM = 1000.0


def _joint_subset(pred, gt, subset=None):
    if pred.joint_count != gt.joint_count:
        raise DataError(
            f"joint count mismatch: {pred.joint_count} vs {gt.joint_count}")
    vis = pred.visibility & gt.visibility
    if subset is not None:
        mask = np.zeros_like(vis)
        mask[np.asarray(subset, dtype=np.int64)] = True
        vis = vis & mask
    return vis


def mpjpe(pred: Pose3D, gt: Pose3D, root_index: int = 0, subset=None) -> float:
    """Mean per-joint position error (mm) after root-aligning both poses."""
    vis = _joint_subset(pred, gt, subset)
    if not (pred.visibility[root_index] and gt.visibility[root_index]):
        raise DataError("root joint must be visible in both poses")
    vis = vis.copy()
    if not vis.any():
        raise DataError("no jointly-visible joints")
    p = pred.joints - pred.joints[root_index]
    g = gt.joints - gt.joints[root_index]
    d = np.linalg.norm(p[vis] - g[vis], axis=1)
    return float(d.mean() * M_TO_MM)


def procrustes_align(pred: np.ndarray, gt: np.ndarray):
    """Optimal similarity transform (s, R, t) minimizing ||s R x + t - y||^2,
    with reflections disallowed.  Returns (s, R, t)."""
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    if x.shape[0] < 3:
        raise DegenerateGeometryError("need at least 3 joints for alignment")
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    norm_x = float((xc ** 2).sum())
    sing_x = np.linalg.svd(xc, compute_uv=False)
    sing_y = np.linalg.svd(yc, compute_uv=False)
    if norm_x < 1e-18 or sing_x[1] < 1e-9 * sing_x[0] or sing_y[1] < 1e-9 * max(sing_y[0], 1e-18):
        raise DegenerateGeometryError("joint set is collinear or coincident")
    C = xc.T @ yc
    U, S, Vt = np.linalg.svd(C)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d])
    R = Vt.T @ D @ U.T
    s = float((S * np.diag(D)).sum() / norm_x)
    t = my - s * R @ mx
    return s, R, t


def pa_mpjpe(pred: Pose3D, gt: Pose3D, subset=None) -> float:
    """MPJPE (mm) after the optimal similarity (Procrustes) alignment of pred
    onto gt over the jointly-visible joints."""
    vis = _joint_subset(pred, gt, subset)
    if int(vis.sum()) < 3:
        raise DegenerateGeometryError("need >= 3 jointly-visible joints")
    x = pred.joints[vis]
    y = gt.joints[vis]
    s, R, t = procrustes_align(x, y)
    aligned = (s * (R @ x.T)).T + t
    d = np.linalg.norm(aligned - y, axis=1)
    return float(d.mean() * M_TO_MM)


def pckh(pred: Pose2D, gt: Pose2D, head_size: float, alpha: float = 0.6) -> float:
    """Fraction of jointly-visible joints within alpha * head_size pixels
    (boundary inclusive)."""
    if head_size <= 0.0:
        raise DataError(f"head_size must be positive, got {head_size}")
    if alpha <= 0.0:
        raise DataError(f"alpha must be positive, got {alpha}")
    vis = _joint_subset(pred, gt)
    if not vis.any():
        raise DataError("no jointly-visible joints")
    d = np.linalg.norm(pred.joints[vis] - gt.joints[vis], axis=1)
    return float((d <= alpha * head_size).mean())


@dataclass
class MetricReport:
    """Per-sample metric values with their arithmetic mean."""

    per_sample: list
    sample_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.per_sample = [float(v) for v in self.per_sample]
        if self.sample_ids and len(self.sample_ids) != len(self.per_sample):
            raise DataError("sample_ids length mismatch")
        if not self.sample_ids:
            self.sample_ids = [str(i) for i in range(len(self.per_sample))]

    @property
    def count(self) -> int:
        return len(self.per_sample)

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_sample)) if self.per_sample else float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "value"])
            for sid, v in zip(self.sample_ids, self.per_sample):
                writer.writerow([sid, repr(v)])

    def write_json_summary(self, path) -> None:
        summary = {"count": self.count, "mean": self.mean,
                   "min": float(np.min(self.per_sample)) if self.per_sample else None,
                   "max": float(np.max(self.per_sample)) if self.per_sample else None}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
