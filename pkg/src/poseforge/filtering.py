"""Quality filter on synthesized samples: root-relative 3D pose error
against the generated (label) pose, thresholded at tau.

The error sums per-joint deviations over the non-root joints shared by the
two layouts (the 22 motion joints when comparing against the 24-joint body).
tau carries a unit tag so the conventional value of 120 reads as millimeters
while poses stay in meters.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .geometry import Pose3D

DEFAULT_TAU = 120.0


def _common_indices(pred: Pose3D, gen: Pose3D):
    a, b = pred.joint_count, gen.joint_count
    if a == b:
        idx = np.arange(a)
        return idx, idx
    lo, hi = sorted((a, b))
    if (lo, hi) != (22, 24):
        raise DataError(f"no joint correspondence between {a} and {b} joints")
    idx = np.arange(22)
    return (idx, idx)


def err3d(pred: Pose3D, gen: Pose3D, norm: str = "l1",
          root_index: int = 0, reduce: str = "sum") -> float:
    """Root-relative 3D deviation (pose units, meters) over common joints.

    norm 'l1' sums |dx|+|dy|+|dz| per joint, 'l2' uses the Euclidean norm;
    reduce 'sum' adds per-joint terms, 'mean' averages them.
    """
    ip, ig = _common_indices(pred, gen)
    if ip.size <= 1:
        raise DataError("empty common joint set")
    if not (pred.visibility[ip[root_index]] and gen.visibility[ig[root_index]]):
        raise DataError("root joint must be visible in both poses")
    rp = pred.joints[ip] - pred.joints[ip[root_index]]
    rg = gen.joints[ig] - gen.joints[ig[root_index]]
    diff = np.delete(rp - rg, root_index, axis=0)
    if norm == "l1":
        per_joint = np.abs(diff).sum(axis=1)
    elif norm == "l2":
        per_joint = np.linalg.norm(diff, axis=1)
    else:
        raise ConfigError(f"unknown norm {norm!r}")
    if reduce == "sum":
        return float(per_joint.sum())
    if reduce == "mean":
        return float(per_joint.mean())
    raise ConfigError(f"unknown reduce {reduce!r}")


@dataclass(frozen=True)
class FilterConfig:
    """Threshold tau with its unit tag; samples with error > tau are dropped
    (boundary inclusive: error == tau is kept)."""

    tau: float = DEFAULT_TAU
    units: str = "mm"  # 'mm' or 'm'
    norm: str = "l1"
    reduce: str = "sum"

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.units not in ("mm", "m"):
            raise ConfigError(f"units must be 'mm' or 'm', got {self.units!r}")

    @property
    def tau_meters(self) -> float:
        return self.tau / 1000.0 if self.units == "mm" else self.tau


@dataclass(frozen=True)
class FilterReport:
    total: int
    passed: int
    per_sample_err: tuple  # meters, config's norm/reduce

    def __post_init__(self):
        if self.passed > self.total:
            raise DataError("passed cannot exceed total")
        object.__setattr__(self, "per_sample_err",
                           tuple(float(e) for e in self.per_sample_err))

    @property
    def pass_rate(self) -> float:
        return self.passed / self.total if self.total else 0.0


def filter_batch(samples, cfg: FilterConfig):
    """Keep (gen, pred) samples whose err3d is within tau; order preserved.

    ``samples`` is a sequence of (gen Pose3D, pred Pose3D) pairs; returns
    (kept pairs, FilterReport).
    """
    kept, errs = [], []
    for gen, pred in samples:
        e = err3d(pred, gen, norm=cfg.norm, reduce=cfg.reduce)
        errs.append(e)
        if e <= cfg.tau_meters:
            kept.append((gen, pred))
    return kept, FilterReport(len(errs), len(kept), tuple(errs))


def write_filter_csv(report: FilterReport, cfg: FilterConfig, path,
                     sample_ids=None) -> None:
    ids = sample_ids or [str(i) for i in range(report.total)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "err", "kept"])
        for sid, e in zip(ids, report.per_sample_err):
            writer.writerow([sid, repr(e), int(e <= cfg.tau_meters)])
