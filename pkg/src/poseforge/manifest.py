"""Dataset manifests: JSON-lines of annotated sample records with a header
carrying the skeleton reference and the config hash that produced them.

Serialization is canonical (sorted keys, repr floats), so a manifest hash is
stable across runs and machines.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .geometry import Pose2D, Pose3D

MANIFEST_FORMAT = "poseforge-manifest"
MANIFEST_VERSION = 1

PROVENANCE_VALUES = ("real", "synthesized")


@dataclass(frozen=True)
class SampleRecord:
    """One image-id-keyed annotation record."""

    sample_id: str
    gt2d: Pose2D
    bbox: tuple  # (x, y, w, h) pixels
    gt3d: Pose3D | None = None
    caption: str | None = None
    provenance: str = "real"
    source_challenging: str | None = None
    source_reference: str | None = None
    family: str | None = None  # planted-fixture bookkeeping

    def __post_init__(self):
        bbox = tuple(float(v) for v in self.bbox)
        if len(bbox) != 4:
            raise DataError(f"bbox must have 4 entries, got {len(bbox)}")
        if bbox[2] <= 0.0 or bbox[3] <= 0.0:
            raise DataError(f"bbox must have positive area, got {bbox}")
        if self.provenance not in PROVENANCE_VALUES:
            raise DataError(f"provenance must be one of {PROVENANCE_VALUES}")
        if self.provenance == "synthesized" and (
                self.source_challenging is None or self.source_reference is None):
            raise DataError("synthesized records must carry both source refs")
        object.__setattr__(self, "bbox", bbox)

    def to_json_dict(self) -> dict:
        # joint blocks as base64 little-endian f64 (bitwise-exact and far
        # faster than digit strings at dataset scale); all-visible masks are
        # omitted
        def pose_dict(pose):
            raw = np.ascontiguousarray(pose.joints, dtype="<f8").tobytes()
            node = {"joints_b64": base64.b64encode(raw).decode("ascii"),
                    "joint_count": int(pose.joints.shape[0])}
            if not pose.visibility.all():
                node["visibility"] = pose.visibility.tolist()
            return node

        d = {
            "sample_id": self.sample_id,
            "bbox": list(self.bbox),
            "gt2d": pose_dict(self.gt2d),
            "provenance": self.provenance,
        }
        if self.gt3d is not None:
            d["gt3d"] = pose_dict(self.gt3d)
        for key in ("caption", "source_challenging", "source_reference", "family"):
            val = getattr(self, key)
            if val is not None:
                d[key] = val
        return d

    @classmethod
    def from_json_dict(cls, d: dict, where: str = "record") -> "SampleRecord":
        def need(key):
            if key not in d:
                raise DataError(f"{where}: missing field '{key}'")
            return d[key]

        def parse_pose(node, path, coords, cls):
            if not isinstance(node, dict):
                raise DataError(f"{where}: field '{path}' must hold joints")
            if "joints_b64" in node:
                raw = base64.b64decode(node["joints_b64"])
                joints = np.frombuffer(raw, dtype="<f8").astype(np.float64)
            elif "joints" in node:
                joints = np.asarray(node["joints"], dtype=np.float64)
            else:
                raise DataError(f"{where}: field '{path}' must hold joints")
            joints = joints.reshape(-1)
            if joints.size % coords:
                raise DataError(f"{where}: field '{path}' has a ragged joint array")
            joints = joints.reshape(-1, coords)
            declared = node.get("joint_count")
            if declared is not None and declared != joints.shape[0]:
                raise DataError(f"{where}: field '{path}' declares "
                                f"{declared} joints, found {joints.shape[0]}")
            if "visibility" in node:
                vis = np.asarray(node["visibility"], dtype=bool)
            else:
                vis = np.ones(joints.shape[0], dtype=bool)
            return cls(joints, vis)

        gt3d = None
        if "gt3d" in d:
            gt3d = parse_pose(d["gt3d"], "gt3d", 3, Pose3D)
        try:
            return cls(
                sample_id=str(need("sample_id")),
                gt2d=parse_pose(need("gt2d"), "gt2d", 2, Pose2D),
                bbox=tuple(need("bbox")),
                gt3d=gt3d,
                caption=d.get("caption"),
                provenance=d.get("provenance", "real"),
                source_challenging=d.get("source_challenging"),
                source_reference=d.get("source_reference"),
                family=d.get("family"),
            )
        except DataError as exc:
            raise DataError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple
    skeleton_ref: str = "default-24"
    config_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        records = tuple(self.records)
        ids = [r.sample_id for r in records]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})[:3]
            raise DataError(f"duplicate sample_ids in manifest: {dup}")
        object.__setattr__(self, "records", records)

    def __len__(self):
        return len(self.records)


def _canonical_lines(manifest: DatasetManifest):
    header = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "skeleton_ref": manifest.skeleton_ref,
        "config_hash": manifest.config_hash,
        "meta": manifest.meta,
        "count": len(manifest.records),
    }
    yield json.dumps(header, sort_keys=True, separators=(",", ":"))
    for r in manifest.records:
        yield json.dumps(r.to_json_dict(), sort_keys=True, separators=(",", ":"))


def save_manifest(manifest: DatasetManifest, path) -> None:
    text = "\n".join(_canonical_lines(manifest))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.write("\n")


def load_manifest(path) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:1: invalid JSON header: {exc}") from exc
    if header.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{path}:1: not a {MANIFEST_FORMAT} file")
    if header.get("version") != MANIFEST_VERSION:
        raise DataError(f"{path}:1: unsupported version {header.get('version')}")
    records = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{i}: invalid JSON: {exc}") from exc
        records.append(SampleRecord.from_json_dict(d, where=f"{path}:{i}"))
    declared = header.get("count")
    if declared is not None and declared != len(records):
        raise DataError(
            f"{path}: header declares {declared} records, found {len(records)}")
    return DatasetManifest(tuple(records), header.get("skeleton_ref", ""),
                           header.get("config_hash", ""), header.get("meta", {}))


def manifest_hash(manifest: DatasetManifest) -> str:
    h = hashlib.sha256()
    for line in _canonical_lines(manifest):
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()
