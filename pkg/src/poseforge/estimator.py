"""Synthetic target pose estimator: an exemplar (k-nearest-neighbor)
regressor over bbox-normalized 2D descriptors, whose error grows off the
exemplar distribution.  Stands in for a trainable image-to-3D model so the
full mining/synthesis/filtering loop closes at desk scale.

Also provides the parametric artifact-corruption model that gives the
filtering stage something real to reject.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .errors import ConfigError, DataError
from .geometry import CameraIntrinsics, Pose3D, project
from .seeding import stable_hash

DEFAULT_K = 4
DEFAULT_NOISE_MM = 10.0
DEFAULT_P_ARTIFACT = 0.3
DEFAULT_SIGMA_ARTIFACT_MM = 80.0


def pose_descriptor(pose3d: Pose3D, cam: CameraIntrinsics,
                    root_index: int = 0) -> np.ndarray:
    """Root-relative projected joints divided by the bbox diagonal.

    The principal point never enters the computation (it would cancel in the
    root-relative coordinates anyway), so the descriptor is exactly invariant
    to 2D translation; the normalization makes nearness correlate with pose
    geometry rather than image placement.
    """
    centered = CameraIntrinsics(cam.f, np.zeros(2))
    pts = project(pose3d, centered).joints
    rel = pts - pts[root_index]
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if diag < 1e-9:
        raise DataError("projected pose collapsed to a point; no descriptor")
    return (rel / diag).reshape(-1)


@dataclass(frozen=True)
class ExemplarPoseEstimator:
    """Immutable k-NN regressor mapping descriptors to root-relative poses.

    Prediction = inverse-distance-weighted mean of the k nearest exemplar
    poses, plus seeded Gaussian noise; the result is translated to the query's
    root so it lives in the same camera frame.
    """

    descriptors: np.ndarray  # (N, d)
    poses: np.ndarray  # (N, J, 3) root-relative, meters
    k: int = DEFAULT_K
    noise_sigma_mm: float = DEFAULT_NOISE_MM
    seed: int = 0

    def __post_init__(self):
        desc = np.asarray(self.descriptors, dtype=np.float64)
        poses = np.asarray(self.poses, dtype=np.float64)
        if desc.ndim != 2 or desc.shape[0] == 0:
            raise DataError("estimator needs at least one exemplar")
        if poses.shape[0] != desc.shape[0]:
            raise DataError("descriptor/pose count mismatch")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        object.__setattr__(self, "descriptors", desc)
        object.__setattr__(self, "poses", poses)

    @property
    def exemplar_count(self) -> int:
        return self.descriptors.shape[0]

    @classmethod
    def fit(cls, samples, k: int = DEFAULT_K,
            noise_sigma_mm: float = DEFAULT_NOISE_MM, seed: int = 0,
            root_index: int = 0) -> "ExemplarPoseEstimator":
        """Build from (Pose3D, CameraIntrinsics) pairs."""
        descs, poses = [], []
        for pose, cam in samples:
            descs.append(pose_descriptor(pose, cam, root_index))
            poses.append(pose.joints - pose.joints[root_index])
        return cls(np.stack(descs), np.stack(poses), k=k,
                   noise_sigma_mm=noise_sigma_mm, seed=seed)

    def predict(self, image_ref: Pose3D, cam: CameraIntrinsics) -> Pose3D:
        """Predict a 3D pose for the image stand-in (its hidden true pose).

        Deterministic per (seed, inputs): the noise draw is derived from the
        estimator seed and the query descriptor.
        """
        desc = pose_descriptor(image_ref, cam)
        if desc.shape[0] != self.descriptors.shape[1]:
            raise DataError("query descriptor dimension mismatch")
        d = np.linalg.norm(self.descriptors - desc[None, :], axis=1)
        k = min(self.k, d.shape[0])
        nearest = np.argsort(d, kind="stable")[:k]
        w = 1.0 / (d[nearest] + 1e-6)
        w /= w.sum()
        rel = np.tensordot(w, self.poses[nearest], axes=1)
        if self.noise_sigma_mm > 0.0:
            rng = np.random.default_rng(
                stable_hash(self.seed, desc.tobytes().hex()))
            rel = rel + rng.normal(0.0, self.noise_sigma_mm / 1000.0, rel.shape)
        return Pose3D.all_visible(rel + image_ref.joints[0])

    def with_added_exemplars(self, new_samples,
                             root_index: int = 0) -> "ExemplarPoseEstimator":
        """Return a new estimator with extra (Pose3D, CameraIntrinsics)
        exemplars; the original is unchanged."""
        new_samples = list(new_samples)
        if not new_samples:
            return ExemplarPoseEstimator(self.descriptors, self.poses, k=self.k,
                                         noise_sigma_mm=self.noise_sigma_mm,
                                         seed=self.seed)
        descs, poses = [], []
        for pose, cam in new_samples:
            descs.append(pose_descriptor(pose, cam, root_index))
            poses.append(pose.joints - pose.joints[root_index])
        return ExemplarPoseEstimator(
            np.concatenate([self.descriptors, np.stack(descs)]),
            np.concatenate([self.poses, np.stack(poses)]),
            k=self.k, noise_sigma_mm=self.noise_sigma_mm, seed=self.seed)

    def save(self, path) -> None:
        meta = {"k": self.k, "noise_sigma_mm": self.noise_sigma_mm,
                "seed": self.seed}
        ckpt.save_checkpoint(path, "estimator", meta,
                             {"descriptors": self.descriptors, "poses": self.poses})

    @classmethod
    def load(cls, path) -> "ExemplarPoseEstimator":
        kind, meta, tensors = ckpt.load_checkpoint(path)
        if kind != "estimator":
            raise DataError(f"{path}: expected an estimator checkpoint, got {kind!r}")
        return cls(tensors["descriptors"], tensors["poses"], k=int(meta["k"]),
                   noise_sigma_mm=float(meta["noise_sigma_mm"]),
                   seed=int(meta["seed"]))


@dataclass(frozen=True)
class CorruptionModel:
    """With probability p_artifact, displace every joint by Gaussian noise of
    sigma_artifact_mm; otherwise pass the pose through unchanged.

    Randomness is a pure function of (seed, salt, pose bytes), so repeated
    calls are bitwise reproducible and independent across distinct salts.
    """

    p_artifact: float = DEFAULT_P_ARTIFACT
    sigma_artifact_mm: float = DEFAULT_SIGMA_ARTIFACT_MM
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.p_artifact <= 1.0):
            raise ConfigError(f"p_artifact must be in [0, 1], got {self.p_artifact}")

    def corrupt(self, gen: Pose3D, salt: int = 0) -> Pose3D:
        if self.p_artifact == 0.0:
            return gen
        rng = np.random.default_rng(
            stable_hash(self.seed, salt, gen.joints.tobytes().hex()))
        if rng.random() >= self.p_artifact:
            return gen
        noise = rng.normal(0.0, self.sigma_artifact_mm / 1000.0, gen.joints.shape)
        return Pose3D(gen.joints + noise, gen.visibility.copy())
