"""Rotation algebra, pinhole projection, and a simplified articulated skeleton.

Rotations use the axis-angle 3-vector form (direction = axis, norm = angle in
radians) with conversions to/from 3x3 matrices.  The skeleton is a rigid tree
of rest-pose bone offsets posed by per-joint local rotations; body shape is a
single isotropic bone-scale factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidRotationError, DataError

# Below this angle the sin(theta)/theta terms switch to their series limits.
_SMALL_ANGLE = 1e-8
# trace <= -1 + this selects the symmetric-matrix extraction branch (theta ~ pi).
_NEAR_PI_TRACE = 1e-6

DEFAULT_FOCAL_PX = 5000.0
MIN_PROJECT_Z = 1e-4


def _skew(v: np.ndarray) -> np.ndarray:
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle_to_matrix(a: np.ndarray) -> np.ndarray:
    """Rodrigues formula: axis-angle 3-vector -> rotation matrix."""
    a = np.asarray(a, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(a))
    if theta < _SMALL_ANGLE:
        # First-order expansion keeps the result exactly orthogonal at theta=0
        # and accurate well past 1e-9 for tiny angles.
        K = _skew(a)
        return np.eye(3) + K + 0.5 * (K @ K)
    k = a / theta
    K = _skew(k)
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


def check_rotation_matrix(R: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(R)):
        raise InvalidRotationError("rotation matrix has non-finite entries")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > tol:
        raise InvalidRotationError(f"matrix not orthonormal (|R^T R - I| = {err:.3e})")
    if np.linalg.det(R) < 0.0:
        raise InvalidRotationError("matrix has negative determinant (reflection)")
    return R


def matrix_to_axis_angle(R: np.ndarray) -> np.ndarray:
    """Inverse Rodrigues: rotation matrix -> canonical axis-angle, |angle| in [0, pi].

    Near-pi rotations use the symmetric part (R + R^T)/2 to extract the axis,
    which stays well-conditioned where the skew part vanishes.
    """
    R = check_rotation_matrix(R)
    trace = float(np.trace(R))
    # w = 2 sin(theta) * axis
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if trace >= 3.0 - 1e-12:
        return 0.5 * w  # theta ~ 0: w/2 = theta*axis to first order
    if trace > -1.0 + _NEAR_PI_TRACE:
        # |w|/2 = sin(theta), (trace-1)/2 = cos(theta); atan2 stays accurate
        # where acos of the clamped cosine would lose digits.
        sin_t = 0.5 * float(np.linalg.norm(w))
        theta = math.atan2(sin_t, 0.5 * (trace - 1.0))
        if theta < _SMALL_ANGLE:
            return 0.5 * w
        return (0.5 * theta / sin_t) * w

    # theta within ~1e-3 of pi.  The symmetrised matrix satisfies
    # ((R + R^T)/2 + I)/2 = (1-b) I + b n n^T with b = (1-cos theta)/2,
    # so removing the isotropic part leaves n n^T exactly.
    M = 0.5 * (0.5 * (R + R.T) + np.eye(3))
    c = max(-1.0, min(1.0, 0.5 * (trace - 1.0)))
    b = 0.5 * (1.0 - c)
    N = (M - (1.0 - b) * np.eye(3)) / b
    i = int(np.argmax(np.diag(N)))
    n = np.empty(3)
    n[i] = math.sqrt(max(N[i, i], 0.0))
    for j in range(3):
        if j != i:
            n[j] = N[i, j] / n[i]
    n /= np.linalg.norm(n)
    wn = float(np.linalg.norm(w))
    if wn > 1e-9:
        # Skew part still resolves the axis sign.
        if float(np.dot(n, w)) < 0.0:
            n = -n
    else:
        # theta = pi: +n and -n are equivalent; pick the sign making the
        # largest-magnitude component positive.
        k = int(np.argmax(np.abs(n)))
        if n[k] < 0.0:
            n = -n
    theta = math.pi - math.asin(max(-1.0, min(1.0, 0.5 * wn)))
    return theta * n


def canonicalize_axis_angle(a: np.ndarray) -> np.ndarray:
    """Wrap magnitude into [0, pi], flipping the axis when needed."""
    a = np.asarray(a, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(a))
    if theta < _SMALL_ANGLE:
        return a.copy()
    axis = a / theta
    theta = math.fmod(theta, 2.0 * math.pi)
    if theta > math.pi:
        theta = 2.0 * math.pi - theta
        axis = -axis
    return theta * axis


def compose_axis_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Axis-angle of R(a) @ R(b)."""
    return matrix_to_axis_angle(axis_angle_to_matrix(a) @ axis_angle_to_matrix(b))


def rotation_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Minimal rotation matrix taking direction u to direction v.

    Antiparallel inputs rotate by pi about a deterministic perpendicular.
    """
    u = np.asarray(u, dtype=np.float64).reshape(3)
    v = np.asarray(v, dtype=np.float64).reshape(3)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < 1e-12 or nv < 1e-12:
        return np.eye(3)
    u = u / nu
    v = v / nv
    c = float(np.dot(u, v))
    axis = np.cross(u, v)
    s = float(np.linalg.norm(axis))
    if s < 1e-12:
        if c > 0.0:
            return np.eye(3)
        # pick the coordinate axis least aligned with u as the pi-rotation seed
        seed = np.zeros(3)
        seed[int(np.argmin(np.abs(u)))] = 1.0
        perp = np.cross(u, seed)
        perp /= np.linalg.norm(perp)
        return axis_angle_to_matrix(math.pi * perp)
    angle = math.atan2(s, c)
    return axis_angle_to_matrix(angle * axis / s)


# ---------------------------------------------------------------------------
# Poses and cameras


@dataclass(frozen=True)
class Pose3D:
    """Fixed-length 3D joint array (meters) with per-joint visibility."""

    joints: np.ndarray  # (N, 3) float64
    visibility: np.ndarray  # (N,) bool

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.ndim != 2 or joints.shape[1] != 3:
            raise DataError(f"Pose3D joints must be (N, 3), got {joints.shape}")
        vis = np.asarray(self.visibility, dtype=bool).reshape(-1)
        if vis.shape[0] != joints.shape[0]:
            raise DataError("Pose3D visibility length mismatch")
        if not np.all(np.isfinite(joints[vis])):
            raise DataError("Pose3D has non-finite visible joints")
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "visibility", vis)

    @classmethod
    def all_visible(cls, joints: np.ndarray) -> "Pose3D":
        joints = np.asarray(joints, dtype=np.float64)
        return cls(joints, np.ones(joints.shape[0], dtype=bool))

    @property
    def joint_count(self) -> int:
        return self.joints.shape[0]

    def translated(self, t: np.ndarray) -> "Pose3D":
        return Pose3D(self.joints + np.asarray(t, dtype=np.float64).reshape(1, 3),
                      self.visibility.copy())


@dataclass(frozen=True)
class Pose2D:
    """Fixed-length 2D joint array (pixels) with per-joint visibility."""

    joints: np.ndarray  # (N, 2) float64
    visibility: np.ndarray  # (N,) bool

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.ndim != 2 or joints.shape[1] != 2:
            raise DataError(f"Pose2D joints must be (N, 2), got {joints.shape}")
        vis = np.asarray(self.visibility, dtype=bool).reshape(-1)
        if vis.shape[0] != joints.shape[0]:
            raise DataError("Pose2D visibility length mismatch")
        if not np.all(np.isfinite(joints[vis])):
            raise DataError("Pose2D has non-finite visible joints")
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "visibility", vis)

    @classmethod
    def all_visible(cls, joints: np.ndarray) -> "Pose2D":
        joints = np.asarray(joints, dtype=np.float64)
        return cls(joints, np.ones(joints.shape[0], dtype=bool))

    @property
    def joint_count(self) -> int:
        return self.joints.shape[0]


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal length and principal point, in pixels."""

    f: np.ndarray  # (2,)
    p: np.ndarray  # (2,)

    def __post_init__(self):
        f = np.asarray(self.f, dtype=np.float64).reshape(2)
        p = np.asarray(self.p, dtype=np.float64).reshape(2)
        if not (np.all(np.isfinite(f)) and np.all(f > 0.0)):
            raise DataError("focal length components must be positive and finite")
        if not np.all(np.isfinite(p)):
            raise DataError("principal point must be finite")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "p", p)


def camera_for_bbox(bbox, focal: float = DEFAULT_FOCAL_PX) -> CameraIntrinsics:
    """Default per-sample camera: fixed focal, principal point at bbox center."""
    x, y, w, h = (float(v) for v in bbox)
    if w <= 0.0 or h <= 0.0:
        raise DataError(f"bbox must have positive area, got {bbox}")
    return CameraIntrinsics(np.array([focal, focal]),
                            np.array([x + 0.5 * w, y + 0.5 * h]))


def project(p3d: Pose3D, cam: CameraIntrinsics, z_min: float = MIN_PROJECT_Z) -> Pose2D:
    """Pinhole projection u = f*x/z + p.  Joints behind the camera (z <= z_min)
    come back marked invisible rather than raising."""
    z = p3d.joints[:, 2]
    ok = z > z_min
    vis = p3d.visibility & ok
    safe_z = np.where(ok, z, 1.0)
    uv = p3d.joints[:, :2] / safe_z[:, None] * cam.f[None, :] + cam.p[None, :]
    uv = np.where(ok[:, None], uv, 0.0)
    return Pose2D(uv, vis)


# ---------------------------------------------------------------------------
# Skeleton


@dataclass(frozen=True)
class SkeletonParams:
    """Pose parameters for the simplified skeleton.

    body_pose holds one local axis-angle per non-root joint; shape is a single
    isotropic bone-scale factor standing in for a full shape vector.
    """

    global_orient: np.ndarray  # (3,) axis-angle
    body_pose: np.ndarray  # (J-1, 3) axis-angle
    shape: float = 1.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        go = np.asarray(self.global_orient, dtype=np.float64).reshape(3)
        bp = np.asarray(self.body_pose, dtype=np.float64).reshape(-1, 3)
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (0.5 <= float(self.shape) <= 2.0):
            raise DataError(f"shape scale must lie in [0.5, 2.0], got {self.shape}")
        if not (np.all(np.isfinite(go)) and np.all(np.isfinite(bp)) and np.all(np.isfinite(tr))):
            raise DataError("skeleton params must be finite")
        object.__setattr__(self, "global_orient", go)
        object.__setattr__(self, "body_pose", bp)
        object.__setattr__(self, "shape", float(self.shape))
        object.__setattr__(self, "translation", tr)


def pose_skeleton(params: SkeletonParams, skeleton_def) -> Pose3D:
    """Forward kinematics over the skeleton tree.

    Each joint sits at parent position + (global rotation of the parent chain)
    applied to its shape-scaled rest offset; the root sits at the translation,
    oriented by global_orient.
    """
    parents = skeleton_def.parents
    offsets = skeleton_def.rest_offsets
    n = len(parents)
    if params.body_pose.shape[0] != n - 1:
        raise DataError(
            f"body_pose has {params.body_pose.shape[0]} joints, skeleton wants {n - 1}")
    pos = np.zeros((n, 3))
    rot = [None] * n
    pos[0] = params.translation
    rot[0] = axis_angle_to_matrix(params.global_orient)
    for j in range(1, n):
        p = parents[j]
        rot[j] = rot[p] @ axis_angle_to_matrix(params.body_pose[j - 1])
        pos[j] = pos[p] + rot[p] @ (params.shape * offsets[j])
    return Pose3D.all_visible(pos)


def fit_skeleton_pose(joints: np.ndarray, skeleton_def, shape: float = 1.0):
    """Recover (root rotation, per-joint local rotations) whose forward
    kinematics reproduce the given root-relative joint positions.

    Parents with several children get the orthogonal least-squares (Kabsch)
    rotation over all child offsets; single-child parents get the minimal
    rotation aligning the one bone, leaving twist at zero.  The root's own
    rotation (body tilt, e.g. an inverted pose) comes back separately as an
    axis-angle; posing with global_orient = that rotation reproduces the
    input positions.
    """
    parents = skeleton_def.parents
    offsets = skeleton_def.rest_offsets
    n = len(parents)
    joints = np.asarray(joints, dtype=np.float64).reshape(n, 3)
    children = [[] for _ in range(n)]
    for j in range(1, n):
        children[parents[j]].append(j)

    glob = [np.eye(3) for _ in range(n)]
    for j in range(n):
        kids = children[j]
        if not kids:
            continue
        rest = np.stack([shape * offsets[k] for k in kids])
        obs = np.stack([joints[k] - joints[j] for k in kids])
        if len(kids) == 1:
            glob[j] = rotation_between(rest[0], obs[0])
        else:
            H = rest.T @ obs
            U, _, Vt = np.linalg.svd(H)
            d = np.sign(np.linalg.det(Vt.T @ U.T))
            glob[j] = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T

    body = np.zeros((n - 1, 3))
    for j in range(1, n):
        local = glob[parents[j]].T @ glob[j]
        body[j - 1] = matrix_to_axis_angle(local)
    return matrix_to_axis_angle(glob[0]), body


def fit_body_pose(joints: np.ndarray, skeleton_def, shape: float = 1.0) -> np.ndarray:
    """Per-joint local rotations only; see ``fit_skeleton_pose`` (forward
    kinematics reproduce the positions when its root rotation is applied)."""
    return fit_skeleton_pose(joints, skeleton_def, shape)[1]


def heading_yaw(orient: np.ndarray) -> float:
    """Ground-plane heading (rotation about +y) of an orientation.

    Taken from where the rotated side axis (+x, the hip line) lands in the
    x-z plane: unlike the forward axis, the hip line is stable under body
    tilt, so an inverted pose keeps the heading of its upright counterpart.
    Falls back to the forward axis when the hip line points near vertical.
    """
    R = axis_angle_to_matrix(orient)
    side = R[:, 0]
    if math.hypot(side[0], side[2]) > 1e-6:
        return math.atan2(-side[2], side[0])
    fwd = R[:, 2]
    return math.atan2(fwd[0], fwd[2])


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def orientation_from_pose(joints: np.ndarray, left_hip: int, right_hip: int,
                          spine: int, root: int = 0) -> np.ndarray:
    """Estimate a global body orientation (axis-angle) from joint geometry.

    Builds an orthonormal frame from the hip axis and the root-to-spine
    direction; returns identity for degenerate layouts.
    """
    joints = np.asarray(joints, dtype=np.float64)
    x_axis = joints[left_hip] - joints[right_hip]
    up = joints[spine] - joints[root]
    nx = np.linalg.norm(x_axis)
    nu = np.linalg.norm(up)
    if nx < 1e-9 or nu < 1e-9:
        return np.zeros(3)
    x_axis = x_axis / nx
    up = up / nu
    z_axis = np.cross(x_axis, up)
    nz = np.linalg.norm(z_axis)
    if nz < 1e-9:
        return np.zeros(3)
    z_axis /= nz
    y_axis = np.cross(z_axis, x_axis)
    R = np.stack([x_axis, y_axis, z_axis], axis=1)
    return matrix_to_axis_angle(R)
