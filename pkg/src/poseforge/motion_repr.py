"""Per-frame motion featurization and its inverse.

A motion is stored as canonical (heading-normalized, root-relative) joint
positions plus a per-frame root orientation and root position.  The feature
matrix packs, per frame:

    [0]      root yaw velocity (rad/frame)
    [1:3]    root ground-plane velocity in the heading frame (m/frame)
    [3]      root height (m)
    ...      local joint positions, 3*(J-1)
    ...      local joint rotations as 6D (first two matrix columns), 6*(J-1)
    ...      joint velocities, 3*J (root slot = heading-frame root velocity)
    [-4:]    foot contacts (1.0 when the joint moved less than the threshold)

giving D = 12*J - 1 columns (263 for the 22-joint motion body).  Velocities
are forward differences; the last frame repeats the previous velocity.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import skeleton as skel
from .errors import DataError
from .geometry import (Pose3D, axis_angle_to_matrix, heading_yaw,
                       matrix_to_axis_angle, rotation_between, yaw_matrix)

DEFAULT_TIME_STEPS = 30
DEFAULT_CONTACT_THRESHOLD = 0.02  # m/frame

_MOTION_MAGIC = b"PFMS"
_MOTION_VERSION = 1


@dataclass(frozen=True)
class ReprLayout:
    """Feature-matrix schema bound to a motion skeleton."""

    joint_count: int
    parents: tuple
    rest_offsets: np.ndarray  # (J, 3)
    contact_joints: tuple  # 4 joint indices (duplicates allowed)
    contact_threshold: float = DEFAULT_CONTACT_THRESHOLD
    # optional hints for estimating a full body orientation from geometry
    left_hip: int | None = None
    right_hip: int | None = None
    spine: int | None = None

    def __post_init__(self):
        offs = np.asarray(self.rest_offsets, dtype=np.float64).reshape(self.joint_count, 3)
        if len(self.parents) != self.joint_count:
            raise DataError("parents length != joint_count")
        if len(self.contact_joints) != 4:
            raise DataError("contact_joints must list 4 joints")
        object.__setattr__(self, "rest_offsets", offs)

    @property
    def dim(self) -> int:
        return 12 * self.joint_count - 1

    # slice boundaries
    @property
    def sl_rot_vel(self):
        return slice(0, 1)

    @property
    def sl_lin_vel(self):
        return slice(1, 3)

    @property
    def sl_root_y(self):
        return slice(3, 4)

    @property
    def sl_positions(self):
        j = self.joint_count
        return slice(4, 4 + 3 * (j - 1))

    @property
    def sl_rotations(self):
        j = self.joint_count
        return slice(4 + 3 * (j - 1), 4 + 9 * (j - 1))

    @property
    def sl_velocities(self):
        j = self.joint_count
        return slice(4 + 9 * (j - 1), 4 + 9 * (j - 1) + 3 * j)

    @property
    def sl_contacts(self):
        return slice(self.dim - 4, self.dim)


def default_layout() -> ReprLayout:
    """22-joint motion layout (D = 263)."""
    body = skel.default_skeleton()
    return ReprLayout(
        joint_count=22,
        parents=body.parents[:22],
        rest_offsets=body.rest_offsets[:22],
        contact_joints=skel.MOTION_CONTACT_JOINTS,
        left_hip=1, right_hip=2, spine=12,
    )


def toy_layout() -> ReprLayout:
    """5-joint chain for fast tests (D = 59)."""
    offsets = np.array([
        [0.0, 0.0, 0.0],
        [0.1, -0.4, 0.0],
        [-0.1, -0.4, 0.0],
        [0.0, 0.3, 0.0],
        [0.0, 0.2, 0.0],
    ])
    return ReprLayout(joint_count=5, parents=(-1, 0, 0, 0, 3),
                      rest_offsets=offsets, contact_joints=(1, 2, 1, 2),
                      left_hip=1, right_hip=2, spine=3)


@dataclass(frozen=True)
class MotionSequence:
    """L frames of canonical joints plus root orientation and trajectory.

    ``joints`` are root-relative with the heading (yaw) removed; tilt stays in
    the coordinates.  ``root_orient`` is the full per-frame orientation.
    """

    joints: np.ndarray  # (L, J, 3)
    root_orient: np.ndarray  # (L, 3) axis-angle
    root_pos: np.ndarray  # (L, 3)
    joint_rotations: np.ndarray | None = None  # (L, J-1, 3) axis-angle
    fps: float = 20.0

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        orient = np.asarray(self.root_orient, dtype=np.float64)
        pos = np.asarray(self.root_pos, dtype=np.float64)
        if joints.ndim != 3 or joints.shape[2] != 3:
            raise DataError(f"joints must be (L, J, 3), got {joints.shape}")
        L = joints.shape[0]
        if L < 1:
            raise DataError("motion must have at least one frame")
        if orient.shape != (L, 3) or pos.shape != (L, 3):
            raise DataError("root_orient/root_pos must be (L, 3)")
        if not (np.isfinite(joints).all() and np.isfinite(orient).all()
                and np.isfinite(pos).all()):
            raise DataError("motion contains non-finite values")
        rots = self.joint_rotations
        if rots is not None:
            rots = np.asarray(rots, dtype=np.float64)
            if rots.shape != (L, joints.shape[1] - 1, 3):
                raise DataError("joint_rotations must be (L, J-1, 3)")
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "root_orient", orient)
        object.__setattr__(self, "root_pos", pos)
        object.__setattr__(self, "joint_rotations", rots)

    @property
    def length(self) -> int:
        return self.joints.shape[0]

    @property
    def joint_count(self) -> int:
        return self.joints.shape[1]

    def pose(self, l: int) -> Pose3D:
        return Pose3D.all_visible(self.joints[l])

    def world_joints(self, l: int) -> np.ndarray:
        yaw = heading_yaw(self.root_orient[l])
        return self.root_pos[l] + self.joints[l] @ yaw_matrix(yaw).T

    @classmethod
    def from_world(cls, world_joints: np.ndarray, root_orient: np.ndarray,
                   fps: float = 20.0) -> "MotionSequence":
        """Build the canonical form from world-frame joints (root = joint 0)."""
        world = np.asarray(world_joints, dtype=np.float64)
        orient = np.asarray(root_orient, dtype=np.float64)
        L = world.shape[0]
        root = world[:, 0]
        canon = np.empty_like(world)
        for l in range(L):
            yaw = heading_yaw(orient[l])
            canon[l] = (world[l] - root[l]) @ yaw_matrix(yaw)
        return cls(canon, orient, root.copy(), fps=fps)


@dataclass(frozen=True)
class MotionRepr:
    """T x D feature matrix with its layout."""

    frames: np.ndarray
    layout: ReprLayout

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != self.layout.dim:
            raise DataError(
                f"frames must be (T, {self.layout.dim}), got {frames.shape}")
        if frames.shape[0] < 1:
            raise DataError("repr must have at least one frame")
        if not np.isfinite(frames).all():
            raise DataError("repr contains non-finite values")
        contacts = frames[:, self.layout.sl_contacts]
        if contacts.min() < -1e-9 or contacts.max() > 1.0 + 1e-9:
            raise DataError("foot-contact features must lie in [0, 1]")
        object.__setattr__(self, "frames", frames)

    @property
    def t_steps(self) -> int:
        return self.frames.shape[0]


def _rot6d_from_matrix(R: np.ndarray) -> np.ndarray:
    return np.array([R[0, 0], R[1, 0], R[2, 0], R[0, 1], R[1, 1], R[2, 1]])


def _matrix_from_rot6d(v: np.ndarray) -> np.ndarray:
    a = np.asarray(v[:3], dtype=np.float64)
    b = np.asarray(v[3:6], dtype=np.float64)
    na = np.linalg.norm(a)
    if na < 1e-9:
        return np.eye(3)
    c0 = a / na
    b = b - np.dot(c0, b) * c0
    nb = np.linalg.norm(b)
    if nb < 1e-9:
        return np.eye(3)
    c1 = b / nb
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=1)


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def encode_repr(motion: MotionSequence, layout: ReprLayout) -> MotionRepr:
    """Featurize a motion per the layout."""
    if motion.joint_count != layout.joint_count:
        raise DataError(
            f"motion has {motion.joint_count} joints, layout wants {layout.joint_count}")
    L, J = motion.length, layout.joint_count
    frames = np.zeros((L, layout.dim))

    yaws = np.array([heading_yaw(motion.root_orient[l]) for l in range(L)])
    world = np.stack([motion.world_joints(l) for l in range(L)])

    for l in range(L):
        src = min(l, L - 2) if L > 1 else 0  # last frame repeats previous velocity
        if L > 1:
            frames[l, layout.sl_rot_vel] = _wrap_angle(yaws[src + 1] - yaws[src])
            d_world = motion.root_pos[src + 1] - motion.root_pos[src]
            d_local = yaw_matrix(yaws[src]).T @ d_world
            frames[l, layout.sl_lin_vel] = (d_local[0], d_local[2])
            vel = np.empty((J, 3))
            vel[0] = d_local
            vel[1:] = motion.joints[src + 1, 1:] - motion.joints[src, 1:]
            frames[l, layout.sl_velocities] = vel.reshape(-1)
            speeds = np.linalg.norm(world[src + 1] - world[src], axis=1)
        else:
            speeds = np.zeros(J)
        frames[l, layout.sl_root_y] = motion.root_pos[l, 1]
        frames[l, layout.sl_positions] = motion.joints[l, 1:].reshape(-1)
        rot = np.empty((J - 1, 6))
        for j in range(1, J):
            bone = motion.joints[l, j] - motion.joints[l, layout.parents[j]]
            rot[j - 1] = _rot6d_from_matrix(
                rotation_between(layout.rest_offsets[j], bone))
        frames[l, layout.sl_rotations] = rot.reshape(-1)
        contact = (speeds[list(layout.contact_joints)] < layout.contact_threshold)
        frames[l, layout.sl_contacts] = contact.astype(np.float64)

    return MotionRepr(frames, layout)


def decode_repr(repr_: MotionRepr, init_yaw: float = 0.0,
                init_xz=(0.0, 0.0), fps: float = 20.0) -> MotionSequence:
    """Integrate the feature matrix back into a motion.

    Left inverse of ``encode_repr`` on joint positions when given the source
    motion's initial yaw and ground-plane position.
    """
    layout = repr_.layout
    T, J = repr_.t_steps, layout.joint_count
    f = repr_.frames

    yaws = np.zeros(T)
    yaws[0] = init_yaw
    for l in range(1, T):
        yaws[l] = yaws[l - 1] + f[l - 1, layout.sl_rot_vel][0]

    root = np.zeros((T, 3))
    root[0, 0], root[0, 2] = init_xz
    root[:, 1] = f[:, layout.sl_root_y][:, 0]
    for l in range(1, T):
        lv = f[l - 1, layout.sl_lin_vel]
        step = yaw_matrix(yaws[l - 1]) @ np.array([lv[0], 0.0, lv[1]])
        root[l, 0] = root[l - 1, 0] + step[0]
        root[l, 2] = root[l - 1, 2] + step[2]

    joints = np.zeros((T, J, 3))
    joints[:, 1:] = f[:, layout.sl_positions].reshape(T, J - 1, 3)

    rotations = np.empty((T, J - 1, 3))
    for l in range(T):
        six = f[l, layout.sl_rotations].reshape(J - 1, 6)
        for j in range(J - 1):
            rotations[l, j] = matrix_to_axis_angle(_matrix_from_rot6d(six[j]))

    # Orientation is heading-only: body tilt (e.g. an inverted pose) stays in
    # the joint coordinates, so re-anchoring the orientation chain elsewhere
    # re-faces the motion without flattening its geometry.
    orient = np.zeros((T, 3))
    for l in range(T):
        orient[l] = matrix_to_axis_angle(yaw_matrix(yaws[l]))

    return MotionSequence(joints, orient, root, joint_rotations=rotations, fps=fps)


def make_initial_repr(pose: Pose3D, t_steps: int, layout: ReprLayout) -> MotionRepr:
    """Tile a single pose over ``t_steps`` frames and featurize it.

    The pose is taken root-relative with identity heading; ground-plane
    position and absolute height are dropped (the result is a static motion
    at the origin).  All velocity slices are exactly zero.
    """
    if t_steps < 2:
        raise DataError(f"t_steps must be >= 2, got {t_steps}")
    if pose.joint_count != layout.joint_count:
        raise DataError(
            f"pose has {pose.joint_count} joints, layout wants {layout.joint_count}")
    rel = pose.joints - pose.joints[0]
    joints = np.repeat(rel[None, :, :], t_steps, axis=0)
    orient = np.zeros((t_steps, 3))
    root = np.zeros((t_steps, 3))
    motion = MotionSequence(joints, orient, root)
    return encode_repr(motion, layout)


# ---------------------------------------------------------------------------
# Motion file format: JSON header + little-endian f32 frame block.


def save_motion(motion: MotionSequence, path) -> None:
    header = {
        "version": _MOTION_VERSION,
        "joint_count": motion.joint_count,
        "length": motion.length,
        "fps": motion.fps,
        "has_rotations": motion.joint_rotations is not None,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MOTION_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for arr in (motion.root_pos, motion.root_orient, motion.joints):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        if motion.joint_rotations is not None:
            fh.write(np.ascontiguousarray(motion.joint_rotations, dtype="<f4").tobytes())


def load_motion(path) -> MotionSequence:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MOTION_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        try:
            header = json.loads(fh.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: corrupt header: {exc}") from exc
        if header.get("version") != _MOTION_VERSION:
            raise DataError(f"{path}: unsupported version {header.get('version')}")
        L, J = int(header["length"]), int(header["joint_count"])
        if L < 1 or J < 2:
            raise DataError(f"{path}: invalid dimensions L={L} J={J}")

        def block(shape):
            count = int(np.prod(shape))
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise DataError(f"{path}: truncated frame block")
            return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)

        root_pos = block((L, 3))
        root_orient = block((L, 3))
        joints = block((L, J, 3))
        rotations = block((L, J - 1, 3)) if header.get("has_rotations") else None
    return MotionSequence(joints, root_orient, root_pos,
                          joint_rotations=rotations, fps=float(header["fps"]))
