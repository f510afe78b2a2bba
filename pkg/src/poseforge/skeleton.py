"""Skeleton definitions: joint names, tree topology, rest offsets, and the
correspondence maps between the 24-joint 3D body, the 22-joint motion body
(3D body minus hand tips), and the 16-joint 2D annotation layout.

A definition can also be loaded from a plain-text schema file; see
``load_skeleton_file`` for the format.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class SkeletonDefinition:
    """Tree of joints with rest-pose bone offsets plus the 2D joint layout."""

    joint_names: tuple  # 3D joints, root first
    parents: tuple  # parent index per joint, -1 for root
    rest_offsets: np.ndarray  # (J, 3) meters, parent-local
    joint_names_2d: tuple
    map_2d_to_3d: dict  # 2D joint name -> 3D joint name

    def __post_init__(self):
        n = len(self.joint_names)
        if len(self.parents) != n:
            raise DataError("parents length != joint count")
        offs = np.asarray(self.rest_offsets, dtype=np.float64).reshape(n, 3)
        if self.parents[0] != -1:
            raise DataError("first joint must be the root (parent -1)")
        for j, p in enumerate(self.parents[1:], start=1):
            if not (0 <= p < j):
                raise DataError(f"joint {j} has invalid parent {p} (must precede it)")
        for name2d in self.map_2d_to_3d:
            if name2d not in self.joint_names_2d:
                raise DataError(f"2D map key {name2d!r} not a 2D joint")
        for name3d in self.map_2d_to_3d.values():
            if name3d not in self.joint_names:
                raise DataError(f"2D map value {name3d!r} not a 3D joint")
        object.__setattr__(self, "rest_offsets", offs)

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    @property
    def joint_count_2d(self) -> int:
        return len(self.joint_names_2d)

    def index(self, name: str) -> int:
        return self.joint_names.index(name)

    def index_2d(self, name: str) -> int:
        return self.joint_names_2d.index(name)

    def rest_pose(self, shape: float = 1.0) -> np.ndarray:
        """Joint positions with identity rotations and zero translation."""
        pos = np.zeros((self.joint_count, 3))
        for j in range(1, self.joint_count):
            pos[j] = pos[self.parents[j]] + shape * self.rest_offsets[j]
        return pos

    def indices_2d_in_3d(self) -> np.ndarray:
        """For each 2D joint, the index of its matched 3D joint."""
        return np.array([self.joint_names.index(self.map_2d_to_3d[n])
                         for n in self.joint_names_2d], dtype=np.int64)


# 24-joint body: standard body-model joint order (pelvis-rooted, hand tips
# as children of the wrists).
BODY_JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
)

BODY_PARENTS = (
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19,
    20, 21,
)

BODY_REST_OFFSETS = np.array([
    [0.000, 0.000, 0.000],   # pelvis
    [0.090, -0.050, 0.000],  # left_hip
    [-0.090, -0.050, 0.000],  # right_hip
    [0.000, 0.110, 0.000],   # spine1
    [0.000, -0.380, 0.000],  # left_knee
    [0.000, -0.380, 0.000],  # right_knee
    [0.000, 0.130, 0.000],   # spine2
    [0.000, -0.400, 0.000],  # left_ankle
    [0.000, -0.400, 0.000],  # right_ankle
    [0.000, 0.050, 0.000],   # spine3
    [0.000, -0.060, 0.120],  # left_foot
    [0.000, -0.060, 0.120],  # right_foot
    [0.000, 0.210, 0.000],   # neck
    [0.070, 0.110, 0.000],   # left_collar
    [-0.070, 0.110, 0.000],  # right_collar
    [0.000, 0.090, 0.000],   # head
    [0.110, 0.020, 0.000],   # left_shoulder
    [-0.110, 0.020, 0.000],  # right_shoulder
    [0.260, 0.000, 0.000],   # left_elbow
    [-0.260, 0.000, 0.000],  # right_elbow
    [0.250, 0.000, 0.000],   # left_wrist
    [-0.250, 0.000, 0.000],  # right_wrist
    [0.080, 0.000, 0.000],   # left_hand
    [-0.080, 0.000, 0.000],  # right_hand
])

# 16-joint 2D layout (classic in-the-wild annotation order: right leg down-up,
# left leg up-down, trunk, then arms).
JOINT_NAMES_2D = (
    "right_ankle", "right_knee", "right_hip", "left_hip", "left_knee",
    "left_ankle", "pelvis", "thorax", "upper_neck", "head_top",
    "right_wrist", "right_elbow", "right_shoulder", "left_shoulder",
    "left_elbow", "left_wrist",
)

MAP_2D_TO_3D = {
    "right_ankle": "right_ankle", "right_knee": "right_knee",
    "right_hip": "right_hip", "left_hip": "left_hip", "left_knee": "left_knee",
    "left_ankle": "left_ankle", "pelvis": "pelvis", "thorax": "spine3",
    "upper_neck": "neck", "head_top": "head", "right_wrist": "right_wrist",
    "right_elbow": "right_elbow", "right_shoulder": "right_shoulder",
    "left_shoulder": "left_shoulder", "left_elbow": "left_elbow",
    "left_wrist": "left_wrist",
}


def default_skeleton() -> SkeletonDefinition:
    return SkeletonDefinition(BODY_JOINT_NAMES, BODY_PARENTS, BODY_REST_OFFSETS,
                              JOINT_NAMES_2D, dict(MAP_2D_TO_3D))


# Motion work runs on the body minus the two hand tips (22 joints).
MOTION_JOINT_NAMES = BODY_JOINT_NAMES[:22]
# Heel/toe joints used for the four foot-contact features (L ankle, L foot,
# R ankle, R foot).
MOTION_CONTACT_JOINTS = (7, 10, 8, 11)

# Hand tips are carried along with their wrists when widening 22 -> 24.
_HAND_SOURCE = {"left_hand": "left_wrist", "right_hand": "right_wrist"}


def motion_to_body_joints(joints22: np.ndarray) -> np.ndarray:
    """Widen 22 motion joints to the 24-joint body by copying wrists to hands."""
    joints22 = np.asarray(joints22, dtype=np.float64)
    if joints22.shape[-2] != 22:
        raise DataError(f"expected 22 joints, got {joints22.shape}")
    extra = [joints22[..., MOTION_JOINT_NAMES.index(src), :]
             for src in (_HAND_SOURCE["left_hand"], _HAND_SOURCE["right_hand"])]
    return np.concatenate([joints22, np.stack(extra, axis=-2)], axis=-2)


def body_to_motion_joints(joints24: np.ndarray) -> np.ndarray:
    """Narrow the 24-joint body to the 22 motion joints (drop hand tips)."""
    joints24 = np.asarray(joints24, dtype=np.float64)
    if joints24.shape[-2] != 24:
        raise DataError(f"expected 24 joints, got {joints24.shape}")
    return joints24[..., :22, :].copy()


def common_motion_body_indices() -> tuple:
    """Index arrays (motion_idx, body_idx) of the shared 22 joints."""
    idx = np.arange(22, dtype=np.int64)
    return idx, idx.copy()


def load_skeleton_file(path) -> SkeletonDefinition:
    """Parse a plain-text skeleton schema.

    Line formats (blank lines and ``#`` comments ignored)::

        joint <name> <parent_index> <offset_x> <offset_y> <offset_z>
        joint2d <name>
        map2d <2d_name> <3d_name>
    """
    names, parents, offsets = [], [], []
    names2d, map2d = [], {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "joint" and len(parts) == 6:
                    names.append(parts[1])
                    parents.append(int(parts[2]))
                    offsets.append([float(v) for v in parts[3:6]])
                elif parts[0] == "joint2d" and len(parts) == 2:
                    names2d.append(parts[1])
                elif parts[0] == "map2d" and len(parts) == 3:
                    map2d[parts[1]] = parts[2]
                else:
                    raise ValueError(f"unrecognized directive {parts[0]!r}")
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not names:
        raise DataError(f"{path}: no joints defined")
    return SkeletonDefinition(tuple(names), tuple(parents), np.array(offsets),
                              tuple(names2d), map2d)


def save_skeleton_file(skel: SkeletonDefinition, path) -> None:
    lines = ["# skeleton schema: joint <name> <parent> <ox> <oy> <oz>"]
    for name, parent, off in zip(skel.joint_names, skel.parents, skel.rest_offsets):
        lines.append(f"joint {name} {parent} {off[0]:.6f} {off[1]:.6f} {off[2]:.6f}")
    for name in skel.joint_names_2d:
        lines.append(f"joint2d {name}")
    for k, v in skel.map_2d_to_3d.items():
        lines.append(f"map2d {k} {v}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
