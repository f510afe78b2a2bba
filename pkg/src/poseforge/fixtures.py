"""Procedurally generated pose and motion families.

Four analytic families (walk, squat, kick, handstand) parameterized by a
phase variable and a few sampled amplitudes.  They serve as the training
corpus for the toy generative models and as the planted populations for the
closed-loop experiment: the handstand family is geometrically far from the
others (inverted body), so an exemplar estimator trained mostly on the other
three has a measurable, repairable weakness there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import Pose3D, SkeletonParams, pose_skeleton
from .motion_repr import MotionSequence
from .skeleton import body_to_motion_joints, default_skeleton

FAMILIES = ("walk", "squat", "kick", "handstand")
HARD_FAMILY = "handstand"

_CAPTIONS = {
    "walk": (
        "a person walks forward",
        "a man walks forward slowly",
        "someone is walking ahead at a steady pace",
    ),
    "squat": (
        "a person squats down then stands up",
        "a man bends his knees into a deep squat",
        "someone squats down and rises",
    ),
    "kick": (
        "a person kicks something with their right foot",
        "a man kicks forward with his right leg",
        "someone performs a high kick",
    ),
    "handstand": (
        "a person does a handstand",
        "someone balances upside down in a handstand",
        "a man holds a handstand with legs pointing up",
    ),
}

_J = {name: i for i, name in enumerate(default_skeleton().joint_names)}


def caption_for(family: str, rng: np.random.Generator) -> str:
    return _CAPTIONS[family][int(rng.integers(len(_CAPTIONS[family])))]


@dataclass(frozen=True)
class FamilyParams:
    family: str
    amplitude: float
    frequency: float
    phase0: float
    yaw: float
    # extra shape axes in [-1, 1]; the hard family uses all three (scissor
    # split, body arch, one-sided knee bend) so a couple of exemplars cannot
    # span it
    variant: tuple = (0.0, 0.0, 0.0)


def sample_family_params(family: str, rng: np.random.Generator) -> FamilyParams:
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}")
    return FamilyParams(
        family=family,
        amplitude=float(rng.uniform(0.7, 1.0)),
        frequency=float(rng.uniform(0.8, 1.2)),
        phase0=float(rng.uniform(0.0, 2.0 * math.pi)),
        yaw=float(rng.uniform(-0.6, 0.6)),
        variant=tuple(float(v) for v in rng.uniform(-1.0, 1.0, 3)),
    )


def _set(body: np.ndarray, joint: str, axis: int, value: float) -> None:
    body[_J[joint] - 1, axis] = value


def family_skeleton_params(p: FamilyParams, phase: float) -> SkeletonParams:
    """Analytic joint-angle recipe for one frame of a family motion."""
    a = p.amplitude
    t = phase
    body = np.zeros((23, 3))
    orient = np.array([0.0, p.yaw, 0.0])
    root = np.zeros(3)
    root[1] = 0.9

    if p.family == "walk":
        swing = 0.6 * a * math.sin(t)
        _set(body, "left_hip", 0, swing)
        _set(body, "right_hip", 0, -swing)
        _set(body, "left_knee", 0, 0.5 * a * (1.0 + math.sin(t - 1.2)) / 2.0)
        _set(body, "right_knee", 0, 0.5 * a * (1.0 + math.sin(t + math.pi - 1.2)) / 2.0)
        _set(body, "left_shoulder", 0, -0.4 * a * math.sin(t))
        _set(body, "right_shoulder", 0, 0.4 * a * math.sin(t))
        _set(body, "left_elbow", 0, 0.3 * a)
        _set(body, "right_elbow", 0, 0.3 * a)
        root[1] += 0.02 * math.sin(2.0 * t)
    elif p.family == "squat":
        depth = a * (1.0 - math.cos(t)) / 2.0
        _set(body, "left_hip", 0, -1.1 * depth)
        _set(body, "right_hip", 0, -1.1 * depth)
        _set(body, "left_knee", 0, 2.0 * depth)
        _set(body, "right_knee", 0, 2.0 * depth)
        _set(body, "spine1", 0, 0.35 * depth)
        _set(body, "left_shoulder", 0, -0.9 * depth)
        _set(body, "right_shoulder", 0, -0.9 * depth)
        root[1] -= 0.35 * depth
    elif p.family == "kick":
        lift = a * max(0.0, math.sin(t))
        _set(body, "right_hip", 0, -1.3 * lift)
        _set(body, "right_knee", 0, 0.7 * a * max(0.0, math.sin(t - 0.6)))
        _set(body, "left_shoulder", 0, -0.5 * lift)
        _set(body, "right_shoulder", 0, 0.3 * lift)
        _set(body, "spine1", 0, -0.15 * lift)
        root[1] += 0.01 * math.sin(t)
    elif p.family == "handstand":
        v1, v2, v3 = p.variant
        sway = 0.15 * a * math.sin(t)
        orient = np.array([math.pi - 0.05 * a * math.cos(t) + 0.12 * v2, 0.0, 0.0])
        # arms overhead (toward the ground once inverted)
        _set(body, "left_shoulder", 2, 1.35 + 0.15 * v3)
        _set(body, "right_shoulder", 2, -1.35 - 0.15 * v3)
        _set(body, "left_elbow", 2, 0.15)
        _set(body, "right_elbow", 2, -0.15)
        # sideways split plus a forward/back scissor, swaying
        _set(body, "left_hip", 2, 0.25 * a + sway)
        _set(body, "right_hip", 2, -0.25 * a + sway)
        _set(body, "left_hip", 0, 0.5 * v1)
        _set(body, "right_hip", 0, -0.5 * v1)
        _set(body, "spine1", 0, 0.2 * v2)
        _set(body, "left_knee", 0, 0.1 * a + 0.45 * max(0.0, v3))
        _set(body, "right_knee", 0, 0.1 * a + 0.45 * max(0.0, -v3))
        root[1] = 1.1
    else:
        raise ConfigError(f"unknown family {p.family!r}")

    return SkeletonParams(global_orient=orient, body_pose=body, shape=1.0,
                          translation=root)


def family_pose(p: FamilyParams, phase: float, skel=None) -> Pose3D:
    skel = skel or default_skeleton()
    return pose_skeleton(family_skeleton_params(p, phase), skel)


def make_family_motion(family: str, length: int, rng: np.random.Generator,
                       fps: float = 20.0):
    """One motion of the family; returns (22-joint MotionSequence, caption)."""
    skel = default_skeleton()
    p = sample_family_params(family, rng)
    walk_speed = 0.04 * p.amplitude if family == "walk" else 0.0
    world = np.zeros((length, 22, 3))
    orient = np.zeros((length, 3))
    for l in range(length):
        phase = p.phase0 + p.frequency * 2.0 * math.pi * l / max(length - 1, 1)
        sp = family_skeleton_params(p, phase)
        advance = np.array([math.sin(p.yaw), 0.0, math.cos(p.yaw)]) * walk_speed * l
        sp = SkeletonParams(sp.global_orient, sp.body_pose, sp.shape,
                            sp.translation + advance)
        pose = pose_skeleton(sp, skel)
        world[l] = body_to_motion_joints(pose.joints)
        orient[l] = sp.global_orient
    motion = MotionSequence.from_world(world, orient, fps=fps)
    return motion, caption_for(family, rng)


def make_static_motion(family: str, length: int, rng: np.random.Generator):
    """A single family pose tiled over time (teaches near-static content)."""
    p = sample_family_params(family, rng)
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    pose = family_pose(p, phase)
    world = np.repeat(body_to_motion_joints(pose.joints)[None, :, :], length, axis=0)
    orient = np.repeat(family_skeleton_params(p, phase).global_orient[None, :],
                       length, axis=0)
    return MotionSequence.from_world(world, orient), caption_for(family, rng)


def build_motion_corpus(n: int, length: int, seed: int,
                        families=FAMILIES, static_fraction: float = 0.25):
    """List of (MotionSequence, caption) drawn round-robin over families."""
    rng = np.random.default_rng(seed)
    corpus = []
    for i in range(n):
        family = families[i % len(families)]
        if rng.random() < static_fraction:
            corpus.append(make_static_motion(family, length, rng))
        else:
            corpus.append(make_family_motion(family, length, rng))
    return corpus


def place_in_camera(pose: Pose3D, rng: np.random.Generator,
                    depth_range=(4.0, 6.0)) -> Pose3D:
    """Translate a pose to a plausible camera-frame placement (z > 0)."""
    offset = np.array([
        float(rng.uniform(-0.5, 0.5)),
        float(rng.uniform(-0.3, 0.3)),
        float(rng.uniform(*depth_range)),
    ])
    return pose.translated(offset)


def sample_family_pose(family: str, rng: np.random.Generator,
                       in_camera: bool = True) -> Pose3D:
    p = sample_family_params(family, rng)
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    pose = family_pose(p, phase)
    return place_in_camera(pose, rng) if in_camera else pose


def random_pose(rng: np.random.Generator, in_camera: bool = True) -> Pose3D:
    """Unstructured random joint-angle pose (the random-augmentation arm)."""
    skel = default_skeleton()
    body = rng.normal(0.0, 0.4, (23, 3)).clip(-1.2, 1.2)
    orient = np.array([rng.normal(0.0, 0.3), rng.uniform(-math.pi, math.pi),
                       rng.normal(0.0, 0.3)])
    params = SkeletonParams(global_orient=orient, body_pose=body, shape=1.0,
                            translation=np.array([0.0, 0.9, 0.0]))
    pose = pose_skeleton(params, skel)
    return place_in_camera(pose, rng) if in_camera else pose
