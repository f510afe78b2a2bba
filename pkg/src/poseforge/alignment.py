"""Orientation-aligned motion guidance.

Re-anchors a motion's global-orientation chain so its first frame matches a
reference orientation while preserving every frame-to-frame relative
rotation, then emits per-frame guidance (posed skeleton + projection) in the
reference camera.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .geometry import (CameraIntrinsics, Pose2D, Pose3D, SkeletonParams,
                       axis_angle_to_matrix, fit_skeleton_pose, heading_yaw,
                       matrix_to_axis_angle, pose_skeleton, project, yaw_matrix)
from .motion_repr import MotionSequence
from .skeleton import SkeletonDefinition, default_skeleton, motion_to_body_joints


def align_orientations(motion_orients, reference, cumulative: bool = True):
    """Align an orientation chain to a reference first-frame orientation.

    Default (cumulative) form: out[0] = reference and each successive output
    applies the motion's own frame-to-frame relative rotation, so relative
    rotations are preserved exactly.  The literal per-frame form
    (cumulative=False) re-anchors every frame to the reference instead and
    does not accumulate multi-frame rotation.
    """
    orients = [np.asarray(a, dtype=np.float64).reshape(3) for a in motion_orients]
    if not orients:
        raise DataError("empty orientation sequence")
    reference = np.asarray(reference, dtype=np.float64).reshape(3)
    rs = [axis_angle_to_matrix(a) for a in orients]
    r_init = axis_angle_to_matrix(reference)

    out = [reference.copy()]
    prev = r_init
    for l in range(1, len(rs)):
        rel = rs[l] @ rs[l - 1].T
        cur = rel @ (prev if cumulative else r_init)
        out.append(matrix_to_axis_angle(cur))
        prev = cur
    return out


@dataclass(frozen=True)
class ReferenceContext:
    """Reference-image quantities the guidance is anchored to."""

    global_orient: np.ndarray  # (3,) axis-angle
    shape: float
    translation: np.ndarray  # (3,) meters
    cam: CameraIntrinsics

    def __post_init__(self):
        go = np.asarray(self.global_orient, dtype=np.float64).reshape(3)
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.isfinite(go).all() and np.isfinite(tr).all()):
            raise DataError("reference context must be finite")
        object.__setattr__(self, "global_orient", go)
        object.__setattr__(self, "translation", tr)


@dataclass(frozen=True)
class GuidanceFrame:
    pose3d: Pose3D
    pose2d: Pose2D
    orient: np.ndarray  # (3,) aligned global orientation

    def __post_init__(self):
        object.__setattr__(
            self, "orient", np.asarray(self.orient, dtype=np.float64).reshape(3))


def _body_frame_joints(motion: MotionSequence, l: int) -> np.ndarray:
    """Joints with the full root orientation removed (body frame)."""
    r_full = axis_angle_to_matrix(motion.root_orient[l])
    r_yaw = yaw_matrix(heading_yaw(motion.root_orient[l]))
    return motion.joints[l] @ (r_full.T @ r_yaw).T


def build_guidance(motion: MotionSequence, ref: ReferenceContext,
                   skel: SkeletonDefinition | None = None,
                   use_fitted_pose: bool = True):
    """Emit one GuidanceFrame per motion frame.

    Each frame assembles skeleton parameters from the reference (shape,
    translation), the aligned orientation, and the frame's body pose; when
    the kinematic fit is disabled the frame's joints are placed rigidly
    instead.  pose2d is always the projection of pose3d in the reference
    camera.
    """
    skel = skel or default_skeleton()
    if motion.length < 1:
        raise DataError("motion is empty")
    aligned = align_orientations(list(motion.root_orient), ref.global_orient)

    frames = []
    for l in range(motion.length):
        body = _body_frame_joints(motion, l)
        if motion.joint_count == skel.joint_count - 2:
            body = motion_to_body_joints(body)
        elif motion.joint_count != skel.joint_count:
            raise DataError(
                f"motion joints {motion.joint_count} do not fit skeleton "
                f"{skel.joint_count}")
        r_mod = axis_angle_to_matrix(aligned[l])
        if use_fitted_pose:
            # body tilt recovered by the fit composes with the aligned
            # heading so inverted poses survive re-anchoring
            root_fit, body_pose = fit_skeleton_pose(body, skel, shape=1.0)
            global_orient = matrix_to_axis_angle(
                r_mod @ axis_angle_to_matrix(root_fit))
            params = SkeletonParams(global_orient=global_orient,
                                    body_pose=body_pose,
                                    shape=ref.shape, translation=ref.translation)
            pose3d = pose_skeleton(params, skel)
        else:
            placed = ref.translation + ref.shape * (body @ r_mod.T)
            pose3d = Pose3D.all_visible(placed)
        pose2d = project(pose3d, ref.cam)
        frames.append(GuidanceFrame(pose3d, pose2d, aligned[l]))
    return frames


def save_guidance_jsonl(frames, path) -> None:
    """One GuidanceFrame per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for fr in frames:
            fh.write(json.dumps({
                "pose3d": fr.pose3d.joints.tolist(),
                "vis3d": fr.pose3d.visibility.tolist(),
                "pose2d": fr.pose2d.joints.tolist(),
                "vis2d": fr.pose2d.visibility.tolist(),
                "orient": fr.orient.tolist(),
            }, sort_keys=True))
            fh.write("\n")


_SVG_BONES_NOTE = "bones drawn from the skeleton parent table"


def render_guidance_svg(frame: GuidanceFrame, path,
                        skel: SkeletonDefinition | None = None,
                        size: int = 320) -> None:
    """Debug stick-figure render of one guidance frame."""
    skel = skel or default_skeleton()
    pts = frame.pose2d.joints
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1.0))
    scale = (size * 0.9) / span

    def to_px(p):
        return ((p[0] - lo[0]) * scale + size * 0.05,
                (p[1] - lo[1]) * scale + size * 0.05)

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
             f'height="{size}"><!-- {_SVG_BONES_NOTE} -->']
    sel = skel.indices_2d_in_3d() if pts.shape[0] == skel.joint_count_2d else None
    parents = skel.parents
    n = pts.shape[0]
    for j in range(n):
        if sel is None:
            pj = parents[j]
            if pj < 0:
                continue
            a, b = to_px(pts[j]), to_px(pts[pj])
        else:
            continue
        lines.append(f'<line x1="{a[0]:.1f}" y1="{a[1]:.1f}" x2="{b[0]:.1f}" '
                     f'y2="{b[1]:.1f}" stroke="black" stroke-width="2"/>')
    for j in range(n):
        x, y = to_px(pts[j])
        lines.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="red"/>')
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
