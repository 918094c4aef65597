"""Articulated capsule skeleton: forward kinematics and linear blend skinning.

The rig is a 24-joint single-rooted tree driven by a 72-dim pose vector
(3 axis-angle components per joint). Bones are the parent->joint segments,
each carrying a capsule radius; skinning weights are normalized inverse
distances to the rest-pose bone segments.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .transforms import rotmat_from_rotvec

N_JOINTS = 24
THETA_DIM = 3 * N_JOINTS


@dataclass
class Skeleton:
    parents: np.ndarray          # (J,) int, -1 for the root
    offsets: np.ndarray          # (J, 3) joint offset from parent in rest pose
    bone_radii: np.ndarray       # (J,) capsule radius of bone parent->joint (root unused)
    torso_joints: np.ndarray     # (J,) bool, drives pose-dissimilarity weighting
    joint_limits: np.ndarray     # (J,) max |axis-angle| per joint component

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.bone_radii = np.asarray(self.bone_radii, dtype=np.float64)
        self.torso_joints = np.asarray(self.torso_joints, dtype=bool)
        self.joint_limits = np.asarray(self.joint_limits, dtype=np.float64)
        if self.parents[0] != -1 or np.any(self.parents[1:] >= np.arange(1, self.n_joints)):
            raise ValueError("parents must form a single-rooted tree in topological order")

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    def rest_joint_positions(self) -> np.ndarray:
        pos = np.zeros((self.n_joints, 3))
        for j in range(self.n_joints):
            p = self.parents[j]
            pos[j] = self.offsets[j] + (pos[p] if p >= 0 else 0.0)
        return pos

    def bone_segments_rest(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rest-pose bone segments: (starts, ends, radii) for joints 1..J-1."""
        pos = self.rest_joint_positions()
        j = np.arange(1, self.n_joints)
        return pos[self.parents[j]], pos[j], self.bone_radii[j]


@dataclass
class SkeletonPose:
    """A skeleton plus its 72-dim axis-angle pose."""

    skeleton: Skeleton
    theta: np.ndarray = field(default_factory=lambda: np.zeros(THETA_DIM))

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if len(self.theta) != 3 * self.skeleton.n_joints:
            raise ValueError("theta length must be 3 * number of joints")

    def joint_rotvecs(self) -> np.ndarray:
        return self.theta.reshape(self.skeleton.n_joints, 3)


def default_humanoid() -> Skeleton:
    """24-joint humanoid, ~1.7 m tall, T-pose rest, y-up, feet near y=0."""
    parents = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21]
    offsets = np.array(
        [
            [0.00, 1.00, 0.00],   # 0 pelvis (root anchor)
            [+0.09, -0.06, 0.00], # 1 l_hip
            [-0.09, -0.06, 0.00], # 2 r_hip
            [0.00, +0.12, 0.00],  # 3 spine1
            [0.00, -0.40, 0.00],  # 4 l_knee
            [0.00, -0.40, 0.00],  # 5 r_knee
            [0.00, +0.13, 0.00],  # 6 spine2
            [0.00, -0.40, 0.00],  # 7 l_ankle
            [0.00, -0.40, 0.00],  # 8 r_ankle
            [0.00, +0.13, 0.00],  # 9 chest
            [0.00, -0.05, 0.10],  # 10 l_foot
            [0.00, -0.05, 0.10],  # 11 r_foot
            [0.00, +0.12, 0.00],  # 12 neck
            [+0.08, +0.06, 0.00], # 13 l_clavicle
            [-0.08, +0.06, 0.00], # 14 r_clavicle
            [0.00, +0.13, 0.00],  # 15 head
            [+0.11, 0.00, 0.00],  # 16 l_shoulder
            [-0.11, 0.00, 0.00],  # 17 r_shoulder
            [+0.26, 0.00, 0.00],  # 18 l_elbow
            [-0.26, 0.00, 0.00],  # 19 r_elbow
            [+0.24, 0.00, 0.00],  # 20 l_wrist
            [-0.24, 0.00, 0.00],  # 21 r_wrist
            [+0.09, 0.00, 0.00],  # 22 l_hand
            [-0.09, 0.00, 0.00],  # 23 r_hand
        ]
    )
    radii = np.zeros(N_JOINTS)
    radii[[1, 2]] = 0.085          # pelvis->hips
    radii[[3, 6, 9]] = 0.105       # spine column
    radii[[4, 5]] = 0.065          # thighs
    radii[[7, 8]] = 0.050          # shins
    radii[[10, 11]] = 0.038        # feet
    radii[12] = 0.045              # neck
    radii[[13, 14]] = 0.055        # clavicles
    radii[15] = 0.085              # head
    radii[[16, 17]] = 0.048        # shoulder stubs
    radii[[18, 19]] = 0.042        # upper arms
    radii[[20, 21]] = 0.036        # forearms
    radii[[22, 23]] = 0.032        # hands
    torso = np.zeros(N_JOINTS, dtype=bool)
    torso[[0, 3, 6, 9, 12, 13, 14, 15]] = True
    limits = np.where(torso, 0.8, 2.4)
    return Skeleton(parents, offsets, radii, torso, limits)


def forward_kinematics(skel: Skeleton, theta: np.ndarray) -> np.ndarray:
    """Global joint transforms (J, 4, 4) for an axis-angle pose vector."""
    theta = np.asarray(theta, dtype=np.float64).reshape(skel.n_joints, 3)
    rots = rotmat_from_rotvec(theta)
    G = np.zeros((skel.n_joints, 4, 4))
    for j in range(skel.n_joints):
        local = np.eye(4)
        local[:3, :3] = rots[j]
        local[:3, 3] = skel.offsets[j]
        p = skel.parents[j]
        G[j] = G[p] @ local if p >= 0 else local
    return G


def skinning_transforms(skel: Skeleton, theta: np.ndarray) -> np.ndarray:
    """Per-bone rest-to-posed transforms A_j = G_j(theta) G_j(0)^-1."""
    G = forward_kinematics(skel, theta)
    G0 = forward_kinematics(skel, np.zeros(3 * skel.n_joints))
    return G @ np.linalg.inv(G0)


def lbs_batch(skel: Skeleton, theta: np.ndarray, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Linear blend skinning of rest-pose points (N, 3) with weights (N, J)."""
    A = skinning_transforms(skel, theta)
    pts = np.asarray(points, dtype=np.float64)
    ph = np.concatenate([pts, np.ones((len(pts), 1))], axis=-1)
    # (N, J, 3): every bone transform applied to every point, then blended
    per_bone = np.einsum("jab,nb->nja", A[:, :3, :], ph)
    return np.einsum("nj,nja->na", np.asarray(weights, dtype=np.float64), per_bone)


def skeleton_lbs(pose: SkeletonPose, p_canonical: np.ndarray, skin: np.ndarray) -> np.ndarray:
    """Warp one rest-pose point by the pose; skin weights must sum to 1."""
    skin = np.asarray(skin, dtype=np.float64)
    if abs(skin.sum() - 1.0) > 1e-6:
        raise ValueError(f"skin weights must sum to 1 (got {skin.sum():.6f})")
    return lbs_batch(pose.skeleton, pose.theta, np.asarray(p_canonical, dtype=np.float64)[None], skin[None])[0]


def _point_segment_dist(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from points (N, 3) to segments a->b (M, 3) -> (N, M)."""
    ab = b - a                                        # (M, 3)
    ap = points[:, None, :] - a[None, :, :]           # (N, M, 3)
    denom = np.maximum(np.sum(ab * ab, axis=-1), 1e-12)
    t = np.clip(np.sum(ap * ab[None], axis=-1) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.linalg.norm(points[:, None, :] - closest, axis=-1)


def bone_weights(skel: Skeleton, points: np.ndarray, k: int = 4, power: float = 4.0) -> np.ndarray:
    """Normalized inverse-distance-to-bone skinning weights (N, J).

    The weight column of a segment parent->j is the parent joint: rotating
    joint j moves only geometry distal of j, so the segment itself is carried
    by the parent's transform. Only the k closest driver columns keep weight.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    starts, ends, _ = skel.bone_segments_rest()
    d = _point_segment_dist(points, starts, ends)     # (N, J-1) per segment
    drivers = skel.parents[1:]
    dist_col = np.full((len(points), skel.n_joints), np.inf)
    for seg, drv in enumerate(drivers):
        dist_col[:, drv] = np.minimum(dist_col[:, drv], d[:, seg])
    inv = np.where(np.isfinite(dist_col), 1.0 / (dist_col + 1e-3) ** power, 0.0)
    if k < skel.n_joints:
        cut = np.partition(inv, -k, axis=1)[:, -k][:, None]
        inv = np.where(inv >= cut, inv, 0.0)
    return inv / inv.sum(axis=1, keepdims=True)


def dominant_bone(skel: Skeleton, points: np.ndarray) -> np.ndarray:
    """Driver joint (skinning column) of the closest bone for each point."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    starts, ends, _ = skel.bone_segments_rest()
    d = _point_segment_dist(points, starts, ends)
    return skel.parents[1:][np.argmin(d, axis=1)]
