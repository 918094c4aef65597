"""Pinhole camera with CV axes (x right, y down, z forward)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .transforms import Se3


class BehindCameraError(ValueError):
    """Point has non-positive depth in the camera frame."""


class InvalidDepthError(ValueError):
    """Backprojection requested with non-positive depth."""


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: Se3 = field(default_factory=Se3.identity)  # camera-to-world

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    def world_to_cam(self) -> Se3:
        return self.pose.inverse()

    def project(self, p_world: np.ndarray) -> tuple[np.ndarray, float]:
        """World point -> (pixel (u, v), depth). Raises behind the camera."""
        pc = self.world_to_cam().apply(np.asarray(p_world, dtype=np.float64))
        z = float(pc[2])
        if z <= 0:
            raise BehindCameraError(f"point depth {z:.4g} <= 0")
        u = self.fx * pc[0] / z + self.cx
        v = self.fy * pc[1] / z + self.cy
        return np.array([u, v]), z

    def backproject(self, pixel: np.ndarray, depth: float) -> np.ndarray:
        """Pixel + depth -> world point; inverse of project."""
        if depth <= 0:
            raise InvalidDepthError(f"depth {depth:.4g} <= 0")
        u, v = float(pixel[0]), float(pixel[1])
        pc = np.array([(u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth])
        return self.pose.apply(pc)

    # batched, non-raising variants used by the dense pipeline code ---------

    def project_batch(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Points (N, 3) -> pixels (N, 2), depths (N,), validity mask."""
        pc = self.world_to_cam().apply(np.asarray(pts, dtype=np.float64))
        z = pc[:, 2]
        valid = z > 0
        zs = np.where(valid, z, 1.0)
        uv = np.stack([self.fx * pc[:, 0] / zs + self.cx, self.fy * pc[:, 1] / zs + self.cy], axis=-1)
        inside = (
            valid
            & (uv[:, 0] >= 0)
            & (uv[:, 0] <= self.width - 1)
            & (uv[:, 1] >= 0)
            & (uv[:, 1] <= self.height - 1)
        )
        return uv, z, inside

    def backproject_batch(self, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        depth = np.asarray(depth, dtype=np.float64)
        pc = np.stack(
            [
                (uv[..., 0] - self.cx) / self.fx * depth,
                (uv[..., 1] - self.cy) / self.fy * depth,
                depth,
            ],
            axis=-1,
        )
        return self.pose.apply(pc)

    def backproject_map(self, depth: np.ndarray) -> np.ndarray:
        """Full depth map (H, W) -> world positions (H, W, 3); zeros where invalid."""
        h, w = depth.shape
        us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        pts = self.backproject_batch(np.stack([us, vs], axis=-1), np.maximum(depth, 1e-12))
        return np.where(depth[..., None] > 0, pts, 0.0)

    def pixel_rays(self, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pixels (N, 2) -> world-space ray origins (N, 3) and unit directions."""
        uv = np.asarray(uv, dtype=np.float64)
        dirs_cam = np.stack(
            [
                (uv[:, 0] - self.cx) / self.fx,
                (uv[:, 1] - self.cy) / self.fy,
                np.ones(len(uv)),
            ],
            axis=-1,
        )
        dirs = dirs_cam @ self.pose.rotation.T
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        origins = np.broadcast_to(self.pose.translation, dirs.shape).copy()
        return origins, dirs

    def with_pose(self, pose: Se3) -> "Camera":
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, pose)


def look_at(eye: np.ndarray, target: np.ndarray, up: np.ndarray = (0.0, 1.0, 0.0)) -> Se3:
    """Camera-to-world pose looking from eye toward target (CV convention)."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        nr = np.linalg.norm(right)
    right = right / nr
    down = np.cross(forward, right)
    R = np.stack([right, down, forward], axis=1)  # columns: camera axes in world
    return Se3(R, eye)
