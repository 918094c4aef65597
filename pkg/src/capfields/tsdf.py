"""Truncated signed distance volume for rigid object tracking.

The volume is anchored in the object's canonical frame; integration takes
the canonical-to-world pose of the object for the current frame. Values are
normalized to [-1, 1] by the truncation band; weights saturate at 64.
"""
from __future__ import annotations

import numpy as np

from .camera import Camera
from .transforms import Se3

MAX_WEIGHT = 64.0


class TsdfVolume:
    def __init__(self, resolution: int, voxel_size: float, origin: np.ndarray, truncation: float | None = None):
        self.resolution = int(resolution)
        self.voxel_size = float(voxel_size)
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.truncation = float(truncation if truncation is not None else 4.0 * voxel_size)
        r = self.resolution
        self.tsdf = np.ones((r, r, r))
        self.weight = np.zeros((r, r, r))
        ax = np.arange(r)
        gx, gy, gz = np.meshgrid(ax, ax, ax, indexing="ij")
        self._centers = self.origin + (np.stack([gx, gy, gz], axis=-1) + 0.5) * self.voxel_size

    def voxel_centers(self) -> np.ndarray:
        return self._centers

    def integrate(self, depth: np.ndarray, cam: Camera, pose: Se3, mask: np.ndarray | None = None) -> None:
        """Weighted-average TSDF update from one depth map.

        pose maps volume (object canonical) coordinates to world. Voxels more
        than one truncation band behind the observed surface are untouched.
        """
        pts_world = pose.apply(self._centers.reshape(-1, 3))
        uv, z, _ = cam.project_batch(pts_world)
        h, w = depth.shape
        u = np.round(uv[:, 0]).astype(np.int64)
        v = np.round(uv[:, 1]).astype(np.int64)
        ok = (z > 0) & (u >= 0) & (u < w) & (v >= 0) & (v < h)
        d = np.zeros(len(z))
        d[ok] = depth[v[ok], u[ok]]
        if mask is not None:
            inmask = np.zeros(len(z), dtype=bool)
            inmask[ok] = mask[v[ok], u[ok]] > 0
            ok &= inmask
        ok &= d > 0
        sdf = d - z
        ok &= sdf >= -self.truncation
        val = np.minimum(1.0, sdf / self.truncation)
        flat_t = self.tsdf.reshape(-1)
        flat_w = self.weight.reshape(-1)
        w_old = flat_w[ok]
        w_new = np.minimum(w_old + 1.0, MAX_WEIGHT)
        flat_t[ok] = (flat_t[ok] * w_old + val[ok]) / (w_old + 1.0)
        flat_w[ok] = w_new

    def sample(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Trilinear TSDF values and validity at canonical-frame points."""
        g = (np.atleast_2d(pts) - self.origin) / self.voxel_size - 0.5
        i0 = np.floor(g).astype(np.int64)
        f = g - i0
        r = self.resolution
        valid = np.all((i0 >= 0) & (i0 < r - 1), axis=-1)
        i0c = np.clip(i0, 0, r - 2)
        out = np.zeros(len(g))
        wsum = np.zeros(len(g))
        observed = np.zeros(len(g), dtype=bool)
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    wgt = (
                        (f[:, 0] if dx else 1 - f[:, 0])
                        * (f[:, 1] if dy else 1 - f[:, 1])
                        * (f[:, 2] if dz else 1 - f[:, 2])
                    )
                    vals = self.tsdf[i0c[:, 0] + dx, i0c[:, 1] + dy, i0c[:, 2] + dz]
                    wvol = self.weight[i0c[:, 0] + dx, i0c[:, 1] + dy, i0c[:, 2] + dz]
                    out += wgt * vals
                    wsum += wgt
                    observed |= wvol > 0
        return out, valid & observed

    def gradient(self, pts: np.ndarray) -> np.ndarray:
        """Central-difference TSDF gradient (per meter) at canonical points."""
        h = self.voxel_size
        g = np.zeros((len(np.atleast_2d(pts)), 3))
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            hi, _ = self.sample(pts + e)
            lo, _ = self.sample(pts - e)
            g[:, a] = (hi - lo) / (2 * h)
        return g

    def extract_surface(self, step: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Zero-crossing surface points + normals via axis scans.

        Walks every voxel edge along each axis and linearly interpolates sign
        changes of observed voxels; good enough to source ICP model points.
        """
        pts = []
        r = self.resolution
        t = self.tsdf
        wt = self.weight
        for axis in range(3):
            sl_a = [slice(None)] * 3
            sl_b = [slice(None)] * 3
            sl_a[axis] = slice(0, r - 1)
            sl_b[axis] = slice(1, r)
            a, b = t[tuple(sl_a)], t[tuple(sl_b)]
            wa, wb = wt[tuple(sl_a)], wt[tuple(sl_b)]
            cross = (a * b <= 0) & (a != b) & (wa > 0) & (wb > 0) & (np.abs(a) < 1) & (np.abs(b) < 1)
            idx = np.argwhere(cross)
            if len(idx) == 0:
                continue
            av = a[cross]
            bv = b[cross]
            frac = av / (av - bv)
            base = self._centers[idx[:, 0], idx[:, 1], idx[:, 2]]
            offs = np.zeros_like(base)
            offs[:, axis] = frac * self.voxel_size
            pts.append(base + offs)
        if not pts:
            return np.zeros((0, 3)), np.zeros((0, 3))
        pts = np.concatenate(pts, axis=0)
        n = self.gradient(pts)
        norm = np.linalg.norm(n, axis=1)
        ok = norm > 1e-9
        return pts[ok], n[ok] / norm[ok][:, None]

    def raycast(self, cam: Camera, pose: Se3, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """March camera rays through the volume; returns surface points and
        normals in the volume's canonical frame."""
        h, w = cam.height, cam.width
        us, vs = np.meshgrid(np.arange(0, w, stride), np.arange(0, h, stride))
        uv = np.stack([us.reshape(-1), vs.reshape(-1)], axis=-1).astype(np.float64)
        o_w, d_w = cam.pixel_rays(uv)
        inv = pose.inverse()
        o = inv.apply(o_w)
        d = d_w @ inv.rotation.T
        extent = self.resolution * self.voxel_size
        t = np.full(len(uv), 1e-3)
        hit = np.zeros(len(uv), dtype=bool)
        prev_val = np.full(len(uv), 1.0)
        prev_t = t.copy()
        step = 0.5 * self.voxel_size
        max_t = np.linalg.norm(self.origin + extent - o, axis=-1).max() + extent
        surf_t = np.zeros(len(uv))
        alive = np.ones(len(uv), dtype=bool)
        while alive.any() and t[alive].min() < max_t:
            p = o + t[:, None] * d
            val, ok = self.sample(p)
            crossing = alive & ok & (prev_val > 0) & (val <= 0)
            if crossing.any():
                frac = prev_val[crossing] / (prev_val[crossing] - val[crossing])
                surf_t[crossing] = prev_t[crossing] + frac * (t[crossing] - prev_t[crossing])
                hit |= crossing
                alive &= ~crossing
            prev_val = np.where(ok, val, prev_val)
            prev_t = t.copy()
            t = t + step
        pts = o[hit] + surf_t[hit, None] * d[hit]
        n = self.gradient(pts)
        norm = np.linalg.norm(n, axis=1)
        good = norm > 1e-9
        return pts[good], n[good] / norm[good][:, None]


def tsdf_integrate(vol: TsdfVolume, depth: np.ndarray, cam: Camera, pose: Se3, mask: np.ndarray | None = None) -> TsdfVolume:
    vol.integrate(depth, cam, pose, mask=mask)
    return vol
