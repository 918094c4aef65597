"""Synthetic RGBD scenes with exact ground truth.

A posed capsule humanoid and a textured box are ray-cast analytically into
RGBD frames with per-category masks. Surface colors are procedural albedo
attached to bone-local / object-local coordinates, so they ride with the
geometry. Ground-truth per-frame node transforms, skeleton poses and object
poses are exact by construction (capsules move rigidly with their bones).

A second, independent ray caster (sphere tracing on the union SDF) backs the
depth tests.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, look_at
from .config import RunConfig, save_config
from .edgraph import EDGraph, GraphMotion, sample_ed_nodes
from .frames import Frame, save_frame
from .records import MotionPrior, MotionPriorWriter
from .skeleton import SkeletonPose, default_humanoid, forward_kinematics, skinning_transforms
from .transforms import Se3, dq_from_rt


@dataclass
class BoxObject:
    half_extents: np.ndarray
    center0: np.ndarray          # world center at frame 0
    orbit_center: np.ndarray
    orbit_degrees: float
    spin_degrees: float
    # base tilt keeps three faces well visible so depth constrains all 6 dof
    tilt: np.ndarray = field(default_factory=lambda: np.array([0.42, 0.55, 0.12]))

    def pose_abs(self, u: float) -> Se3:
        """World pose of the box-local frame at normalized time u in [0, 1]."""
        orbit = Se3.from_rotvec_trans([0.0, np.deg2rad(self.orbit_degrees) * u, 0.0], np.zeros(3))
        spin = Se3.from_rotvec_trans([0.0, np.deg2rad(self.spin_degrees) * u, 0.0], np.zeros(3))
        base = Se3.from_rotvec_trans(self.tilt, np.zeros(3))
        arm = self.center0 - self.orbit_center
        center = self.orbit_center + orbit.apply(arm)
        return Se3(spin.rotation @ base.rotation, center)


class SyntheticScene:
    """Scripted human + object scene; renders frames and exposes ground truth."""

    def __init__(self, cfg: RunConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.skeleton = default_humanoid()
        nb = self.skeleton.n_joints
        self.palette = rng.uniform(0.25, 0.9, size=(nb, 3))
        self.phase1 = rng.uniform(0, 2 * np.pi, size=nb)
        self.phase2 = rng.uniform(0, 2 * np.pi, size=nb)
        self.obj_phase = rng.uniform(0, 2 * np.pi, size=3)
        self.bg = np.array([cfg.bg_r, cfg.bg_g, cfg.bg_b], dtype=np.float64) / 255.0
        self.camera = Camera(
            fx=cfg.fx, fy=cfg.fy, cx=cfg.width / 2.0, cy=cfg.height / 2.0,
            width=cfg.width, height=cfg.height,
            pose=look_at([0.0, 1.15, 2.4], [0.0, 0.95, 0.0]),
        )
        self.object = BoxObject(
            half_extents=np.array([0.11, 0.16, 0.13]),
            center0=np.array([0.62, 0.95, 0.15]),
            orbit_center=np.array([0.0, 0.95, 0.0]),
            orbit_degrees=cfg.object_orbit_degrees,
            spin_degrees=cfg.object_spin_degrees,
        ) if cfg.object else None
        self._rest_segments()
        if cfg.human:
            self.template_points, self.template_normals, self.template_bones = self._sample_surface(rng, 16000)
            graph = sample_ed_nodes(self.template_points, cfg.node_radius, influence_radius=0.1)
            self.graph = graph
            d2 = np.sum((graph.nodes[:, None] - self.template_points[None]) ** 2, axis=-1)
            self.node_bones = self.template_bones[np.argmin(d2, axis=1)]
        else:
            self.template_points = np.zeros((0, 3))
            self.template_normals = np.zeros((0, 3))
            self.template_bones = np.zeros(0, dtype=np.int64)
            self.graph = EDGraph(np.array([[0.0, 0.9, 0.0]]), radius=0.1)
            self.node_bones = np.zeros(1, dtype=np.int64)

    # -- ground-truth motion script ------------------------------------------

    def _u(self, fid: int) -> float:
        return fid / max(1, self.cfg.frames - 1)

    def theta_at(self, fid: int) -> np.ndarray:
        cfg = self.cfg
        u = self._u(fid)
        theta = np.zeros(3 * self.skeleton.n_joints)
        if cfg.spin_turns != 0.0:
            if cfg.spin_profile == "burst":
                lo, hi = 0.375, 0.625
                prog = np.clip((u - lo) / (hi - lo), 0.0, 1.0)
            else:
                prog = u
            theta[1] = 2 * np.pi * cfg.spin_turns * prog  # root yaw
        if cfg.arm_swing != 0.0:
            ang = cfg.arm_swing * np.sin(2 * np.pi * cfg.arm_swing_cycles * u)
            theta[3 * 16 + 2] = ang          # left shoulder
            theta[3 * 17 + 2] = -0.6 * ang   # right shoulder counterphase
        if cfg.bend_joint >= 0 and cfg.bend_degrees != 0.0:
            theta[3 * cfg.bend_joint + 2] = np.deg2rad(cfg.bend_degrees) * u
        return theta

    def object_pose_abs(self, fid: int) -> Se3:
        assert self.object is not None
        return self.object.pose_abs(self._u(fid))

    def object_pose_rel(self, fid: int) -> Se3:
        """Object pose relative to frame 0 (the tracking canonical frame)."""
        if self.object is None:
            return Se3.identity()
        return self.object_pose_abs(fid).compose(self.object_pose_abs(0).inverse())

    def gt_prior(self, fid: int) -> MotionPrior:
        theta = self.theta_at(fid)
        A = skinning_transforms(self.skeleton, theta)
        dqs = np.stack([dq_from_rt(A[b, :3, :3], A[b, :3, 3]) for b in self.node_bones])
        return MotionPrior(
            fid,
            GraphMotion(fid, dqs),
            SkeletonPose(self.skeleton, theta),
            self.object_pose_rel(fid),
        )

    # -- geometry --------------------------------------------------------------

    def _rest_segments(self):
        pos = self.skeleton.rest_joint_positions()
        j = np.arange(1, self.skeleton.n_joints)
        self._rest_a = pos[self.skeleton.parents[j]]
        self._rest_b = pos[j]
        self._radii = self.skeleton.bone_radii[j]
        # a capsule parent->j is rigidly carried by the parent joint's
        # skinning transform (theta_j only moves geometry distal of j)
        self._cap_driver = self.skeleton.parents[j]
        axis = self._rest_b - self._rest_a
        self._seg_len2 = np.maximum(np.sum(axis * axis, axis=-1), 1e-12)
        axis_n = axis / np.sqrt(self._seg_len2)[:, None]
        ref = np.where(np.abs(axis_n[:, 1:2]) < 0.9, np.array([[0.0, 1.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
        u = np.cross(axis_n, ref)
        u /= np.linalg.norm(u, axis=-1, keepdims=True)
        self._seg_axis = axis_n
        self._seg_u = u
        self._seg_v = np.cross(axis_n, u)

    def posed_segments(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        G = forward_kinematics(self.skeleton, theta)
        pos = G[:, :3, 3]
        j = np.arange(1, self.skeleton.n_joints)
        return pos[self.skeleton.parents[j]], pos[j]

    def _sample_surface(self, rng: np.random.Generator, n: int):
        """Rest-pose capsule surface samples with normals and bone ids."""
        a, b, r = self._rest_a, self._rest_b, self._radii
        seg_len = np.linalg.norm(b - a, axis=-1)
        areas = 2 * np.pi * r * seg_len + 4 * np.pi * r * r
        counts = np.maximum((n * areas / areas.sum()).astype(int), 8)
        pts, nrm, bone = [], [], []
        for i in range(len(a)):
            m = counts[i]
            t = rng.uniform(0, 1, m)
            phi = rng.uniform(0, 2 * np.pi, m)
            cap = rng.uniform(0, 1, m) < (4 * np.pi * r[i] ** 2) / areas[i]
            axis, uu, vv = self._seg_axis[i], self._seg_u[i], self._seg_v[i]
            radial = np.cos(phi)[:, None] * uu + np.sin(phi)[:, None] * vv
            on_cyl = a[i] + t[:, None] * (b[i] - a[i]) + r[i] * radial
            n_cyl = radial
            sph_dir = rng.normal(size=(m, 3))
            sph_dir /= np.linalg.norm(sph_dir, axis=-1, keepdims=True)
            which_cap = rng.uniform(0, 1, m) < 0.5
            # reflect directions into the outward hemisphere of each cap so
            # samples stay on the capsule surface
            ax_comp = sph_dir @ axis
            flip_a = which_cap & (ax_comp > 0)
            flip_b = (~which_cap) & (ax_comp < 0)
            sph_dir[flip_a | flip_b] -= 2 * ax_comp[flip_a | flip_b, None] * axis
            center = np.where(which_cap[:, None], a[i], b[i])
            on_cap = center + r[i] * sph_dir
            p = np.where(cap[:, None], on_cap, on_cyl)
            nv = np.where(cap[:, None], sph_dir, n_cyl)
            pts.append(p)
            nrm.append(nv)
            bone.append(np.full(m, self._cap_driver[i]))
        return np.concatenate(pts), np.concatenate(nrm), np.concatenate(bone)

    # -- analytic ray casting ---------------------------------------------------

    @staticmethod
    def _ray_capsules(o, d, A, B, R):
        """Smallest positive hit t of rays (N, 3) against capsules (M, ...)."""
        n_rays, n_caps = len(o), len(A)
        t_best = np.full((n_rays, n_caps), np.inf)
        ba = B - A                                        # (M, 3)
        oa = o[:, None, :] - A[None]                      # (N, M, 3)
        baba = np.sum(ba * ba, axis=-1)[None]             # (1, M)
        bard = np.einsum("mk,nk->nm", ba, d)
        baoa = np.sum(oa * ba[None], axis=-1)
        rdoa = np.sum(oa * d[:, None, :], axis=-1)
        oaoa = np.sum(oa * oa, axis=-1)
        a = baba - bard**2
        bq = baba * rdoa - baoa * bard
        c = baba * (oaoa - (R**2)[None]) - baoa**2
        h = bq * bq - a * c
        with np.errstate(invalid="ignore", divide="ignore"):
            tc = (-bq - np.sqrt(np.maximum(h, 0.0))) / a
        y = baoa + tc * bard
        cyl_ok = (h >= 0) & (a > 1e-12) & (tc > 1e-6) & (y >= 0) & (y <= baba)
        t_best = np.where(cyl_ok, tc, t_best)
        # sphere caps
        for center in (A, B):
            oc = o[:, None, :] - center[None]
            bq2 = np.sum(oc * d[:, None, :], axis=-1)
            c2 = np.sum(oc * oc, axis=-1) - (R**2)[None]
            h2 = bq2 * bq2 - c2
            ts = -bq2 - np.sqrt(np.maximum(h2, 0.0))
            ok = (h2 >= 0) & (ts > 1e-6)
            t_best = np.where(ok & (ts < t_best), ts, t_best)
        return t_best

    @staticmethod
    def _ray_box(o, d, pose: Se3, h):
        """Slab test against an oriented box; returns (t, axis, sign)."""
        inv = pose.inverse()
        ol = inv.apply(o)
        dl = d @ inv.rotation.T
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-h - ol) / dl
            t2 = (h - ol) / dl
        tmin = np.minimum(t1, t2)
        tmax = np.maximum(t1, t2)
        # parallel rays: valid only when origin inside the slab
        par = np.abs(dl) < 1e-12
        inside = (np.abs(ol) <= h)
        tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
        tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
        t_enter = tmin.max(axis=-1)
        t_exit = tmax.min(axis=-1)
        hit = (t_exit >= t_enter) & (t_enter > 1e-6) & np.isfinite(t_enter)
        axis = np.argmax(tmin, axis=-1)
        t_safe = np.where(np.isfinite(t_enter), t_enter, 0.0)
        enter_pt = ol + t_safe[:, None] * dl
        sign = np.sign(enter_pt[np.arange(len(o)), axis])
        return np.where(hit, t_enter, np.inf), axis, sign

    def _human_color(self, pts_world, theta, capsules):
        """Albedo from bone-local rest coordinates of the hit capsule."""
        A = skinning_transforms(self.skeleton, theta)
        out = np.zeros((len(pts_world), 3))
        for i in np.unique(capsules):
            sel = capsules == i
            drv = self._cap_driver[i]
            Ti = np.linalg.inv(A[drv])
            p_rest = pts_world[sel] @ Ti[:3, :3].T + Ti[:3, 3]
            rel = p_rest - self._rest_a[i]
            s = np.clip((rel @ self._seg_axis[i]) / np.sqrt(self._seg_len2[i]), 0.0, 1.0)
            phi = np.arctan2(rel @ self._seg_v[i], rel @ self._seg_u[i])
            m1 = 0.5 + 0.5 * np.sin(2 * np.pi * 1.3 * s + self.phase1[drv])
            m2 = 0.5 + 0.5 * np.sin(phi + self.phase2[drv])
            out[sel] = self.palette[drv] * (0.55 + 0.33 * m1[:, None]) + 0.12 * m2[:, None]
        return np.clip(out, 0.0, 1.0)

    def _object_color(self, pts_local):
        f = self.cfg.texture_freq
        base = 0.52 + 0.42 * np.sin(f * pts_local[:, [0, 1, 2]] + self.obj_phase)
        swirl = 0.08 * np.sin(f * 0.7 * (pts_local[:, 0] + pts_local[:, 1] + pts_local[:, 2]))
        return np.clip(base + swirl[:, None], 0.0, 1.0)

    def render(self, fid: int, camera: Camera | None = None) -> Frame:
        """Albedo ray-cast of the scene state at frame fid."""
        cam = camera or self.camera
        theta = self.theta_at(fid)
        h, w = cam.height, cam.width
        us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        uv = np.stack([us.reshape(-1), vs.reshape(-1)], axis=-1)
        o, d = cam.pixel_rays(uv)
        n_rays = len(o)
        t_hum = np.full(n_rays, np.inf)
        cap_hit = np.zeros(n_rays, dtype=np.int64)
        if self.cfg.human:
            A, B = self.posed_segments(theta)
            t_all = self._ray_capsules(o, d, A, B, self._radii)
            cap_hit = np.argmin(t_all, axis=1)
            t_hum = t_all[np.arange(n_rays), cap_hit]
        t_obj = np.full(n_rays, np.inf)
        if self.object is not None:
            pose = self.object_pose_abs(fid)
            t_obj, _, _ = self._ray_box(o, d, pose, self.object.half_extents)
        rgb = np.tile(self.bg, (n_rays, 1))
        cam_fwd = cam.pose.rotation[:, 2]
        depth = np.zeros(n_rays)
        hum_win = np.isfinite(t_hum) & (t_hum <= t_obj)
        obj_win = np.isfinite(t_obj) & (t_obj < t_hum)
        if hum_win.any():
            pts = o[hum_win] + t_hum[hum_win, None] * d[hum_win]
            rgb[hum_win] = self._human_color(pts, theta, cap_hit[hum_win])
            depth[hum_win] = (pts - cam.pose.translation) @ cam_fwd
        if obj_win.any():
            pose = self.object_pose_abs(fid)
            pts = o[obj_win] + t_obj[obj_win, None] * d[obj_win]
            local = pose.inverse().apply(pts)
            rgb[obj_win] = self._object_color(local)
            depth[obj_win] = (pts - cam.pose.translation) @ cam_fwd
        return Frame(
            frame_id=fid,
            rgb=np.round(rgb.reshape(h, w, 3) * 255.0).astype(np.uint8),
            depth=depth.reshape(h, w),
            mask_human=hum_win.reshape(h, w),
            mask_object=obj_win.reshape(h, w),
            timestamp=float(fid),
        )

    # -- independent SDF ray caster (test oracle) -------------------------------

    def _sdf(self, pts: np.ndarray, fid: int) -> np.ndarray:
        best = np.full(len(pts), np.inf)
        if self.cfg.human:
            A, B = self.posed_segments(self.theta_at(fid))
            ab = B - A
            denom = np.maximum(np.sum(ab * ab, axis=-1), 1e-12)
            for i in range(len(A)):
                ap = pts - A[i]
                t = np.clip(ap @ ab[i] / denom[i], 0.0, 1.0)
                dist = np.linalg.norm(ap - t[:, None] * ab[i], axis=-1) - self._radii[i]
                best = np.minimum(best, dist)
        if self.object is not None:
            pose = self.object_pose_abs(fid)
            local = pose.inverse().apply(pts)
            q = np.abs(local) - self.object.half_extents
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            inside = np.minimum(q.max(axis=-1), 0.0)
            best = np.minimum(best, outside + inside)
        return best

    def raycast_depth_oracle(self, uv: np.ndarray, fid: int, camera: Camera | None = None) -> np.ndarray:
        """Sphere-traced depth at pixels uv; 0 where no hit. Independent of the
        analytic intersection code path."""
        cam = camera or self.camera
        o, d = cam.pixel_rays(np.atleast_2d(uv))
        n = len(o)
        t = np.full(n, 1e-4)
        alive = np.ones(n, dtype=bool)
        hit = np.zeros(n, dtype=bool)
        for _ in range(4000):
            if not alive.any():
                break
            p = o[alive] + t[alive, None] * d[alive]
            s = self._sdf(p, fid)
            newly = s < 1e-7
            idx = np.nonzero(alive)[0]
            hit[idx[newly]] = True
            t[idx] += np.maximum(s, 0.0)
            done = newly | (t[idx] > 8.0)
            alive[idx[done]] = False
        cam_fwd = cam.pose.rotation[:, 2]
        pts = o + t[:, None] * d
        depth = (pts - cam.pose.translation) @ cam_fwd
        return np.where(hit, depth, 0.0)


def parse_views_file(path: str) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """views.txt lines: frame_id eye_xyz target_xyz -> render requests."""
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 7:
                raise ValueError(f"{path}:{lineno}: expected 'frame ex ey ez tx ty tz'")
            fid = int(parts[0])
            vals = np.array([float(x) for x in parts[1:]])
            out.append((fid, vals[:3], vals[3:]))
    return out


def gen_synthetic(cfg: RunConfig, seed: int, out_dir: str, views_path: str | None = None) -> SyntheticScene:
    """Write a synthetic dataset: frames, GT motions, canonical template."""
    scene = SyntheticScene(cfg, seed)
    os.makedirs(out_dir, exist_ok=True)
    for fid in range(cfg.frames):
        save_frame(out_dir, scene.render(fid))
    gt_dir = os.path.join(out_dir, "gt")
    os.makedirs(gt_dir, exist_ok=True)
    with MotionPriorWriter(os.path.join(gt_dir, "motions.bin"), scene.graph.n_nodes, 3 * scene.skeleton.n_joints) as wr:
        for fid in range(cfg.frames):
            wr.append(scene.gt_prior(fid))
    can_dir = os.path.join(out_dir, "canonical")
    os.makedirs(can_dir, exist_ok=True)
    np.save(os.path.join(can_dir, "points.npy"), scene.template_points)
    np.save(os.path.join(can_dir, "normals.npy"), scene.template_normals)
    np.save(os.path.join(can_dir, "bones.npy"), scene.template_bones)
    np.save(os.path.join(can_dir, "nodes.npy"), scene.graph.nodes)
    np.save(os.path.join(can_dir, "node_bones.npy"), scene.node_bones)
    save_config(os.path.join(out_dir, "config"), cfg)
    with open(os.path.join(out_dir, "seed"), "w") as f:
        f.write(str(seed))
    if views_path:
        views = parse_views_file(views_path)
        vdir = os.path.join(out_dir, "views")
        os.makedirs(vdir, exist_ok=True)
        for k, (fid, eye, tgt) in enumerate(views):
            cam = scene.camera.with_pose(look_at(eye, tgt))
            fr = scene.render(fid, camera=cam)
            from PIL import Image

            Image.fromarray(fr.rgb).save(os.path.join(vdir, f"{fid:06d}_{k:02d}.rgb.png"))
            mm = np.round(fr.depth * 1000.0).astype(np.uint16)
            Image.fromarray(mm).save(os.path.join(vdir, f"{fid:06d}_{k:02d}.depth.png"))
    return scene


def load_scene_camera(out_dir: str) -> Camera:
    from .config import load_config

    cfg = load_config(os.path.join(out_dir, "config"))
    return Camera(
        fx=cfg.fx, fy=cfg.fy, cx=cfg.width / 2.0, cy=cfg.height / 2.0,
        width=cfg.width, height=cfg.height,
        pose=look_at([0.0, 1.15, 2.4], [0.0, 0.95, 0.0]),
    )
