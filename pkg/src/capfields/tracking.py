"""Per-frame motion estimation: non-rigid human solve and rigid object ICP.

The human solver jointly optimizes per-node transforms (as local twist
updates) and the 72-dim skeleton pose with a Levenberg-Marquardt outer loop;
the damped normal equations are solved by preconditioned conjugate gradient
with a Jacobi preconditioner. Object tracking is projective point-to-plane
ICP against a canonical TSDF volume that is refined after every frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .camera import Camera
from .edgraph import EDGraph, GraphMotion, apply_blended, canonical_blend_info
from .records import MotionPrior
from .skeleton import Skeleton, SkeletonPose, bone_weights, lbs_batch
from .transforms import Se3, dq_apply, dq_from_quat_trans, dq_mul, dq_normalize, quat_from_rotvec, quat_rotate
from .tsdf import TsdfVolume

HUBER_KNEE = 0.01
CORR_DIST = 0.03
CORR_NORMAL_DEG = 60.0
LM_LAMBDA_INIT = 1e-3
LM_LAMBDA_CAP = 1e6
PCG_ITERS = 32
PCG_TOL = 1e-6
FD_STEP = 1e-6


class InsufficientOverlapError(ValueError):
    """Too few valid depth pixels to constrain a pose."""


@dataclass
class EnergyWeights:
    data: float = 1.0
    bind: float = 1.0
    reg: float = 4.0
    prior: float = 0.01
    pose: float = 0.02
    inter: float = 1.0

    def __post_init__(self):
        for name in ("data", "bind", "reg", "prior", "pose", "inter"):
            if getattr(self, name) < 0:
                raise ValueError(f"energy weight {name} must be nonnegative")


def huber_rho(e: np.ndarray, knee: float = HUBER_KNEE) -> np.ndarray:
    a = np.abs(e)
    return np.where(a <= knee, e * e, knee * (2 * a - knee))


def huber_weight(e: np.ndarray, knee: float = HUBER_KNEE) -> np.ndarray:
    a = np.abs(e)
    return np.where(a <= knee, 1.0, knee / np.maximum(a, 1e-300))


def depth_normals(depth: np.ndarray, cam: Camera) -> np.ndarray:
    """World-space normals from central differences of the backprojected map.

    Zero vectors mark invalid pixels; normals face the camera."""
    pts = cam.backproject_map(depth)
    h, w = depth.shape
    n = np.zeros((h, w, 3))
    valid = depth > 0
    dx = pts[1:-1, 2:] - pts[1:-1, :-2]
    dy = pts[2:, 1:-1] - pts[:-2, 1:-1]
    cr = np.cross(dy, dx)
    norm = np.linalg.norm(cr, axis=-1)
    ok = (
        valid[1:-1, 2:] & valid[1:-1, :-2] & valid[2:, 1:-1] & valid[:-2, 1:-1]
        & valid[1:-1, 1:-1] & (norm > 1e-12)
    )
    inner = np.where(ok[..., None], cr / np.maximum(norm, 1e-12)[..., None], 0.0)
    n[1:-1, 1:-1] = inner
    to_cam = cam.pose.translation - pts
    flip = np.sum(n * to_cam, axis=-1) < 0
    n[flip] *= -1.0
    return n


def find_correspondences(
    model_points: np.ndarray,
    model_normals: np.ndarray,
    depth: np.ndarray,
    cam: Camera,
    mask: np.ndarray | None = None,
    tau: float = CORR_DIST,
    normal_deg: float = CORR_NORMAL_DEG,
    normals_map: np.ndarray | None = None,
):
    """Projective association of live-space model points with depth pixels.

    Targets are backprojected at the continuous projected pixel with
    bilinearly interpolated depth where the 2x2 neighborhood is valid
    (subpixel targets halve the curvature quantization bias); otherwise the
    nearest pixel is used. Returns (model indices, targets u, normals n_u)."""
    pts = np.atleast_2d(model_points)
    uv, z, _ = cam.project_batch(pts)
    h, w = depth.shape
    u_pix = np.round(uv[:, 0]).astype(np.int64)
    v_pix = np.round(uv[:, 1]).astype(np.int64)
    ok = (z > 0) & (u_pix >= 0) & (u_pix < w) & (v_pix >= 0) & (v_pix < h)
    d = np.zeros(len(pts))
    d[ok] = depth[v_pix[ok], u_pix[ok]]
    ok &= d > 0
    if mask is not None:
        inm = np.zeros(len(pts), dtype=bool)
        inm[ok] = mask[v_pix[ok], u_pix[ok]] > 0
        ok &= inm
    if normals_map is None:
        normals_map = depth_normals(depth, cam)
    idx = np.nonzero(ok)[0]
    uv_t = np.stack([u_pix[idx], v_pix[idx]], axis=-1).astype(np.float64)
    d_t = d[idx]
    # subpixel refinement where the bilinear footprint is fully valid
    x0 = np.floor(uv[idx, 0]).astype(np.int64)
    y0 = np.floor(uv[idx, 1]).astype(np.int64)
    sub_ok = (x0 >= 0) & (x0 < w - 1) & (y0 >= 0) & (y0 < h - 1)
    x0c = np.clip(x0, 0, w - 2)
    y0c = np.clip(y0, 0, h - 2)
    corners = np.stack(
        [depth[y0c, x0c], depth[y0c, x0c + 1], depth[y0c + 1, x0c], depth[y0c + 1, x0c + 1]], axis=-1
    )
    sub_ok &= (corners > 0).all(axis=-1)
    if mask is not None:
        mcorners = np.stack(
            [mask[y0c, x0c], mask[y0c + 1, x0c], mask[y0c, x0c + 1], mask[y0c + 1, x0c + 1]], axis=-1
        )
        sub_ok &= (mcorners > 0).all(axis=-1)
    fx = uv[idx, 0] - x0c
    fy = uv[idx, 1] - y0c
    d_bil = (
        corners[:, 0] * (1 - fx) * (1 - fy)
        + corners[:, 1] * fx * (1 - fy)
        + corners[:, 2] * (1 - fx) * fy
        + corners[:, 3] * fx * fy
    )
    uv_t = np.where(sub_ok[:, None], uv[idx], uv_t)
    d_t = np.where(sub_ok, d_bil, d_t)
    target = cam.backproject_batch(uv_t, d_t)
    n_u = normals_map[v_pix[idx], u_pix[idx]]
    dist_ok = np.linalg.norm(pts[idx] - target, axis=-1) < tau
    n_ok = np.linalg.norm(n_u, axis=-1) > 0.5
    ang_ok = np.sum(model_normals[idx] * n_u, axis=-1) > np.cos(np.deg2rad(normal_deg))
    keep = dist_ok & n_ok & ang_ok
    return idx[keep], target[keep], n_u[keep]


# ---------------------------------------------------------------------------
# PCG on the damped normal equations
# ---------------------------------------------------------------------------

def pcg_solve(J: sp.csr_matrix, r: np.ndarray, lm_lambda: float,
              max_iters: int = PCG_ITERS, tol: float = PCG_TOL) -> np.ndarray:
    """Solve (J^T J + lm_lambda diag(J^T J)) x = -J^T r by Jacobi-PCG."""
    b = -(J.T @ r)
    if not np.any(b):
        return np.zeros(J.shape[1])
    diag = np.asarray(J.multiply(J).sum(axis=0)).reshape(-1)
    damped_diag = (1.0 + lm_lambda) * diag
    m_inv = np.where(damped_diag > 1e-300, 1.0 / np.maximum(damped_diag, 1e-300), 0.0)
    lam_d = lm_lambda * diag

    def matvec(v):
        return J.T @ (J @ v) + lam_d * v

    x = np.zeros_like(b)
    res = b.copy()
    z = m_inv * res
    p = z.copy()
    rz = float(res @ z)
    b_norm = np.linalg.norm(b)
    for _ in range(max_iters):
        Ap = matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        res -= alpha * Ap
        if np.linalg.norm(res) <= tol * b_norm:
            break
        z = m_inv * res
        rz_new = float(res @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x


# ---------------------------------------------------------------------------
# human non-rigid solve
# ---------------------------------------------------------------------------

@dataclass
class TrackingModel:
    """Canonical template and binding data driving the human solve."""

    graph: EDGraph
    skeleton: Skeleton
    points: np.ndarray            # (S, 3) canonical surface samples
    normals: np.ndarray           # (S, 3)
    lbs_weights: np.ndarray = field(default=None)   # (S, J)
    node_lbs_weights: np.ndarray = field(default=None)  # (n, J)
    edges: np.ndarray = field(default=None)          # (E, 2)

    def __post_init__(self):
        if self.lbs_weights is None:
            self.lbs_weights = bone_weights(self.skeleton, self.points)
        if self.node_lbs_weights is None:
            self.node_lbs_weights = bone_weights(self.skeleton, self.graph.nodes)
        if self.edges is None:
            self.edges = self.graph.edges(8)


@dataclass
class SolveState:
    dqs: np.ndarray               # (n, 8)
    theta: np.ndarray             # (72,)

    @staticmethod
    def rest(graph: EDGraph, skeleton: Skeleton) -> "SolveState":
        return SolveState(GraphMotion.identity(0, graph.n_nodes).dqs, np.zeros(3 * skeleton.n_joints))

    def copy(self) -> "SolveState":
        return SolveState(self.dqs.copy(), self.theta.copy())


def _skew_rows(p: np.ndarray) -> np.ndarray:
    """[p]_x as (N, 3, 3)."""
    N = len(p)
    out = np.zeros((N, 3, 3))
    out[:, 0, 1] = -p[:, 2]
    out[:, 0, 2] = p[:, 1]
    out[:, 1, 0] = p[:, 2]
    out[:, 1, 2] = -p[:, 0]
    out[:, 2, 0] = -p[:, 1]
    out[:, 2, 1] = p[:, 0]
    return out


def _lbs_theta_jacobian(skel: Skeleton, theta: np.ndarray, pts: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Central finite differences of lbs_batch wrt theta: (P, 3, T)."""
    T = len(theta)
    out = np.zeros((len(pts), 3, T))
    for k in range(T):
        e = np.zeros(T)
        e[k] = FD_STEP
        hi = lbs_batch(skel, theta + e, pts, weights)
        lo = lbs_batch(skel, theta - e, pts, weights)
        out[:, :, k] = (hi - lo) / (2 * FD_STEP)
    return out


class NonrigidTracker:
    def __init__(
        self,
        model: TrackingModel,
        cam: Camera,
        weights: EnergyWeights | None = None,
        surface_samples: int = 4096,
        max_iters: int = 8,
        object_volume: TsdfVolume | None = None,
        seed: int = 0,
    ):
        self.model = model
        self.cam = cam
        self.weights = weights or EnergyWeights()
        self.max_iters = max_iters
        self.object_volume = object_volume
        self.object_pose = Se3.identity()
        rng = np.random.default_rng(seed)
        n_pts = len(model.points)
        take = min(surface_samples, n_pts)
        sel = rng.choice(n_pts, size=take, replace=False)
        self.sub_pts = model.points[sel]
        self.sub_normals = model.normals[sel]
        self.sub_lbs = model.lbs_weights[sel]
        self.blend_idx, self.blend_w, _ = canonical_blend_info(model.graph, self.sub_pts)
        wsum = self.blend_w.sum(axis=1, keepdims=True)
        self.blend_w_norm = self.blend_w / np.maximum(wsum, 1e-300)
        self.state = SolveState.rest(model.graph, model.skeleton)

    # -- energies -------------------------------------------------------------

    def warp_subset(self, state: SolveState):
        m = GraphMotion(0, state.dqs)
        return apply_blended(m, self.blend_idx, self.blend_w, self.sub_pts, self.sub_normals)

    def energy_terms(self, state: SolveState, data_corr, pose_corr) -> dict:
        """Per-term energies (unweighted) plus the weighted total."""
        w = self.weights
        skel = self.model.skeleton
        out = {}
        ci, cu, cn = data_corr
        if len(ci):
            warped, _ = self.warp_subset(state)
            r = np.sum(cn * (warped[ci] - cu), axis=1)
            out["data"] = float(np.sum(huber_rho(r)))
        else:
            out["data"] = 0.0
        node_live = dq_apply(state.dqs, self.model.graph.nodes)
        node_lbs = lbs_batch(skel, state.theta, self.model.graph.nodes, self.model.node_lbs_weights)
        out["bind"] = float(np.sum((node_live - node_lbs) ** 2))
        e = self.model.edges
        if len(e):
            a = dq_apply(state.dqs[e[:, 0]], self.model.graph.nodes[e[:, 1]])
            b = dq_apply(state.dqs[e[:, 1]], self.model.graph.nodes[e[:, 1]])
            out["reg"] = float(np.sum((a - b) ** 2))
        else:
            out["reg"] = 0.0
        lim = np.repeat(skel.joint_limits, 3)
        out["prior"] = float(np.sum(np.maximum(0.0, np.abs(state.theta) - lim) ** 2))
        pi, pu, pn = pose_corr
        if len(pi):
            lbs_pts = lbs_batch(skel, state.theta, self.sub_pts[pi], self.sub_lbs[pi])
            r = np.sum(pn * (lbs_pts - pu), axis=1)
            out["pose"] = float(np.sum(huber_rho(r)))
        else:
            out["pose"] = 0.0
        if self.object_volume is not None:
            q = self.object_pose.inverse().apply(node_live)
            phi, ok = self.object_volume.sample(q)
            pen = np.where(ok, np.maximum(0.0, -phi), 0.0)
            out["inter"] = float(np.sum(pen**2))
        else:
            out["inter"] = 0.0
        out["total"] = (
            w.data * out["data"] + w.bind * out["bind"] + w.reg * out["reg"]
            + w.prior * out["prior"] + w.pose * out["pose"] + w.inter * out["inter"]
        )
        return out

    # -- correspondence search --------------------------------------------------

    def _associate(self, state: SolveState, depth, mask, normals_map):
        warped, wn = self.warp_subset(state)
        data_corr = find_correspondences(
            warped, wn, depth, self.cam, mask=mask, normals_map=normals_map
        )
        lbs_pts = lbs_batch(self.model.skeleton, state.theta, self.sub_pts, self.sub_lbs)
        # rotate normals by each point's dominant bone rotation
        A = None
        from .skeleton import skinning_transforms

        A = skinning_transforms(self.model.skeleton, state.theta)
        dom = np.argmax(self.sub_lbs, axis=1)
        ln = np.einsum("nab,nb->na", A[dom][:, :3, :3], self.sub_normals)
        pose_corr = find_correspondences(lbs_pts, ln, depth, self.cam, mask=mask, normals_map=normals_map)
        return data_corr, pose_corr

    # -- Jacobian assembly --------------------------------------------------------

    def _assemble(self, state: SolveState, data_corr, pose_corr):
        w = self.weights
        n = self.model.graph.n_nodes
        T = len(state.theta)
        ncols = 6 * n + T
        rows_list, cols_list, vals_list, res_list = [], [], [], []
        row0 = 0

        def add_block(r, c, v):
            rows_list.append(r.reshape(-1))
            cols_list.append(c.reshape(-1))
            vals_list.append(v.reshape(-1))

        skel = self.model.skeleton
        nodes = self.model.graph.nodes

        # data: point-to-plane on the blended warp
        ci, cu, cn = data_corr
        if len(ci) and w.data > 0:
            warped, _ = self.warp_subset(state)
            v_live = warped[ci]
            r = np.sum(cn * (v_live - cu), axis=1)
            s = np.sqrt(w.data * huber_weight(r))
            nbr = self.blend_idx[ci]                 # (C, k)
            wn = self.blend_w_norm[ci]               # (C, k)
            g_omega = np.cross(v_live, cn)           # (C, 3)
            C, k = nbr.shape
            rows = (row0 + np.repeat(np.arange(C), k * 6)).reshape(C, k, 6)
            cols = (6 * nbr)[:, :, None] + np.arange(6)[None, None, :]
            vals = np.concatenate(
                [
                    (s[:, None] * g_omega)[:, None, :] * wn[:, :, None],
                    (s[:, None] * cn)[:, None, :] * wn[:, :, None],
                ],
                axis=2,
            )
            add_block(rows, cols, vals)
            res_list.append(s * r)
            row0 += C

        # bind: nodes tied to the skeleton warp
        if w.bind > 0:
            node_live = dq_apply(state.dqs, nodes)
            node_lbs = lbs_batch(skel, state.theta, nodes, self.model.node_lbs_weights)
            r = (node_live - node_lbs)
            s = np.sqrt(w.bind)
            skew = _skew_rows(node_live)
            rows = np.broadcast_to(
                row0 + 3 * np.arange(n)[:, None, None] + np.arange(3)[None, :, None], (n, 3, 3)
            )
            cols = np.broadcast_to((6 * np.arange(n))[:, None, None] + np.arange(3)[None, None, :], (n, 3, 3))
            add_block(rows, cols, -s * skew)
            cols_u = np.broadcast_to(
                (6 * np.arange(n) + 3)[:, None, None] + np.arange(3)[None, None, :], (n, 3, 3)
            )
            eye = np.broadcast_to(np.eye(3), (n, 3, 3))
            add_block(rows, cols_u, s * eye)
            Jth = _lbs_theta_jacobian(skel, state.theta, nodes, self.model.node_lbs_weights)
            rows_t = row0 + 3 * np.arange(n)[:, None, None] + np.arange(3)[None, :, None] + np.zeros((1, 1, T), dtype=np.int64)
            cols_t = np.broadcast_to(6 * n + np.arange(T), (n, 3, T))
            add_block(rows_t, cols_t, -s * Jth)
            res_list.append(s * r.reshape(-1))
            row0 += 3 * n

        # reg: as-rigid-as-possible over graph edges
        e = self.model.edges
        if len(e) and w.reg > 0:
            a = dq_apply(state.dqs[e[:, 0]], nodes[e[:, 1]])
            b = dq_apply(state.dqs[e[:, 1]], nodes[e[:, 1]])
            r = a - b
            s = np.sqrt(w.reg)
            E = len(e)
            base = row0 + 3 * np.arange(E)
            rows = np.broadcast_to(base[:, None, None] + np.arange(3)[None, :, None], (E, 3, 3))
            cols_i = np.broadcast_to((6 * e[:, 0])[:, None, None] + np.arange(3)[None, None, :], (E, 3, 3))
            cols_j = np.broadcast_to((6 * e[:, 1])[:, None, None] + np.arange(3)[None, None, :], (E, 3, 3))
            add_block(rows, cols_i, -s * _skew_rows(a))
            add_block(rows, cols_j, s * _skew_rows(b))
            eye = np.broadcast_to(np.eye(3), (E, 3, 3))
            cols_iu = np.broadcast_to((6 * e[:, 0] + 3)[:, None, None] + np.arange(3)[None, None, :], (E, 3, 3))
            cols_ju = np.broadcast_to((6 * e[:, 1] + 3)[:, None, None] + np.arange(3)[None, None, :], (E, 3, 3))
            add_block(rows, cols_iu, s * eye)
            add_block(rows, cols_ju, -s * eye)
            res_list.append(s * r.reshape(-1))
            row0 += 3 * E

        # prior: quadratic joint-limit penalty
        if w.prior > 0:
            lim = np.repeat(skel.joint_limits, 3)
            r = np.maximum(0.0, np.abs(state.theta) - lim)
            act = np.nonzero(r > 0)[0]
            if len(act):
                s = np.sqrt(w.prior)
                add_block(
                    row0 + np.arange(len(act)),
                    6 * n + act,
                    s * np.sign(state.theta[act]),
                )
                res_list.append(s * r[act])
                row0 += len(act)

        # pose: point-to-plane on the skeleton-only warp
        pi, pu, pn = pose_corr
        if len(pi) and w.pose > 0:
            lbs_pts = lbs_batch(skel, state.theta, self.sub_pts[pi], self.sub_lbs[pi])
            r = np.sum(pn * (lbs_pts - pu), axis=1)
            s = np.sqrt(w.pose * huber_weight(r))
            Jth = _lbs_theta_jacobian(skel, state.theta, self.sub_pts[pi], self.sub_lbs[pi])
            row_vals = np.einsum("pa,pat->pt", pn, Jth) * s[:, None]
            P = len(pi)
            rows = np.repeat(row0 + np.arange(P), T)
            cols = np.tile(6 * n + np.arange(T), P)
            add_block(rows, cols, row_vals)
            res_list.append(s * r)
            row0 += P

        # inter: penalize node penetration into the object volume
        if self.object_volume is not None and w.inter > 0:
            node_live = dq_apply(state.dqs, nodes)
            inv = self.object_pose.inverse()
            q = inv.apply(node_live)
            phi, ok = self.object_volume.sample(q)
            pen = np.where(ok, np.maximum(0.0, -phi), 0.0)
            act = np.nonzero(pen > 0)[0]
            if len(act):
                s = np.sqrt(w.inter)
                grad_q = self.object_volume.gradient(q[act])
                m = -(grad_q @ inv.rotation)          # d r / d v_live
                g_omega = np.cross(node_live[act], m)
                rows = np.repeat(row0 + np.arange(len(act)), 6)
                cols = (6 * act[:, None] + np.arange(6)[None, :]).reshape(-1)
                vals = (s * np.concatenate([g_omega, m], axis=1)).reshape(-1)
                add_block(rows, cols, vals)
                res_list.append(s * pen[act])
                row0 += len(act)

        if row0 == 0:
            return None, None
        J = sp.coo_matrix(
            (np.concatenate(vals_list), (np.concatenate(rows_list), np.concatenate(cols_list))),
            shape=(row0, ncols),
        ).tocsr()
        return J, np.concatenate(res_list)

    @staticmethod
    def _apply_step(state: SolveState, delta: np.ndarray) -> SolveState:
        n = len(state.dqs)
        xi = delta[: 6 * n].reshape(n, 6)
        upd = dq_from_quat_trans(quat_from_rotvec(xi[:, :3]), xi[:, 3:])
        new_dqs = dq_normalize(dq_mul(upd, state.dqs))
        return SolveState(new_dqs, state.theta + delta[6 * n :])

    def solve(self, depth: np.ndarray, mask: np.ndarray | None, frame_id: int,
              init: SolveState | None = None) -> tuple[SolveState, dict]:
        """LM outer loop; correspondences are refreshed every iteration."""
        state = (init or self.state).copy()
        lm_lambda = LM_LAMBDA_INIT
        normals_map = depth_normals(depth, self.cam)
        info = {"accepted": [], "warning": False, "iterations": 0, "energies": []}
        best = state
        for it in range(self.max_iters):
            data_corr, pose_corr = self._associate(state, depth, mask, normals_map)
            e0 = self.energy_terms(state, data_corr, pose_corr)
            info["energies"].append(e0)
            J, r = self._assemble(state, data_corr, pose_corr)
            if J is None:
                break
            stepped = False
            while lm_lambda <= LM_LAMBDA_CAP:
                delta = pcg_solve(J, r, lm_lambda)
                cand = self._apply_step(state, delta)
                e1 = self.energy_terms(cand, data_corr, pose_corr)
                if e1["total"] <= e0["total"] + 1e-15:
                    info["accepted"].append((e0["total"], e1["total"]))
                    state = cand
                    best = cand
                    lm_lambda = max(lm_lambda * 0.5, 1e-9)
                    stepped = True
                    break
                lm_lambda *= 10.0
            info["iterations"] = it + 1
            if not stepped:
                info["warning"] = True
                break
            if np.max(np.abs(delta)) < 1e-10:
                break
        self.state = best
        return best, info

    def motion_prior(self, frame_id: int, object_pose: Se3 | None = None) -> MotionPrior:
        return MotionPrior(
            frame_id,
            GraphMotion(frame_id, self.state.dqs.copy()),
            SkeletonPose(self.model.skeleton, self.state.theta.copy()),
            object_pose or self.object_pose,
        )


# ---------------------------------------------------------------------------
# rigid object tracking
# ---------------------------------------------------------------------------

def rigid_icp(
    volume_or_model,
    depth: np.ndarray,
    cam: Camera,
    mask: np.ndarray | None,
    init: Se3,
    max_iters: int = 15,
    tau: float = 0.05,
    min_pixels: int = 30,
    normal_deg: float = 30.0,
) -> Se3:
    """Projective point-to-plane ICP refining init (canonical -> world).

    volume_or_model is either a TsdfVolume (model surface extracted from it)
    or a (points, normals) tuple in the object's canonical frame."""
    if mask is not None:
        n_valid = int(np.count_nonzero((depth > 0) & (mask > 0)))
    else:
        n_valid = int(np.count_nonzero(depth > 0))
    if n_valid < min_pixels:
        raise InsufficientOverlapError(f"only {n_valid} valid depth pixels")
    if isinstance(volume_or_model, TsdfVolume):
        model_pts, model_normals = volume_or_model.extract_surface()
        if len(model_pts) < min_pixels:
            raise InsufficientOverlapError("TSDF surface is empty")
    else:
        model_pts, model_normals = volume_or_model
    normals_map = depth_normals(depth, cam)
    pose = Se3(init.rotation.copy(), init.translation.copy())
    for _ in range(max_iters):
        live = pose.apply(model_pts)
        ln = model_normals @ pose.rotation.T
        idx, u, n_u = find_correspondences(
            live, ln, depth, cam, mask=mask, tau=tau, normals_map=normals_map,
            normal_deg=normal_deg,
        )
        if len(idx) < min_pixels:
            raise InsufficientOverlapError(f"only {len(idx)} ICP correspondences")
        p = live[idx]
        r = np.sum(n_u * (p - u), axis=1)
        # robust weights: edge-contaminated pairs carry residuals far from
        # the bulk; Huber with a data-driven knee downweights them smoothly
        knee = max(3.0 * np.median(np.abs(r)), 1e-5)
        wgt = np.sqrt(np.minimum(1.0, knee / np.maximum(np.abs(r), 1e-300)))
        g_omega = np.cross(p, n_u)
        Jr = wgt[:, None] * np.concatenate([g_omega, n_u], axis=1)  # (C, 6)
        rw = wgt * r
        A = Jr.T @ Jr
        # light Tikhonov damping keeps near-null directions from exploding
        A += (1e-6 * np.trace(A) / 6.0 + 1e-12) * np.eye(6)
        g = Jr.T @ rw
        delta = np.linalg.solve(A, -g)
        # trust region: per-iteration steps past these scales are bogus
        rot_n = np.linalg.norm(delta[:3])
        tr_n = np.linalg.norm(delta[3:])
        scale = min(1.0, 0.2 / max(rot_n, 1e-12), 0.05 / max(tr_n, 1e-12))
        delta *= scale
        upd = Se3.from_rotvec_trans(delta[:3], delta[3:])
        pose = upd.compose(pose)
        if np.max(np.abs(delta)) < 1e-12:
            break
    return pose


class ObjectTracker:
    """Frame-to-model rigid tracker.

    ICP aligns against a canonical surfel cloud fused from tracked depth
    (exact for clean depth, and it keeps growing as new faces rotate into
    view); a canonical TSDF volume is integrated alongside for volumetric
    queries (interpenetration tests, raycast model extraction)."""

    def __init__(self, cam: Camera, resolution: int = 64, min_pixels: int = 30,
                 surfel_cell: float = 0.004, max_surfels: int = 80000):
        self.cam = cam
        self.resolution = resolution
        self.min_pixels = min_pixels
        self.surfel_cell = surfel_cell
        self.max_surfels = max_surfels
        self.volume: TsdfVolume | None = None
        self.pose = Se3.identity()
        self.surfels = np.zeros((0, 3))
        self.surfel_normals = np.zeros((0, 3))
        self._cells: set[tuple[int, int, int]] = set()

    def _masked_points(self, depth: np.ndarray, mask: np.ndarray):
        ys, xs = np.nonzero((depth > 0) & (mask > 0))
        if len(xs) < self.min_pixels:
            raise InsufficientOverlapError("object mask too small")
        nm = depth_normals(depth, self.cam)
        # keep locally planar pixels only; edge pixels blend two faces and
        # would poison the fused model
        h, w = depth.shape
        inner = (ys >= 2) & (ys < h - 2) & (xs >= 2) & (xs < w - 2)
        ys, xs = ys[inner], xs[inner]
        n0 = nm[ys, xs]
        planar = np.linalg.norm(n0, axis=1) > 0.5
        for dy, dx in ((0, 2), (0, -2), (2, 0), (-2, 0)):
            nn = nm[ys + dy, xs + dx]
            planar &= (np.sum(n0 * nn, axis=1) > np.cos(np.deg2rad(10.0))) & (
                np.linalg.norm(nn, axis=1) > 0.5
            )
        if planar.sum() < self.min_pixels:
            planar = np.linalg.norm(n0, axis=1) > 0.5
        uv = np.stack([xs[planar], ys[planar]], axis=-1).astype(np.float64)
        pts = self.cam.backproject_batch(uv, depth[ys[planar], xs[planar]])
        return pts, n0[planar]

    def _init_volume(self, pts: np.ndarray) -> None:
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        margin = 0.12 * max(float((hi - lo).max()), 0.05) + 0.04
        side = float((hi - lo).max()) + 2 * margin
        voxel = side / self.resolution
        self.volume = TsdfVolume(self.resolution, voxel, origin=lo - margin)

    def _fuse_surfels(self, pts_canonical: np.ndarray, normals_canonical: np.ndarray) -> None:
        if len(self.surfels) >= self.max_surfels:
            return
        cells = np.floor(pts_canonical / self.surfel_cell).astype(np.int64)
        fresh = np.array([tuple(c) not in self._cells for c in cells])
        take = np.nonzero(fresh)[0]
        for i in take:
            self._cells.add(tuple(cells[i]))
        self.surfels = np.concatenate([self.surfels, pts_canonical[take]])
        self.surfel_normals = np.concatenate([self.surfel_normals, normals_canonical[take]])

    def track(self, depth: np.ndarray, mask: np.ndarray, frame_id: int) -> Se3:
        pts, normals = self._masked_points(depth, mask)
        if self.volume is None:
            self._init_volume(pts)
            self.pose = Se3.identity()
        else:
            self.pose = rigid_icp(
                (self.surfels, self.surfel_normals), depth, self.cam, mask,
                self.pose, min_pixels=self.min_pixels,
            )
        inv = self.pose.inverse()
        self._fuse_surfels(inv.apply(pts), normals @ inv.rotation.T)
        self.volume.integrate(depth, self.cam, self.pose, mask=mask)
        return self.pose
