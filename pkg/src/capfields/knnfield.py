"""Constant-time motion-prior lookup for backward warps.

A canonical voxel grid stores, once, the s nearest graph nodes per voxel.
Per frame, every in-support canonical voxel is warped to live space and its
canonical index is written into the live voxel it lands in; the frame's node
transforms are appended to a flat look-up table. A live-space query then
costs a fixed number of gathers: live voxel -> canonical voxel -> s node
indices -> table offset -> blend, with no search over the node set.
"""
from __future__ import annotations

import numpy as np

from .edgraph import EDGraph, GraphMotion, OutOfSupportError, WEIGHT_FLOOR
from .transforms import dq_apply, dq_blend, dq_inverse

_CHUNK = 65536


def brute_force_neighbors(graph: EDGraph, p: np.ndarray, s: int) -> np.ndarray:
    """Exact s nearest node indices by exhaustive scan, ties by index."""
    return brute_force_neighbors_batch(graph, np.asarray(p, dtype=np.float64)[None], s)[0]


def brute_force_neighbors_batch(graph: EDGraph, pts: np.ndarray, s: int) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    s = min(s, graph.n_nodes)
    d2 = np.sum((pts[:, None, :] - graph.nodes[None]) ** 2, axis=-1)
    return np.argsort(d2, axis=1, kind="stable")[:, :s]


def brute_force_query(graph: EDGraph, motion: GraphMotion, pts_live: np.ndarray, s: int):
    """Oracle for the fast path: exhaustive neighbors over deformed nodes,
    skin weights, inverse blend. Returns (indices, weights, canonical pts)."""
    pts = np.atleast_2d(np.asarray(pts_live, dtype=np.float64))
    anchors = dq_apply(motion.dqs, graph.nodes)
    s = min(s, graph.n_nodes)
    d2 = np.sum((pts[:, None, :] - anchors[None]) ** 2, axis=-1)
    idx = np.argsort(d2, axis=1, kind="stable")[:, :s]
    w = np.exp(-np.take_along_axis(d2, idx, axis=1) / (graph.radius**2))
    blended = dq_blend(np.maximum(w, 1e-300), motion.dqs[idx])
    return idx, w, dq_apply(dq_inverse(blended), pts)


class KnnField:
    """Canonical KNN voxel field + per-frame live index maps + motion table."""

    def __init__(
        self,
        graph: EDGraph,
        resolution: int = 512,
        s: int = 4,
        bbox: tuple[np.ndarray, np.ndarray] | None = None,
        support_radius: float | None = None,
    ):
        if resolution < 8:
            raise ValueError("resolution must be at least 8")
        self.graph = graph
        self.resolution = int(resolution)
        self.s = int(min(s, graph.n_nodes))
        self.support_radius = float(support_radius if support_radius is not None else 2.0 * graph.radius)
        if bbox is None:
            margin = self.support_radius + 2.0 * graph.radius
            lo = graph.nodes.min(axis=0) - margin
            hi = graph.nodes.max(axis=0) + margin
        else:
            lo, hi = np.asarray(bbox[0], dtype=np.float64), np.asarray(bbox[1], dtype=np.float64)
        self.bbox_min = lo
        self.voxel_size = float((hi - lo).max() / self.resolution)
        self.neighbor_idx = self._build_canonical_field()
        self.live_maps: dict[int, np.ndarray] = {}
        self._frame_slots: dict[int, int] = {}
        self._table_blocks: list[np.ndarray] = []
        self.lookup_table = np.zeros((0, 8))

    # -- construction -------------------------------------------------------

    def _voxel_centers(self, flat_idx: np.ndarray) -> np.ndarray:
        r = self.resolution
        x = flat_idx // (r * r)
        y = (flat_idx // r) % r
        z = flat_idx % r
        ijk = np.stack([x, y, z], axis=-1).astype(np.float64)
        return self.bbox_min + (ijk + 0.5) * self.voxel_size

    def _flat_index(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r = self.resolution
        ijk = np.floor((pts - self.bbox_min) / self.voxel_size).astype(np.int64)
        inside = np.all((ijk >= 0) & (ijk < r), axis=-1)
        ijk = np.clip(ijk, 0, r - 1)
        return ijk[..., 0] * r * r + ijk[..., 1] * r + ijk[..., 2], inside

    def _build_canonical_field(self) -> np.ndarray:
        """For every in-support voxel center, the s nearest nodes (ties by index)."""
        r = self.resolution
        n = self.graph.n_nodes
        total = r * r * r
        out = np.full((total, self.s), -1, dtype=np.int32)
        nodes = self.graph.nodes
        nn2 = np.sum(nodes * nodes, axis=1)
        sup2 = self.support_radius**2
        take = min(n, 2 * self.s + 8)
        for start in range(0, total, _CHUNK):
            idx = np.arange(start, min(start + _CHUNK, total))
            c = self._voxel_centers(idx)
            d2 = np.sum(c * c, axis=1)[:, None] + nn2[None] - 2.0 * (c @ nodes.T)
            if take < n:
                cand = np.argpartition(d2, take - 1, axis=1)[:, :take]
            else:
                cand = np.broadcast_to(np.arange(n), (len(idx), n))
            # sorting candidates by index first makes the stable distance
            # sort break ties by node index
            cand_sorted = np.sort(cand, axis=1)
            cd_sorted = np.take_along_axis(d2, cand_sorted, axis=1)
            order = np.argsort(cd_sorted, axis=1, kind="stable")[:, : self.s]
            sel = np.take_along_axis(cand_sorted, order, axis=1)
            best = cd_sorted.min(axis=1)
            ok = best <= sup2
            out[idx[ok]] = sel[ok].astype(np.int32)
        return out

    # -- per-frame update ----------------------------------------------------

    def update_live_map(self, motion: GraphMotion) -> None:
        """Warp in-support voxels to live space, record canonical indices.

        Collisions keep the canonical voxel whose warped center lands nearest
        the live voxel center; unfilled live voxels bordering filled ones are
        patched by a single nearest-neighbor dilation pass.
        """
        fid = motion.frame_id
        if fid in self._frame_slots:
            raise ValueError(f"frame {fid} already registered")
        if motion.dqs.shape[0] != self.graph.n_nodes:
            raise ValueError("motion node count does not match the graph")
        r = self.resolution
        total = r * r * r
        live = np.full(total, -1, dtype=np.int32)
        best_d2 = np.full(total, np.inf)
        sup = np.nonzero(self.neighbor_idx[:, 0] >= 0)[0]
        for start in range(0, len(sup), _CHUNK):
            k = sup[start : start + _CHUNK]
            centers = self._voxel_centers(k)
            nbr = self.neighbor_idx[k].astype(np.int64)
            node_pos = self.graph.nodes[nbr]                      # (N, s, 3)
            d2 = np.sum((centers[:, None, :] - node_pos) ** 2, axis=-1)
            w = np.exp(-d2 / (self.graph.radius**2))
            blended = dq_blend(np.maximum(w, 1e-300), motion.dqs[nbr])
            warped = dq_apply(blended, centers)
            f, inside = self._flat_index(warped)
            lc = self.bbox_min + (np.stack([f // (r * r), (f // r) % r, f % r], axis=-1) + 0.5) * self.voxel_size
            dist = np.sum((warped - lc) ** 2, axis=-1)
            f, k, dist = f[inside], k[inside], dist[inside]
            # nearest-to-live-center wins; np.minimum.at resolves duplicates
            order = np.lexsort((dist, f))
            f, k, dist = f[order], k[order], dist[order]
            first = np.ones(len(f), dtype=bool)
            first[1:] = f[1:] != f[:-1]
            cand_f, cand_k, cand_d = f[first], k[first], dist[first]
            better = cand_d < best_d2[cand_f]
            live[cand_f[better]] = cand_k[better].astype(np.int32)
            best_d2[cand_f[better]] = cand_d[better]
        live = self._dilate_once(live)
        self.live_maps[fid] = live
        self._frame_slots[fid] = len(self._frame_slots)
        self._table_blocks.append(np.asarray(motion.dqs, dtype=np.float64))
        self.lookup_table = np.concatenate(self._table_blocks, axis=0)

    def _dilate_once(self, live: np.ndarray) -> np.ndarray:
        r = self.resolution
        vol = live.reshape(r, r, r)
        filled = vol >= 0
        out = vol.copy()
        for axis in range(3):
            for shift in (1, -1):
                src = np.roll(vol, shift, axis=axis)
                src_ok = np.roll(filled, shift, axis=axis)
                if shift == 1:
                    sl = [slice(None)] * 3
                    sl[axis] = slice(0, 1)
                    src_ok[tuple(sl)] = False
                else:
                    sl = [slice(None)] * 3
                    sl[axis] = slice(r - 1, r)
                    src_ok[tuple(sl)] = False
                take = (~filled) & src_ok & (out < 0)
                out[take] = src[take]
        return out.reshape(-1)

    # -- queries --------------------------------------------------------------

    def frame_offset(self, frame_id: int) -> int:
        if frame_id not in self._frame_slots:
            raise OutOfSupportError(f"frame {frame_id} not registered")
        return self._frame_slots[frame_id] * self.graph.n_nodes

    def query_motion_batch(self, pts_live: np.ndarray, frame_id: int, strict: bool = False):
        """O(1)-per-point lookup: returns (indices, weights, p_canonical, valid).

        Work per query is bounded by s gathers and one fixed-size blend; no
        loop or scan ranges over the node count.
        """
        pts = np.atleast_2d(np.asarray(pts_live, dtype=np.float64))
        off = self.frame_offset(frame_id)
        live = self.live_maps[frame_id]
        f, inside = self._flat_index(pts)
        k = np.where(inside, live[np.where(inside, f, 0)], -1)
        valid = k >= 0
        k_safe = np.where(valid, k, 0)
        nbr = self.neighbor_idx[k_safe].astype(np.int64)          # (N, s)
        nbr_safe = np.maximum(nbr, 0)
        dqs = self.lookup_table[off + nbr_safe]                   # (N, s, 8)
        anchors = dq_apply(dqs, self.graph.nodes[nbr_safe])       # deformed nodes
        d2 = np.sum((pts[:, None, :] - anchors) ** 2, axis=-1)
        w = np.exp(-d2 / (self.graph.radius**2))
        w = np.where(nbr >= 0, w, 0.0)
        valid &= w.max(axis=1) > WEIGHT_FLOOR
        blended = dq_blend(np.maximum(np.where(valid[:, None], w, 1.0), 1e-300), dqs)
        p_c = dq_apply(dq_inverse(blended), pts)
        if strict and not valid.all():
            raise OutOfSupportError("query outside the mapped live volume")
        return nbr, w, p_c, valid

    def query_motion(self, p_live: np.ndarray, frame_id: int):
        """Single-point strict query -> (node indices, weights, p_canonical)."""
        nbr, w, p_c, valid = self.query_motion_batch(
            np.asarray(p_live, dtype=np.float64)[None], frame_id, strict=True
        )
        return nbr[0], w[0], p_c[0]

    def in_support_voxels(self) -> np.ndarray:
        """Flat indices of canonical voxels carrying neighbor lists."""
        return np.nonzero(self.neighbor_idx[:, 0] >= 0)[0]

    def voxel_diagonal(self) -> float:
        return float(self.voxel_size * np.sqrt(3.0))


def build_knn_field(graph: EDGraph, resolution: int, s: int, **kw) -> KnnField:
    return KnnField(graph, resolution=resolution, s=s, **kw)


def query_motion(field: KnnField, p_live: np.ndarray, frame_id: int):
    return field.query_motion(p_live, frame_id)


def update_live_map(field: KnnField, motion: GraphMotion) -> None:
    field.update_live_map(motion)
