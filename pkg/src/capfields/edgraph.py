"""Embedded deformation graph: node sampling and blended rigid warps.

Nodes live in canonical space; a per-frame GraphMotion assigns each node a
unit dual quaternion. Points are warped by blending the knn_k nearest nodes
with Gaussian skin weights. The backward warp picks neighbors among the
deformed node positions and applies the inverse of the blended transform.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .transforms import (
    DualQuaternion,
    dq_apply,
    dq_blend,
    dq_identity,
    dq_inverse,
    dq_normalize,
    quat_rotate,
)

WEIGHT_FLOOR = 1e-6


class OutOfSupportError(ValueError):
    """Query point is outside the influence of every graph node."""


@dataclass
class EDGraph:
    nodes: np.ndarray           # (n, 3) canonical node positions
    radius: float = 0.1         # Gaussian influence radius
    knn_k: int = 4

    def __post_init__(self):
        self.nodes = np.atleast_2d(np.asarray(self.nodes, dtype=np.float64))
        if len(self.nodes) == 0:
            raise ValueError("graph needs at least one node")
        if self.radius <= 0:
            raise ValueError("influence radius must be positive")
        self.knn_k = int(min(self.knn_k, len(self.nodes)))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def edges(self, k: int = 8) -> np.ndarray:
        """Directed regularization edges (i, j) to the k nearest other nodes."""
        n = self.n_nodes
        k = min(k, n - 1)
        if k <= 0:
            return np.zeros((0, 2), dtype=np.int64)
        d = np.linalg.norm(self.nodes[:, None] - self.nodes[None], axis=-1)
        np.fill_diagonal(d, np.inf)
        nbr = np.argsort(d, axis=1, kind="stable")[:, :k]
        src = np.repeat(np.arange(n), k)
        return np.stack([src, nbr.reshape(-1)], axis=1)


@dataclass
class GraphMotion:
    """Per-frame node transforms, packed (n, 8) dual quaternions."""

    frame_id: int
    dqs: np.ndarray

    def __post_init__(self):
        self.dqs = np.asarray(self.dqs, dtype=np.float64)
        if self.dqs.ndim != 2 or self.dqs.shape[1] != 8:
            raise ValueError("dqs must be (n, 8) packed dual quaternions")

    @staticmethod
    def identity(frame_id: int, n_nodes: int) -> "GraphMotion":
        dqs = np.tile(dq_identity(), (n_nodes, 1))
        return GraphMotion(frame_id, dqs)

    @staticmethod
    def from_list(frame_id: int, dq_list) -> "GraphMotion":
        return GraphMotion(frame_id, np.stack([d.packed() for d in dq_list]))

    def dq(self, i: int) -> DualQuaternion:
        return DualQuaternion.from_packed(self.dqs[i])

    def normalized(self) -> "GraphMotion":
        return GraphMotion(self.frame_id, dq_normalize(self.dqs))


def sample_ed_nodes(
    surface_points: np.ndarray,
    sample_radius: float,
    influence_radius: float = 0.1,
    knn_k: int = 4,
    seed: int | None = None,
) -> EDGraph:
    """Greedy radius thinning of a point cloud into graph nodes.

    Keeps a maximal subset with pairwise distance >= sample_radius,
    processing points in input order (or a seeded shuffle when seed is set).
    """
    pts = np.atleast_2d(np.asarray(surface_points, dtype=np.float64))
    if len(pts) == 0:
        raise ValueError("cannot sample nodes from an empty point cloud")
    if sample_radius <= 0:
        raise ValueError("sample radius must be positive")
    order = np.arange(len(pts))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(pts))
    kept: list[np.ndarray] = []
    kept_arr = np.zeros((0, 3))
    r2 = sample_radius * sample_radius
    for i in order:
        p = pts[i]
        if len(kept) == 0 or np.min(np.sum((kept_arr - p) ** 2, axis=1)) >= r2:
            kept.append(p)
            kept_arr = np.asarray(kept)
    return EDGraph(kept_arr, radius=influence_radius, knn_k=knn_k)


def _knn(positions: np.ndarray, pts: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k nearest rows of positions for each point, ties broken by index."""
    d2 = np.sum((pts[:, None, :] - positions[None]) ** 2, axis=-1)
    if k >= d2.shape[1]:
        idx = np.argsort(d2, axis=1, kind="stable")
    else:
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        sub = np.take_along_axis(d2, part, axis=1)
        order = np.argsort(sub, axis=1, kind="stable")
        idx = np.take_along_axis(part, order, axis=1)
    return idx[:, :k], np.take_along_axis(d2, idx[:, :k], axis=1)


def deformed_nodes(graph: EDGraph, motion: GraphMotion) -> np.ndarray:
    """Live-space node positions: each node moved by its own transform."""
    return dq_apply(motion.dqs, graph.nodes)


def _blend_for(
    graph: EDGraph,
    motion: GraphMotion,
    pts: np.ndarray,
    anchor_positions: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Neighbor indices, weights, blended dq, validity for query points."""
    idx, d2 = _knn(anchor_positions, pts, graph.knn_k)
    w = np.exp(-d2 / (graph.radius * graph.radius))
    valid = w.max(axis=1) > WEIGHT_FLOOR
    safe_w = np.where(valid[:, None], w, 1.0)
    blended = dq_blend(safe_w, motion.dqs[idx])
    return idx, w, blended, valid


def warp_forward_batch(
    graph: EDGraph, motion: GraphMotion, pts: np.ndarray, strict: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Canonical -> live warp of points (N, 3); returns (warped, valid)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    _, _, blended, valid = _blend_for(graph, motion, pts, graph.nodes)
    if strict and not valid.all():
        raise OutOfSupportError("point outside node influence")
    return dq_apply(blended, pts), valid


def warp_forward_with_rotation(
    graph: EDGraph, motion: GraphMotion, pts: np.ndarray, normals: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward warp that also rotates per-point normals."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    _, _, blended, valid = _blend_for(graph, motion, pts, graph.nodes)
    return dq_apply(blended, pts), quat_rotate(blended[..., :4], normals), valid


def warp_backward_batch(
    graph: EDGraph, motion: GraphMotion, pts_live: np.ndarray, strict: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Live -> canonical warp; neighbors/weights use deformed node positions."""
    pts = np.atleast_2d(np.asarray(pts_live, dtype=np.float64))
    anchors = deformed_nodes(graph, motion)
    _, _, blended, valid = _blend_for(graph, motion, pts, anchors)
    if strict and not valid.all():
        raise OutOfSupportError("point outside deformed node influence")
    return dq_apply(dq_inverse(blended), pts), valid


def canonical_blend_info(graph: EDGraph, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fixed per-point neighbor indices and weights in canonical space.

    The forward warp of a canonical point depends on the motion only through
    these (index, weight) pairs, so solvers can precompute them once.
    Returns (idx (N, k), weights, valid)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    idx, d2 = _knn(graph.nodes, pts, graph.knn_k)
    w = np.exp(-d2 / (graph.radius * graph.radius))
    return idx, w, w.max(axis=1) > WEIGHT_FLOOR


def apply_blended(motion: GraphMotion, idx: np.ndarray, w: np.ndarray, pts: np.ndarray,
                  normals: np.ndarray | None = None):
    """Warp points (and optionally normals) with precomputed blend info."""
    blended = dq_blend(np.maximum(w, 1e-300), motion.dqs[idx])
    out = dq_apply(blended, pts)
    if normals is None:
        return out
    return out, quat_rotate(blended[..., :4], normals)


def warp_forward(graph: EDGraph, motion: GraphMotion, p_canonical: np.ndarray) -> np.ndarray:
    out, _ = warp_forward_batch(graph, motion, np.asarray(p_canonical, dtype=np.float64)[None], strict=True)
    return out[0]


def warp_backward(graph: EDGraph, motion: GraphMotion, p_live: np.ndarray) -> np.ndarray:
    out, _ = warp_backward_batch(graph, motion, np.asarray(p_live, dtype=np.float64)[None], strict=True)
    return out[0]
