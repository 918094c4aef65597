"""Versioned binary records: graph dumps and motion-prior streams.

All payloads are little-endian; float arrays are raw float64 bytes so
roundtrips are bit-exact. Each file starts with a 4-byte magic and a uint32
version.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .edgraph import EDGraph, GraphMotion
from .skeleton import Skeleton, SkeletonPose
from .transforms import Se3

GRAPH_MAGIC = b"CFGR"
MOTION_MAGIC = b"CFMP"
VERSION = 1


class RecordFormatError(ValueError):
    pass


def _write_array(f, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    f.write(struct.pack("<I", arr.size))
    f.write(arr.tobytes())


def _read_array(f, shape) -> np.ndarray:
    (n,) = struct.unpack("<I", f.read(4))
    arr = np.frombuffer(f.read(8 * n), dtype="<f8").copy()
    return arr.reshape(shape)


def save_graph(path: str, graph: EDGraph, motions: list[GraphMotion] | None = None) -> None:
    with open(path, "wb") as f:
        f.write(GRAPH_MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<IdI", graph.n_nodes, graph.radius, graph.knn_k))
        _write_array(f, graph.nodes)
        motions = motions or []
        f.write(struct.pack("<I", len(motions)))
        for m in motions:
            f.write(struct.pack("<q", m.frame_id))
            _write_array(f, m.dqs)


def load_graph(path: str) -> tuple[EDGraph, list[GraphMotion]]:
    with open(path, "rb") as f:
        if f.read(4) != GRAPH_MAGIC:
            raise RecordFormatError(f"{path}: not a graph record")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise RecordFormatError(f"{path}: unsupported version {version}")
        n, radius, knn_k = struct.unpack("<IdI", f.read(16))
        nodes = _read_array(f, (n, 3))
        graph = EDGraph(nodes, radius=radius, knn_k=knn_k)
        (n_motions,) = struct.unpack("<I", f.read(4))
        motions = []
        for _ in range(n_motions):
            (fid,) = struct.unpack("<q", f.read(8))
            motions.append(GraphMotion(fid, _read_array(f, (n, 8))))
        return graph, motions


def graph_debug_dump(graph: EDGraph, motions: list[GraphMotion] | None = None) -> str:
    out = io.StringIO()
    out.write(f"ed-graph: {graph.n_nodes} nodes, radius {graph.radius}, knn_k {graph.knn_k}\n")
    for i, p in enumerate(graph.nodes):
        out.write(f"  node {i:4d}: ({p[0]:+.4f}, {p[1]:+.4f}, {p[2]:+.4f})\n")
    for m in motions or []:
        out.write(f"frame {m.frame_id}:\n")
        for i, dq in enumerate(m.dqs):
            out.write(f"  dq {i:4d}: real({dq[0]:+.4f} {dq[1]:+.4f} {dq[2]:+.4f} {dq[3]:+.4f})"
                      f" dual({dq[4]:+.4f} {dq[5]:+.4f} {dq[6]:+.4f} {dq[7]:+.4f})\n")
    return out.getvalue()


@dataclass
class MotionPrior:
    """Per-frame motion estimate handed from tracking to rendering."""

    frame_id: int
    graph_motion: GraphMotion
    pose: SkeletonPose
    object_pose: Se3

    def __post_init__(self):
        if self.graph_motion.frame_id != self.frame_id:
            raise ValueError("graph motion frame id mismatch")


class MotionPriorWriter:
    """Append-only motion prior stream."""

    def __init__(self, path: str, n_nodes: int, n_theta: int):
        self._f = open(path, "wb")
        self._f.write(MOTION_MAGIC)
        self._f.write(struct.pack("<III", VERSION, n_nodes, n_theta))
        self.n_nodes = n_nodes
        self.n_theta = n_theta

    def append(self, prior: MotionPrior) -> None:
        f = self._f
        f.write(struct.pack("<q", prior.frame_id))
        _write_array(f, prior.graph_motion.dqs)
        _write_array(f, prior.pose.theta)
        _write_array(f, prior.object_pose.rotation)
        _write_array(f, prior.object_pose.translation)
        f.flush()

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_motion_priors(path: str, skeleton: Skeleton) -> list[MotionPrior]:
    priors = []
    with open(path, "rb") as f:
        if f.read(4) != MOTION_MAGIC:
            raise RecordFormatError(f"{path}: not a motion prior stream")
        version, n_nodes, n_theta = struct.unpack("<III", f.read(12))
        if version != VERSION:
            raise RecordFormatError(f"{path}: unsupported version {version}")
        while True:
            head = f.read(8)
            if not head:
                break
            (fid,) = struct.unpack("<q", head)
            dqs = _read_array(f, (n_nodes, 8))
            theta = _read_array(f, (n_theta,))
            rot = _read_array(f, (3, 3))
            trans = _read_array(f, (3,))
            priors.append(
                MotionPrior(fid, GraphMotion(fid, dqs), SkeletonPose(skeleton, theta), Se3(rot, trans))
            )
    return priors
