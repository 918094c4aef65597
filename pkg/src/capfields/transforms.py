"""Quaternion, dual-quaternion and SE(3) algebra plus skinning weights.

Conventions: quaternions are [w, x, y, z] float64 arrays; dual quaternions
pack [real(4), dual(4)] into length-8 arrays for the batched helpers.
Rotations are orthonormal 3x3 matrices, translations in meters. All
functions are pure; batched variants broadcast over leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateWeightsError(ValueError):
    """Raised when a blend receives no positive weight."""


# ---------------------------------------------------------------------------
# plain quaternions, vectorized over leading axes
# ---------------------------------------------------------------------------

def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w1, x1, y1, z1 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    w2, x2, y2, z2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / n


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v (..., 3) by unit quaternions q (..., 4)."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qv = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    """Axis-angle vector (..., 3) to quaternion; stable near zero angle."""
    rv = np.asarray(rv, dtype=np.float64)
    angle = np.linalg.norm(rv, axis=-1, keepdims=True)
    half = 0.5 * angle
    small = angle < 1e-12
    # sin(a/2)/a -> 1/2 - a^2/48 for tiny angles
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(small, 0.5 - angle * angle / 48.0, np.sin(half) / np.where(small, 1.0, angle))
    return np.concatenate([np.cos(half), k * rv], axis=-1)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1)
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Rotation matrix (3, 3) to unit quaternion (branch-stable)."""
    R = np.asarray(R, dtype=np.float64)
    m00, m01, m02 = R[0]
    m10, m11, m12 = R[1]
    m20, m21, m22 = R[2]
    tr = m00 + m11 + m22
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s])
    elif m00 >= m11 and m00 >= m22:
        s = np.sqrt(1.0 + m00 - m11 - m22) * 2.0
        q = np.array([(m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s])
    elif m11 >= m22:
        s = np.sqrt(1.0 + m11 - m00 - m22) * 2.0
        q = np.array([(m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s])
    else:
        s = np.sqrt(1.0 + m22 - m00 - m11) * 2.0
        q = np.array([(m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s])
    return quat_normalize(q)


def rotmat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    """Rodrigues formula, vectorized over leading axes."""
    return quat_to_matrix(quat_from_rotvec(rv))


# ---------------------------------------------------------------------------
# packed dual quaternions (..., 8) = [real, dual]
# ---------------------------------------------------------------------------

def dq_identity() -> np.ndarray:
    out = np.zeros(8)
    out[0] = 1.0
    return out


def dq_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    real = quat_mul(a[..., :4], b[..., :4])
    dual = quat_mul(a[..., :4], b[..., 4:]) + quat_mul(a[..., 4:], b[..., :4])
    return np.concatenate([real, dual], axis=-1)


def dq_conj(dq: np.ndarray) -> np.ndarray:
    dq = np.asarray(dq, dtype=np.float64)
    return np.concatenate([quat_conj(dq[..., :4]), quat_conj(dq[..., 4:])], axis=-1)


def dq_normalize(dq: np.ndarray) -> np.ndarray:
    """Unit-normalize: |real| = 1 and real . dual = 0 afterwards."""
    dq = np.asarray(dq, dtype=np.float64)
    n = np.linalg.norm(dq[..., :4], axis=-1, keepdims=True)
    real = dq[..., :4] / n
    dual = dq[..., 4:] / n
    dual = dual - np.sum(real * dual, axis=-1, keepdims=True) * real
    return np.concatenate([real, dual], axis=-1)


def dq_inverse(dq: np.ndarray) -> np.ndarray:
    """Inverse of a unit dual quaternion (its conjugate)."""
    return dq_conj(dq)


def dq_from_quat_trans(q: np.ndarray, t: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    tq = np.concatenate([np.zeros_like(t[..., :1]), t], axis=-1)
    dual = 0.5 * quat_mul(tq, q)
    return np.concatenate([q, dual], axis=-1)


def dq_from_rt(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    return dq_from_quat_trans(quat_from_matrix(R), t)


def dq_translation(dq: np.ndarray) -> np.ndarray:
    dq = np.asarray(dq, dtype=np.float64)
    return 2.0 * quat_mul(dq[..., 4:], quat_conj(dq[..., :4]))[..., 1:]


def dq_to_rt(dq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dq = np.asarray(dq, dtype=np.float64)
    return quat_to_matrix(dq[..., :4]), dq_translation(dq)


def dq_apply(dq: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Apply unit dual quaternions (..., 8) to points (..., 3)."""
    dq = np.asarray(dq, dtype=np.float64)
    return quat_rotate(dq[..., :4], p) + dq_translation(dq)


def dq_blend(weights: np.ndarray, dqs: np.ndarray) -> np.ndarray:
    """Weighted dual-quaternion blend over the last-but-one axis.

    weights: (..., k) nonnegative, at least one positive per row.
    dqs: (..., k, 8). Real parts are sign-aligned to the first entry before
    summation; the blended result is unit-normalized.
    """
    weights = np.asarray(weights, dtype=np.float64)
    dqs = np.asarray(dqs, dtype=np.float64)
    if np.any(weights < 0):
        raise ValueError("blend weights must be nonnegative")
    wsum = weights.sum(axis=-1)
    if np.any(wsum <= 0):
        raise DegenerateWeightsError("all blend weights are zero")
    sign = np.where(np.sum(dqs[..., :1, :4] * dqs[..., :, :4], axis=-1, keepdims=True) < 0, -1.0, 1.0)
    blended = np.sum(weights[..., None] * sign * dqs, axis=-2)
    return dq_normalize(blended)


# ---------------------------------------------------------------------------
# wrapper types
# ---------------------------------------------------------------------------

@dataclass
class DualQuaternion:
    """Rigid transform as real + dual quaternion parts."""

    real: np.ndarray
    dual: np.ndarray

    def __post_init__(self):
        self.real = np.asarray(self.real, dtype=np.float64).reshape(4)
        self.dual = np.asarray(self.dual, dtype=np.float64).reshape(4)

    @staticmethod
    def identity() -> "DualQuaternion":
        return DualQuaternion(quat_identity(), np.zeros(4))

    @staticmethod
    def from_rt(R: np.ndarray, t: np.ndarray) -> "DualQuaternion":
        return DualQuaternion.from_packed(dq_from_rt(R, t))

    @staticmethod
    def from_rotvec_trans(rv: np.ndarray, t: np.ndarray) -> "DualQuaternion":
        return DualQuaternion.from_packed(dq_from_quat_trans(quat_from_rotvec(rv), t))

    @staticmethod
    def from_packed(packed: np.ndarray) -> "DualQuaternion":
        packed = np.asarray(packed, dtype=np.float64).reshape(8)
        return DualQuaternion(packed[:4], packed[4:])

    def packed(self) -> np.ndarray:
        return np.concatenate([self.real, self.dual])

    def normalized(self) -> "DualQuaternion":
        return DualQuaternion.from_packed(dq_normalize(self.packed()))

    def inverse(self) -> "DualQuaternion":
        return DualQuaternion.from_packed(dq_inverse(self.packed()))

    def compose(self, other: "DualQuaternion") -> "DualQuaternion":
        """self applied after other: (self * other)(p) = self(other(p))."""
        return DualQuaternion.from_packed(dq_mul(self.packed(), other.packed()))

    def apply(self, p: np.ndarray) -> np.ndarray:
        return dq_apply(self.packed(), np.asarray(p, dtype=np.float64))

    def to_rt(self) -> tuple[np.ndarray, np.ndarray]:
        return dq_to_rt(self.packed())

    def is_normalized(self, tol: float = 1e-9) -> bool:
        return (
            abs(np.linalg.norm(self.real) - 1.0) <= tol
            and abs(float(np.dot(self.real, self.dual))) <= tol
        )


@dataclass
class Se3:
    """Rigid transform as rotation matrix + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-6 or np.linalg.det(self.rotation) < 0:
            raise ValueError(f"rotation is not orthonormal (max deviation {err:.2e})")

    @staticmethod
    def identity() -> "Se3":
        return Se3()

    @staticmethod
    def from_rotvec_trans(rv: np.ndarray, t: np.ndarray) -> "Se3":
        return Se3(rotmat_from_rotvec(np.asarray(rv, dtype=np.float64)), t)

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Se3":
        m = np.asarray(m, dtype=np.float64)
        return Se3(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Se3") -> "Se3":
        return Se3(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Se3":
        rt = self.rotation.T
        return Se3(rt, -rt @ self.translation)

    def apply(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def to_dq(self) -> DualQuaternion:
        return DualQuaternion.from_rt(self.rotation, self.translation)


# ---------------------------------------------------------------------------
# pipeline-facing operations
# ---------------------------------------------------------------------------

def dqb(neighbors) -> DualQuaternion:
    """Dual-quaternion blend of (weight, DualQuaternion) pairs.

    Weights must be nonnegative with at least one positive entry; antipodal
    real parts are sign-aligned to the first neighbor before summation and
    the result is unit-normalized.
    """
    neighbors = list(neighbors)
    if not neighbors:
        raise DegenerateWeightsError("no neighbors to blend")
    weights = np.array([w for w, _ in neighbors], dtype=np.float64)
    dqs = np.stack([d.packed() for _, d in neighbors])
    return DualQuaternion.from_packed(dq_blend(weights, dqs))


def se3_apply(dq: DualQuaternion, p: np.ndarray) -> np.ndarray:
    """Apply the rigid transform of a normalized dual quaternion to a point."""
    return dq.apply(p)


def skin_weight(node_pos: np.ndarray, p: np.ndarray, r: float) -> float:
    """Gaussian influence weight exp(-|p - node|^2 / r^2)."""
    if r <= 0:
        raise ValueError("influence radius must be positive")
    d2 = float(np.sum((np.asarray(p, dtype=np.float64) - np.asarray(node_pos, dtype=np.float64)) ** 2))
    return float(np.exp(-d2 / (r * r)))


def skin_weights_batch(node_pos: np.ndarray, pts: np.ndarray, r: float) -> np.ndarray:
    """Vectorized skin_weight: node_pos (..., 3) vs pts (..., 3) -> (...)."""
    d2 = np.sum((np.asarray(pts, dtype=np.float64) - np.asarray(node_pos, dtype=np.float64)) ** 2, axis=-1)
    return np.exp(-d2 / (r * r))
