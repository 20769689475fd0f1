"""Rigid wrist poses, relative actions between them, and action quantization.

Quaternions are stored scalar-first ``(w, x, y, z)`` and always canonicalized
to ``w >= 0`` so that a rotation has a single representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

TRANS_RES = 0.06
QUAT_RES = 0.05
TRANS_NORM = 0.30
ROT_NORM = math.pi

# Guards floor() against values like 19.999999999999996 that are 20 up to rounding.
_FLOOR_EPS = 1e-9


def canonical_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise ValueError(f"degenerate quaternion {q!r}")
    q = q / n
    if q[0] < 0:
        q = -q
    elif q[0] == 0.0:
        # w == 0: make the first nonzero vector component positive.
        for c in q[1:]:
            if c != 0.0:
                if c < 0:
                    q = -q
                break
    return q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m) -> np.ndarray:
    """Shepperd's method; result is canonicalized."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return canonical_quat(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return canonical_quat(np.concatenate([[math.cos(half)], math.sin(half) * axis]))


def rotate(q: np.ndarray, v) -> np.ndarray:
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


@dataclass(frozen=True, eq=False)
class Pose:
    """Wrist pose: maps wrist-frame points into the world frame."""

    translation: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        t.setflags(write=False)
        q = canonical_quat(self.orientation)
        q.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, 3], quat_from_matrix(m[:3, :3]))

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``."""
        t = self.translation + rotate(self.orientation, other.translation)
        return Pose(t, quat_mul(self.orientation, other.orientation))

    def inverse(self) -> "Pose":
        qi = quat_conj(self.orientation)
        return Pose(-rotate(qi, self.translation), qi)

    def transform_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rotation_matrix.T + self.translation

    def as_list(self) -> list[float]:
        return [float(v) for v in (*self.translation, *self.orientation)]

    @classmethod
    def from_list(cls, vals) -> "Pose":
        vals = list(vals)
        if len(vals) != 7:
            raise ValueError(f"pose needs 7 numbers, got {len(vals)}")
        return cls(vals[:3], vals[3:])

    def __repr__(self):
        t = ", ".join(f"{v:.4f}" for v in self.translation)
        q = ", ".join(f"{v:.4f}" for v in self.orientation)
        return f"Pose(t=[{t}], q=[{q}])"


class Action(Pose):
    """Relative wrist motion, expressed in the frame of the starting pose."""

    def __repr__(self):
        return "Action" + super().__repr__()[4:]


class ActionKey(NamedTuple):
    translation: tuple[int, int, int]
    rotation: tuple[int, int, int, int]


def relative_action(p_from: Pose, p_to: Pose) -> Action:
    rel = p_from.inverse().compose(p_to)
    return Action(rel.translation, rel.orientation)


def apply_action(p: Pose, a: Action) -> Pose:
    return p.compose(a)


def rotation_angle(q) -> float:
    """Geodesic angle in ``[0, pi]`` of a unit quaternion."""
    return 2.0 * math.acos(min(1.0, abs(float(q[0]))))


def movement_cost(a: Pose, trans_norm: float = TRANS_NORM, rot_norm: float = ROT_NORM) -> float:
    if trans_norm <= 0 or rot_norm <= 0:
        raise ValueError("normalization constants must be positive")
    dist = float(np.linalg.norm(a.translation))
    theta = rotation_angle(a.orientation)
    return 0.5 * min(dist / trans_norm, 1.0) + 0.5 * min(theta / rot_norm, 1.0)


def _cells(values, res: float) -> tuple[int, ...]:
    return tuple(int(math.floor(v / res + _FLOOR_EPS)) for v in values)


def discretize_action(a: Pose, trans_res: float = TRANS_RES, quat_res: float = QUAT_RES) -> ActionKey:
    if trans_res <= 0 or quat_res <= 0:
        raise ValueError("resolutions must be positive")
    q = canonical_quat(a.orientation)
    return ActionKey(_cells(a.translation, trans_res), _cells(q, quat_res))
