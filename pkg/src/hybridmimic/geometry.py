"""Rotations, pinhole cameras, point-set distances and forward kinematics.

Quaternions are stored scalar-first ``(w, x, y, z)``. The array helpers
(``quat_*``) broadcast over leading axes and are what the simulator, rewards
and metrics use; :class:`Rotation` is the immutable single-value wrapper used
at API boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class GeometryError(ValueError):
    pass


class BehindCamera(GeometryError):
    pass


class EmptySet(GeometryError):
    pass


class ShapeMismatch(GeometryError):
    pass


# ---------------------------------------------------------------------------
# vectorised quaternion helpers

def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_from_axis_angle(rotvec):
    """Exponential map from rotation vectors (..., 3) to quaternions (..., 4)."""
    v = np.asarray(rotvec, dtype=float)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * theta
    # sin(half)/theta, with its Taylor series near zero
    small = theta < 1e-8
    k = np.where(small, 0.5 - theta**2 / 48.0, np.sin(half) / np.where(small, 1.0, theta))
    return np.concatenate([np.cos(half), k * v], axis=-1)


def quat_to_axis_angle(q):
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., :1] < 0, -q, q)
    vec = q[..., 1:]
    s = np.linalg.norm(vec, axis=-1, keepdims=True)
    theta = 2.0 * np.arctan2(s, q[..., :1])
    small = s < 1e-12
    scale = np.where(small, 2.0, theta / np.where(small, 1.0, s))
    return scale * vec


def quat_to_matrix(q):
    q = quat_normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return m.reshape(q.shape[:-1] + (3, 3))


def quat_from_matrix(m):
    """Shepperd's method, vectorised."""
    m = np.asarray(m, dtype=float)
    batch = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    out = np.empty((m.shape[0], 4))
    tr = np.trace(m, axis1=1, axis2=2)
    diag = np.stack([m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]], axis=1)
    choice = np.argmax(np.concatenate([tr[:, None], diag], axis=1), axis=1)
    for i in range(m.shape[0]):
        r = m[i]
        c = choice[i]
        if c == 0:
            s = 2.0 * np.sqrt(1.0 + tr[i])
            out[i] = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif c == 1:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            out[i] = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif c == 2:
            s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
            out[i] = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
            out[i] = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    out = quat_normalize(out)
    out = np.where(out[:, :1] < 0, -out, out)
    return out.reshape(batch + (4,))


def quat_rotate(q, v):
    """Rotate vectors ``v`` (..., 3) by quaternions ``q`` (..., 4)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_geodesic(a, b):
    """Angle of the relative rotation between ``a`` and ``b``, in [0, pi]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rel = quat_mul(quat_conj(a), b)
    s = np.linalg.norm(rel[..., 1:], axis=-1)
    return 2.0 * np.arctan2(s, np.abs(rel[..., 0]))


def matrix_to_6d(m):
    """First two columns of a rotation matrix, flattened column-major (..., 6)."""
    m = np.asarray(m, dtype=float)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def matrix_from_6d(d6):
    """Gram-Schmidt re-orthonormalisation of a 6D rotation representation."""
    d6 = np.asarray(d6, dtype=float)
    a1 = d6[..., 0:3]
    a2 = d6[..., 3:6]
    b1 = a1 / np.linalg.norm(a1, axis=-1, keepdims=True)
    a2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    b2 = a2 / np.linalg.norm(a2, axis=-1, keepdims=True)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


# ---------------------------------------------------------------------------
# Rotation value type

class Rotation:
    """Immutable unit quaternion ``(w, x, y, z)``; ``q`` and ``-q`` compare equal."""

    __slots__ = ("_q",)

    def __init__(self, q: Sequence[float] = (1.0, 0.0, 0.0, 0.0)):
        arr = np.asarray(q, dtype=float).reshape(4)
        n = np.linalg.norm(arr)
        if not np.isfinite(n) or n == 0.0:
            raise GeometryError(f"invalid quaternion {q!r}")
        arr = arr / n
        arr.flags.writeable = False
        self._q = arr

    @classmethod
    def identity(cls) -> "Rotation":
        return cls()

    @classmethod
    def from_axis_angle(cls, rotvec) -> "Rotation":
        return cls(quat_from_axis_angle(rotvec))

    @classmethod
    def from_matrix(cls, m) -> "Rotation":
        return cls(quat_from_matrix(m))

    @classmethod
    def about(cls, axis: str, angle: float) -> "Rotation":
        v = np.zeros(3)
        v["xyz".index(axis)] = angle
        return cls.from_axis_angle(v)

    @property
    def quat(self) -> np.ndarray:
        return self._q

    def as_axis_angle(self) -> np.ndarray:
        return quat_to_axis_angle(self._q)

    def as_matrix(self) -> np.ndarray:
        return quat_to_matrix(self._q)

    def inv(self) -> "Rotation":
        return Rotation(quat_conj(self._q))

    def apply(self, v) -> np.ndarray:
        return quat_rotate(self._q, v)

    def __mul__(self, other: "Rotation") -> "Rotation":
        if not isinstance(other, Rotation):
            return NotImplemented
        return Rotation(quat_mul(self._q, other._q))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Rotation):
            return NotImplemented
        return abs(abs(float(np.dot(self._q, other._q))) - 1.0) < 1e-12

    def __hash__(self):
        q = self._q if self._q[0] >= 0 else -self._q
        return hash(tuple(np.round(q, 12)))

    def __repr__(self) -> str:
        return "Rotation(w={:.6f}, x={:.6f}, y={:.6f}, z={:.6f})".format(*self._q)


def geodesic_distance(a: Rotation, b: Rotation) -> float:
    return float(quat_geodesic(a.quat, b.quat))


# ---------------------------------------------------------------------------
# camera

def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> tuple[Rotation, np.ndarray]:
    """World-to-camera transform for a camera at ``eye`` looking at ``target``.

    Camera frame: +z forward, +x right, +y down (image rows grow downward).
    """
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=float))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    r_cw = np.stack([right, down, fwd], axis=0)  # rows: camera axes in world
    return Rotation.from_matrix(r_cw), -r_cw @ eye


@dataclass(frozen=True)
class CameraModel:
    focal: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: Rotation = field(default_factory=Rotation)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.focal > 0:
            raise GeometryError("focal length must be positive")
        t = np.asarray(self.translation, dtype=float).reshape(3)
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @classmethod
    def default(cls, width: int = 1024, height: int = 576, rotation: Rotation | None = None,
                translation=None) -> "CameraModel":
        """Intrinsics with ``f = W / 2`` and the principal point at the image centre."""
        return cls(
            focal=width / 2.0, cx=width / 2.0, cy=height / 2.0, width=width, height=height,
            rotation=rotation if rotation is not None else Rotation(),
            translation=np.zeros(3) if translation is None else translation,
        )

    @classmethod
    def looking_at(cls, eye, target, width: int = 1024, height: int = 576) -> "CameraModel":
        rot, trans = look_at(eye, target)
        return cls.default(width, height, rot, trans)

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.focal, 0.0, self.cx], [0.0, self.focal, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.rotation.inv().apply(self.translation)

    def to_camera(self, p) -> np.ndarray:
        return self.rotation.apply(np.asarray(p, dtype=float)) + self.translation

    def project_camera(self, pc, allow_behind: bool = False) -> np.ndarray:
        """Project camera-frame points (..., 3) to pixels (..., 2)."""
        pc = np.asarray(pc, dtype=float)
        z = pc[..., 2]
        if not allow_behind and np.any(z <= 1e-6):
            raise BehindCamera("point behind camera")
        zs = np.where(z > 1e-6, z, 1e-6)
        u = self.focal * pc[..., 0] / zs + self.cx
        v = self.focal * pc[..., 1] / zs + self.cy
        return np.stack([u, v], axis=-1)

    def unproject(self, pixel, depth: float) -> np.ndarray:
        """World point at camera-frame depth ``depth`` on the ray through ``pixel``."""
        u, v = np.asarray(pixel, dtype=float)
        pc = np.array([(u - self.cx) / self.focal * depth, (v - self.cy) / self.focal * depth, depth])
        return self.rotation.inv().apply(pc - self.translation)

    def in_image(self, px) -> np.ndarray:
        px = np.asarray(px, dtype=float)
        return (px[..., 0] >= 0) & (px[..., 0] <= self.width) & (px[..., 1] >= 0) & (px[..., 1] <= self.height)


def project(cam: CameraModel, p) -> np.ndarray:
    return cam.project_camera(cam.to_camera(p))


# ---------------------------------------------------------------------------
# point sets

def one_sided_chamfer(a, b) -> float:
    """Mean over ``a`` of the squared distance to the nearest point of ``b``."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise EmptySet("chamfer distance of an empty set")
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return float(d2.min(axis=1).mean())


def chamfer_batched(a, b):
    """Broadcasting variant: ``a`` (..., n, 3), ``b`` (..., m, 3) -> (...)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d2 = np.sum((a[..., :, None, :] - b[..., None, :, :]) ** 2, axis=-1)
    return d2.min(axis=-1).mean(axis=-1)


# ---------------------------------------------------------------------------
# skeleton and pose

@dataclass(frozen=True)
class Skeleton:
    """Articulated kinematic tree.

    ``dof_axes[j]`` is a string over ``"xyz"`` naming the hinge axes of joint
    ``j`` in composition order (local rotation = R_a0 @ R_a1 @ ...);
    ``dof_limits[j]`` has one ``(low, high)`` row per axis.
    """

    names: tuple[str, ...]
    parents: np.ndarray
    offsets: np.ndarray
    labels: tuple[str, ...]
    dof_axes: tuple[str, ...]
    dof_limits: tuple[np.ndarray, ...]
    fingertips: tuple[int, ...]
    wrists: tuple[int, int]

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=int)
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1, 3)
        n = len(self.names)
        if len(parents) != n or len(offsets) != n or len(self.labels) != n or len(self.dof_axes) != n:
            raise ShapeMismatch("skeleton field lengths disagree")
        if parents[0] != -1 or np.any(parents[1:] < 0):
            raise GeometryError("joint 0 must be the only root")
        if np.any(parents[1:] >= np.arange(1, n)):
            raise GeometryError("parents must precede children")
        if any(lab not in ("body", "hand") for lab in self.labels):
            raise GeometryError("labels must be 'body' or 'hand'")
        if len(self.wrists) != 2:
            raise GeometryError("exactly two wrist joints required")
        limits = []
        for axes, lim in zip(self.dof_axes, self.dof_limits):
            lim = np.asarray(lim, dtype=float).reshape(-1, 2)
            if len(lim) != len(axes):
                raise ShapeMismatch("one limit row per DoF axis")
            if np.any(lim[:, 0] > lim[:, 1]):
                raise GeometryError("DoF limits must satisfy low <= high")
            limits.append(lim)
        if self.dof_axes[0]:
            raise GeometryError("the root joint carries no hinge DoFs")
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "dof_limits", tuple(limits))

    @property
    def num_joints(self) -> int:
        return len(self.names)

    @property
    def num_dofs(self) -> int:
        return sum(len(a) for a in self.dof_axes)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def body_ids(self) -> np.ndarray:
        return np.array([i for i, lab in enumerate(self.labels) if lab == "body"])

    def hand_ids(self) -> np.ndarray:
        return np.array([i for i, lab in enumerate(self.labels) if lab == "hand"])

    def chain(self, joint: int) -> list[int]:
        """Joint ids from the root down to ``joint`` inclusive."""
        out = []
        while joint >= 0:
            out.append(joint)
            joint = int(self.parents[joint])
        return out[::-1]

    def dof_table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened ``(joint id, axis id, limits)`` per DoF."""
        joints, axes, lims = [], [], []
        for j, (ax, lim) in enumerate(zip(self.dof_axes, self.dof_limits)):
            for k, a in enumerate(ax):
                joints.append(j)
                axes.append("xyz".index(a))
                lims.append(lim[k])
        return np.array(joints, dtype=int), np.array(axes, dtype=int), np.array(lims, dtype=float).reshape(-1, 2)

    def rest_positions(self) -> np.ndarray:
        pos = np.zeros((self.num_joints, 3))
        for j in range(1, self.num_joints):
            pos[j] = pos[self.parents[j]] + self.offsets[j]
        return pos


@dataclass(frozen=True)
class Pose:
    root_translation: np.ndarray
    root_orientation: Rotation
    local_rotations: np.ndarray  # (J, 4) quaternions; entry 0 composes after the root orientation

    def __post_init__(self):
        t = np.asarray(self.root_translation, dtype=float).reshape(3)
        q = quat_normalize(np.asarray(self.local_rotations, dtype=float).reshape(-1, 4))
        if not np.all(np.isfinite(q)) or not np.all(np.isfinite(t)):
            raise GeometryError("non-finite pose")
        t.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "root_translation", t)
        object.__setattr__(self, "local_rotations", q)

    @classmethod
    def identity(cls, num_joints: int) -> "Pose":
        q = np.zeros((num_joints, 4))
        q[:, 0] = 1.0
        return cls(np.zeros(3), Rotation(), q)

    def rotation(self, j: int) -> Rotation:
        return Rotation(self.local_rotations[j])

    def with_rotations(self, local_rotations) -> "Pose":
        return Pose(self.root_translation, self.root_orientation, local_rotations)


@dataclass(frozen=True)
class JointTransforms:
    rotations: np.ndarray  # (J, 4) world quaternions
    positions: np.ndarray  # (J, 3)

    def rotation(self, j: int) -> Rotation:
        return Rotation(self.rotations[j])


def fk_arrays(parents, offsets, root_pos, root_quat, local_quats):
    """Batched FK over leading axes of ``root_pos``/``root_quat``/``local_quats``."""
    local_quats = np.asarray(local_quats, dtype=float)
    n = local_quats.shape[-2]
    rots = np.empty(local_quats.shape)
    pos = np.empty(local_quats.shape[:-1] + (3,))
    rots[..., 0, :] = quat_mul(root_quat, local_quats[..., 0, :])
    pos[..., 0, :] = root_pos
    for j in range(1, n):
        p = parents[j]
        pos[..., j, :] = pos[..., p, :] + quat_rotate(rots[..., p, :], offsets[j])
        rots[..., j, :] = quat_mul(rots[..., p, :], local_quats[..., j, :])
    return rots, pos


def forward_kinematics(skel: Skeleton, pose: Pose) -> JointTransforms:
    if pose.local_rotations.shape[0] != skel.num_joints:
        raise ShapeMismatch(
            f"pose has {pose.local_rotations.shape[0]} joints, skeleton has {skel.num_joints}")
    rots, pos = fk_arrays(skel.parents, skel.offsets, pose.root_translation,
                          pose.root_orientation.quat, pose.local_rotations)
    return JointTransforms(rots, pos)


# ---------------------------------------------------------------------------
# hinge-DoF conversions

_AXES = np.eye(3)


def hinge_quats(axes: str, angles) -> np.ndarray:
    """Local rotation from sequential hinge angles (..., len(axes))."""
    angles = np.asarray(angles, dtype=float)
    q = np.zeros(angles.shape[:-1] + (4,))
    q[..., 0] = 1.0
    for k, a in enumerate(axes):
        q = quat_mul(q, quat_from_axis_angle(angles[..., k:k + 1] * _AXES["xyz".index(a)]))
    return q


def hinge_angles(axes: str, q) -> np.ndarray:
    """Best-effort inverse of :func:`hinge_quats` (exact for 3-axis and 1-axis joints)."""
    q = quat_normalize(q)
    if len(axes) == 0:
        return np.zeros(q.shape[:-1] + (0,))
    if len(axes) == 1:
        a = _AXES["xyz".index(axes)]
        q = np.where(q[..., :1] < 0, -q, q)
        return (2.0 * np.arctan2(q[..., 1:] @ a, q[..., 0]))[..., None]
    from scipy.spatial.transform import Rotation as _R

    flat = q.reshape(-1, 4)
    xyzw = np.concatenate([flat[:, 1:], flat[:, :1]], axis=1)
    seq = axes.upper() if len(axes) == 3 else (axes + [c for c in "xyz" if c not in axes][0]).upper()
    ang = _R.from_quat(xyzw).as_euler(seq)
    return ang[:, :len(axes)].reshape(q.shape[:-1] + (len(axes),))


def pose_to_dofs(skel: Skeleton, local_rotations) -> np.ndarray:
    """Hinge angles (..., D) for local rotations (..., J, 4)."""
    local_rotations = np.asarray(local_rotations, dtype=float)
    parts = [hinge_angles(ax, local_rotations[..., j, :]) for j, ax in enumerate(skel.dof_axes) if ax]
    return np.concatenate(parts, axis=-1)


def dofs_to_local_rotations(skel: Skeleton, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    out = np.zeros(q.shape[:-1] + (skel.num_joints, 4))
    out[..., 0] = 1.0
    k = 0
    for j, ax in enumerate(skel.dof_axes):
        if ax:
            out[..., j, :] = hinge_quats(ax, q[..., k:k + len(ax)])
            k += len(ax)
    return out
