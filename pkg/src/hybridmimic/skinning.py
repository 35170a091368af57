"""Skinning-weight transfer between meshes and linear blend skinning."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Pose, ShapeMismatch, Skeleton, forward_kinematics, quat_to_matrix


class SkinningError(ValueError):
    pass


class EmptySource(SkinningError):
    pass


class NonFiniteInput(SkinningError):
    pass


@dataclass(frozen=True)
class SkinnedMesh:
    vertices: np.ndarray  # (N, 3)
    weights: np.ndarray  # (N, J), rows convex
    offsets: np.ndarray  # (N, 3), rest-frame displacement added before skinning
    faces: np.ndarray  # (F, 3) int

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=float).reshape(len(v), -1)
        o = np.asarray(self.offsets, dtype=float).reshape(len(v), 3)
        f = np.asarray(self.faces, dtype=int).reshape(-1, 3)
        if np.any(w < -1e-12) or np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-6):
            raise SkinningError("skinning weights must be convex per vertex")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise SkinningError("face index out of range")
        for name, arr in (("vertices", v), ("weights", w), ("offsets", o), ("faces", f)):
            object.__setattr__(self, name, arr)

    @property
    def num_joints(self) -> int:
        return self.weights.shape[1]


def transfer_skinning(target, source, source_weights, source_offsets, k: int = 16,
                      sigma: float = 0.05, faces=None) -> SkinnedMesh:
    """Blend the K nearest source vertices' weights and offsets onto ``target``.

    Blending coefficients are a softmax of ``-|x - v|^2 / (2 sigma^2)`` over the
    K neighbours; the blended weights are renormalised to sum to one.
    """
    target = np.asarray(target, dtype=float).reshape(-1, 3)
    source = np.asarray(source, dtype=float).reshape(-1, 3)
    if len(source) == 0:
        raise EmptySource("no source vertices")
    src_w = np.asarray(source_weights, dtype=float).reshape(len(source), -1)
    src_o = np.asarray(source_offsets, dtype=float).reshape(len(source), 3)
    if not (1 <= k <= len(source)):
        raise SkinningError(f"K must lie in [1, {len(source)}], got {k}")
    if not sigma > 0:
        raise SkinningError("sigma must be positive")
    for arr in (target, source, src_w, src_o):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteInput("non-finite skinning input")

    d2 = np.sum((target[:, None, :] - source[None, :, :]) ** 2, axis=-1)
    # stable sort keeps the earliest source index on distance ties
    nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
    s = -np.take_along_axis(d2, nn, axis=1) / (2.0 * sigma**2)
    s -= s.max(axis=1, keepdims=True)
    alpha = np.exp(s)
    alpha /= alpha.sum(axis=1, keepdims=True)

    weights = np.einsum("nk,nkj->nj", alpha, src_w[nn])
    weights = np.clip(weights, 0.0, None)
    weights /= weights.sum(axis=1, keepdims=True)
    offsets = np.einsum("nk,nkc->nc", alpha, src_o[nn])
    return SkinnedMesh(target, weights, offsets, np.zeros((0, 3), int) if faces is None else faces)


def lbs_deform(mesh: SkinnedMesh, skel: Skeleton, pose: Pose) -> np.ndarray:
    if mesh.num_joints != skel.num_joints:
        raise ShapeMismatch(f"mesh weights cover {mesh.num_joints} joints, skeleton has {skel.num_joints}")
    rest = skel.rest_positions()
    world = forward_kinematics(skel, pose)
    rmats = quat_to_matrix(world.rotations)  # (J, 3, 3)
    local = (mesh.vertices + mesh.offsets)[:, None, :] - rest[None, :, :]  # (N, J, 3)
    per_joint = np.einsum("jab,njb->nja", rmats, local) + world.positions[None]
    return np.einsum("nj,nja->na", mesh.weights, per_joint)


def procedural_body_mesh(skel: Skeleton, samples_per_bone: int = 6, radius: float = 0.04,
                         seed: int = 0) -> SkinnedMesh:
    """Points scattered on capsules around each bone, rigidly weighted to the bone's parent joint.

    Serves as an annotated source mesh for :func:`transfer_skinning`.
    """
    rng = np.random.default_rng(seed)
    rest = skel.rest_positions()
    verts, owners = [], []
    for j in range(1, skel.num_joints):
        p = skel.parents[j]
        a, b = rest[p], rest[j]
        for t in np.linspace(0.0, 1.0, samples_per_bone):
            d = rng.normal(size=(4, 3))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            verts.append(a + t * (b - a) + radius * d)
            owners.extend([p] * 4)
    verts = np.concatenate(verts)
    weights = np.zeros((len(verts), skel.num_joints))
    weights[np.arange(len(verts)), owners] = 1.0
    return SkinnedMesh(verts, weights, np.zeros_like(verts), np.zeros((0, 3), int))


# ---------------------------------------------------------------------------
# I/O: Wavefront-style v/f lines plus a sidecar of per-vertex weights and offsets

def write_obj(path, vertices, faces) -> None:
    lines = ["# format-version 1"]
    lines += ["v {:.9g} {:.9g} {:.9g}".format(*v) for v in np.asarray(vertices)]
    lines += ["f {} {} {}".format(*(np.asarray(f) + 1)) for f in np.asarray(faces, dtype=int).reshape(-1, 3)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=int).reshape(-1, 3)


def write_skinned_mesh(obj_path, sidecar_path, mesh: SkinnedMesh) -> None:
    write_obj(obj_path, mesh.vertices, mesh.faces)
    header = f"format-version 1\nskin {len(mesh.vertices)} {mesh.num_joints}"
    rows = np.concatenate([mesh.weights, mesh.offsets], axis=1)
    np.savetxt(sidecar_path, rows, fmt="%.9g", header=header, comments="")


def read_skinned_mesh(obj_path, sidecar_path) -> SkinnedMesh:
    verts, faces = read_obj(obj_path)
    lines = Path(sidecar_path).read_text().splitlines()
    if not lines[0].startswith("format-version"):
        raise SkinningError("sidecar missing format-version line")
    _, n, j = lines[1].split()
    rows = np.loadtxt(lines[2:], ndmin=2)
    if rows.shape != (int(n), int(j) + 3) or int(n) != len(verts):
        raise SkinningError("sidecar does not match mesh")
    return SkinnedMesh(verts, rows[:, :int(j)], rows[:, int(j):], faces)
