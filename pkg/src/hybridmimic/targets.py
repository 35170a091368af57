"""Hybrid imitation targets: 3D human reference, 2D object tracks and contact labels."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (CameraModel, Rotation, Skeleton, dofs_to_local_rotations, fk_arrays, quat_from_axis_angle,
                       quat_mul, quat_to_matrix)
from .io import read_sections, write_sections


class TargetsError(ValueError):
    pass


class NoVisibleVertices(TargetsError):
    pass


class LengthMismatch(TargetsError):
    pass


class InvalidScenario(TargetsError):
    pass


# ---------------------------------------------------------------------------
# tracks

@dataclass
class TrackSet:
    points: np.ndarray  # (T, M, 2) pixels
    visible: np.ndarray  # (T, M) bool
    width: int = 1024
    height: int = 576

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(len(self.points), -1, 2)
        self.visible = np.asarray(self.visible, dtype=bool).reshape(self.points.shape[:2])

    @property
    def num_frames(self) -> int:
        return self.points.shape[0]

    @property
    def num_points(self) -> int:
        return self.points.shape[1]

    def save(self, path) -> None:
        lines = ["format-version 1", f"tracks {self.num_points} {self.num_frames} {self.width} {self.height}"]
        for t in range(self.num_frames):
            for (u, v), vis in zip(self.points[t], self.visible[t]):
                lines.append(f"{float(u)!r} {float(v)!r} {int(vis)}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "TrackSet":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0].split()[:2] != ["format-version", "1"]:
            raise TargetsError(f"{path}: missing or unsupported format-version")
        head = lines[1].split()
        if head[0] != "tracks":
            raise TargetsError(f"{path}: expected 'tracks M T W H' header")
        m, t, w, h = (int(x) for x in head[1:5])
        rows = np.array([[float(x) for x in ln.split()] for ln in lines[2:2 + m * t]]).reshape(t, m, 3)
        return cls(rows[..., :2], rows[..., 2] > 0.5, w, h)


def track_speeds(tracks: TrackSet) -> np.ndarray:
    """Mean per-point pixel displacement between consecutive frames; entry 0 is undefined (nan)."""
    s = np.full(tracks.num_frames, np.nan)
    if tracks.num_frames > 1:
        s[1:] = np.linalg.norm(np.diff(tracks.points, axis=0), axis=-1).mean(axis=1)
    return s


# ---------------------------------------------------------------------------
# visibility

def occluded(origin, points, triangles, eps: float = 1e-9) -> np.ndarray:
    """Whether the segment from ``origin`` to each point crosses any triangle before reaching it.

    Moller-Trumbore on all (point, triangle) pairs; hits at parameter t >= 1 - 1e-6
    (the point's own surface) do not count.
    """
    origin = np.asarray(origin, dtype=float)
    d = np.asarray(points, dtype=float) - origin  # (P, 3), target at t = 1
    a, b, c = triangles[:, 0], triangles[:, 1], triangles[:, 2]
    e1, e2 = b - a, c - a
    p = np.cross(d[:, None, :], e2[None])  # (P, F, 3)
    det = np.einsum("fk,pfk->pf", e1, p)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin - a  # (F, 3)
    u = np.einsum("fk,pfk->pf", s, p) * inv
    q = np.cross(s, e1)  # (F, 3)
    v = np.einsum("pk,fk->pf", d, q) * inv
    t = np.einsum("fk,fk->f", e2, q)[None] * inv
    tol = 1e-9  # rays along a shared edge must not slip between its two triangles
    hit = ok & (u >= -tol) & (v >= -tol) & (u + v <= 1 + tol) & (t > 1e-9) & (t < 1.0 - 1e-6)
    return hit.any(axis=1)


def visible_vertices(vertices, faces, cam: CameraModel) -> np.ndarray:
    """Vertices (world frame) in front of the camera, inside the image and not self-occluded."""
    vertices = np.asarray(vertices, dtype=float)
    pc = cam.to_camera(vertices)
    front = pc[:, 2] > 1e-6
    px = cam.project_camera(pc, allow_behind=True)
    vis = front & cam.in_image(px)
    idx = np.flatnonzero(vis)
    if len(idx):
        vis[idx] = ~occluded(cam.center, vertices[idx], vertices[np.asarray(faces)])
    return vis


def object_vertices_world(vertices, positions, quats) -> np.ndarray:
    R = quat_to_matrix(np.asarray(quats, dtype=float))
    return np.einsum("fab,vb->fva", R, np.asarray(vertices, dtype=float)) + np.asarray(positions)[:, None]


def make_object_reference(vertices, faces, positions, quats, cam: CameraModel, m: int = 128,
                          min_visible_fraction: float = 0.5) -> tuple[TrackSet, np.ndarray]:
    """Track object vertices visible in the first frame through every frame.

    Up to ``m`` visible vertices are chosen (evenly spaced over the visible set);
    points visible in fewer than ``min_visible_fraction`` of the frames are
    dropped. Returns the tracks and the mesh vertex ids they follow.
    """
    world = object_vertices_world(vertices, positions, quats)
    vis0 = visible_vertices(world[0], faces, cam)
    cand = np.flatnonzero(vis0)
    if len(cand) == 0:
        raise NoVisibleVertices("no object vertex is visible in the first frame")
    if len(cand) > m:
        cand = cand[np.round(np.linspace(0, len(cand) - 1, m)).astype(int)]
    vis = np.empty((len(world), len(cand)), dtype=bool)
    vis[0] = True
    for t in range(1, len(world)):
        vis[t] = visible_vertices(world[t], faces, cam)[cand]
    keep = vis.mean(axis=0) >= min_visible_fraction
    if not keep.any():
        raise NoVisibleVertices("every tracked vertex is occluded too often")
    cand, vis = cand[keep], vis[:, keep]
    pts = cam.project_camera(cam.to_camera(world[:, cand]), allow_behind=True)
    return TrackSet(pts, vis, cam.width, cam.height), cand


# ---------------------------------------------------------------------------
# contact labels

def backward_fill(labels, s_obj, s_hand, tau: float) -> np.ndarray:
    """Extend contact backwards over frames where neither hand nor object moves (stops at t = 2)."""
    c = np.array(labels, dtype=int)
    for t in range(len(c) - 2, 0, -1):  # 0-based t = T-2 .. 1
        if c[t + 1] == 1 and s_obj[t] < tau and s_hand[t] < tau:
            c[t] = 1
    return c


def forward_labels(s_obj, s_hand, tau: float) -> np.ndarray:
    """Forward pass only: object motion sets 1, hand-only motion resets to 0, stillness carries."""
    s_obj = np.asarray(s_obj, dtype=float)
    s_hand = np.asarray(s_hand, dtype=float)
    if len(s_obj) != len(s_hand):
        raise LengthMismatch("object and hand speed sequences differ in length")
    c = np.zeros(len(s_obj), dtype=int)
    for t in range(1, len(c)):
        if s_obj[t] >= tau:
            c[t] = 1
        elif s_hand[t] >= tau:
            c[t] = 0
        else:
            c[t] = c[t - 1]
    return c


def contact_labels_from_speeds(s_obj, s_hand, tau: float) -> np.ndarray:
    return backward_fill(forward_labels(s_obj, s_hand, tau), s_obj, s_hand, tau)


def estimate_contact_labels(X: TrackSet, H: TrackSet, tau: float) -> np.ndarray:
    """Binary per-frame contact labels from object tracks ``X`` and hand keypoints ``H``."""
    if X.num_frames != H.num_frames:
        raise LengthMismatch(f"object tracks have {X.num_frames} frames, hand tracks {H.num_frames}")
    if not tau > 0:
        raise TargetsError("tau must be positive")
    return contact_labels_from_speeds(track_speeds(X), track_speeds(H), tau)


# ---------------------------------------------------------------------------
# wrist unification

def unify_wrist(chain_rotations, hand_global: Rotation) -> Rotation:
    """Local wrist rotation that makes the body chain reproduce a separately estimated global hand rotation."""
    chain = list(chain_rotations)
    if not chain:
        raise TargetsError("empty rotation chain")
    g = chain[0]
    for r in chain[1:]:
        g = g * r
    return g.inv() * hand_global


# ---------------------------------------------------------------------------
# hybrid target

@dataclass
class HybridTarget:
    fps: float
    camera: CameraModel
    labels: tuple  # per joint 'body' | 'hand'
    parents: np.ndarray
    wrists: tuple
    fingertips: tuple
    root_translation: np.ndarray  # (F, 3)
    root_orientation: np.ndarray  # (F, 4)
    local_rotations: np.ndarray  # (F, J, 4)
    joint_positions: np.ndarray  # (F, J, 3)
    keypoints_2d: np.ndarray  # (F, J, 2) observed body and hand keypoints
    tracks: TrackSet
    vertex_ids: np.ndarray  # (M,) ids into the object mesh
    contact: np.ndarray  # (F, 2) labels per (left, right) hand
    object_position: np.ndarray = field(default_factory=lambda: np.zeros(3))  # first-frame object pose
    object_quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))

    def __post_init__(self):
        f = len(self.joint_positions)
        if f < 2:
            raise TargetsError("a target needs at least two frames")
        if self.tracks.num_frames != f or len(self.contact) != f or len(self.local_rotations) != f:
            raise LengthMismatch("human, object and contact parts disagree on frame count")
        self.contact = np.asarray(self.contact, dtype=int).reshape(f, 2)

    @property
    def num_frames(self) -> int:
        return len(self.joint_positions)

    @property
    def body_ids(self) -> np.ndarray:
        return np.array([i for i, lab in enumerate(self.labels) if lab == "body"])

    @property
    def hand_ids(self) -> np.ndarray:
        return np.array([i for i, lab in enumerate(self.labels) if lab == "hand"])

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.num_frames) / self.fps

    def frame_at(self, t) -> np.ndarray:
        """Nearest reference frame index for time(s) ``t`` in seconds."""
        return np.clip(np.rint(np.asarray(t) * self.fps).astype(int), 0, self.num_frames - 1)

    def first_contact(self) -> int | None:
        any_c = self.contact.max(axis=1)
        hit = np.flatnonzero(any_c)
        return int(hit[0]) if len(hit) else None

    def save(self, path) -> None:
        cam = self.camera
        write_sections(path, {
            "camera": {"focal": cam.focal, "cx": cam.cx, "cy": cam.cy, "width": cam.width, "height": cam.height,
                       "rotation": cam.rotation.quat, "translation": np.array(cam.translation)},
            "human": {"frames": self.num_frames, "fps": self.fps, "joints": len(self.labels),
                      "labels": ",".join(self.labels), "parents": np.asarray(self.parents, dtype=int),
                      "wrists": np.asarray(self.wrists, dtype=int), "fingertips": np.asarray(self.fingertips, dtype=int),
                      "root_translation": self.root_translation, "root_orientation": self.root_orientation,
                      "local_rotations": self.local_rotations, "joint_positions": self.joint_positions,
                      "keypoints_2d": self.keypoints_2d},
            "object": {"points": self.tracks.num_points, "position": self.object_position,
                       "quat": self.object_quat, "vertex_ids": np.asarray(self.vertex_ids, dtype=int),
                       "pixels": self.tracks.points, "visible": self.tracks.visible.astype(int)},
            "contact": {"labels": self.contact},
        })

    @classmethod
    def load(cls, path) -> "HybridTarget":
        s = read_sections(path)
        try:
            c, h, o = s["camera"], s["human"], s["object"]
            cam = CameraModel(float(c["focal"]), float(c["cx"]), float(c["cy"]), int(c["width"]), int(c["height"]),
                              Rotation(c["rotation"]), c["translation"])
            tracks = TrackSet(o["pixels"], o["visible"] > 0.5, cam.width, cam.height)
            return cls(float(h["fps"]), cam, tuple(str(h["labels"]).split(",")), h["parents"].astype(int),
                       tuple(int(x) for x in h["wrists"]), tuple(int(x) for x in h["fingertips"]),
                       h["root_translation"], h["root_orientation"], h["local_rotations"], h["joint_positions"],
                       h["keypoints_2d"], tracks, o["vertex_ids"].astype(int), s["contact"]["labels"].astype(int),
                       o["position"], o["quat"])
        except KeyError as exc:
            raise TargetsError(f"{path}: missing field {exc}") from exc


@dataclass
class NoiseConfig:
    joint_sigma: float = 0.0  # RMS 3D joint-position noise (m)
    rot_sigma: float = 0.0  # per-joint local rotation noise (rad, RMS angle)
    arm_bias: float = 0.0  # constant rotation offset on the interacting arm's shoulder and elbow (rad)
    pixel_sigma: float = 0.0  # 2D keypoint noise (px, per axis)
    track_sigma: float = 0.0  # 2D object-track noise (px, per axis)
    num_tracks: int = 128
    contact_tau: float = 0.6  # px per frame
    contact_gate: float = 0.2  # a labelled hand must come this close (m) to the resting object


def _random_rotvecs(rng, shape, sigma):
    """Isotropic rotation vectors with RMS angle ``sigma``."""
    return rng.normal(size=shape + (3,)) * (sigma / np.sqrt(3.0))


def hand_keypoint_ids(skel_parents, labels, wrist: int) -> np.ndarray:
    ids = [wrist]
    for j in range(len(labels)):
        p = j
        while p >= 0 and p != wrist:
            p = int(skel_parents[p])
        if p == wrist and j != wrist and labels[j] == "hand":
            ids.append(j)
    return np.array(ids)


def contact_labels_per_hand(tracks: TrackSet, keypoints_2d, joint_positions, object_points, parents, labels,
                            wrists, tau: float, gate: float) -> np.ndarray:
    """Run the contact estimator once per hand.

    A hand keeps its labels only if, on some labelled frame, one of its 3D
    joints comes within ``gate`` metres of the object's first-frame vertices.
    """
    out = np.zeros((tracks.num_frames, 2), dtype=int)
    object_points = np.asarray(object_points, dtype=float)
    for side, w in enumerate(wrists):
        ids = hand_keypoint_ids(parents, labels, w)
        H = TrackSet(keypoints_2d[:, ids], np.ones((tracks.num_frames, len(ids)), bool), tracks.width, tracks.height)
        lab = estimate_contact_labels(tracks, H, tau)
        on = np.flatnonzero(lab)
        if len(on) == 0:
            continue
        d = np.linalg.norm(joint_positions[on][:, ids, None, :] - object_points[None, None], axis=-1)
        if d.min() <= gate:
            out[:, side] = lab
    return out


def synth_reference(scenario, noise: NoiseConfig | None = None, seed: int = 0) -> HybridTarget:
    """Render a scenario's scripted ground truth into a noisy hybrid target."""
    noise = noise or NoiseConfig()
    skel: Skeleton = scenario.skeleton
    if scenario.joint_angles.shape[1] != skel.num_dofs or scenario.num_frames < 2:
        raise InvalidScenario("scenario motion does not match its skeleton")
    rng = np.random.default_rng(seed)
    f, j = scenario.num_frames, skel.num_joints
    cam = scenario.camera
    local = dofs_to_local_rotations(skel, scenario.joint_angles)
    root_t = np.repeat(np.asarray(scenario.root_position, dtype=float)[None], f, axis=0)
    root_q = np.repeat(np.asarray(scenario.root_quat, dtype=float)[None], f, axis=0)
    _, gt_pos = fk_arrays(skel.parents, skel.offsets, root_t, root_q, local)

    has_dof = np.array([bool(a) for a in skel.dof_axes])
    if noise.arm_bias > 0:
        side = "lr"[scenario.interacting_hand]
        for name in (f"{side}_shoulder", f"{side}_elbow"):
            k = skel.index(name)
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            local[:, k] = quat_mul(local[:, k], quat_from_axis_angle(noise.arm_bias * axis))
    if noise.rot_sigma > 0:
        dq = quat_from_axis_angle(_random_rotvecs(rng, (f, j), noise.rot_sigma))
        local[:, has_dof] = quat_mul(local[:, has_dof], dq[:, has_dof])
    if noise.arm_bias > 0 or noise.rot_sigma > 0:
        _, pos = fk_arrays(skel.parents, skel.offsets, root_t, root_q, local)
    else:
        pos = gt_pos.copy()
    if noise.joint_sigma > 0:
        pos = pos + rng.normal(size=pos.shape) * (noise.joint_sigma / np.sqrt(3.0))

    kp = cam.project_camera(cam.to_camera(gt_pos), allow_behind=True)
    if noise.pixel_sigma > 0:
        kp = kp + rng.normal(size=kp.shape) * noise.pixel_sigma
    tracks, ids = make_object_reference(scenario.box_vertices, scenario.box_faces, scenario.object_positions,
                                        scenario.object_quats, cam, noise.num_tracks)
    if noise.track_sigma > 0:
        tracks.points = tracks.points + rng.normal(size=tracks.points.shape) * noise.track_sigma
    obj0 = object_vertices_world(scenario.box_vertices, scenario.object_positions[:1], scenario.object_quats[:1])[0]
    contact = contact_labels_per_hand(tracks, kp, pos, obj0, skel.parents, skel.labels, skel.wrists,
                                      noise.contact_tau, noise.contact_gate)
    return HybridTarget(scenario.fps, cam, tuple(skel.labels), skel.parents.copy(), tuple(skel.wrists),
                        tuple(skel.fingertips), root_t, root_q, local, pos, kp, tracks, ids, contact,
                        np.array(scenario.object_positions[0], dtype=float), np.array(scenario.object_quats[0], dtype=float))
