"""The desk scene: skeleton, physical humanoid, box, camera and a scripted reach-and-slide motion."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy.optimize import least_squares

from .geometry import (CameraModel, Pose, Rotation, Skeleton, dofs_to_local_rotations, fk_arrays,
                       quat_to_matrix)
from .sim import Humanoid, PhysicsWorld, RigidObject

FORMAT_VERSION = 1

# ---------------------------------------------------------------------------
# skeleton

_FINGER_LATERAL = (-0.025, 0.0, 0.025)


def desk_skeleton() -> Skeleton:
    """25-joint upper body facing +y (z up, subject's right = +x) with three two-link fingers per hand."""
    names, parents, offsets, labels, axes, limits = [], [], [], [], [], []

    def add(name, parent, offset, label, ax="", lim=()):
        names.append(name)
        parents.append(parent)
        offsets.append(offset)
        labels.append(label)
        axes.append(ax)
        limits.append(np.asarray(lim, dtype=float).reshape(-1, 2))
        return len(names) - 1

    add("pelvis", -1, (0, 0, 0), "body")
    spine_lim = [(-0.3, 0.6), (-0.3, 0.3), (-0.4, 0.4)]
    s1 = add("spine1", 0, (0, 0, 0.12), "body", "xyz", spine_lim)
    s2 = add("spine2", s1, (0, 0, 0.15), "body", "xyz", spine_lim)
    nk = add("neck", s2, (0, 0, 0.22), "body", "xyz", [(-0.5, 0.7), (-0.4, 0.4), (-0.8, 0.8)])
    add("head", nk, (0, 0, 0.10), "body", "xyz", [(-0.5, 0.5), (-0.3, 0.3), (-0.6, 0.6)])
    wrists = []
    for side, sx in (("l", -1.0), ("r", 1.0)):
        cl = add(f"{side}_clavicle", s2, (0.04 * sx, 0, 0.18), "body", "xyz", [(-0.3, 0.3)] * 3)
        # abduction about y moves the left arm with positive angles and the right with negative ones
        ylim = (-0.3, 1.6) if sx < 0 else (-1.6, 0.3)
        sh = add(f"{side}_shoulder", cl, (0.14 * sx, 0, 0), "body", "xyz", [(-0.8, 2.8), ylim, (-1.2, 1.2)])
        el = add(f"{side}_elbow", sh, (0, 0, -0.28), "body", "x", [(0.0, 2.5)])
        wrists.append(add(f"{side}_wrist", el, (0, 0, -0.26), "body", "xyz", [(-1.0, 1.0), (-0.5, 0.5), (-1.2, 1.2)]))
    tips = []
    for side, w in zip("lr", wrists):
        for k, lat in enumerate(_FINGER_LATERAL):
            b = add(f"{side}_finger{k}", w, (lat, 0, -0.09), "hand", "x", [(-0.2, 1.6)])
            tips.append(add(f"{side}_finger{k}_tip", b, (0, 0, -0.07), "hand"))
    return Skeleton(tuple(names), np.array(parents), np.array(offsets, dtype=float), tuple(labels),
                    tuple(axes), tuple(limits), tuple(tips), (wrists[0], wrists[1]))


# mass (kg), centre of mass in the joint frame, (kp, kd, torque limit, armature) per joint kind
_LINKS = {
    "pelvis": (10.0, (0, 0, 0)),
    "spine1": (8.0, (0, 0, 0.075)),
    "spine2": (12.0, (0, 0, 0.11)),
    "neck": (1.0, (0, 0, 0.05)),
    "head": (5.0, (0, 0, 0.08)),
    "clavicle": (1.5, (0.07, 0, 0)),
    "shoulder": (2.0, (0, 0, -0.14)),
    "elbow": (1.3, (0, 0, -0.13)),
    "wrist": (0.4, (0, 0, -0.045)),
    "finger": (0.02, (0, 0, -0.035)),
    "tip": (0.0, (0, 0, 0)),
}
_GAINS = {
    "spine": (800.0, 80.0, 300.0, 0.2),
    "neck": (100.0, 10.0, 50.0, 0.05),
    "head": (100.0, 10.0, 50.0, 0.05),
    "clavicle": (300.0, 30.0, 100.0, 0.1),
    "shoulder": (300.0, 30.0, 150.0, 0.1),
    "elbow": (150.0, 15.0, 80.0, 0.06),
    "wrist": (30.0, 3.0, 20.0, 0.03),
    "finger": (5.0, 0.3, 3.0, 0.01),
}


def _kind(name: str) -> str:
    base = name.split("_", 1)[-1] if name[:2] in ("l_", "r_") else name
    if base.startswith("finger"):
        return "tip" if base.endswith("tip") else "finger"
    return base


def desk_humanoid(skel: Skeleton | None = None, root_free: bool = False) -> Humanoid:
    skel = skel or desk_skeleton()
    mass, com = [], []
    for name in skel.names:
        m, c = _LINKS[_kind(name)]
        c = np.array(c, dtype=float)
        if name.startswith("l_clavicle"):
            c[0] = -c[0]
        mass.append(m)
        com.append(c)
    kp, kd, tl, arm = [], [], [], []
    for name, ax in zip(skel.names, skel.dof_axes):
        kind = _kind(name)
        g = _GAINS["spine" if kind.startswith("spine") else kind] if ax else None
        for _ in ax:
            kp.append(g[0])
            kd.append(g[1])
            tl.append(g[2])
            arm.append(g[3])

    sj, sl, sr = [], [], []

    def sphere(joint, local, r):
        sj.append(skel.index(joint) if isinstance(joint, str) else joint)
        sl.append(local)
        sr.append(r)
        return len(sj) - 1

    sphere("pelvis", (0, 0, 0.02), 0.11)
    sphere("spine2", (0, 0, 0.08), 0.13)
    sphere("head", (0, 0, 0.08), 0.10)
    sensors = []
    for side in "lr":
        sphere(f"{side}_shoulder", (0, 0, -0.14), 0.045)
        sphere(f"{side}_elbow", (0, 0, 0), 0.04)
        sphere(f"{side}_elbow", (0, 0, -0.13), 0.035)
        row = [sphere(f"{side}_wrist", (0, 0, -0.05), 0.03)]
        for k in range(3):
            sphere(f"{side}_finger{k}", (0, 0, -0.035), 0.01)
            row.append(sphere(f"{side}_finger{k}_tip", (0, 0, 0), 0.01))
        sensors.append(row)
    return Humanoid(skel, np.array(mass), np.array(com), np.array(kp), np.array(kd), np.array(tl),
                    np.array(arm), np.array(sj), np.array(sl, dtype=float), np.array(sr), np.array(sensors),
                    root_free=root_free)


# ---------------------------------------------------------------------------
# box

def box_mesh(size: float = 0.12, n: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Surface of a cube centred at the origin, each face split into an ``n`` x ``n`` grid."""
    h = size / 2.0
    grid = np.linspace(-h, h, n + 1)
    verts, faces, index = [], [], {}

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = [a for a in range(3) if a != axis]
            ids = np.empty((n + 1, n + 1), dtype=int)
            for i, u in enumerate(grid):
                for j, v in enumerate(grid):
                    p = np.zeros(3)
                    p[axis], p[u_ax], p[v_ax] = sign * h, u, v
                    ids[i, j] = vid(p)
            for i in range(n):
                for j in range(n):
                    a, b, c, d = ids[i, j], ids[i + 1, j], ids[i + 1, j + 1], ids[i, j + 1]
                    tri = [(a, b, c), (a, c, d)]
                    # orient outward: (b - a) x (c - a) along +axis * sign
                    pa, pb, pc = np.array(verts[a]), np.array(verts[b]), np.array(verts[c])
                    if np.cross(pb - pa, pc - pa)[axis] * sign < 0:
                        tri = [(a, c, b), (a, d, c)]
                    faces.extend(tri)
    return np.array(verts), np.array(faces, dtype=int)


# ---------------------------------------------------------------------------
# scenario

@dataclass
class ScenarioConfig:
    seed: int = 0
    fps: float = 30.0
    pelvis_height: float = 0.85
    box_size: float = 0.12
    box_mass: float = 1.5
    box_subdiv: int = 8
    box_xy: tuple = (0.20, 0.40)
    push_distance: float = 0.10
    contact_depth: float = 0.003
    table_xy: tuple = (0.0, 0.4)
    table_dims: tuple = (1.0, 0.5, 0.8)
    camera_radius: float = 1.2
    camera_elevation: float = 30.0
    camera_azimuth: float = 20.0
    camera_target: tuple = (0.1, 0.25, 0.95)
    image_size: tuple = (1024, 576)
    jitter: float = 0.01  # seeded box placement jitter along x (m)
    # (name, start, end) phase boundaries in seconds
    phases: tuple = (("rest", 0.0, 0.3), ("lift", 0.3, 0.9), ("approach", 0.9, 1.3), ("contact", 1.3, 1.5),
                     ("settle", 1.5, 1.7), ("push", 1.7, 2.5), ("hold", 2.5, 2.8))


@dataclass
class Scenario:
    config: ScenarioConfig
    skeleton: Skeleton
    box_vertices: np.ndarray
    box_faces: np.ndarray
    camera: CameraModel
    root_position: np.ndarray
    root_quat: np.ndarray
    object_position: np.ndarray  # initial object pose
    object_quat: np.ndarray
    times: np.ndarray  # (F,)
    joint_angles: np.ndarray  # (F, D) scripted ground-truth hinge angles
    object_positions: np.ndarray  # (F, 3)
    object_quats: np.ndarray  # (F, 4)
    interacting_hand: int = 1  # 0 left, 1 right
    metadata: dict = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return len(self.times)

    @property
    def fps(self) -> float:
        return self.config.fps

    def humanoid(self, root_free: bool = False) -> Humanoid:
        return desk_humanoid(self.skeleton, root_free)

    def world(self, **overrides) -> PhysicsWorld:
        c = self.config
        center, half = PhysicsWorld.table_from_xy(c.table_xy, c.table_dims)
        obj = RigidObject.box(self.box_vertices, self.box_faces, c.box_mass, c.box_size)
        kw = dict(table_center=center, table_half=half)
        kw.update(overrides)
        return PhysicsWorld(self.humanoid(), obj, **kw)

    def pose(self, frame: int) -> Pose:
        return Pose(self.root_position, Rotation(self.root_quat),
                    dofs_to_local_rotations(self.skeleton, self.joint_angles[frame]))

    def local_rotations(self) -> np.ndarray:
        return dofs_to_local_rotations(self.skeleton, self.joint_angles)

    def joint_positions(self) -> np.ndarray:
        """World joint positions for every frame (F, J, 3)."""
        _, pos = fk_arrays(self.skeleton.parents, self.skeleton.offsets, self.root_position,
                           self.root_quat, self.local_rotations())
        return pos

    def joint_velocities(self) -> np.ndarray:
        """Finite-difference hinge velocities (F, D)."""
        return np.gradient(self.joint_angles, 1.0 / self.fps, axis=0)

    def object_vertices(self) -> np.ndarray:
        """World object vertices per frame (F, V, 3)."""
        R = quat_to_matrix(self.object_quats)
        return np.einsum("fab,vb->fva", R, self.box_vertices) + self.object_positions[:, None]

    def phase_frames(self, name: str) -> tuple[int, int]:
        for n, a, b in self.config.phases:
            if n == name:
                return int(round(a * self.fps)), int(round(b * self.fps))
        raise KeyError(name)


def _camera(c: ScenarioConfig) -> CameraModel:
    el, az = np.radians(c.camera_elevation), np.radians(c.camera_azimuth)
    target = np.array(c.camera_target, dtype=float)
    eye = target + c.camera_radius * np.array([np.sin(az) * np.cos(el), np.cos(az) * np.cos(el), np.sin(el)])
    return CameraModel.looking_at(eye, target, *c.image_size)


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


class _ArmIK:
    """Least-squares placement of one hand's middle fingertip with the fingers pointing along +y."""

    def __init__(self, skel: Skeleton, root_pos, side: str = "r"):
        self.skel = skel
        self.root_pos = np.asarray(root_pos, dtype=float)
        dof_joint, _, lims = skel.dof_table()
        names = [f"{side}_clavicle", f"{side}_shoulder", f"{side}_elbow", f"{side}_wrist"]
        ids = [skel.index(n) for n in names]
        self.free = np.flatnonzero(np.isin(dof_joint, ids))
        self.lo, self.hi = lims[self.free, 0], lims[self.free, 1]
        self.wrist = skel.index(f"{side}_wrist")
        self.tip = skel.index(f"{side}_finger1_tip")
        self.clav = self.free[:3]

    def fk(self, q):
        rots, pos = fk_arrays(self.skel.parents, self.skel.offsets, self.root_pos, np.array([1.0, 0, 0, 0]),
                              dofs_to_local_rotations(self.skel, q))
        return pos, quat_to_matrix(rots)

    def solve(self, base_q, tip_target, hand_dir=(0.0, 1.0, 0.0), seed_q=None):
        hand_dir = np.asarray(hand_dir, dtype=float)
        hand_dir /= np.linalg.norm(hand_dir)

        def resid(x):
            q = base_q.copy()
            q[self.free] = x
            pos, R = self.fk(q)
            Rw = R[self.wrist]
            return np.concatenate([
                10.0 * (pos[self.tip] - tip_target),
                1.0 * (-Rw[:, 2] - hand_dir),  # fingers along hand_dir
                1.0 * (Rw[:, 0] - np.array([1.0, 0.0, 0.0])),  # knuckles stay horizontal
                0.05 * x,
                0.5 * x[:3],  # keep the clavicle quiet
            ])

        x0 = (seed_q if seed_q is not None else base_q)[self.free]
        x0 = np.clip(x0, self.lo + 1e-6, self.hi - 1e-6)
        sol = least_squares(resid, x0, bounds=(self.lo, self.hi), xtol=1e-10, ftol=1e-10, gtol=1e-10, max_nfev=400)
        q = base_q.copy()
        q[self.free] = sol.x
        return q


def make_scenario(config: ScenarioConfig | None = None) -> Scenario:
    """Build the scripted ground truth: rest, lift, approach, contact, settle, push, hold."""
    c = config or ScenarioConfig()
    rng = np.random.default_rng(c.seed)
    skel = desk_skeleton()
    verts, faces = box_mesh(c.box_size, c.box_subdiv)
    table_top = c.table_dims[2]
    half = c.box_size / 2.0
    bx = c.box_xy[0] + c.jitter * rng.uniform(-1.0, 1.0)
    box0 = np.array([bx, c.box_xy[1], table_top + half])
    root = np.array([0.0, 0.0, c.pelvis_height])
    tip_r = 0.01

    ik = _ArmIK(skel, root, "r")
    d = skel.num_dofs
    rest = np.zeros(d)
    fingers = np.flatnonzero(np.isin(skel.dof_table()[0], [skel.index(f"r_finger{k}") for k in range(3)]))
    curl = rest.copy()
    curl[fingers] = 0.05
    face_y = box0[1] - half
    h = box0[2] + 0.005
    contact_tip = np.array([bx, face_y - tip_r + c.contact_depth, h])
    approach = ik.solve(curl, contact_tip - np.array([0.0, 0.04, 0.0]))
    lift = ik.solve(curl, np.array([bx, 0.14, h + 0.12]), hand_dir=(0.0, 1.0, -0.5), seed_q=approach)
    contact = ik.solve(curl, contact_tip, seed_q=approach)
    pushed = ik.solve(curl, contact_tip + np.array([0.0, c.push_distance, 0.0]), seed_q=contact)

    keys = {"rest": (rest, rest), "lift": (rest, lift), "approach": (lift, approach),
            "contact": (approach, contact), "settle": (contact, contact), "push": (contact, pushed),
            "hold": (pushed, pushed)}
    end = c.phases[-1][2]
    times = np.arange(int(round(end * c.fps)) + 1) / c.fps
    q = np.zeros((len(times), d))
    obj_pos = np.repeat(box0[None], len(times), axis=0)
    push_a, push_b = next((a, b) for n, a, b in c.phases if n == "push")
    for name, a, b in c.phases:
        sel = (times >= a - 1e-9) & (times <= b + 1e-9)
        s = _smoothstep((times[sel] - a) / (b - a))
        q0, q1 = keys[name]
        q[sel] = q0 + s[:, None] * (q1 - q0)
    # the box follows the fingertip during the push and rests afterwards
    tip_id = ik.tip
    _, pos = fk_arrays(skel.parents, skel.offsets, root, np.array([1.0, 0, 0, 0]), dofs_to_local_rotations(skel, q))
    ref_y = pos[:, tip_id, 1]
    ia = int(np.argmin(np.abs(times - push_a)))
    moved = np.clip(ref_y - ref_y[ia], 0.0, None)
    after = times >= push_a - 1e-9
    obj_pos[after, 1] = box0[1] + np.maximum.accumulate(moved[after])
    obj_quat = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (len(times), 1))

    return Scenario(c, skel, verts, faces, _camera(c), root, np.array([1.0, 0.0, 0.0, 0.0]), box0.copy(),
                    np.array([1.0, 0.0, 0.0, 0.0]), times, q, obj_pos, obj_quat, interacting_hand=1,
                    metadata={"keyframes": {"lift": lift, "approach": approach, "contact": contact,
                                            "pushed": pushed}})


# ---------------------------------------------------------------------------
# files: YAML scenario description + OBJ box mesh

def _floats(a, nd=9):
    return [float(f"{x:.{nd}g}") for x in np.asarray(a, dtype=float).reshape(-1)]


def save_scenario(path, scn: Scenario) -> None:
    """Write a scenario YAML (``format-version: 1`` first) plus the box OBJ next to it."""
    from .skinning import write_obj

    path = Path(path)
    obj_path = path.with_suffix(".obj")
    write_obj(obj_path, scn.box_vertices, scn.box_faces)
    c = scn.config
    cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in c.__dict__.items() if k != "phases"}
    cfg["phases"] = [[n, a, b] for n, a, b in c.phases]
    doc = {
        "name": "reach-and-slide-box",
        "config": cfg,
        "mesh": obj_path.name,
        "camera": {"focal": scn.camera.focal, "cx": scn.camera.cx, "cy": scn.camera.cy,
                   "width": scn.camera.width, "height": scn.camera.height,
                   "rotation": _floats(scn.camera.rotation.quat), "translation": _floats(scn.camera.translation)},
        "frames": scn.num_frames,
        "dofs": int(scn.skeleton.num_dofs),
        "joint_angles": [_floats(r) for r in scn.joint_angles],
        "object_positions": [_floats(r) for r in scn.object_positions],
        "object_quats": [_floats(r) for r in scn.object_quats],
    }
    text = f"format-version: {FORMAT_VERSION}\n" + yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)
    path.write_text(text)


class FormatError(ValueError):
    pass


def load_scenario(path) -> Scenario:
    """Rebuild a scenario from its YAML; stored motion arrays override the regenerated ones."""
    path = Path(path)
    text = path.read_text()
    if not text.startswith("format-version:"):
        raise FormatError(f"{path}: missing format-version line")
    doc = yaml.safe_load(text)
    if doc.get("format-version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format-version {doc.get('format-version')}")
    raw = dict(doc["config"])
    raw["phases"] = tuple(tuple(p) for p in raw["phases"])
    for k, v in raw.items():
        if isinstance(v, list):
            raw[k] = tuple(v)
    scn = make_scenario(ScenarioConfig(**raw))
    scn.joint_angles = np.array(doc["joint_angles"], dtype=float)
    scn.object_positions = np.array(doc["object_positions"], dtype=float)
    scn.object_quats = np.array(doc["object_quats"], dtype=float)
    scn.object_position = scn.object_positions[0].copy()
    scn.object_quat = scn.object_quats[0].copy()
    if scn.joint_angles.shape != (doc["frames"], scn.skeleton.num_dofs):
        raise FormatError(f"{path}: motion array shape mismatch")
    return scn
