"""Physical description of a desk scene and its flattened kernel layout."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull

from ..geometry import Skeleton

_AXES = np.eye(3)


class SimError(RuntimeError):
    pass


class NonFiniteState(SimError):
    pass


class PenetrationAtReset(SimError):
    pass


@dataclass(frozen=True)
class Humanoid:
    """PD-actuated articulated body on top of a :class:`Skeleton`.

    Every hinge DoF is actuated. With ``root_free`` the root additionally gets
    three unactuated world-axis translation DoFs (used for free hand probes).
    """

    skeleton: Skeleton
    link_mass: np.ndarray  # (J,)
    link_com: np.ndarray  # (J, 3) in the joint frame
    kp: np.ndarray  # (D,) per hinge DoF
    kd: np.ndarray
    torque_limit: np.ndarray
    armature: np.ndarray
    sphere_joint: np.ndarray  # (S,)
    sphere_local: np.ndarray  # (S, 3)
    sphere_radius: np.ndarray  # (S,)
    sensors: np.ndarray  # (2, K) sphere ids, rows = (left, right) hand
    root_free: bool = False

    def __post_init__(self):
        d = self.skeleton.num_dofs
        for name in ("kp", "kd", "torque_limit", "armature"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (d,)).copy()
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "link_mass", np.asarray(self.link_mass, dtype=float))
        object.__setattr__(self, "link_com", np.asarray(self.link_com, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "sphere_joint", np.asarray(self.sphere_joint, dtype=np.intp))
        object.__setattr__(self, "sphere_local", np.asarray(self.sphere_local, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "sphere_radius", np.asarray(self.sphere_radius, dtype=float))
        object.__setattr__(self, "sensors", np.asarray(self.sensors, dtype=np.intp).reshape(2, -1))
        if np.any(self.link_mass < 0):
            raise SimError("link masses must be non-negative")

    @property
    def num_actuated(self) -> int:
        return self.skeleton.num_dofs

    @property
    def num_root_dofs(self) -> int:
        return 3 if self.root_free else 0

    @property
    def num_dofs(self) -> int:
        return self.num_root_dofs + self.skeleton.num_dofs


@dataclass(frozen=True)
class RigidObject:
    vertices: np.ndarray  # mesh vertices in the body frame
    faces: np.ndarray
    mass: float
    inertia: np.ndarray  # body-frame principal moments (3,)
    hull_planes: np.ndarray = field(default=None)  # (P, 4): n.x + b <= 0 inside
    hull_vertices: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=int).reshape(-1, 3))
        object.__setattr__(self, "inertia", np.asarray(self.inertia, dtype=float).reshape(3))
        if not self.mass > 0 or np.any(self.inertia <= 0):
            raise SimError("object mass and inertia must be positive")
        if self.hull_planes is None:
            hull = ConvexHull(v)
            planes = np.unique(np.round(hull.equations, 9), axis=0)
            object.__setattr__(self, "hull_planes", planes)
            object.__setattr__(self, "hull_vertices", v[hull.vertices])

    @classmethod
    def box(cls, vertices, faces, mass: float, size) -> "RigidObject":
        sx, sy, sz = np.broadcast_to(np.asarray(size, dtype=float), (3,))
        inertia = mass / 12.0 * np.array([sy**2 + sz**2, sx**2 + sz**2, sx**2 + sy**2])
        return cls(vertices, faces, mass, inertia)


@dataclass(frozen=True)
class PhysicsWorld:
    humanoid: Humanoid
    obj: RigidObject
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    dt: float = 1.0 / 60.0
    substeps: int = 4
    friction: float = 0.5
    contact_stiffness: float = 1.0e4
    contact_damping: float = 1.0e2
    friction_velocity: float = 0.05  # regularisation speed of the Coulomb cone (m/s)
    table_center: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.4, 0.4]))
    table_half: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.25, 0.4]))
    has_table: bool = True
    has_ground: bool = True

    def __post_init__(self):
        if not self.dt > 0 or self.substeps < 1:
            raise SimError("dt must be positive and substeps >= 1")
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))
        object.__setattr__(self, "table_center", np.asarray(self.table_center, dtype=float).reshape(3))
        object.__setattr__(self, "table_half", np.asarray(self.table_half, dtype=float).reshape(3))
        object.__setattr__(self, "_kernel_model", None)

    @staticmethod
    def table_from_xy(xy=(0.0, 0.4), dims=(1.0, 0.5, 0.8)):
        """Table centre/half-extents for a table standing on the ground at ``xy``."""
        dims = np.asarray(dims, dtype=float)
        return np.array([xy[0], xy[1], dims[2] / 2.0]), dims / 2.0

    @property
    def kernel_model(self) -> "KernelModel":
        if self._kernel_model is None:
            object.__setattr__(self, "_kernel_model", KernelModel.build(self))
        return self._kernel_model

    @property
    def action_low(self) -> np.ndarray:
        return self.humanoid.skeleton.dof_table()[2][:, 0]

    @property
    def action_high(self) -> np.ndarray:
        return self.humanoid.skeleton.dof_table()[2][:, 1]


@dataclass
class SimState:
    """Generalised coordinates of the humanoid and the free object.

    Arrays may carry a leading world axis; ``q``/``qd`` include the root
    translation DoFs when the humanoid root is free.
    """

    q: np.ndarray
    qd: np.ndarray
    root_pos: np.ndarray
    root_quat: np.ndarray
    obj_pos: np.ndarray
    obj_quat: np.ndarray
    obj_vel: np.ndarray
    obj_angvel: np.ndarray
    t: np.ndarray | float = 0.0
    sensor_force: np.ndarray | None = None
    torque: np.ndarray | None = None

    def copy(self) -> "SimState":
        def c(x):
            return None if x is None else np.array(x, copy=True)
        return SimState(c(self.q), c(self.qd), c(self.root_pos), c(self.root_quat), c(self.obj_pos),
                        c(self.obj_quat), c(self.obj_vel), c(self.obj_angvel), c(self.t),
                        c(self.sensor_force), c(self.torque))

    @property
    def batched(self) -> bool:
        return np.ndim(self.q) == 2

    def world(self, i: int) -> "SimState":
        def g(x):
            return None if x is None else np.array(x[i], copy=True)
        return SimState(g(self.q), g(self.qd), g(self.root_pos), g(self.root_quat), g(self.obj_pos),
                        g(self.obj_quat), g(self.obj_vel), g(self.obj_angvel), g(np.atleast_1d(self.t)),
                        g(self.sensor_force), g(self.torque))

    @staticmethod
    def stack(states: list["SimState"]) -> "SimState":
        def s(name):
            vals = [getattr(st, name) for st in states]
            return None if vals[0] is None else np.stack([np.asarray(v, dtype=float) for v in vals])
        out = SimState(*(s(n) for n in ("q", "qd", "root_pos", "root_quat", "obj_pos", "obj_quat",
                                        "obj_vel", "obj_angvel")))
        out.t = np.array([float(np.squeeze(st.t)) for st in states])
        out.sensor_force = s("sensor_force")
        out.torque = s("torque")
        return out


@dataclass(frozen=True)
class KernelModel:
    """Contiguous arrays consumed by both kernel backends."""

    parents: np.ndarray
    offsets: np.ndarray
    link_mass: np.ndarray
    link_com: np.ndarray
    dof_joint: np.ndarray
    dof_type: np.ndarray  # 0 hinge, 1 slide
    dof_axis: np.ndarray
    dof_first: np.ndarray  # per joint
    dof_count: np.ndarray
    anc: np.ndarray  # (J, D) uint8: DoF d moves the frame of joint j
    inertia: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    tau_lim: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray
    sph_joint: np.ndarray
    sph_local: np.ndarray
    sph_r: np.ndarray
    sph_sensor: np.ndarray
    n_sensor: int
    obj_mass: float
    obj_inertia: np.ndarray
    planes: np.ndarray
    hull: np.ndarray
    table_center: np.ndarray
    table_half: np.ndarray
    has_table: int
    has_ground: int
    gravity: np.ndarray
    h: float
    nsub: int
    mu: float
    k: float
    c: float
    v_eps: float

    @classmethod
    def build(cls, world: PhysicsWorld) -> "KernelModel":
        hum = world.humanoid
        skel = hum.skeleton
        nj = skel.num_joints
        dof_joint, dof_type, dof_axis, lo, hi = [], [], [], [], []
        kp, kd, tl, arm = [], [], [], []
        dof_first = np.zeros(nj, dtype=np.intp)
        dof_count = np.zeros(nj, dtype=np.intp)
        if hum.root_free:
            for a in range(3):
                dof_joint.append(0)
                dof_type.append(1)
                dof_axis.append(_AXES[a])
                lo.append(-np.inf)
                hi.append(np.inf)
                kp.append(0.0)
                kd.append(0.0)
                tl.append(0.0)
                arm.append(0.0)
            dof_count[0] = 3
        k = 0
        for j, (axes, lim) in enumerate(zip(skel.dof_axes, skel.dof_limits)):
            if j > 0 or not hum.root_free:
                dof_first[j] = len(dof_joint)
            for a, (l, u) in zip(axes, lim):
                dof_joint.append(j)
                dof_type.append(0)
                dof_axis.append(_AXES["xyz".index(a)])
                lo.append(l)
                hi.append(u)
                kp.append(hum.kp[k])
                kd.append(hum.kd[k])
                tl.append(hum.torque_limit[k])
                arm.append(hum.armature[k])
                k += 1
            if j > 0:
                dof_count[j] = len(axes)
        nd = len(dof_joint)
        dof_joint = np.array(dof_joint, dtype=np.intp)
        anc = np.zeros((nj, nd), dtype=np.uint8)
        for j in range(nj):
            for a in skel.chain(j):
                anc[j, dof_joint == a] = 1

        # constant joint-space inertia from the rest configuration (point-mass links)
        rest = skel.rest_positions()
        com = rest + hum.link_com
        inertia = np.array(arm, dtype=float)
        for d in range(nd):
            j = dof_joint[d]
            sub = anc[:, d].astype(bool)
            if dof_type[d] == 1:
                inertia[d] += hum.link_mass[sub].sum()
            else:
                r = com[sub] - rest[j]
                a = dof_axis[d]
                perp = r - np.outer(r @ a, a)
                inertia[d] += np.sum(hum.link_mass[sub] * np.sum(perp**2, axis=1))
        if np.any(inertia <= 0):
            raise SimError("every DoF needs positive inertia (add armature)")

        sph_sensor = -np.ones(len(hum.sphere_joint), dtype=np.intp)
        for slot, s in enumerate(hum.sensors.reshape(-1)):
            sph_sensor[s] = slot
        table_center, table_half = world.table_center, world.table_half
        f = np.ascontiguousarray
        return cls(
            parents=f(skel.parents.astype(np.intp)), offsets=f(skel.offsets), link_mass=f(hum.link_mass),
            link_com=f(hum.link_com), dof_joint=f(dof_joint), dof_type=f(np.array(dof_type, dtype=np.intp)),
            dof_axis=f(np.array(dof_axis, dtype=float)), dof_first=f(dof_first), dof_count=f(dof_count),
            anc=f(anc), inertia=f(inertia), kp=f(np.array(kp)), kd=f(np.array(kd)), tau_lim=f(np.array(tl)),
            q_lo=f(np.array(lo)), q_hi=f(np.array(hi)), sph_joint=f(hum.sphere_joint.astype(np.intp)),
            sph_local=f(hum.sphere_local), sph_r=f(hum.sphere_radius), sph_sensor=f(sph_sensor),
            n_sensor=int(hum.sensors.size), obj_mass=float(world.obj.mass), obj_inertia=f(world.obj.inertia),
            planes=f(world.obj.hull_planes), hull=f(world.obj.hull_vertices), table_center=f(table_center),
            table_half=f(table_half), has_table=int(world.has_table), has_ground=int(world.has_ground),
            gravity=f(world.gravity), h=world.dt / world.substeps, nsub=int(world.substeps),
            mu=float(world.friction), k=float(world.contact_stiffness), c=float(world.contact_damping),
            v_eps=float(world.friction_velocity),
        )

    @property
    def num_dofs(self) -> int:
        return len(self.dof_joint)

    @property
    def num_joints(self) -> int:
        return len(self.parents)
