"""Stepping, reset and observation helpers on top of the kernels."""
from __future__ import annotations

import numpy as np

from ..geometry import Pose, Rotation, matrix_to_6d, pose_to_dofs, quat_to_matrix
from . import backend
from ._kernel_py import _box_contact, _fk, quat_to_mat
from .model import NonFiniteState, PenetrationAtReset, PhysicsWorld, SimState

RESET_TOLERANCE = 5e-3


def action_to_target(world: PhysicsWorld, action) -> np.ndarray:
    """Map normalised actions in [-1, 1] linearly onto the joint limits (clamping first)."""
    a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
    lo, hi = world.action_low, world.action_high
    return lo + 0.5 * (a + 1.0) * (hi - lo)


def target_to_action(world: PhysicsWorld, q) -> np.ndarray:
    lo, hi = world.action_low, world.action_high
    return np.clip(2.0 * (np.asarray(q, dtype=float) - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def _obj_array(state: SimState) -> np.ndarray:
    return np.ascontiguousarray(np.concatenate(
        [state.obj_pos, state.obj_quat, state.obj_vel, state.obj_angvel], axis=-1), dtype=float)


def _batch(x):
    return np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=float)))


def step(world: PhysicsWorld, state: SimState, action) -> SimState:
    """Advance one control step of ``world.dt``; works on single or batched states."""
    m = world.kernel_model
    action = np.asarray(action, dtype=float)
    if not np.all(np.isfinite(action)):
        raise ValueError("non-finite action")
    if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.qd))):
        raise NonFiniteState("non-finite input state")
    batched = state.batched
    q, qd = _batch(state.q).copy(), _batch(state.qd).copy()
    n = q.shape[0]
    nroot = world.humanoid.num_root_dofs
    target = np.zeros((n, m.num_dofs))
    target[:, nroot:] = np.broadcast_to(action_to_target(world, action), (n, m.num_dofs - nroot))
    root_pos, root_quat = _batch(state.root_pos), _batch(state.root_quat)
    obj = np.atleast_2d(_obj_array(state)).copy()
    sensor = np.zeros((n, m.n_sensor))
    torque = np.zeros((n, m.num_dofs))
    backend.kernel().step_batch(m, q, qd, root_pos, root_quat, obj, target, sensor, torque)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd)) and np.all(np.isfinite(obj))):
        raise NonFiniteState("simulation diverged")
    k = world.humanoid.sensors.shape[1]
    out = SimState(q, qd, root_pos, root_quat, obj[:, 0:3], obj[:, 3:7], obj[:, 7:10], obj[:, 10:13],
                   np.asarray(state.t, dtype=float) + world.dt, sensor.reshape(n, 2, k), torque)
    if not batched:
        out = out.world(0)
        out.t = float(np.squeeze(out.t))
    return out


def read_contact_forces(world: PhysicsWorld, state: SimState) -> np.ndarray:
    """Per-sensor force magnitudes (..., 2, K), time-averaged over the last step."""
    k = world.humanoid.sensors.shape[1]
    if state.sensor_force is None:
        shape = (np.shape(state.q)[0], 2, k) if state.batched else (2, k)
        return np.zeros(shape)
    return np.maximum(np.asarray(state.sensor_force, dtype=float), 0.0)


def fk_state(world: PhysicsWorld, state: SimState):
    """World joint positions (..., J, 3), rotations (..., J, 3, 3), linear and angular velocities."""
    m = world.kernel_model
    out = backend.kernel().fk_batch(m, _batch(state.q), _batch(state.qd), _batch(state.root_pos),
                                    _batch(state.root_quat))
    return out if state.batched else tuple(x[0] for x in out)


def human_state(world: PhysicsWorld, state: SimState) -> np.ndarray:
    """Per-joint [position, 6D rotation, linear velocity, angular velocity] (..., J, 15)."""
    pos, rot, lin, ang = fk_state(world, state)
    return np.concatenate([pos, matrix_to_6d(rot), lin, ang], axis=-1)


def object_state(state: SimState) -> np.ndarray:
    """Object position, 6D rotation, linear and angular velocity (..., 15)."""
    rot = quat_to_matrix(np.asarray(state.obj_quat, dtype=float))
    return np.concatenate([state.obj_pos, matrix_to_6d(rot), state.obj_vel, state.obj_angvel], axis=-1)


def penetration_depth(world: PhysicsWorld, state: SimState) -> float:
    """Largest interpenetration depth among spheres, hull vertices, ground and table."""
    m = world.kernel_model
    q = _batch(state.q)
    R, p, _, _ = _fk(m, q, _batch(state.root_pos), _batch(state.root_quat))
    xs = p[:, m.sph_joint] + np.einsum("nsab,sb->nsa", R[:, m.sph_joint], m.sph_local)
    r = m.sph_r[None]
    depths = []
    opos = _batch(state.obj_pos)
    oR = quat_to_mat(_batch(state.obj_quat))
    hv = opos[:, None] + np.einsum("nab,vb->nva", oR, m.hull)
    if m.has_ground:
        depths += [r - xs[..., 2], -hv[..., 2]]
    if m.has_table:
        depths += [_box_contact(m.table_center, m.table_half, xs, r)[0],
                   _box_contact(m.table_center, m.table_half, hv, 0.0)[0]]
    xb = np.einsum("nba,nsb->nsa", oR, xs - opos[:, None])
    sd = np.einsum("pa,nsa->nsp", m.planes[:, :3], xb) + m.planes[:, 3]
    depths.append(r - sd.max(axis=-1))
    return float(max(np.max(d) for d in depths))


def reset(world: PhysicsWorld, scene, frame_pose, velocities=None, check: bool = True) -> SimState:
    """Pose the humanoid at ``frame_pose`` and the object at the scene's initial pose.

    ``frame_pose`` is a :class:`Pose` or a hinge-angle vector. ``scene`` must
    expose ``object_position`` and ``object_quat``. Velocities default to zero.
    """
    hum = world.humanoid
    skel = hum.skeleton
    if isinstance(frame_pose, Pose):
        q_act = pose_to_dofs(skel, frame_pose.local_rotations)
        root_pos = np.array(frame_pose.root_translation, dtype=float)
        root_quat = frame_pose.root_orientation.quat.copy()
    else:
        q_act = np.asarray(frame_pose, dtype=float).reshape(-1)
        root_pos = np.asarray(getattr(scene, "root_position", np.zeros(3)), dtype=float).copy()
        root_quat = np.asarray(getattr(scene, "root_quat", Rotation().quat), dtype=float).copy()
    if q_act.shape != (skel.num_dofs,):
        raise ValueError(f"expected {skel.num_dofs} joint angles, got {q_act.shape}")
    nroot = hum.num_root_dofs
    q = np.concatenate([np.zeros(nroot), q_act])
    qd = np.zeros_like(q)
    if velocities is not None:
        qd[nroot:] = np.asarray(velocities, dtype=float).reshape(-1)
    state = SimState(q, qd, root_pos, root_quat,
                     np.asarray(scene.object_position, dtype=float).copy(),
                     np.asarray(scene.object_quat, dtype=float).copy(),
                     np.zeros(3), np.zeros(3), 0.0, None, None)
    if check:
        depth = penetration_depth(world, state)
        if depth > RESET_TOLERANCE:
            raise PenetrationAtReset(f"interpenetration of {depth * 1e3:.1f} mm at reset")
    return state
