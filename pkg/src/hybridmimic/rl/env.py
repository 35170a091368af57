"""Vectorised desk environment: reference lookup, observations, hybrid reward, termination."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import fk_arrays, pose_to_dofs, quat_to_matrix
from ..rewards import (RewardConfig, contact_reward, hand_object_distance, human_tracking_reward, hybrid_reward,
                       mechanical_power, object_pixel_error, object_tracking_reward)
from ..sim import (SimState, fk_state, human_state, object_state, read_contact_forces, reset, step,
                   target_to_action)
from ..sim.model import NonFiniteState
from ..targets import hand_keypoint_ids
from .ppo import REASONS, TerminationThresholds, early_termination, sample_init_frame


class SimDiverged(RuntimeError):
    pass


@dataclass
class Reference:
    """Per-frame quantities of a hybrid target, precomputed for fast lookup."""

    fps: float
    positions: np.ndarray  # (F, J, 3)
    rotations: np.ndarray  # (F, J, 3, 3)
    velocities: np.ndarray  # (F, J, 3)
    dofs: np.ndarray  # (F, D), clipped to the actuator range
    dof_velocities: np.ndarray  # (F, D)
    actions: np.ndarray  # (F, D) reference dofs in normalised action units
    track_px: np.ndarray  # (F, M, 2)
    track_visible: np.ndarray  # (F, M)
    vertex_ids: np.ndarray
    mesh_vertices: np.ndarray
    contact: np.ndarray  # (F, 2)
    object_position: np.ndarray
    object_quat: np.ndarray
    camera: object
    root_position: np.ndarray  # the humanoid root is fixed at the first reference frame
    root_quat: np.ndarray

    @property
    def num_frames(self) -> int:
        return len(self.positions)

    def frame_at(self, t):
        return np.clip(np.rint(np.asarray(t) * self.fps).astype(int), 0, self.num_frames - 1)

    @classmethod
    def from_target(cls, target, world, mesh_vertices) -> "Reference":
        skel = world.humanoid.skeleton
        dt = 1.0 / target.fps
        rots, _ = fk_arrays(skel.parents, skel.offsets, target.root_translation, target.root_orientation,
                            target.local_rotations)
        pos = np.asarray(target.joint_positions, dtype=float)
        dofs = np.clip(pose_to_dofs(skel, target.local_rotations), world.action_low, world.action_high)
        return cls(float(target.fps), pos, quat_to_matrix(rots), np.gradient(pos, dt, axis=0), dofs,
                   np.gradient(dofs, dt, axis=0), target_to_action(world, dofs), target.tracks.points,
                   target.tracks.visible, np.asarray(target.vertex_ids), np.asarray(mesh_vertices, dtype=float),
                   np.asarray(target.contact, dtype=int), np.asarray(target.object_position, dtype=float),
                   np.asarray(target.object_quat, dtype=float), target.camera,
                   np.asarray(target.root_translation[0], dtype=float),
                   np.asarray(target.root_orientation[0], dtype=float))


def _stack(states):
    def cat(name):
        return np.stack([np.asarray(getattr(s, name), dtype=float) for s in states])
    return SimState(cat("q"), cat("qd"), cat("root_pos"), cat("root_quat"), cat("obj_pos"), cat("obj_quat"),
                    cat("obj_vel"), cat("obj_angvel"), np.zeros(len(states)), None, None)


def _put(batch: SimState, i: int, s: SimState) -> None:
    for name in ("q", "qd", "root_pos", "root_quat", "obj_pos", "obj_quat", "obj_vel", "obj_angvel"):
        getattr(batch, name)[i] = getattr(s, name)
    batch.t[i] = 0.0
    if batch.sensor_force is not None:
        batch.sensor_force[i] = 0.0
    if batch.torque is not None:
        batch.torque[i] = 0.0


class DeskEnv:
    """``num_envs`` independent worlds tracking one reference."""

    def __init__(self, world, reference: Reference, reward_cfg: RewardConfig | None = None,
                 thresholds: TerminationThresholds | None = None, num_envs: int = 32, horizon: int = 4,
                 p_init: float = 0.5, seed: int = 0, early_termination: bool = True):
        self.world, self.ref = world, reference
        self.cfg = reward_cfg or RewardConfig()
        self.th = thresholds or TerminationThresholds()
        self.n, self.k, self.p_init = num_envs, horizon, p_init
        self.terminate_early = early_termination
        self.rng = np.random.default_rng(seed)
        skel = world.humanoid.skeleton
        self.skel = skel
        self.body_ids = np.array([i for i, lab in enumerate(skel.labels) if lab == "body"])
        self.tips = np.asarray(skel.fingertips, dtype=int).reshape(2, -1)
        self.hands = tuple((w, hand_keypoint_ids(skel.parents, skel.labels, w)[1:]) for w in skel.wrists)
        self.start = np.zeros(num_envs, dtype=int)
        self.steps = np.zeros(num_envs, dtype=int)
        self.state: SimState | None = None

    # -- bookkeeping ----------------------------------------------------------------
    @property
    def act_dim(self) -> int:
        return self.skel.num_dofs

    def times(self):
        return self.start / self.ref.fps + self.steps * self.world.dt

    def _reset_one(self, frame: int) -> SimState:
        ref = self.ref
        scene = type("Scene", (), {"object_position": ref.object_position, "object_quat": ref.object_quat,
                                   "root_position": ref.root_position, "root_quat": ref.root_quat})
        return reset(self.world, scene, ref.dofs[frame], ref.dof_velocities[frame], check=False)

    def reset(self, frames=None) -> list:
        """Reset every world; ``frames`` overrides the sampled start frames."""
        if frames is None:
            frames = [sample_init_frame(self.ref.contact, self.rng, self.p_init) for _ in range(self.n)]
        self.start = np.asarray(frames, dtype=int).reshape(self.n)
        self.steps[:] = 0
        states = [self._reset_one(f) for f in self.start]
        self.state = _stack(states)
        return self.observe()

    # -- observations -----------------------------------------------------------------
    def observation_dims(self) -> tuple:
        j, d = self.skel.num_joints, self.skel.num_dofs
        k_sens = self.world.humanoid.sensors.size
        return (j * 15 + d + k_sens, 15 + 6, self.k * (6 * j + d + 4) + 1)

    def observe(self, state: SimState | None = None, frames=None) -> list:
        state = self.state if state is None else state
        ref = self.ref
        frames = ref.frame_at(self.times()) if frames is None else np.asarray(frames)
        root = np.asarray(state.root_pos)[:, None, :]
        hs = human_state(self.world, state)  # (N, J, 15)
        pos = hs[..., :3]
        hs = hs.copy()
        hs[..., :3] -= root
        nroot = self.world.humanoid.num_root_dofs
        q_act = target_to_action(self.world, np.asarray(state.q)[:, nroot:])
        forces = np.tanh(np.asarray(state.sensor_force if state.sensor_force is not None
                                    else np.zeros((self.n,) + self.world.humanoid.sensors.shape)) / 10.0)
        human = np.concatenate([hs.reshape(self.n, -1), q_act, forces.reshape(self.n, -1)], -1)
        os_ = object_state(state).copy()
        os_[:, :3] -= root[:, 0]
        wr = pos[:, list(self.skel.wrists)] - np.asarray(state.obj_pos)[:, None]
        obj = np.concatenate([os_, wr.reshape(self.n, -1)], -1)
        goal = []
        wh = np.array([ref.camera.width, ref.camera.height], dtype=float)
        for i in range(1, self.k + 1):
            f = np.minimum(frames + i, ref.num_frames - 1)
            rp = ref.positions[f]
            vis = ref.track_visible[f][..., None]
            cen = (ref.track_px[f] * vis).sum(1) / np.maximum(vis.sum(1), 1) / wh - 0.5
            goal += [(rp - root).reshape(self.n, -1), (rp - pos).reshape(self.n, -1), ref.actions[f],
                     ref.contact[f].astype(float), cen]
        goal.append((frames / max(ref.num_frames - 1, 1))[:, None])
        return [human, obj, np.concatenate(goal, -1)]

    # -- reward and termination ---------------------------------------------------------
    def reward_terms(self, state: SimState, frames):
        """Hybrid reward, its three factors and the termination code for ``state`` at reference ``frames``."""
        ref, cfg = self.ref, self.cfg
        frames = np.asarray(frames, dtype=int)
        pos, rot, lin, _ = fk_state(self.world, state)
        nroot = self.world.humanoid.num_root_dofs
        power = mechanical_power(state.torque[:, nroot:], np.asarray(state.qd)[:, nroot:]) \
            if state.torque is not None else 0.0
        r_h = human_tracking_reward(pos, rot, lin, ref.positions[frames], ref.rotations[frames],
                                    ref.velocities[frames], self.hands, cfg, power)
        r_o = object_tracking_reward(state.obj_pos, state.obj_quat, ref.mesh_vertices, ref.vertex_ids,
                                     ref.track_px[frames], ref.track_visible[frames], ref.camera, cfg)
        R = quat_to_matrix(np.asarray(state.obj_quat))
        verts = np.einsum("nab,vb->nva", R, ref.mesh_vertices) + np.asarray(state.obj_pos)[:, None]
        d = np.stack([hand_object_distance(pos[:, self.tips[h]], verts) for h in range(2)], -1)
        r_c = contact_reward(read_contact_forces(self.world, state), d, ref.contact[frames], cfg)
        px = object_pixel_error(state.obj_pos, state.obj_quat, ref.mesh_vertices, ref.vertex_ids,
                                ref.track_px[frames], ref.track_visible[frames], ref.camera,
                                cfg.behind_camera_px2, squared=False)
        code = early_termination(pos, ref.positions[frames], self.body_ids, self.tips.reshape(-1), px,
                                 ref.camera.width, ref.camera.height, self.th)
        return hybrid_reward(r_h, r_o, r_c), (r_h, r_o, r_c), code, pos

    def step(self, actions):
        """Advance all worlds; finished worlds are reset in place.

        Returns ``(obs, reward, terminated, truncated, info)``; ``info['final_obs']``
        holds the pre-reset observation of truncated worlds (for bootstrapping).
        """
        try:
            nxt = step(self.world, self.state, actions)
        except NonFiniteState as exc:
            raise SimDiverged(str(exc)) from exc
        self.steps += 1
        self.state = nxt
        t = self.times()
        frames = self.ref.frame_at(t)
        reward, parts, code, pos = self.reward_terms(nxt, frames)
        if not self.terminate_early:
            code = np.zeros_like(code)
        terminated = code > 0
        truncated = (t >= (self.ref.num_frames - 1) / self.ref.fps - 1e-9) & ~terminated
        info = {"reason": code, "frames": frames, "parts": parts, "positions": pos, "state": nxt.copy()}
        done = terminated | truncated
        if truncated.any():
            info["final_obs"] = self.observe(nxt, frames)
        if done.any():
            for i in np.flatnonzero(done):
                f = sample_init_frame(self.ref.contact, self.rng, self.p_init)
                _put(self.state, i, self._reset_one(f))
                self.start[i], self.steps[i] = f, 0
        return self.observe(), reward, terminated, truncated, info


__all__ = ["DeskEnv", "Reference", "SimDiverged", "REASONS"]
