"""Hybrid tracking reward: human tracking x 2D object tracking x contact."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from .geometry import CameraModel, ShapeMismatch, quat_to_matrix


@dataclass
class RewardConfig:
    lambda_jp: float = 100.0  # m^-2
    lambda_jv: float = 0.1  # s^2 m^-2
    lambda_jr: float = 2.0  # rad^-2
    lambda_lp: float = 500.0  # m^-2, wrist-relative hand positions
    lambda_lr: float = 2.0  # rad^-2, wrist-relative hand rotations
    lambda_pw: float = 1e-4  # W^-1
    lambda_o: float = 0.01  # px^-2
    lambda_c: float = 1000.0  # m^-2
    tau_contact: float = 1.0  # N
    sensors_per_hand: int = 4
    contact_floor: float = 0.05  # lower bound on each hand's force factor
    behind_camera_px2: float = 1024.0 ** 2 + 576.0 ** 2  # squared error charged to a vertex behind the camera
    object_reward: bool = True  # False drops R_o (ablation)

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                raise ValueError(f"{f.name} must be non-negative")

    @classmethod
    def from_dict(cls, d: dict | None) -> "RewardConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown reward options: {sorted(unknown)}")
        return cls(**d)


def _rot_angle(ra, rb):
    """Geodesic angle between rotation matrices (..., 3, 3)."""
    c = (np.einsum("...ij,...ij->...", ra, rb) - 1.0) / 2.0
    return np.arccos(np.clip(c, -1.0, 1.0))


def _wrist_local(pos, rot, wrist, ids):
    rw = rot[..., wrist, :, :]
    rel_p = np.einsum("...ba,...nb->...na", rw, pos[..., ids, :] - pos[..., wrist:wrist + 1, :])
    rel_r = np.einsum("...ba,...nbc->...nac", rw, rot[..., ids, :, :])
    return rel_p, rel_r


def human_terms(sim_pos, sim_rot, sim_vel, ref_pos, ref_rot, ref_vel, hands, power=0.0) -> dict:
    """Mean-squared errors behind each factor of the human reward.

    ``hands`` is a sequence of ``(wrist id, hand joint ids)``; positions (..., J, 3),
    rotations (..., J, 3, 3), velocities (..., J, 3). ``power`` is the mechanical
    power sum (W).
    """
    sim_pos, ref_pos = np.asarray(sim_pos, float), np.asarray(ref_pos, float)
    if sim_pos.shape[-2:] != ref_pos.shape[-2:] or np.shape(sim_rot)[-3:] != np.shape(ref_rot)[-3:]:
        raise ShapeMismatch("simulated and reference joint sets differ")
    e = {
        "jp": np.mean(np.sum((sim_pos - ref_pos) ** 2, -1), -1),
        "jv": np.mean(np.sum((np.asarray(sim_vel) - np.asarray(ref_vel)) ** 2, -1), -1),
        "jr": np.mean(_rot_angle(sim_rot, ref_rot) ** 2, -1),
    }
    lp, lr = [], []
    for wrist, ids in hands:
        ids = np.asarray(ids, dtype=int)
        sp, sr = _wrist_local(sim_pos, sim_rot, wrist, ids)
        rp, rr = _wrist_local(ref_pos, ref_rot, wrist, ids)
        lp.append(np.sum((sp - rp) ** 2, -1))
        lr.append(_rot_angle(sr, rr) ** 2)
    e["lp"] = np.mean(np.concatenate(lp, -1), -1)
    e["lr"] = np.mean(np.concatenate(lr, -1), -1)
    e["pw"] = np.asarray(power, dtype=float)
    return e


def mechanical_power(torque, qd):
    """Sum over DoFs of |torque * joint velocity| (W)."""
    return np.sum(np.abs(np.asarray(torque) * np.asarray(qd)), axis=-1)


def human_tracking_reward(sim_pos, sim_rot, sim_vel, ref_pos, ref_rot, ref_vel, hands, cfg: RewardConfig,
                          power=0.0):
    e = human_terms(sim_pos, sim_rot, sim_vel, ref_pos, ref_rot, ref_vel, hands, power)
    lam = {"jp": cfg.lambda_jp, "jv": cfg.lambda_jv, "jr": cfg.lambda_jr, "lp": cfg.lambda_lp,
           "lr": cfg.lambda_lr, "pw": cfg.lambda_pw}
    out = 1.0
    for k, v in e.items():
        out = out * np.exp(-lam[k] * v)
    return out


def object_pixel_error(obj_pos, obj_quat, mesh_vertices, vertex_ids, target_px, visible, cam: CameraModel,
                       behind_px2: float, squared: bool = True):
    """Mean squared pixel error over visible tracked vertices; nan if none is visible.

    With ``squared=False`` the mean pixel distance is returned instead (a vertex
    behind the camera then counts sqrt(behind_px2)).
    """
    R = quat_to_matrix(np.asarray(obj_quat, dtype=float))
    v = np.asarray(mesh_vertices, dtype=float)[np.asarray(vertex_ids, dtype=int)]
    world = np.einsum("...ab,mb->...ma", R, v) + np.asarray(obj_pos, dtype=float)[..., None, :]
    pc = cam.to_camera(world)
    px = cam.project_camera(pc, allow_behind=True)
    sq = np.sum((px - np.asarray(target_px, dtype=float)) ** 2, -1)
    sq = np.where(pc[..., 2] > 1e-6, sq, behind_px2)
    if not squared:
        sq = np.sqrt(sq)
    vis = np.broadcast_to(np.asarray(visible, dtype=bool), sq.shape)
    n = vis.sum(-1)
    total = np.where(vis, sq, 0.0).sum(-1)
    return np.where(n > 0, total / np.maximum(n, 1), np.nan)


def object_tracking_reward(obj_pos, obj_quat, mesh_vertices, vertex_ids, target_px, visible, cam: CameraModel,
                           cfg: RewardConfig):
    """exp(-lambda_o * mean squared pixel error); 1 when nothing is visible or the term is disabled."""
    err = object_pixel_error(obj_pos, obj_quat, mesh_vertices, vertex_ids, target_px, visible, cam,
                             cfg.behind_camera_px2)
    r = np.exp(-cfg.lambda_o * np.nan_to_num(err, nan=0.0))
    return np.ones_like(r) if not cfg.object_reward else r


def force_ratio(forces, tau):
    """Fraction of sensors per hand reading above ``tau`` (..., 2)."""
    return np.mean(np.asarray(forces) > tau, axis=-1)


def hand_object_distance(hand_pos, object_vertices):
    """RMS nearest-vertex distance from each hand joint to the object (m); sqrt of the one-sided chamfer."""
    d2 = np.sum((np.asarray(hand_pos)[..., :, None, :] - np.asarray(object_vertices)[..., None, :, :]) ** 2, -1)
    return np.sqrt(d2.min(-1).mean(-1))


def contact_reward(forces, hand_distances, psi, cfg: RewardConfig):
    """R_cf * R_cd, each a product over the two hands.

    ``forces`` (..., 2, K) sensor magnitudes, ``hand_distances`` (..., 2) RMS
    hand-object distances, ``psi`` (..., 2) contact labels.
    """
    psi = np.asarray(psi, dtype=float)
    ratio = force_ratio(forces, cfg.tau_contact)
    r_cf = np.maximum((1.0 - psi) + psi * ratio, cfg.contact_floor)
    d = np.asarray(hand_distances, dtype=float)
    r_cd = (1.0 - psi) + psi * expit(-cfg.lambda_c * d ** 2)
    return np.prod(r_cf, -1) * np.prod(r_cd, -1)


def hybrid_reward(r_h, r_o, r_c):
    return np.asarray(r_h) * np.asarray(r_o) * np.asarray(r_c)
