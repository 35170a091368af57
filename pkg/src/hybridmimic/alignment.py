"""Gradient refinement of a pose sequence against 2D keypoints and the initial object."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .geometry import BehindCamera, CameraModel, Skeleton, quat_normalize
from .io import write_csv

LOSS_NAMES = ("L_b", "L_h", "L_tc", "L_HOI")
_DT = torch.float64


class AlignmentError(ValueError):
    pass


class NonFiniteLoss(AlignmentError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass
class AlignmentConfig:
    w_b: float = 1.0
    w_h: float = 1.0
    w_tc: float = 1.0e4
    w_hoi: float = 5.0e2
    lr: float = 2.0e-2
    iterations: int = 300
    joints: tuple | None = None  # optimised joint ids; None -> upper body + hands
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tol: float = 1e-9  # stop once L_total falls below this (Adam would otherwise amplify round-off gradients)

    def validate(self, skel: Skeleton) -> None:
        if min(self.w_b, self.w_h, self.w_tc, self.w_hoi) < 0:
            raise AlignmentError("loss weights must be non-negative")
        if self.lr <= 0 or self.iterations < 0:
            raise AlignmentError("need lr > 0 and iterations >= 0")
        if self.joints is not None and any(not 0 <= j < skel.num_joints for j in self.joints):
            raise AlignmentError("optimised joints must belong to the skeleton")


def default_joint_subset(skel: Skeleton) -> tuple:
    """Spine, shoulders, elbows, wrists and every hand joint."""
    keys = ("spine", "shoulder", "elbow", "wrist")
    return tuple(j for j, n in enumerate(skel.names) if skel.labels[j] == "hand" or any(k in n for k in keys))


@dataclass
class AlignmentProblem:
    skeleton: Skeleton
    camera: CameraModel
    root_translation: np.ndarray  # (F, 3)
    root_orientation: np.ndarray  # (F, 4)
    local_rotations: np.ndarray  # (F, J, 4) initial poses
    body_2d: np.ndarray  # (F, Jb, 2) observed body keypoints
    hand_2d: np.ndarray  # (F, Jh, 2)
    object_vertices: np.ndarray  # (n, 3) initial object vertices v_*
    part_joints: tuple  # J_*: joints that should touch the object
    body_ids: np.ndarray = field(default=None)
    hand_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        skel = self.skeleton
        if self.body_ids is None:
            self.body_ids = skel.body_ids()
        if self.hand_ids is None:
            self.hand_ids = skel.hand_ids()
        self.local_rotations = quat_normalize(np.asarray(self.local_rotations, dtype=float))
        f = len(self.local_rotations)
        if f < 2:
            raise AlignmentError("need at least two frames")
        if (len(self.body_2d) != f or len(self.hand_2d) != f or len(self.root_translation) != f
                or len(self.root_orientation) != f):
            raise AlignmentError("target arrays must have one entry per frame")
        self.object_vertices = np.asarray(self.object_vertices, dtype=float).reshape(-1, 3)
        if len(self.object_vertices) == 0 or len(self.part_joints) == 0:
            raise AlignmentError("contact spec needs joints and object vertices")

    @property
    def num_frames(self) -> int:
        return len(self.local_rotations)

    @classmethod
    def from_target(cls, target, skeleton: Skeleton, object_vertices, part_joints) -> "AlignmentProblem":
        b, h = skeleton.body_ids(), skeleton.hand_ids()
        return cls(skeleton, target.camera, target.root_translation, target.root_orientation, target.local_rotations,
                   target.keypoints_2d[:, b], target.keypoints_2d[:, h], object_vertices, tuple(part_joints), b, h)


# ---------------------------------------------------------------------------
# torch kernels

def _qmul(a, b):
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack([aw * bw - ax * bx - ay * by - az * bz,
                        aw * bx + ax * bw + ay * bz - az * by,
                        aw * by - ax * bz + ay * bw + az * bx,
                        aw * bz + ax * by - ay * bx + az * bw], dim=-1)


def _qexp(v):
    """Unit quaternion of rotation vector ``v``; smooth through zero."""
    th2 = (v * v).sum(-1, keepdim=True)
    small = th2 < 1e-8
    safe = torch.where(small, torch.ones_like(th2), th2)
    th = torch.sqrt(safe)
    c = torch.where(small, 1 - th2 / 8 + th2 * th2 / 384, torch.cos(th / 2))
    s = torch.where(small, 0.5 - th2 / 48 + th2 * th2 / 3840, torch.sin(th / 2) / th)
    return torch.cat([c, s * v], dim=-1)


def _qmat(q):
    q = q / q.norm(dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    return torch.stack([
        torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1)], -2)


def _geodesic(a, b):
    """Angle of the relative rotation between quaternions; sign-invariant."""
    a = a / a.norm(dim=-1, keepdim=True)
    b = b / b.norm(dim=-1, keepdim=True)
    w = (a * b).sum(-1)
    conj = a * torch.tensor([1.0, -1.0, -1.0, -1.0], dtype=a.dtype)
    v = _qmul(conj, b)[..., 1:]
    n = torch.sqrt(torch.clamp((v * v).sum(-1), min=1e-300))
    return 2.0 * torch.atan2(n, w.abs())


class _Model:
    def __init__(self, problem: AlignmentProblem):
        p = problem
        skel = p.skeleton
        self.p = p
        self.parents = [int(x) for x in skel.parents]
        self.offsets = torch.tensor(skel.offsets, dtype=_DT)
        self.root_t = torch.tensor(np.asarray(p.root_translation, dtype=float), dtype=_DT)
        self.root_R = _qmat(torch.tensor(np.asarray(p.root_orientation, dtype=float), dtype=_DT))
        cam = p.camera
        self.cam_R = torch.tensor(cam.rotation.as_matrix(), dtype=_DT)
        self.cam_t = torch.tensor(np.asarray(cam.translation), dtype=_DT)
        self.f, self.cx, self.cy = float(cam.focal), float(cam.cx), float(cam.cy)
        self.body = torch.as_tensor(np.asarray(p.body_ids), dtype=torch.long)
        self.hand = torch.as_tensor(np.asarray(p.hand_ids), dtype=torch.long)
        self.part = torch.as_tensor(np.asarray(p.part_joints), dtype=torch.long)
        self.body_2d = torch.tensor(np.asarray(p.body_2d, dtype=float), dtype=_DT)
        self.hand_2d = torch.tensor(np.asarray(p.hand_2d, dtype=float), dtype=_DT)
        self.verts = torch.tensor(p.object_vertices, dtype=_DT)

    def fk(self, q):
        R = _qmat(q)  # (F, J, 3, 3)
        rots = [self.root_R @ R[:, 0]]
        pos = [self.root_t]
        for j in range(1, len(self.parents)):
            pj = self.parents[j]
            pos.append(pos[pj] + rots[pj] @ self.offsets[j])
            rots.append(rots[pj] @ R[:, j])
        return torch.stack(pos, dim=1)

    def project(self, x):
        pc = x @ self.cam_R.T + self.cam_t
        if bool((pc[..., 2] <= 1e-6).any()):
            raise BehindCamera("joint behind camera during alignment")
        return torch.stack([self.f * pc[..., 0] / pc[..., 2] + self.cx,
                            self.f * pc[..., 1] / pc[..., 2] + self.cy], dim=-1)

    def _proj_loss(self, pos, ids, obs):
        if len(ids) == 0:
            return pos.new_zeros(())
        return ((self.project(pos[:, ids]) - obs) ** 2).sum(-1).mean()

    @staticmethod
    def _tc(q, ids):
        if len(ids) == 0:
            return q.new_zeros(())
        return _geodesic(q[:-1, ids], q[1:, ids]).mean(-1).sum()

    def terms(self, q):
        pos = self.fk(q)
        l_b = self._proj_loss(pos, self.body, self.body_2d)
        l_h = self._proj_loss(pos, self.hand, self.hand_2d)
        l_tc = self._tc(q, self.body) + self._tc(q, self.hand)
        d2 = ((pos[:, self.part, None, :] - self.verts[None, None]) ** 2).sum(-1)
        per_frame = d2.min(dim=-1).values.mean(dim=-1)
        l_hoi = per_frame[int(torch.argmin(per_frame.detach()))]  # earliest frame on ties
        return {"L_b": l_b, "L_h": l_h, "L_tc": l_tc, "L_HOI": l_hoi}


def _as_tensor(poses):
    if isinstance(poses, torch.Tensor):
        return poses
    return torch.tensor(np.asarray(poses, dtype=float), dtype=_DT)


def loss_terms(problem: AlignmentProblem, poses) -> dict:
    """All four losses (floats) for local rotations ``poses`` (F, J, 4)."""
    with torch.no_grad():
        return {k: float(v) for k, v in _Model(problem).terms(_as_tensor(poses)).items()}


def loss_body_proj(problem, poses) -> float:
    return loss_terms(problem, poses)["L_b"]


def loss_hand_proj(problem, poses) -> float:
    return loss_terms(problem, poses)["L_h"]


def loss_temporal(problem, poses) -> float:
    return loss_terms(problem, poses)["L_tc"]


def loss_hoi(problem, poses) -> float:
    return loss_terms(problem, poses)["L_HOI"]


def total_loss(terms: dict, cfg: AlignmentConfig):
    return cfg.w_b * terms["L_b"] + cfg.w_h * terms["L_h"] + cfg.w_tc * terms["L_tc"] + cfg.w_hoi * terms["L_HOI"]


class Parameterisation:
    """Poses as ``q = q_init * exp(delta)`` on the optimised joints; other joints stay fixed."""

    def __init__(self, problem: AlignmentProblem, joints):
        self.base = torch.tensor(problem.local_rotations, dtype=_DT)
        self.joints = torch.as_tensor(np.asarray(joints, dtype=int), dtype=torch.long)

    def zeros(self):
        return torch.zeros((self.base.shape[0], len(self.joints), 3), dtype=_DT)

    def poses(self, delta):
        q = self.base.clone()
        q[:, self.joints] = _qmul(self.base[:, self.joints], _qexp(delta))
        return q


def loss_and_grad(problem: AlignmentProblem, cfg: AlignmentConfig, delta: np.ndarray, which: str = "total"):
    """Value and gradient of one loss (or the weighted total) w.r.t. the rotation-vector increments."""
    joints = cfg.joints if cfg.joints is not None else default_joint_subset(problem.skeleton)
    par = Parameterisation(problem, joints)
    d = torch.tensor(np.asarray(delta, dtype=float), dtype=_DT, requires_grad=True)
    terms = _Model(problem).terms(par.poses(d))
    val = total_loss(terms, cfg) if which == "total" else terms[which]
    val.backward()
    return float(val.detach()), d.grad.numpy().copy()


@dataclass
class AlignmentResult:
    local_rotations: np.ndarray
    joint_positions: np.ndarray
    trace: list  # rows (iteration, L_b, L_h, L_tc, L_HOI, L_total)
    best_iteration: int

    @property
    def initial_total(self) -> float:
        return self.trace[0][-1]

    @property
    def final_total(self) -> float:
        return self.trace[self.best_iteration][-1]

    def write_trace(self, path) -> None:
        write_csv(path, ("iteration",) + LOSS_NAMES + ("L_total",), self.trace)


def align(problem: AlignmentProblem, cfg: AlignmentConfig | None = None) -> AlignmentResult:
    """Adam on per-frame rotation increments; returns the lowest-total iterate and the full trace."""
    cfg = cfg or AlignmentConfig()
    cfg.validate(problem.skeleton)
    joints = cfg.joints if cfg.joints is not None else default_joint_subset(problem.skeleton)
    model = _Model(problem)
    par = Parameterisation(problem, joints)
    delta = par.zeros().requires_grad_(True)
    opt = torch.optim.Adam([delta], lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    trace = []
    best, best_it, best_delta = np.inf, 0, delta.detach().clone()
    for it in range(cfg.iterations + 1):
        opt.zero_grad()
        terms = model.terms(par.poses(delta))
        tot = total_loss(terms, cfg)
        row = (it,) + tuple(float(terms[k].detach()) for k in LOSS_NAMES) + (float(tot.detach()),)
        trace.append(row)
        if not np.isfinite(row[-1]):
            raise NonFiniteLoss(f"non-finite alignment loss at iteration {it}", trace)
        if row[-1] < best:
            best, best_it, best_delta = row[-1], it, delta.detach().clone()
        if it == cfg.iterations or row[-1] <= cfg.tol:
            break
        tot.backward()
        opt.step()
    with torch.no_grad():
        q = par.poses(best_delta)
        q = q / q.norm(dim=-1, keepdim=True)
        pos = model.fk(q)
    out = q.numpy().copy()
    fixed = np.setdiff1d(np.arange(problem.skeleton.num_joints), np.asarray(joints, dtype=int))
    out[:, fixed] = problem.local_rotations[:, fixed]  # untouched joints stay bit-identical
    return AlignmentResult(out, pos.numpy().copy(), trace, best_it)


# ---------------------------------------------------------------------------
# evaluation helpers

def interacting_part_joints(skel: Skeleton, contact) -> tuple:
    """Fingertips of every hand carrying contact labels (both hands when none does)."""
    tips = np.asarray(skel.fingertips, dtype=int).reshape(2, -1)
    used = np.flatnonzero(np.asarray(contact).reshape(-1, 2).max(axis=0))
    hands = used if len(used) else np.arange(2)
    return tuple(int(j) for j in tips[hands].reshape(-1))


def hoi_distance(joint_positions, part_joints, object_vertices, frames) -> float:
    """Mean over ``frames`` of the RMS part-joint-to-object distance (m).

    ``object_vertices`` is (F, V, 3), one vertex set per frame.
    """
    frames = np.asarray(frames, dtype=int)
    if len(frames) == 0:
        return float("nan")
    p = np.asarray(joint_positions)[frames][:, list(part_joints)]
    v = np.asarray(object_vertices)[frames]
    d2 = np.sum((p[:, :, None] - v[:, None]) ** 2, -1).min(-1)
    return float(np.sqrt(d2.mean(-1)).mean())


def misaligned_target(scenario, seed: int, bias: float = 0.3, min_distance: float = 0.08, max_tries: int = 100):
    """Hybrid target whose interacting arm carries a constant rotation bias.

    Bias axes are redrawn (deterministically from ``seed``) until the biased
    pose leaves the fingertips more than ``min_distance`` from the object on
    the labelled contact frames. 2D keypoints stay those of the true motion.
    """
    from .geometry import fk_arrays
    from .targets import NoiseConfig, synth_reference

    skel = scenario.skeleton
    verts = scenario.object_vertices()
    side = scenario.interacting_hand
    tips = np.asarray(skel.fingertips, dtype=int).reshape(2, -1)[side]
    for k in range(max_tries):
        tgt = synth_reference(scenario, NoiseConfig(arm_bias=bias, pixel_sigma=0.5, track_sigma=0.1),
                              seed * max_tries + k)
        frames = np.flatnonzero(tgt.contact[:, side])
        _, pos = fk_arrays(skel.parents, skel.offsets, tgt.root_translation, tgt.root_orientation,
                           tgt.local_rotations)
        if len(frames) and hoi_distance(pos, tips, verts, frames) > min_distance:
            return tgt
    raise AlignmentError(f"no misaligned draw above {min_distance} m in {max_tries} tries")
