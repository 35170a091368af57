"""Episode recording and imitation metrics (MPJPE, root/object errors, contact precision)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import quat_geodesic, quat_to_matrix
from .io import read_sections, write_csv, write_sections
from .rewards import hand_object_distance

SUCCESS_MPJPE = 0.2  # m
SUCCESS_T_OBJ = 0.2  # m
CONTACT_THRESHOLDS = (0.1, 0.025)  # m


class LengthMismatch(ValueError):
    pass


@dataclass
class EpisodeTrajectory:
    """One rollout sampled at the control rate."""

    times: np.ndarray  # (T,) seconds
    joint_positions: np.ndarray  # (T, J, 3)
    root_positions: np.ndarray  # (T, 3)
    object_positions: np.ndarray  # (T, 3)
    object_quats: np.ndarray  # (T, 4)
    actions: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))  # (T, D)
    rewards: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))  # (T, 4): R, R_h, R_o, R_c
    psi: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))  # (T, 2)
    reference: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory timestamps must increase")

    @property
    def num_steps(self) -> int:
        return len(self.times)

    def save(self, path) -> None:
        write_sections(path, {"trajectory": {
            "reference": self.reference or "-", "times": self.times, "joint_positions": self.joint_positions,
            "root_positions": self.root_positions, "object_positions": self.object_positions,
            "object_quats": self.object_quats, "actions": np.asarray(self.actions, dtype=float),
            "rewards": np.asarray(self.rewards, dtype=float), "psi": np.asarray(self.psi, dtype=int)}})

    @classmethod
    def load(cls, path) -> "EpisodeTrajectory":
        d = read_sections(path)["trajectory"]
        ref = str(d.get("reference", ""))
        return cls(d["times"], d["joint_positions"], d["root_positions"], d["object_positions"],
                   d["object_quats"], d["actions"], d["rewards"], d["psi"].astype(int),
                   "" if ref == "-" else ref)


@dataclass
class GroundTruth:
    """Reference motion the metrics are measured against."""

    fps: float
    joint_positions: np.ndarray  # (F, J, 3)
    root_positions: np.ndarray  # (F, 3)
    object_positions: np.ndarray  # (F, 3)
    object_quats: np.ndarray  # (F, 4)
    contact: np.ndarray  # (F, 2)
    body_ids: np.ndarray
    hand_ids: np.ndarray
    fingertips: np.ndarray  # (2, k)
    mesh_vertices: np.ndarray  # object-frame vertices

    @classmethod
    def from_scenario(cls, scenario, contact) -> "GroundTruth":
        skel = scenario.skeleton
        pos = scenario.joint_positions()
        return cls(scenario.fps, pos, pos[:, 0].copy(), np.asarray(scenario.object_positions, dtype=float),
                   np.asarray(scenario.object_quats, dtype=float), np.asarray(contact, dtype=int),
                   skel.body_ids(), skel.hand_ids(), np.asarray(skel.fingertips, dtype=int).reshape(2, -1),
                   np.asarray(scenario.box_vertices, dtype=float))

    @property
    def num_frames(self) -> int:
        return len(self.joint_positions)


@dataclass
class MetricsReport:
    mpjpe_body: float  # mm
    mpjpe_hand: float
    mpjpe_all: float
    t_root: float  # mm
    t_obj: float  # mm
    o_obj: float  # rad
    success: bool
    c_prec_100: float  # fraction of contact frames with hand-object distance < 0.1 m
    c_prec_025: float  # ... < 0.025 m
    d_hoi: float  # mm
    steps: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        write_sections(path, {"metrics": {k: (int(v) if isinstance(v, (bool, np.bool_)) else v)
                                          for k, v in self.to_dict().items()}})

    @classmethod
    def load(cls, path) -> "MetricsReport":
        d = read_sections(path)["metrics"]
        d["success"] = bool(d["success"])
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def is_success(mpjpe_all_m: float, t_obj_m: float) -> bool:
    return bool(mpjpe_all_m < SUCCESS_MPJPE and t_obj_m < SUCCESS_T_OBJ)


def contact_distances(joint_positions, fingertips, mesh_vertices, obj_pos, obj_quat):
    """RMS fingertip-to-object distance per hand (T, 2) in metres."""
    R = quat_to_matrix(np.asarray(obj_quat, dtype=float))
    verts = np.einsum("tab,vb->tva", R, mesh_vertices) + np.asarray(obj_pos)[:, None]
    return np.stack([hand_object_distance(joint_positions[:, tips], verts) for tips in fingertips], -1)


def compute_metrics(traj: EpisodeTrajectory, gt: GroundTruth) -> MetricsReport:
    if traj.num_steps == 0:
        raise LengthMismatch("empty trajectory")
    if traj.joint_positions.shape[1:] != gt.joint_positions.shape[1:]:
        raise LengthMismatch("trajectory and reference joint sets differ")
    # nearest reference frame per step; steps past the reference end are dropped
    frames = np.rint(traj.times * gt.fps).astype(int)
    keep = frames < gt.num_frames
    if not keep.any():
        raise LengthMismatch("trajectory lies entirely after the reference")
    f = frames[keep]
    pos = traj.joint_positions[keep]
    err = np.linalg.norm(pos - gt.joint_positions[f], axis=-1)
    mp_all = float(err.mean())
    t_obj = float(np.linalg.norm(traj.object_positions[keep] - gt.object_positions[f], axis=-1).mean())
    o_obj = float(quat_geodesic(traj.object_quats[keep], gt.object_quats[f]).mean())
    t_root = float(np.linalg.norm(traj.root_positions[keep] - gt.root_positions[f], axis=-1).mean())
    psi = gt.contact[f]
    if psi.any():
        d = contact_distances(pos, gt.fingertips, gt.mesh_vertices, traj.object_positions[keep],
                              traj.object_quats[keep])[psi.astype(bool)]
        c100, c025 = (float(np.mean(d < tau)) for tau in CONTACT_THRESHOLDS)
        d_hoi = float(d.mean() * 1e3)
    else:
        c100 = c025 = d_hoi = float("nan")
    return MetricsReport(float(err[:, gt.body_ids].mean() * 1e3), float(err[:, gt.hand_ids].mean() * 1e3),
                         mp_all * 1e3, t_root * 1e3, t_obj * 1e3, o_obj, is_success(mp_all, t_obj),
                         c100, c025, d_hoi, int(keep.sum()))


def export_reports(path, reports: dict) -> None:
    """One CSV row per named report."""
    cols = list(MetricsReport.__dataclass_fields__)
    rows = [[name, *[int(v) if isinstance(v, bool) else v for v in (getattr(r, c) for c in cols)]]
            for name, r in reports.items()]
    write_csv(Path(path), ["run", *cols], rows)
