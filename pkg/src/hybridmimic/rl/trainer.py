"""PPO training loop over the vectorised desk environment."""
from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from ..io import write_csv
from ..rewards import RewardConfig
from .env import DeskEnv, Reference
from .networks import Actor, Critic, PolicySpec, RunningNorm
from .ppo import REASONS, NonFinite, TerminationThresholds, actor_loss, critic_loss, gae_advantages, \
    normalize_advantages

CHECKPOINT_VERSION = 1
LOG_COLUMNS = ["update", "env_steps", "mean_reward", "mean_r_h", "mean_r_o", "mean_r_c", "episodes",
               *[f"term_{r}" for r in REASONS[1:]], "truncated", "actor_loss", "l_ppo", "l_bound", "critic_loss"]


class DivergedTraining(RuntimeError):
    pass


@dataclass
class TrainerConfig:
    actor_lr: float = 2e-5
    critic_lr: float = 1e-4
    rollout_length: int = 32
    batch_size: int = 1024
    num_envs: int = 32
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    horizon: int = 4
    p_init: float = 0.5
    body_mean: float = 0.2
    body_max: float = 0.4
    fingertip_mean: float = 0.04
    alpha_2d: float = 0.08
    epochs: int = 5
    minibatches: int = 4
    max_grad_norm: float = 1.0
    max_env_steps: int = 2_000_000
    seed: int = 0
    policy: PolicySpec = field(default_factory=PolicySpec)

    def __post_init__(self):
        if isinstance(self.policy, dict):
            self.policy = PolicySpec(**self.policy)
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.batch_size != self.rollout_length * self.num_envs:
            raise ValueError("batch_size must equal rollout_length * num_envs")
        if self.batch_size % self.minibatches:
            raise ValueError("minibatches must divide batch_size")
        if min(self.rollout_length, self.num_envs, self.epochs, self.minibatches, self.horizon) < 1:
            raise ValueError("rollout_length, num_envs, epochs, minibatches and horizon must be >= 1")
        if self.max_env_steps < 0:
            raise ValueError("max_env_steps must be non-negative")

    @property
    def thresholds(self) -> TerminationThresholds:
        return TerminationThresholds(self.body_mean, self.body_max, self.fingertip_mean, self.alpha_2d)

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainerConfig":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown trainer options: {sorted(unknown)}")
        if "policy" in d:
            p = dict(d["policy"])
            bad = set(p) - {f.name for f in fields(PolicySpec)}
            if bad:
                raise ValueError(f"unknown policy options: {sorted(bad)}")
            d["policy"] = PolicySpec(**p)
        return cls(**d)


class Agent(torch.nn.Module):
    """Actor, critic and the per-group observation normalisers."""

    def __init__(self, dims: tuple, act_dim: int, spec: PolicySpec):
        super().__init__()
        self.dims, self.act_dim = tuple(int(d) for d in dims), int(act_dim)
        self.norms = torch.nn.ModuleList([RunningNorm(d) for d in dims])
        self.actor = Actor(dims, act_dim, spec)
        self.critic = Critic(dims, spec)

    def normalize(self, groups, update: bool = False):
        out = []
        for norm, g in zip(self.norms, groups):
            g = torch.as_tensor(np.asarray(g), dtype=torch.float64)
            if update:
                norm.update(g)
            out.append(norm(g).float())
        return out

    @torch.no_grad()
    def act(self, groups, deterministic: bool = True) -> np.ndarray:
        mu = self.actor(self.normalize(groups))
        return mu.double().numpy()


def save_checkpoint(path, agent: Agent, spec: PolicySpec, extra: dict | None = None) -> None:
    buf = io.BytesIO()
    torch.save({"state_dict": agent.state_dict(), "dims": agent.dims, "act_dim": agent.act_dim,
                "policy": asdict(spec), "extra": extra or {}}, buf)
    with open(path, "wb") as fh:
        fh.write(f"format-version {CHECKPOINT_VERSION}\n".encode())
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Returns ``(agent, payload)``."""
    raw = Path(path).read_bytes()
    head, _, body = raw.partition(b"\n")
    if head.decode(errors="replace").strip() != f"format-version {CHECKPOINT_VERSION}":
        raise ValueError(f"{path}: unsupported checkpoint header {head[:40]!r}")
    payload = torch.load(io.BytesIO(body), weights_only=False)
    spec = PolicySpec(**payload["policy"])
    agent = Agent(payload["dims"], payload["act_dim"], spec)
    agent.load_state_dict(payload["state_dict"])
    return agent, payload


@dataclass
class RolloutBuffer:
    obs: list  # per group (T, N, dim), normalised
    actions: np.ndarray  # (T, N, D)
    log_probs: np.ndarray  # (T, N)
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    reasons: np.ndarray

    @classmethod
    def empty(cls, t: int, n: int, dims, act_dim: int) -> "RolloutBuffer":
        z = np.zeros((t, n))
        return cls([np.zeros((t, n, d), dtype=np.float32) for d in dims], np.zeros((t, n, act_dim), dtype=np.float32),
                   z.copy(), z.copy(), z.copy(), z.copy(), np.zeros((t, n), dtype=int))


def make_env(world, reference: Reference, cfg: TrainerConfig, reward_cfg: RewardConfig, seed: int) -> DeskEnv:
    return DeskEnv(world, reference, reward_cfg, cfg.thresholds, cfg.num_envs, cfg.horizon, cfg.p_init, seed)


def _finite(*xs):
    return all(bool(torch.isfinite(x).all()) for x in xs)


def train(world, reference: Reference, cfg: TrainerConfig, reward_cfg: RewardConfig | None = None,
          checkpoint: str | Path | None = None, log_path: str | Path | None = None, progress=None):
    """Run PPO until ``cfg.max_env_steps`` environment steps; returns ``(agent, log rows)``."""
    reward_cfg = reward_cfg or RewardConfig()
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    env = make_env(world, reference, cfg, reward_cfg, cfg.seed)
    agent = Agent(env.observation_dims(), env.act_dim, cfg.policy)
    opt_a = torch.optim.Adam(agent.actor.parameters(), lr=cfg.actor_lr)
    opt_c = torch.optim.Adam(agent.critic.parameters(), lr=cfg.critic_lr)
    rows = []
    per_update = cfg.rollout_length * cfg.num_envs
    n_updates = cfg.max_env_steps // per_update
    obs = env.reset() if n_updates else None
    T, N = cfg.rollout_length, cfg.num_envs
    for u in range(n_updates):
        buf = RolloutBuffer.empty(T, N, agent.dims, agent.act_dim)
        parts = np.zeros((3,))
        env_reward = 0.0
        for t in range(T):
            with torch.no_grad():
                g = agent.normalize(obs, update=True)
                mu, dist = agent.actor.dist(g)
                a = mu + dist.stddev * torch.randn(mu.shape, generator=gen)
                logp = dist.log_prob(a).sum(-1)
                v = agent.critic(g)
            obs, r, term, trunc, info = env.step(a.double().numpy())
            env_reward += float(r.sum())  # logged reward excludes the bootstrap term
            if trunc.any():
                with torch.no_grad():
                    vb = agent.critic(agent.normalize(info["final_obs"])).double().numpy()
                r_boot = np.where(trunc, cfg.gamma * vb, 0.0)
            else:
                r_boot = 0.0
            for k in range(3):
                buf.obs[k][t] = g[k].numpy()
            buf.actions[t] = a.numpy()
            buf.log_probs[t] = logp.double().numpy()
            buf.values[t] = v.double().numpy()
            buf.rewards[t] = r + r_boot
            buf.dones[t] = (term | trunc).astype(float)
            buf.reasons[t] = np.where(trunc, len(REASONS), info["reason"])
            parts += [float(np.mean(p)) for p in info["parts"]]
        with torch.no_grad():
            last_v = agent.critic(agent.normalize(obs)).double().numpy()
        adv, ret = gae_advantages(buf.rewards, buf.values, buf.dones, last_v, cfg.gamma, cfg.gae_lambda)
        adv = normalize_advantages(adv)
        flat = lambda x: torch.as_tensor(np.asarray(x).reshape(T * N, *np.shape(x)[2:]))  # noqa: E731
        b_obs = [flat(o) for o in buf.obs]
        b_act, b_logp = flat(buf.actions), flat(buf.log_probs).float()
        b_adv, b_ret, b_val = flat(adv).float(), flat(ret).float(), flat(buf.values).float()
        stats = np.zeros(4)
        n_mb = 0
        mb = per_update // cfg.minibatches
        for _ in range(cfg.epochs):
            perm = torch.randperm(per_update, generator=gen)
            for i in range(cfg.minibatches):
                idx = perm[i * mb:(i + 1) * mb]
                groups = [o[idx] for o in b_obs]
                mu, dist = agent.actor.dist(groups)
                new_logp = dist.log_prob(b_act[idx]).sum(-1)
                try:
                    la, lp, lb = actor_loss(b_logp[idx], b_adv[idx], new_logp, mu, cfg.clip_eps)
                except NonFinite as exc:
                    raise DivergedTraining(f"update {u}: {exc}") from exc
                lc = critic_loss(agent.critic(groups), b_val[idx], b_ret[idx], cfg.clip_eps)
                if not _finite(la, lc):
                    raise DivergedTraining(f"update {u}: non-finite loss")
                opt_a.zero_grad()
                la.backward()
                torch.nn.utils.clip_grad_norm_(agent.actor.parameters(), cfg.max_grad_norm)
                opt_a.step()
                opt_c.zero_grad()
                lc.backward()
                torch.nn.utils.clip_grad_norm_(agent.critic.parameters(), cfg.max_grad_norm)
                opt_c.step()
                stats += [la.item(), lp.item(), lb.item(), lc.item()]
                n_mb += 1
        stats /= max(n_mb, 1)
        if not all(torch.isfinite(p).all() for p in agent.parameters()):
            raise DivergedTraining(f"update {u}: non-finite parameters")
        hist = [int(np.sum(buf.reasons == c)) for c in range(1, len(REASONS) + 1)]
        row = [u, (u + 1) * per_update, env_reward / per_update, *(parts / T),
               int(buf.dones.sum()), *hist, *stats]
        rows.append(row)
        if log_path is not None:
            write_log(log_path, rows)
        if progress is not None:
            progress(row, agent)
    if checkpoint is not None:
        save_checkpoint(checkpoint, agent, cfg.policy, {"updates": n_updates, "seed": cfg.seed})
    if log_path is not None:
        write_log(log_path, rows)
    return agent, rows


def write_log(path, rows) -> None:
    write_csv(path, LOG_COLUMNS, rows)


def initial_agent(world, reference: Reference, cfg: TrainerConfig) -> Agent:
    """The agent ``train`` starts from for ``cfg.seed``."""
    torch.manual_seed(cfg.seed)
    env = DeskEnv(world, reference, num_envs=1, horizon=cfg.horizon)
    return Agent(env.observation_dims(), env.act_dim, cfg.policy)


def rollout_policy(agent: Agent | None, world, reference: Reference, horizon: int = 4,
                   reward_cfg: RewardConfig | None = None):
    """Deterministic episode from frame 0 to the reference end without early termination.

    ``agent=None`` replays the reference joint targets open loop. Returns an
    :class:`EpisodeTrajectory` sampled at the control rate.
    """
    from ..metrics import EpisodeTrajectory

    env = DeskEnv(world, reference, reward_cfg, num_envs=1, horizon=horizon, early_termination=False)
    obs = env.reset([0])
    n_steps = int(round((reference.num_frames - 1) / reference.fps / world.dt))
    rec = {k: [] for k in ("t", "pos", "root", "opos", "oquat", "act", "rew", "psi")}
    for _ in range(n_steps):
        if agent is None:
            act = reference.actions[reference.frame_at(env.times() + world.dt)]
        else:
            act = np.clip(agent.act(obs), -1.0, 1.0)
        obs, r, _, trunc, info = env.step(act)
        s = info["state"]
        rec["t"].append(float(n_steps and (len(rec["t"]) + 1) * world.dt))
        rec["pos"].append(info["positions"][0])
        rec["root"].append(np.asarray(s.root_pos)[0])
        rec["opos"].append(np.asarray(s.obj_pos)[0])
        rec["oquat"].append(np.asarray(s.obj_quat)[0])
        rec["act"].append(np.asarray(act)[0])
        rec["rew"].append([r[0], *(float(p[0]) for p in info["parts"])])
        rec["psi"].append(reference.contact[info["frames"][0]])
        if trunc[0]:
            break
    return EpisodeTrajectory(np.array(rec["t"]), np.array(rec["pos"]), np.array(rec["root"]),
                             np.array(rec["opos"]), np.array(rec["oquat"]), np.array(rec["act"]),
                             np.array(rec["rew"]), np.array(rec["psi"]))
