"""PPO building blocks: GAE, the actor and critic losses, early termination and start-frame sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class RLError(ValueError):
    pass


class LengthMismatch(RLError):
    pass


class NonFinite(RLError):
    pass


def gae_advantages(rewards, values, dones, last_value, gamma: float, lam: float):
    """Generalised advantage estimates and target returns.

    Arrays are (T,) or (T, N); ``dones[t]`` marks the end of an episode after
    step ``t`` (no bootstrapping across it); ``last_value`` bootstraps step T-1.
    Returns ``(advantages, returns)`` with returns = advantages + values.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    if r.shape != v.shape or r.shape != d.shape:
        raise LengthMismatch("rewards, values and dones must align")
    last = np.broadcast_to(np.asarray(last_value, dtype=float), r.shape[1:])
    adv = np.zeros_like(r)
    running = np.zeros(r.shape[1:])
    for t in range(len(r) - 1, -1, -1):
        nxt = last if t == len(r) - 1 else v[t + 1]
        live = 1.0 - d[t]
        delta = r[t] + gamma * nxt * live - v[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
    return adv, adv + v


def normalize_advantages(adv, eps: float = 1e-8):
    """Zero mean, unit (population) standard deviation over the batch."""
    return (adv - adv.mean()) / (adv.std(unbiased=False) + eps) if torch.is_tensor(adv) else \
        (adv - np.mean(adv)) / (np.std(adv) + eps)


def bound_loss(mu):
    """Per-sample sum over outputs of relu(mu - 1)^2 + relu(-mu - 1)^2, averaged over the batch."""
    return (torch.relu(mu - 1.0) ** 2 + torch.relu(-mu - 1.0) ** 2).sum(-1).mean()


def actor_loss(old_log_probs, advantages, new_log_probs, mu, eps: float):
    """Clipped surrogate plus the action-bound penalty; returns (total, L_ppo, L_bound)."""
    ratio = torch.exp(new_log_probs - old_log_probs)
    surr = torch.min(ratio * advantages, torch.clamp(ratio, 1.0 - eps, 1.0 + eps) * advantages)
    l_ppo = -surr.mean()
    l_bound = bound_loss(mu)
    total = l_ppo + l_bound
    if not torch.isfinite(total):
        raise NonFinite("non-finite actor loss")
    return total, l_ppo, l_bound


def critic_loss(values, old_values, returns, eps: float):
    """0.5 * mean(max((V - R)^2, (V_clip - R)^2)) with V_clip = V_old + clip(V - V_old, -eps, eps)."""
    if values.shape != old_values.shape or values.shape != returns.shape:
        raise LengthMismatch("values, old values and returns must align")
    v_clip = old_values + torch.clamp(values - old_values, -eps, eps)
    return 0.5 * torch.max((values - returns) ** 2, (v_clip - returns) ** 2).mean()


# ---------------------------------------------------------------------------
# termination

REASONS = ("continue", "body_mean", "body_max", "fingertip_mean", "object_2d")


@dataclass
class TerminationThresholds:
    body_mean: float = 0.2  # m
    body_max: float = 0.4  # m
    fingertip_mean: float = 0.04  # m
    alpha_2d: float = 0.08  # fraction of the image diagonal

    def tau_2d(self, width: int, height: int) -> float:
        return self.alpha_2d * float(np.hypot(width, height))


def early_termination(sim_pos, ref_pos, body_ids, fingertip_ids, object_px_error, width: int, height: int,
                      th: TerminationThresholds | None = None):
    """Reason code per world (index into ``REASONS``); 0 means continue.

    ``object_px_error`` is the mean (unsquared) pixel distance between the
    projected simulated object vertices and the 2D tracks; nan counts as 0.
    """
    th = th or TerminationThresholds()
    err = np.linalg.norm(np.asarray(sim_pos, float) - np.asarray(ref_pos, float), axis=-1)
    body = err[..., np.asarray(body_ids)]
    tips = err[..., np.asarray(fingertip_ids)]
    obj = np.nan_to_num(np.asarray(object_px_error, dtype=float), nan=0.0)
    code = np.zeros(np.shape(body)[:-1], dtype=int)
    checks = [(4, obj > th.tau_2d(width, height)), (3, tips.mean(-1) > th.fingertip_mean),
              (2, body.max(-1) > th.body_max), (1, body.mean(-1) > th.body_mean)]
    for c, hit in checks:  # lowest code wins when several fire
        code = np.where(hit, c, code)
    return code


def sample_init_frame(contact, rng: np.random.Generator, p_start: float = 0.5) -> int:
    """Frame 0 with probability ``p_start``; otherwise uniform over the frames before the first contact."""
    contact = np.asarray(contact).reshape(len(contact), -1)
    f = len(contact)
    hit = np.flatnonzero(contact.max(axis=1))
    if len(hit) == 0:
        # draw the coin anyway so the random stream does not depend on the labels
        rng.random()
        return int(rng.integers(0, f))
    if rng.random() < p_start:
        return 0
    first = int(hit[0])
    return 0 if first == 0 else int(rng.integers(0, first))
