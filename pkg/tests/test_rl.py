import math

import numpy as np
import pytest
import torch

from hybridmimic.rl.env import DeskEnv, Reference
from hybridmimic.rl.networks import Actor, PolicySpec, RunningNorm
from hybridmimic.rl.ppo import (LengthMismatch, NonFinite, TerminationThresholds, actor_loss, critic_loss,
                                early_termination, gae_advantages, sample_init_frame)
from hybridmimic.rl.trainer import (LOG_COLUMNS, TrainerConfig, initial_agent, load_checkpoint, train)
from hybridmimic.io import read_csv

from oracles import gae_oracle

TINY = PolicySpec(encoder_width=16, head_width=32, head_layers=2, critic_width=32, critic_layers=2,
                  attention_heads=2)


# GAE ----------------------------------------------------------------------------

def test_gae_single_step():
    adv, ret = gae_advantages([1.0], [0.5], [0.0], 2.0, 0.9, 0.95)
    assert adv[0] == pytest.approx(1.0 + 0.9 * 2.0 - 0.5)
    assert ret[0] == pytest.approx(adv[0] + 0.5)


def test_gae_lambda_zero_is_td_residual():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=8), rng.normal(size=8)
    d = np.zeros(8)
    d[3] = 1
    adv, _ = gae_advantages(r, v, d, 0.7, 0.9, 0.0)
    nxt = np.append(v[1:], 0.7)
    assert np.allclose(adv, r + 0.9 * nxt * (1 - d) - v, atol=1e-12)


def test_gae_matches_sum_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        t = int(rng.integers(1, 17))
        r, v = rng.normal(size=t), rng.normal(size=t)
        d = (rng.random(t) < 0.2).astype(float)
        last, g, lam = rng.normal(), rng.uniform(0.5, 1.0), rng.uniform(0, 1)
        a, ret = gae_advantages(r, v, d, last, g, lam)
        ao, reto = gae_oracle(r, v, d, last, g, lam)
        worst = max(worst, np.abs(a - ao).max(), np.abs(ret - reto).max())
    assert worst <= 1e-9


def test_gae_batched_columns_independent():
    rng = np.random.default_rng(2)
    r, v = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    d = (rng.random((6, 3)) < 0.3).astype(float)
    last = rng.normal(size=3)
    a, _ = gae_advantages(r, v, d, last, 0.99, 0.95)
    for n in range(3):
        assert np.allclose(a[:, n], gae_oracle(r[:, n], v[:, n], d[:, n], last[n], 0.99, 0.95)[0], atol=1e-12)


def test_gae_length_mismatch():
    with pytest.raises(LengthMismatch):
        gae_advantages([1.0, 2.0], [0.0], [0, 0], 0.0, 0.9, 0.9)


# losses -------------------------------------------------------------------------

def t(x):
    return torch.tensor(x, dtype=torch.float64)


def test_actor_loss_unit_ratio():
    adv = t([0.5, -1.0, 2.0])
    lp = t([-1.0, -2.0, -0.5])
    total, l_ppo, l_bound = actor_loss(lp, adv, lp, t([[0.2], [-0.9], [1.0]]), 0.2)
    assert total.item() == pytest.approx(-adv.mean().item()) and l_bound.item() == 0.0


def test_bound_contribution():
    lp = t([0.0])
    _, _, l_bound = actor_loss(lp, t([0.0]), lp, t([[1.5, 0.0]]), 0.2)
    assert l_bound.item() == pytest.approx(0.25)


def test_clip_branch():
    old = t([0.0])
    new = t([math.log(1.3)])
    _, l_ppo, _ = actor_loss(old, t([1.0]), new, t([[0.0]]), 0.2)
    assert l_ppo.item() == pytest.approx(-1.2)


def test_actor_loss_non_finite():
    with pytest.raises(NonFinite):
        actor_loss(t([0.0]), t([float("nan")]), t([0.0]), t([[0.0]]), 0.2)


def test_critic_loss_examples():
    v = t([1.0, 2.0])
    assert critic_loss(v, v, v, 0.2).item() == 0.0
    # V = R, V_old far: V_clip = V_old + eps, loss = 0.5 * (V_clip - R)^2
    loss = critic_loss(t([1.0]), t([5.0]), t([1.0]), 0.2)
    assert loss.item() == pytest.approx(0.5 * (4.8 - 1.0) ** 2)


def test_critic_loss_elementwise_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(1, 20))
        v, vo, r = rng.normal(size=(3, n))
        eps = rng.uniform(0.05, 0.5)
        want = 0.5 * np.mean([max((v[i] - r[i]) ** 2, (min(max(v[i], vo[i] - eps), vo[i] + eps) - r[i]) ** 2)
                              for i in range(n)])
        assert critic_loss(t(v), t(vo), t(r), eps).item() == pytest.approx(want, rel=1e-9, abs=1e-12)


def test_critic_loss_length_mismatch():
    with pytest.raises(LengthMismatch):
        critic_loss(t([1.0, 2.0]), t([1.0]), t([1.0, 2.0]), 0.2)


def _fd_check(f, x, h=1e-6):
    x = x.clone().requires_grad_(True)
    f(x).backward()
    g = x.grad.clone()
    fd = torch.zeros_like(x)
    with torch.no_grad():
        flat, fdf = x.view(-1), fd.view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + h
            fp = f(x).item()
            flat[i] = old - h
            fm = f(x).item()
            flat[i] = old
            fdf[i] = (fp - fm) / (2 * h)
    return torch.linalg.norm(g - fd).item() / max(torch.linalg.norm(fd).item(), 1e-12)


def test_actor_loss_gradient_wrt_mu():
    rng = np.random.default_rng(4)
    for _ in range(50):
        b, d = 8, 3
        mu0 = t(rng.normal(size=(b, d)) * 1.2)
        std = t(np.exp(rng.normal(size=d) * 0.3 - 1))
        act = t(rng.normal(size=(b, d)))
        old = t(rng.normal(size=b) * 0.1) + torch.distributions.Normal(mu0, std).log_prob(act).sum(-1)
        adv = t(rng.normal(size=b))

        def f(mu):
            new = torch.distributions.Normal(mu, std).log_prob(act).sum(-1)
            return actor_loss(old, adv, new, mu, 0.2)[0]
        assert _fd_check(f, mu0) < 1e-4


def test_critic_loss_gradient():
    rng = np.random.default_rng(5)
    for _ in range(50):
        vo, r = t(rng.normal(size=10)), t(rng.normal(size=10))
        v0 = vo + t(rng.normal(size=10) * 0.5)
        assert _fd_check(lambda v: critic_loss(v, vo, r, 0.2), v0) < 1e-4


def test_zero_advantage_update_leaves_actor_unchanged():
    torch.manual_seed(0)
    dims = (5, 4, 6)
    actor = Actor(dims, 3, TINY)
    opt = torch.optim.Adam(actor.parameters(), lr=1e-2)
    before = [p.detach().clone() for p in actor.parameters()]
    groups = [torch.randn(16, d) for d in dims]
    mu, dist = actor.dist(groups)
    assert mu.abs().max() <= 1.0
    act = dist.sample()
    old = dist.log_prob(act).sum(-1).detach()
    mu, dist = actor.dist(groups)
    loss, _, _ = actor_loss(old, torch.zeros(16), dist.log_prob(act).sum(-1), mu, 0.2)
    opt.zero_grad()
    loss.backward()
    opt.step()
    for a, b in zip(before, actor.parameters()):
        assert torch.equal(a, b)


# termination / init ------------------------------------------------------------

def test_tau_2d():
    assert TerminationThresholds().tau_2d(1024, 576) == pytest.approx(93.99, abs=0.01)


def _term(body_err, tip_err=0.0, px=0.0):
    j = 6
    ref = np.zeros((j, 3))
    sim = np.zeros((j, 3))
    sim[:4, 0] = body_err
    sim[4:, 0] = tip_err
    return int(early_termination(sim, ref, np.arange(4), np.arange(4, 6), px, 1024, 576))


def test_termination_examples():
    assert _term(0.0) == 0
    assert _term(0.25) == 1
    assert _term(0.0, 0.05) == 3
    assert _term(0.0, 0.0, 100.0) == 4


def test_termination_monotone():
    rng = np.random.default_rng(6)
    for _ in range(500):
        e = rng.uniform(0, 0.5, size=3) * [1, 0.1, 200]
        base = _term(*e)
        bumped = _term(*(e + rng.uniform(0, 0.2, size=3) * [1, 0.1, 200] * (rng.random(3) < 0.5)))
        assert not (base > 0 and bumped == 0)


def test_init_frame_no_contact_uniform():
    rng = np.random.default_rng(7)
    draws = [sample_init_frame(np.zeros((12, 2)), rng) for _ in range(6000)]
    counts = np.bincount(draws, minlength=12)
    assert counts.min() > 350 and set(draws) == set(range(12))


def test_init_frame_support_before_first_contact():
    c = np.zeros((40, 2), dtype=int)
    c[10:, 1] = 1
    rng = np.random.default_rng(8)
    draws = np.array([sample_init_frame(c, rng) for _ in range(4000)])
    assert draws.max() < 10 and set(draws) == set(range(10))


def test_init_frame_start_probability():
    c = np.zeros((300, 2), dtype=int)
    c[100:, 0] = 1
    rng = np.random.default_rng(9)
    draws = np.array([sample_init_frame(c, rng) for _ in range(100_000)])
    assert abs(np.mean(draws == 0) - 0.5) <= 0.01


# networks -----------------------------------------------------------------------

def test_running_norm_matches_numpy():
    rng = np.random.default_rng(10)
    norm = RunningNorm(3)
    chunks = [rng.normal(size=(int(rng.integers(1, 30)), 3)) * [1, 5, 0.1] + [2, -1, 0] for _ in range(6)]
    for c in chunks:
        norm.update(torch.as_tensor(c))
    x = np.concatenate(chunks)
    assert np.allclose(norm.mean.numpy(), x.mean(0), atol=1e-6)
    assert np.allclose(norm.var.numpy(), x.var(0), rtol=1e-9)


# trainer ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk(scenario, target):
    world = scenario.world()
    return world, Reference.from_target(target, world, scenario.box_vertices)


def small_cfg(**kw):
    base = dict(num_envs=4, rollout_length=8, batch_size=32, minibatches=2, epochs=2, max_env_steps=64,
                actor_lr=1e-3, critic_lr=1e-3, policy=TINY)
    base.update(kw)
    return TrainerConfig(**base)


def test_zero_budget_checkpoint_is_initialisation(desk, tmp_path):
    world, ref = desk
    cfg = small_cfg(max_env_steps=0, seed=3)
    agent, rows = train(world, ref, cfg, checkpoint=tmp_path / "ck.pt")
    assert rows == []
    assert (tmp_path / "ck.pt").read_bytes().startswith(b"format-version 1\n")
    loaded, _ = load_checkpoint(tmp_path / "ck.pt")
    init = initial_agent(world, ref, cfg)
    for (ka, a), (kb, b) in zip(init.state_dict().items(), loaded.state_dict().items()):
        assert ka == kb and torch.equal(a, b)


def test_same_seed_identical_logs(desk, tmp_path):
    world, ref = desk
    train(world, ref, small_cfg(seed=1), log_path=tmp_path / "a.csv")
    train(world, ref, small_cfg(seed=1), log_path=tmp_path / "b.csv")
    a = (tmp_path / "a.csv").read_text()
    assert a == (tmp_path / "b.csv").read_text()
    header, rows = read_csv(tmp_path / "a.csv")
    assert header == LOG_COLUMNS and len(rows) == 2


def test_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(gamma=0.0)
    with pytest.raises(ValueError):
        TrainerConfig(gae_lambda=1.5)
    with pytest.raises(ValueError):
        TrainerConfig(batch_size=100)
    with pytest.raises(ValueError):
        TrainerConfig.from_dict({"lr": 1.0})


def test_episode_reward_bookkeeping(desk):
    """Per-episode sums of the step rewards equal an offline recomputation from stored states."""
    world, ref = desk
    env = DeskEnv(world, ref, num_envs=3, seed=0)
    env.reset([0, 5, 20])
    rng = np.random.default_rng(11)
    logged = np.zeros(3)
    offline = np.zeros(3)
    finished = 0
    for _ in range(60):
        frames = ref.frame_at(env.times() + world.dt)
        act = ref.actions[np.minimum(frames, ref.num_frames - 1)] + rng.normal(size=(3, env.act_dim)) * 0.02
        obs, r, term, trunc, info = env.step(act)
        snap = info["state"]
        again, _, _, _ = env.reward_terms(snap, info["frames"])
        logged += r
        offline += again
        done = term | trunc
        finished += int(done.sum())
    assert np.allclose(logged, offline, atol=1e-6)
