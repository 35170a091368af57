"""Actor (three encoders fused by self-attention) and MLP critic."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class PolicySpec:
    encoder_width: int = 256
    encoder_layers: int = 2
    head_width: int = 1024
    head_layers: int = 3
    critic_width: int = 1024
    critic_layers: int = 4
    attention_heads: int = 4
    attention_layers: int = 1
    log_std_init: float = -1.0


def mlp(inp: int, widths, out: int | None = None) -> nn.Sequential:
    layers, d = [], inp
    for w in widths:
        layers += [nn.Linear(d, w), nn.ReLU()]
        d = w
    if out is not None:
        layers.append(nn.Linear(d, out))
    return nn.Sequential(*layers)


class RunningNorm(nn.Module):
    """Running mean/variance (parallel Welford) kept as buffers so checkpoints carry them."""

    def __init__(self, dim: int, clip: float = 10.0):
        super().__init__()
        self.register_buffer("mean", torch.zeros(dim, dtype=torch.float64))
        self.register_buffer("var", torch.ones(dim, dtype=torch.float64))
        self.register_buffer("count", torch.tensor(0.0, dtype=torch.float64))
        self.clip = clip

    @torch.no_grad()
    def update(self, x: torch.Tensor) -> None:
        x = x.reshape(-1, x.shape[-1]).to(torch.float64)
        n = x.shape[0]
        m, v = x.mean(0), x.var(0, unbiased=False)
        tot = self.count + n
        delta = m - self.mean
        self.mean += delta * n / tot
        self.var = (self.var * self.count + v * n + delta ** 2 * self.count * n / tot) / tot
        self.count = tot

    def forward(self, x):
        y = (x - self.mean.to(x.dtype)) / torch.sqrt(self.var.to(x.dtype) + 1e-8)
        return torch.clamp(y, -self.clip, self.clip)


class Actor(nn.Module):
    def __init__(self, dims: tuple, act_dim: int, spec: PolicySpec):
        super().__init__()
        w = spec.encoder_width
        self.encoders = nn.ModuleList([mlp(d, [w] * spec.encoder_layers) for d in dims])
        self.token_pos = nn.Parameter(torch.zeros(len(dims), w))  # order-aware fusion
        layer = nn.TransformerEncoderLayer(w, spec.attention_heads, dim_feedforward=2 * w, dropout=0.0,
                                           batch_first=True)
        self.fuse = nn.TransformerEncoder(layer, spec.attention_layers, enable_nested_tensor=False)
        self.head = mlp(len(dims) * w, [spec.head_width] * spec.head_layers, act_dim)
        with torch.no_grad():
            self.head[-1].weight.mul_(0.01)
            self.head[-1].bias.zero_()
        self.log_std = nn.Parameter(torch.full((act_dim,), float(spec.log_std_init)))

    def forward(self, groups):
        tokens = torch.stack([enc(g) for enc, g in zip(self.encoders, groups)], dim=-2) + self.token_pos
        fused = self.fuse(tokens)
        return self.head(fused.flatten(-2))

    def dist(self, groups):
        mu = self(groups)
        return mu, torch.distributions.Normal(mu, self.log_std.exp().expand_as(mu))


class Critic(nn.Module):
    def __init__(self, dims: tuple, spec: PolicySpec):
        super().__init__()
        self.net = mlp(sum(dims), [spec.critic_width] * spec.critic_layers, 1)

    def forward(self, groups):
        return self.net(torch.cat(list(groups), dim=-1)).squeeze(-1)
