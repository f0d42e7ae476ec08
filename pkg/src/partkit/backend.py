"""Diffusion backends.

A backend bundles the frozen pieces of a latent diffusion stack: the
latent codec, the text-side projection, the denoiser with named
cross-attention layers, and the noise schedule. The toy backend keeps all
of it small enough to train on a CPU while exposing the same surfaces a
production UNet adapter would: per-layer attention probabilities, LoRA-
wrappable q/k/v/out projections, and deterministic construction from a
config + seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Protocol

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import BackendError, InputError


class DiffusionBackend(Protocol):
    """Contract consumed by the trainer, generator, and evaluator."""

    latent_shape: tuple[int, int, int]
    attn_grid: tuple[int, int]
    token_dim: int

    def cross_attention_layers(self) -> tuple[str, ...]: ...
    def encode(self, images: torch.Tensor) -> torch.Tensor: ...
    def decode(self, latents: torch.Tensor) -> torch.Tensor: ...
    def build_condition(self, token_embs: torch.Tensor) -> torch.Tensor: ...
    def predict_noise(self, z_t: torch.Tensor, t: torch.Tensor,
                      cond: torch.Tensor, record_attention: bool = False
                      ) -> tuple[torch.Tensor, dict[str, torch.Tensor]]: ...


class NoiseSchedule:
    """Linear-beta DDPM schedule with a deterministic DDIM update."""

    def __init__(self, timesteps: int = 1000, beta_start: float = 1e-4,
                 beta_end: float = 0.02):
        self.timesteps = timesteps
        betas = torch.linspace(beta_start, beta_end, timesteps, dtype=torch.float32)
        alphas = 1.0 - betas
        self.alphas_bar = torch.cumprod(alphas, dim=0)

    def q_sample(self, z0: torch.Tensor, t: torch.Tensor,
                 eps: torch.Tensor) -> torch.Tensor:
        ab = self.alphas_bar[t].view(-1, *([1] * (z0.ndim - 1)))
        return torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps

    def ddim_step(self, z_t: torch.Tensor, eps: torch.Tensor, t: int,
                  t_prev: int, clip_range: float = 1.0) -> torch.Tensor:
        ab_t = self.alphas_bar[t]
        ab_prev = self.alphas_bar[t_prev] if t_prev >= 0 else torch.tensor(1.0)
        z0 = (z_t - torch.sqrt(1.0 - ab_t) * eps) / torch.sqrt(ab_t)
        if clip_range:
            # bounded latents: clip the sample prediction and keep the
            # implied noise consistent with it
            z0 = z0.clamp(-clip_range, clip_range)
            eps = (z_t - torch.sqrt(ab_t) * z0) / torch.sqrt(1.0 - ab_t)
        return torch.sqrt(ab_prev) * z0 + torch.sqrt(1.0 - ab_prev) * eps

    def ddim_timesteps(self, steps: int) -> list[int]:
        if steps < 1:
            raise InputError(f"steps must be >= 1, got {steps}")
        steps = min(steps, self.timesteps)
        ts = np.linspace(0, self.timesteps - 1, steps).round().astype(int)
        return sorted(set(int(t) for t in ts), reverse=True)


def _sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class CrossAttention(nn.Module):
    """Multi-head cross-attention from spatial features to text tokens."""

    def __init__(self, channels: int, cond_dim: int, heads: int):
        super().__init__()
        if channels % heads != 0:
            raise BackendError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.norm = nn.LayerNorm(channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(cond_dim, channels, bias=False)
        self.to_v = nn.Linear(cond_dim, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor, cond: torch.Tensor,
                sink: dict | None = None, name: str = ""):
        # x: (B, HW, C), cond: (B, T, cond_dim)
        b, hw, c = x.shape
        h = self.heads
        d = c // h
        q = self.to_q(self.norm(x)).view(b, hw, h, d).transpose(1, 2)
        k = self.to_k(cond).view(b, -1, h, d).transpose(1, 2)
        v = self.to_v(cond).view(b, -1, h, d).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(d)
        probs = scores.softmax(dim=-1)  # (B, h, HW, T)
        if sink is not None:
            sink[name] = probs
        out = (probs @ v).transpose(1, 2).reshape(b, hw, c)
        return x + self.to_out(out)


class ResBlock(nn.Module):
    def __init__(self, channels: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, channels)
        self.norm2 = nn.GroupNorm(8, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class ToyDenoiser(nn.Module):
    """Small fixed-resolution denoiser with two named cross-attention layers."""

    def __init__(self, latent_channels: int, channels: int, cond_dim: int, heads: int):
        super().__init__()
        self.stem = nn.Conv2d(latent_channels, channels, 3, padding=1)
        self.time_mlp = nn.Sequential(
            nn.Linear(channels, channels * 2), nn.SiLU(),
            nn.Linear(channels * 2, channels),
        )
        self.block1 = ResBlock(channels, channels)
        self.attn1 = CrossAttention(channels, cond_dim, heads)
        self.block2 = ResBlock(channels, channels)
        self.attn2 = CrossAttention(channels, cond_dim, heads)
        self.out_norm = nn.GroupNorm(8, channels)
        self.out_conv = nn.Conv2d(channels, latent_channels, 3, padding=1)
        self.channels = channels

    def forward(self, z_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor,
                sink: dict | None = None) -> torch.Tensor:
        b, _, hgt, wid = z_t.shape
        temb = self.time_mlp(_sinusoidal_embedding(t, self.channels))
        x = self.stem(z_t)
        x = self.block1(x, temb)
        flat = x.flatten(2).transpose(1, 2)
        flat = self.attn1(flat, cond, sink, "attn1")
        x = flat.transpose(1, 2).view(b, -1, hgt, wid)
        x = self.block2(x, temb)
        flat = x.flatten(2).transpose(1, 2)
        flat = self.attn2(flat, cond, sink, "attn2")
        x = flat.transpose(1, 2).view(b, -1, hgt, wid)
        return self.out_conv(F.silu(self.out_norm(x)))


@dataclass
class ToyBackendConfig:
    image_size: int = 64
    latent_channels: int = 3
    latent_size: int = 16
    channels: int = 48
    heads: int = 2
    cond_dim: int = 32
    token_dim: int = 32
    timesteps: int = 400
    beta_start: float = 1e-4
    beta_end: float = 0.02
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ToyBackendConfig":
        return cls(**d)


class ToyBackend:
    """CPU-scale latent diffusion backend. Construction is deterministic
    given the config, so checkpoints only need adapter and token weights
    plus the config to reproduce a full model."""

    name = "toy"

    def __init__(self, config: ToyBackendConfig | None = None):
        self.config = config or ToyBackendConfig()
        c = self.config
        if c.image_size % c.latent_size != 0:
            raise BackendError("image_size must be a multiple of latent_size")
        self.pool = c.image_size // c.latent_size
        self.latent_shape = (c.latent_channels, c.latent_size, c.latent_size)
        self.attn_grid = (c.latent_size, c.latent_size)
        self.token_dim = c.token_dim
        self.schedule = NoiseSchedule(c.timesteps, c.beta_start, c.beta_end)
        with torch.random.fork_rng():
            torch.manual_seed(c.seed)
            self.denoiser = ToyDenoiser(c.latent_channels, c.channels,
                                        c.cond_dim, c.heads)
            self.text_proj = nn.Linear(c.token_dim, c.cond_dim)
            # norm-preserving frozen projection keeps token geometry intact
            nn.init.orthogonal_(self.text_proj.weight)
            nn.init.zeros_(self.text_proj.bias)
        self.text_proj.requires_grad_(False)

    def cross_attention_layers(self) -> tuple[str, ...]:
        return ("attn1", "attn2")

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, S, S) images in [0, 1] -> (B, C, s, s) latents in [-1, 1]."""
        if images.ndim != 4 or images.shape[1] != self.config.latent_channels:
            raise InputError(f"expected (B, 3, S, S) images, got {tuple(images.shape)}")
        return torch.nn.functional.avg_pool2d(images * 2.0 - 1.0, self.pool)

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        up = torch.repeat_interleave(
            torch.repeat_interleave(latents, self.pool, dim=-1), self.pool, dim=-2
        )
        return ((up + 1.0) / 2.0).clamp(0.0, 1.0)

    def build_condition(self, token_embs: torch.Tensor) -> torch.Tensor:
        """Frozen text-side projection of (B, T, token_dim) embeddings.

        The final layer norm mirrors text encoders that emit unit-RMS
        token states regardless of the raw embedding scale.
        """
        cond = self.text_proj(token_embs)
        return F.layer_norm(cond, (cond.shape[-1],))

    def predict_noise(self, z_t: torch.Tensor, t: torch.Tensor,
                      cond: torch.Tensor, record_attention: bool = False
                      ) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
        sink: dict[str, torch.Tensor] | None = {} if record_attention else None
        eps = self.denoiser(z_t, t, cond, sink)
        return eps, (sink or {})


def images_to_tensor(images: list[np.ndarray]) -> torch.Tensor:
    """Stack (H, W, 3) float arrays in [0, 1] into a (B, 3, H, W) tensor."""
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def tensor_to_images(batch: torch.Tensor) -> list[np.ndarray]:
    arr = batch.detach().clamp(0.0, 1.0).permute(0, 2, 3, 1).cpu().numpy()
    return [np.ascontiguousarray(a, dtype=np.float32) for a in arr]
