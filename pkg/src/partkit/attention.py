"""Entropy-normalized attention supervision.

Cross-attention columns for the part tokens are averaged over heads and
layers, normalized across parts at every spatial location, and penalized
with binary cross-entropy against the part masks. Everything here is a
pure function of its inputs and differentiable end to end.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping

import torch

from .errors import ConfigError, InputError, InternalError, NumericError
from .parts import PartMaskSet

log = logging.getLogger(__name__)

# 16x16 cross-attention layers of the Stable Diffusion v1.5 UNet; the
# default layer selection when adapting that family of backends.
SD15_CROSS_ATTENTION_16X16 = (
    "down_blocks.2.attentions.0.transformer_blocks.0.attn2",
    "down_blocks.2.attentions.1.transformer_blocks.0.attn2",
    "up_blocks.1.attentions.0.transformer_blocks.0.attn2",
    "up_blocks.1.attentions.1.transformer_blocks.0.attn2",
    "up_blocks.1.attentions.2.transformer_blocks.0.attn2",
)

DEFAULT_LAMBDA_ATTN = 0.01
NORM_EPS = 1e-8
LOG_CLAMP = 1e-6


@dataclass
class AttentionStack:
    """Head-averaged attention columns: (L layers, P present parts, H*W)."""

    maps: torch.Tensor
    layer_ids: tuple[str, ...]
    slots: tuple[int, ...]
    grid: tuple[int, int]

    def __post_init__(self):
        if self.maps.ndim != 3:
            raise InputError(f"attention maps must be (L, P, HW), got {tuple(self.maps.shape)}")
        if self.maps.shape[0] != len(self.layer_ids) or self.maps.shape[0] < 1:
            raise InputError("layer axis does not match layer_ids")
        if self.maps.shape[1] != len(self.slots):
            raise InputError("part axis does not match slots")
        if self.maps.shape[2] != self.grid[0] * self.grid[1]:
            raise InputError("location axis does not match grid")


@dataclass
class NormalizedAttention:
    """Per-location normalized attention over present parts: (P, H*W)."""

    maps: torch.Tensor
    slots: tuple[int, ...]
    grid: tuple[int, int]


def sample_record(record: Mapping[str, torch.Tensor], index: int) -> dict[str, torch.Tensor]:
    """Slice a batched invocation record (layer -> (B, heads, HW, T)) to
    one sample (layer -> (heads, HW, T))."""
    return {name: maps[index] for name, maps in record.items()}


def collect_attention(record: Mapping[str, torch.Tensor],
                      layer_ids: tuple[str, ...] | list[str],
                      token_columns: Mapping[int, int],
                      grid: tuple[int, int]) -> AttentionStack:
    """Extract part-token attention columns from one denoiser invocation.

    record maps layer id -> (heads, HW, T) attention probabilities for a
    single sample; heads are averaged here.
    """
    if not layer_ids:
        raise ConfigError("no attention layers selected")
    slots = tuple(sorted(token_columns))
    layers = []
    for name in layer_ids:
        if name not in record:
            raise ConfigError(
                f"unknown attention layer {name!r}; available: {sorted(record)}"
            )
        probs = record[name]
        if probs.ndim != 3:
            raise InternalError(f"layer {name!r} record has shape {tuple(probs.shape)}")
        if probs.shape[1] != grid[0] * grid[1]:
            raise InputError(
                f"layer {name!r} has {probs.shape[1]} locations, expected grid {grid}"
            )
        cols = []
        for slot in slots:
            col = token_columns[slot]
            if col >= probs.shape[2]:
                raise InternalError(
                    f"token column {col} for slot {slot} outside sequence "
                    f"length {probs.shape[2]}"
                )
            cols.append(probs[:, :, col].mean(dim=0))
        layers.append(torch.stack(cols, dim=0))
    return AttentionStack(torch.stack(layers, dim=0), tuple(layer_ids), slots, grid)


def normalize(stack: AttentionStack, eps: float = NORM_EPS) -> NormalizedAttention:
    """Layer-mean then per-location normalization across present parts."""
    layer_mean = stack.maps.mean(dim=0)
    denom = layer_mean.sum(dim=0, keepdim=True).clamp_min(eps)
    return NormalizedAttention(layer_mean / denom, stack.slots, stack.grid)


def attention_loss(normed: NormalizedAttention, masks: PartMaskSet,
                   clamp: float = LOG_CLAMP) -> torch.Tensor:
    """Mean binary cross-entropy between normalized attention and masks.

    Slots whose mask is flagged absent contribute to neither numerator nor
    denominator. Returns a scalar tensor (zero when nothing is supervised).
    """
    if masks.grid_resolution != normed.grid:
        raise InputError(
            f"mask grid {masks.grid_resolution} != attention grid {normed.grid}"
        )
    rows = [i for i, slot in enumerate(normed.slots)
            if slot < masks.num_slots and masks.present[slot]]
    if not rows:
        log.warning("attention loss: no supervision this step (all slots absent)")
        return torch.zeros((), dtype=normed.maps.dtype, device=normed.maps.device)
    a = normed.maps[rows].clamp(clamp, 1.0 - clamp)
    flat = masks.flat()
    s = torch.as_tensor(
        flat[[normed.slots[i] for i in rows]],
        dtype=normed.maps.dtype, device=normed.maps.device,
    )
    bce = -(s * torch.log(a) + (1.0 - s) * torch.log(1.0 - a))
    return bce.mean()


def attention_loss_mse(normed: NormalizedAttention, masks: PartMaskSet) -> torch.Tensor:
    """Mean-square alternative kept for ablations; same interface, not a
    supported training mode."""
    if masks.grid_resolution != normed.grid:
        raise InputError(
            f"mask grid {masks.grid_resolution} != attention grid {normed.grid}"
        )
    rows = [i for i, slot in enumerate(normed.slots)
            if slot < masks.num_slots and masks.present[slot]]
    if not rows:
        return torch.zeros((), dtype=normed.maps.dtype, device=normed.maps.device)
    a = normed.maps[rows]
    flat = masks.flat()
    s = torch.as_tensor(
        flat[[normed.slots[i] for i in rows]],
        dtype=normed.maps.dtype, device=normed.maps.device,
    )
    return ((a - s) ** 2).mean()


def total_loss(ldm_loss, attn_loss, lambda_attn: float = DEFAULT_LAMBDA_ATTN):
    """Combined objective: ldm_loss + lambda_attn * attn_loss."""
    for name, value in (("ldm_loss", ldm_loss), ("attn_loss", attn_loss)):
        if not math.isfinite(float(value)):
            raise NumericError(f"{name} is not finite: {value}")
    return ldm_loss + lambda_attn * attn_loss


def on_mask_mass(stack: AttentionStack, masks: PartMaskSet) -> float:
    """Diagnostic: fraction of each part's layer-averaged attention mass
    that falls inside its mask, averaged over supervised parts."""
    layer_mean = stack.maps.mean(dim=0)
    fracs = []
    flat = masks.flat()
    for i, slot in enumerate(stack.slots):
        if slot >= masks.num_slots or not masks.present[slot]:
            continue
        s = torch.as_tensor(flat[slot], dtype=layer_mean.dtype)
        total = float(layer_mean[i].sum())
        if total > 0:
            fracs.append(float((layer_mean[i] * s).sum()) / total)
    return sum(fracs) / len(fracs) if fracs else 0.0
