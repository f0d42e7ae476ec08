"""Low-rank adapters on frozen linear projections."""

from __future__ import annotations

import torch
from torch import nn

from .errors import ConfigError


class LoRALinear(nn.Module):
    """Frozen base linear plus a trainable low-rank delta.

    delta(x) = (alpha / rank) * x @ A^T @ B^T with B zero-initialized, so
    a freshly wrapped layer computes exactly the base mapping.
    """

    def __init__(self, base: nn.Linear, rank: int, alpha: float | None = None,
                 generator: torch.Generator | None = None):
        super().__init__()
        if rank < 1:
            raise ConfigError(f"LoRA rank must be >= 1, got {rank}")
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.rank = rank
        self.scale = (alpha if alpha is not None else float(rank)) / rank
        dtype = base.weight.dtype
        a = torch.empty(rank, base.in_features, dtype=dtype)
        a.normal_(0.0, 1.0 / rank, generator=generator)
        self.lora_a = nn.Parameter(a)
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank, dtype=dtype))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        delta = torch.nn.functional.linear(torch.nn.functional.linear(x, self.lora_a),
                                           self.lora_b)
        return self.base(x) + self.scale * delta


def apply_lora(module: nn.Module, targets: tuple[str, ...], rank: int,
               generator: torch.Generator | None = None) -> list[nn.Parameter]:
    """Wrap every child linear whose attribute name is in `targets`.

    Returns the new trainable parameters. Raises if nothing matched, which
    catches misspelled target lists early.
    """
    if not targets:
        raise ConfigError("lora_targets must not be empty")
    wrapped = []
    for parent in module.modules():
        for name, child in list(parent.named_children()):
            if name in targets and isinstance(child, nn.Linear):
                adapter = LoRALinear(child, rank, generator=generator)
                setattr(parent, name, adapter)
                wrapped.append(adapter)
    if not wrapped:
        raise ConfigError(f"no linear layers matched lora targets {targets}")
    params: list[nn.Parameter] = []
    for adapter in wrapped:
        params += [adapter.lora_a, adapter.lora_b]
    return params


def lora_parameter_names(module: nn.Module) -> set[str]:
    """Qualified names of all adapter parameters under `module`."""
    return {name for name, _ in module.named_parameters()
            if name.endswith(("lora_a", "lora_b"))}
