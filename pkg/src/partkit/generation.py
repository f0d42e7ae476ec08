"""Image generation from part compositions, with part swaps and provenance."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .codec import PromptSpec, render_prompt
from .errors import BackendError, InputError
from .parts import PartCode, PartComposition
from .training import TrainState

DEFAULT_STEPS = 50
DEFAULT_GUIDANCE = 7.5


@dataclass(frozen=True)
class GenerationRequest:
    composition: PartComposition
    style_suffix: str | None = None
    seed: int = 0
    steps: int = DEFAULT_STEPS
    guidance: float = DEFAULT_GUIDANCE

    def validate(self, M: int, K: int) -> None:
        if self.steps < 1:
            raise InputError(f"steps must be >= 1, got {self.steps}")
        self.composition.validate(M, K)


@dataclass(frozen=True)
class Provenance:
    composition: str
    style_suffix: str | None
    seed: int
    steps: int
    guidance: float
    checkpoint_id: str
    template: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Provenance":
        return cls(**d)


def swap_part(base: PartComposition, slot: int,
              donor: PartComposition) -> PartComposition:
    """Copy of `base` with codes[slot] taken from `donor`; all other slots
    are untouched."""
    if not 0 <= slot < base.num_slots:
        raise InputError(f"slot {slot} outside [0, {base.num_slots - 1}]")
    if slot >= donor.num_slots or donor.codes[slot].absent:
        raise InputError(f"donor slot {slot} is absent; nothing to transfer")
    return base.replace(slot, PartCode(slot, donor.codes[slot].variant))


def _condition_for(state: TrainState, tokens: list[str]) -> torch.Tensor:
    embs = state.table.embed_prompt(tokens).unsqueeze(0)
    return state.backend.build_condition(embs)


@torch.no_grad()
def sample_latents(state: TrainState, cond: torch.Tensor,
                   uncond: torch.Tensor | None, steps: int, guidance: float,
                   generator: torch.Generator) -> torch.Tensor:
    """Deterministic DDIM sampling (eta = 0) with optional classifier-free
    guidance when `uncond` is given and guidance != 1."""
    backend = state.backend
    z = torch.randn((1, *backend.latent_shape), generator=generator)
    ts = backend.schedule.ddim_timesteps(steps)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else -1
        t_tensor = torch.tensor([t], dtype=torch.long)
        eps, _ = backend.predict_noise(z, t_tensor, cond)
        if uncond is not None and guidance != 1.0:
            eps_u, _ = backend.predict_noise(z, t_tensor, uncond)
            eps = eps_u + guidance * (eps - eps_u)
        z = backend.schedule.ddim_step(z, eps, t, t_prev)
    return z


def generate(request: GenerationRequest, state: TrainState
             ) -> tuple[np.ndarray, Provenance]:
    """Sample one image for the request; pure given (request, state)."""
    request.validate(state.M, state.K)
    template = state.config.template
    spec = PromptSpec(request.composition, template, request.style_suffix)
    tokens = render_prompt(spec, state.M, state.K)
    cond = _condition_for(state, tokens)
    uncond = None
    if request.guidance != 1.0:
        uncond_spec = PromptSpec(
            PartComposition.from_variants([0] * (state.M + 1)), template,
            request.style_suffix)
        uncond = _condition_for(state, render_prompt(uncond_spec, state.M, state.K))
    try:
        gen = torch.Generator().manual_seed(request.seed)
        latents = sample_latents(state, cond, uncond, request.steps,
                                 request.guidance, gen)
        image = state.backend.decode(latents)[0]
    except InputError:
        raise
    except Exception as exc:
        raise BackendError(f"sampling failed: {exc}") from exc
    arr = np.ascontiguousarray(image.permute(1, 2, 0).numpy(), dtype=np.float32)
    provenance = Provenance(
        composition=request.composition.to_spec_string(),
        style_suffix=request.style_suffix,
        seed=request.seed,
        steps=request.steps,
        guidance=request.guidance,
        checkpoint_id=state.checkpoint_id,
        template=template,
    )
    return arr, provenance


def save_generation(image: np.ndarray, provenance: Provenance, out_path) -> Path:
    """Write the PNG and a sidecar provenance record."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
                    ).save(out_path)
    out_path.with_suffix(".json").write_text(
        json.dumps(provenance.to_dict(), indent=2))
    return out_path
