"""Joint optimization of token embeddings, bottleneck, and low-rank adapters.

The base denoiser, text projection, and latent codec stay frozen; the
trainable set is exactly {embedding dictionary, bottleneck projector,
adapter deltas}. Every step optimizes ldm + lambda_attn * attention loss
and logs both components. Single-writer: one loop owns the state.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .attention import (
    DEFAULT_LAMBDA_ATTN,
    attention_loss,
    collect_attention,
    normalize,
    sample_record,
    total_loss,
)
from .backend import DiffusionBackend, ToyBackend, ToyBackendConfig, images_to_tensor
from .codec import DEFAULT_TEMPLATE, PromptSpec, TokenTable, prompt_token_columns, render_prompt
from .errors import ConfigError, InputError, NumericError
from .features import ExtractorSpec
from .hierarchy import PartHierarchy
from .lora import apply_lora
from .parts import PartComposition, PartMaskSet
from .tagging import tag_image

CHECKPOINT_SCHEMA = 1


@dataclass
class TrainingConfig:
    """Knobs for one training run. Defaults follow the reference recipe:
    AdamW at a constant 1e-4 with weight decay 0.01, batch 2 for 100
    epochs, flip-only augmentation, 512px inputs."""

    lambda_attn: float = DEFAULT_LAMBDA_ATTN
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 2
    epochs: int = 100
    image_resolution: int = 512
    horizontal_flip: bool = True
    lora_rank: int = 4
    lora_targets: tuple[str, ...] = ("to_q", "to_k", "to_v", "to_out")
    seed: int = 0
    attn_layers: tuple[str, ...] | None = None  # None -> backend's full set
    attn_resolution: tuple[int, int] = (16, 16)
    checkpoint_every: int = 0  # steps; 0 = final checkpoint only
    max_steps: int | None = None
    token_mode: str = "bottleneck"
    hidden_dim: int | None = None
    template: str = DEFAULT_TEMPLATE
    init_word: str = "object"
    cond_dropout: float = 0.0  # template-only prompts at this rate (for CFG)
    embedding_lr_scale: float = 1.0  # token table lr multiplier (toy runs)

    def validate(self) -> None:
        positives = {
            "learning_rate": self.learning_rate, "batch_size": self.batch_size,
            "epochs": self.epochs, "image_resolution": self.image_resolution,
            "lora_rank": self.lora_rank,
        }
        for name, value in positives.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.lambda_attn < 0 or self.weight_decay < 0:
            raise ConfigError("lambda_attn and weight_decay must be >= 0")
        if not 0.0 <= self.cond_dropout < 1.0:
            raise ConfigError("cond_dropout must be in [0, 1)")
        if not self.lora_targets:
            raise ConfigError("lora_targets must not be empty")
        if self.token_mode not in ("bottleneck", "identity"):
            raise ConfigError(f"unknown token_mode {self.token_mode!r}")

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2))

    @classmethod
    def from_json(cls, path) -> "TrainingConfig":
        raw = json.loads(Path(path).read_text())
        cfg = cls(**raw)
        cfg.lora_targets = tuple(cfg.lora_targets)
        if cfg.attn_layers is not None:
            cfg.attn_layers = tuple(cfg.attn_layers)
        cfg.attn_resolution = tuple(cfg.attn_resolution)  # type: ignore[assignment]
        cfg.validate()
        return cfg


@dataclass
class TaggedExample:
    """One training image with its discovered composition and masks."""

    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    composition: PartComposition
    masks: PartMaskSet
    image_id: str = ""


def build_tagged_corpus(images: list[tuple[str, np.ndarray]],
                        hierarchy: PartHierarchy,
                        grid_resolution: tuple[int, int] = (16, 16),
                        extractor=None) -> list[TaggedExample]:
    out = []
    for image_id, image in images:
        comp, masks = tag_image(image, hierarchy, grid_resolution,
                                extractor=extractor, image_id=image_id)
        out.append(TaggedExample(np.asarray(image, dtype=np.float32), comp,
                                 masks, image_id))
    return out


@dataclass
class TrainState:
    table: TokenTable
    backend: DiffusionBackend
    optimizer: torch.optim.Optimizer
    config: TrainingConfig
    M: int
    K: int
    step: int = 0
    log: list[dict] = field(default_factory=list)
    extractor: ExtractorSpec | None = None
    checkpoint_id: str = "untrained"

    @property
    def attn_layers(self) -> tuple[str, ...]:
        if self.config.attn_layers is not None:
            return tuple(self.config.attn_layers)
        return tuple(self.backend.cross_attention_layers())

    def trainable_parameters(self) -> list[torch.nn.Parameter]:
        params = [p for p in self.table.parameters()]
        params += [p for p in self.backend.denoiser.parameters() if p.requires_grad]
        return params

    def save(self, path) -> str:
        payload = {
            "schema_version": CHECKPOINT_SCHEMA,
            "config": dataclasses.asdict(self.config),
            "backend": {"name": getattr(self.backend, "name", "toy"),
                        "config": self.backend.config.to_dict()},
            "table_meta": self.table.meta(),
            "table_state": self.table.state_dict(),
            "denoiser_state": self.backend.denoiser.state_dict(),
            "optimizer_state": self.optimizer.state_dict(),
            "step": self.step,
            "log": self.log,
            "M": self.M,
            "K": self.K,
            "extractor": self.extractor.to_dict() if self.extractor else None,
        }
        self.checkpoint_id = _content_id(payload)
        payload["checkpoint_id"] = self.checkpoint_id
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
        return self.checkpoint_id


def _content_id(payload: dict) -> str:
    h = hashlib.sha256()
    for key in ("table_state", "denoiser_state"):
        for name, tensor in sorted(payload[key].items()):
            h.update(name.encode())
            h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()[:16]


def load_state(path) -> TrainState:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("schema_version") != CHECKPOINT_SCHEMA:
        raise InputError(f"unsupported checkpoint schema in {path}")
    config = TrainingConfig(**payload["config"])
    config.lora_targets = tuple(config.lora_targets)
    if config.attn_layers is not None:
        config.attn_layers = tuple(config.attn_layers)
    config.attn_resolution = tuple(config.attn_resolution)  # type: ignore[assignment]
    backend = ToyBackend(ToyBackendConfig.from_dict(payload["backend"]["config"]))
    extractor = (ExtractorSpec.from_dict(payload["extractor"])
                 if payload.get("extractor") else None)
    state = init_train_state(payload["M"], payload["K"], config, backend, extractor)
    state.backend.denoiser.load_state_dict(payload["denoiser_state"])
    state.table.load_state_dict(payload["table_state"])
    state.optimizer.load_state_dict(payload["optimizer_state"])
    state.step = payload["step"]
    state.log = payload["log"]
    state.checkpoint_id = payload["checkpoint_id"]
    return state


def init_train_state(M: int, K: int, config: TrainingConfig,
                     backend: DiffusionBackend | None = None,
                     extractor: ExtractorSpec | None = None) -> TrainState:
    """Build the trainable stack: frozen backend + adapters + token table."""
    config.validate()
    if backend is None:
        backend = ToyBackend(ToyBackendConfig(seed=config.seed))
    for p in backend.denoiser.parameters():
        p.requires_grad_(False)
    gen = torch.Generator().manual_seed(config.seed)
    apply_lora(backend.denoiser, tuple(config.lora_targets), config.lora_rank,
               generator=gen)
    table = TokenTable(M, K, dim=backend.token_dim, hidden=config.hidden_dim,
                       mode=config.token_mode, seed=config.seed,
                       init_word=config.init_word)
    adapter_params = [p for p in backend.denoiser.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(
        [
            {"params": list(table.parameters()),
             "lr": config.learning_rate * config.embedding_lr_scale},
            {"params": adapter_params, "lr": config.learning_rate},
        ],
        lr=config.learning_rate, weight_decay=config.weight_decay)
    return TrainState(table=table, backend=backend, optimizer=optimizer,
                      config=config, M=M, K=K, extractor=extractor)


def _prepare_example(ex: TaggedExample, flip: bool) -> tuple[np.ndarray, PartMaskSet]:
    if not flip:
        return ex.image, ex.masks
    return np.ascontiguousarray(ex.image[:, ::-1]), ex.masks.flipped_lr()


def _sample_forward(state: TrainState, image: np.ndarray,
                    composition: PartComposition, masks: PartMaskSet | None,
                    t: torch.Tensor, noise: torch.Tensor,
                    ) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Diffusion forward for one example: (ldm mse, attention loss or None)."""
    backend = state.backend
    latents = backend.encode(images_to_tensor([image]))
    tokens = render_prompt(PromptSpec(composition, state.config.template),
                           state.M, state.K)
    embs = state.table.embed_prompt(tokens).unsqueeze(0)
    cond = backend.build_condition(embs)
    z_t = backend.schedule.q_sample(latents, t, noise)
    eps_pred, record = backend.predict_noise(z_t, t, cond, record_attention=True)
    ldm = ((noise - eps_pred) ** 2).mean()

    attn = None
    columns = prompt_token_columns(tokens)
    if masks is not None and columns:
        stack = collect_attention(sample_record(record, 0), state.attn_layers,
                                  columns, backend.attn_grid)
        attn = attention_loss(normalize(stack), masks)
    return ldm, attn


def ldm_loss(batch: list[TaggedExample], state: TrainState, *,
             t: torch.Tensor | None = None, noise: torch.Tensor | None = None,
             generator: torch.Generator | None = None) -> torch.Tensor:
    """Mean noise-prediction MSE over a batch at sampled timesteps."""
    if not batch:
        raise InputError("empty batch")
    backend = state.backend
    gen = generator or torch.Generator().manual_seed(state.config.seed)
    losses = []
    for ex in batch:
        t_i = t if t is not None else torch.randint(
            backend.schedule.timesteps, (1,), generator=gen)
        noise_i = noise if noise is not None else torch.randn(
            (1, *backend.latent_shape), generator=gen)
        ldm, _ = _sample_forward(state, ex.image, ex.composition, None, t_i, noise_i)
        losses.append(ldm)
    return torch.stack(losses).mean()


def train_step(state: TrainState, batch: list[TaggedExample],
               rng: np.random.Generator, gen: torch.Generator) -> dict:
    """One optimization step over a batch; returns the logged metrics."""
    cfg = state.config
    backend = state.backend
    n = len(batch)
    flips = [bool(cfg.horizontal_flip and rng.random() < 0.5) for _ in range(n)]
    dropped = [bool(cfg.cond_dropout and rng.random() < cfg.cond_dropout)
               for _ in range(n)]
    supervised = [not drop and ex.masks is not None
                  and bool(ex.masks.present.any())
                  for ex, drop in zip(batch, dropped)]
    n_sup = sum(supervised)

    uncond = PartComposition.from_variants([0] * (state.M + 1))
    state.optimizer.zero_grad(set_to_none=True)
    ldm_total = 0.0
    attn_total = 0.0
    for ex, flip, sup, drop in zip(batch, flips, supervised, dropped):
        image, masks = _prepare_example(ex, flip)
        t = torch.randint(backend.schedule.timesteps, (1,), generator=gen)
        noise = torch.randn((1, *backend.latent_shape), generator=gen)
        ldm, attn = _sample_forward(state, image,
                                    uncond if drop else ex.composition,
                                    masks if sup else None, t, noise)
        loss = ldm / n
        if attn is not None and n_sup:
            if cfg.lambda_attn != 0.0:
                loss = loss + cfg.lambda_attn * attn / n_sup
            attn_total += attn.item() / n_sup
        loss.backward()
        ldm_total += ldm.item() / n
    state.optimizer.step()
    state.step += 1

    total = total_loss(ldm_total, attn_total, cfg.lambda_attn)
    metrics = {
        "step": state.step,
        "ldm": ldm_total,
        "attn": attn_total,
        "total": float(total),
        "supervised": n_sup,
        "batch": n,
    }
    state.log.append(metrics)
    return metrics


def train(corpus: list[TaggedExample], hierarchy: PartHierarchy | None,
          config: TrainingConfig, backend: DiffusionBackend | None = None,
          out_dir=None) -> TrainState:
    """Optimize over the tagged corpus; emits checkpoints when out_dir is set.

    A non-finite loss aborts the run: the last good state is written to
    out_dir (when given) and NumericError is raised.
    """
    if not corpus:
        raise InputError("empty training corpus")
    config.validate()
    if hierarchy is not None:
        M, K, extractor = hierarchy.M, hierarchy.K, hierarchy.extractor
    else:
        M = corpus[0].composition.num_slots - 1
        K = max(max((c.variant for c in ex.composition), default=1) for ex in corpus)
        extractor = None
    for ex in corpus:
        if ex.composition.num_slots != M + 1:
            raise InputError(f"example {ex.image_id!r} has wrong slot count")

    torch.manual_seed(config.seed)
    state = init_train_state(M, K, config, backend, extractor)
    expected = state.backend.config.image_size
    if corpus[0].image.shape[0] != expected:
        raise ConfigError(
            f"corpus images are {corpus[0].image.shape[0]}px but the backend "
            f"expects {expected}px"
        )
    if tuple(config.attn_resolution) != state.backend.attn_grid:
        raise ConfigError(
            f"attn_resolution {config.attn_resolution} != backend grid "
            f"{state.backend.attn_grid}"
        )

    rng = np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    out_path = Path(out_dir) if out_dir is not None else None
    last_good: dict | None = None
    steps_total = 0
    done = False
    for _epoch in range(config.epochs):
        order = rng.permutation(len(corpus))
        for start in range(0, len(order), config.batch_size):
            batch = [corpus[i] for i in order[start:start + config.batch_size]]
            try:
                metrics = train_step(state, batch, rng, gen)
                bad = not math.isfinite(metrics["total"])
            except NumericError:
                bad = True
            if bad:
                if out_path is not None and last_good is not None:
                    out_path.mkdir(parents=True, exist_ok=True)
                    torch.save(last_good, out_path / "last_good.pt")
                raise NumericError(
                    f"non-finite loss at step {state.step + 1}; aborted with "
                    f"last-good checkpoint"
                    + (f" at {out_path / 'last_good.pt'}" if out_path else "")
                )
            last_good = {
                "table_state": {k: v.detach().clone() for k, v in
                                state.table.state_dict().items()},
                "denoiser_state": {k: v.detach().clone() for k, v in
                                   state.backend.denoiser.state_dict().items()},
                "step": state.step,
            }
            steps_total += 1
            if out_path and config.checkpoint_every and \
                    steps_total % config.checkpoint_every == 0:
                state.save(out_path / f"step{steps_total:06d}.pt")
            if config.max_steps is not None and steps_total >= config.max_steps:
                done = True
                break
        if done:
            break

    state.checkpoint_id = _content_id({
        "table_state": state.table.state_dict(),
        "denoiser_state": state.backend.denoiser.state_dict(),
    })
    if out_path:
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "train_log.jsonl").write_text(
            "\n".join(json.dumps(m) for m in state.log) + "\n")
        state.save(out_path / "final.pt")
    return state
