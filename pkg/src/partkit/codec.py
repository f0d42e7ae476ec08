"""Prompt rendering and the learnable part-token table.

Each (slot, variant) pair owns one reserved pseudo-token ``<s{slot}_v{variant}>``
and one row of the embedding dictionary e ((M+1)*K rows). A two-layer
bottleneck projector maps raw rows to the conditioned embeddings fed to
the text encoder; identity mode bypasses the projector and returns raw
rows exactly.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import InputError
from .parts import PartComposition

DEFAULT_TEMPLATE = "a photo of a {parts}"
PLACEHOLDER = "{parts}"
_PSEUDO_RE = re.compile(r"^<s(\d+)_v(\d+)>$")


def pseudo_token(slot: int, variant: int) -> str:
    return f"<s{slot}_v{variant}>"


def parse_pseudo_token(token: str) -> tuple[int, int] | None:
    m = _PSEUDO_RE.match(token)
    if m is None:
        return None
    return int(m.group(1)), int(m.group(2))


def row_index(slot: int, variant: int, K: int) -> int:
    """Bijection between valid (slot, variant) codes and [0, (M+1)K)."""
    return slot * K + (variant - 1)


def row_to_code(row: int, K: int) -> tuple[int, int]:
    return row // K, row % K + 1


@dataclass(frozen=True)
class PromptSpec:
    composition: PartComposition
    template: str = DEFAULT_TEMPLATE
    style_suffix: str | None = None


def render_prompt(spec: PromptSpec, M: int, K: int) -> list[str]:
    """Whitespace tokens with one pseudo-token per present slot, in slot
    order, replacing the placeholder; the style suffix goes at the end."""
    if spec.template.count(PLACEHOLDER) != 1:
        raise InputError(
            f"template must contain exactly one {PLACEHOLDER!r} placeholder"
        )
    spec.composition.validate(M, K)
    pre, post = spec.template.split(PLACEHOLDER)
    tokens = pre.split()
    tokens += [pseudo_token(c.slot, c.variant) for c in spec.composition if not c.absent]
    tokens += post.split()
    if spec.style_suffix:
        tokens += spec.style_suffix.split()
    return tokens


def prompt_token_columns(tokens: list[str]) -> dict[int, int]:
    """Map slot -> column index of its pseudo-token in the sequence."""
    columns: dict[int, int] = {}
    for i, tok in enumerate(tokens):
        parsed = parse_pseudo_token(tok)
        if parsed is not None:
            columns[parsed[0]] = i
    return columns


WORD_EMBED_SCALE = 0.02  # per-component std, sized like CLIP token embeddings


def word_embedding(word: str, dim: int) -> np.ndarray:
    """Frozen embedding for a plain word, derived from a stable hash."""
    digest = hashlib.sha256(word.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.normal(0.0, WORD_EMBED_SCALE, size=dim).astype(np.float32)


class TokenTable(nn.Module):
    """Embedding dictionary e plus bottleneck projector f.

    mode "bottleneck": output = f(e[row]) with f = Linear -> ReLU -> Linear
    (D -> D_h -> D). mode "identity": output is the raw row lookup.
    Rows initialize from a neutral word embedding plus sigma=0.01 noise.
    """

    def __init__(self, M: int, K: int, dim: int = 32, hidden: int | None = None,
                 mode: str = "bottleneck", seed: int = 0,
                 init_word: str = "object", init_noise: float = 0.01,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        if mode not in ("bottleneck", "identity"):
            raise InputError(f"unknown token table mode {mode!r}")
        if M < 0 or K < 1:
            raise InputError(f"invalid table shape M={M} K={K}")
        self.M = M
        self.K = K
        self.dim = dim
        self.hidden = hidden if hidden is not None else dim
        self.mode = mode
        self.init_word = init_word

        g = torch.Generator().manual_seed(seed)
        rows = (M + 1) * K
        base = torch.from_numpy(word_embedding(init_word, dim)).to(dtype)
        noise = torch.empty(rows, dim, dtype=dtype)
        noise.normal_(0.0, init_noise, generator=g)
        self.embeddings = nn.Parameter(base.unsqueeze(0) + noise)

        self.proj_in = nn.Linear(dim, self.hidden, dtype=dtype)
        self.proj_out = nn.Linear(self.hidden, dim, dtype=dtype)
        for layer in (self.proj_in, self.proj_out):
            bound = 1.0 / math.sqrt(layer.in_features)
            layer.weight.data.uniform_(-bound, bound, generator=g)
            layer.bias.data.uniform_(-bound, bound, generator=g)

    @property
    def num_rows(self) -> int:
        return (self.M + 1) * self.K

    def project(self, rows: torch.Tensor) -> torch.Tensor:
        """Conditioned embeddings for row indices; identity mode returns
        the raw lookup (bit-for-bit)."""
        e = self.embeddings[rows]
        if self.mode == "identity":
            return e
        return self.proj_out(torch.relu(self.proj_in(e)))

    def embed_codes(self, composition: PartComposition) -> torch.Tensor:
        """(P, D) outputs for the present codes, slot order; absent skipped."""
        composition.validate(self.M, self.K)
        rows = [row_index(c.slot, c.variant, self.K)
                for c in composition if not c.absent]
        idx = torch.as_tensor(rows, dtype=torch.long,
                              device=self.embeddings.device)
        return self.project(idx)

    def embed_prompt(self, tokens: list[str]) -> torch.Tensor:
        """(T, D) embeddings: learnable rows for pseudo-tokens, frozen hash
        embeddings for plain words."""
        pieces = []
        for tok in tokens:
            parsed = parse_pseudo_token(tok)
            if parsed is None:
                vec = torch.from_numpy(word_embedding(tok, self.dim))
                pieces.append(vec.to(self.embeddings.dtype))
            else:
                slot, variant = parsed
                if not (0 <= slot <= self.M and 1 <= variant <= self.K):
                    raise InputError(f"pseudo-token {tok!r} outside table bounds")
                row = torch.as_tensor([row_index(slot, variant, self.K)],
                                      dtype=torch.long)
                pieces.append(self.project(row)[0])
        return torch.stack(pieces, dim=0)

    def meta(self) -> dict:
        return {
            "M": self.M, "K": self.K, "dim": self.dim, "hidden": self.hidden,
            "mode": self.mode, "init_word": self.init_word,
        }

    @classmethod
    def from_meta(cls, meta: dict, dtype: torch.dtype = torch.float32) -> "TokenTable":
        return cls(meta["M"], meta["K"], meta["dim"], meta["hidden"],
                   meta["mode"], init_word=meta.get("init_word", "object"),
                   dtype=dtype)
