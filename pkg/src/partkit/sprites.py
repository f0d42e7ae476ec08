"""Procedural sprite corpus with known part layout and exact masks.

Sprites are banded blobs on a plain backdrop: slot 1 is the top band,
slot 2 the middle, slot 3 the bottom. Variants are color families chosen
so that part identity dominates the embedding distance and variants stay
separable within a part. The generator emits exact pixel masks, which
makes it the ground-truth oracle for discovery and tagging, and a
deterministic renderer for compositions, which doubles as the stub
generation backend for the service.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError
from .parts import PartComposition

SPRITE_SIZE = 64
SPRITE_PARTS = 3
SPRITE_VARIANTS = 4

# variant colors per slot; slot 0 holds backdrop styles
_SLOT_COLORS = {
    0: [(0.93, 0.93, 0.93), (0.82, 0.86, 0.88), (0.88, 0.83, 0.74), (0.78, 0.80, 0.84)],
    1: [(0.85, 0.10, 0.10), (0.85, 0.45, 0.10), (0.65, 0.10, 0.45), (0.55, 0.25, 0.10)],
    2: [(0.10, 0.75, 0.15), (0.40, 0.80, 0.10), (0.05, 0.60, 0.45), (0.25, 0.50, 0.10)],
    3: [(0.10, 0.20, 0.85), (0.35, 0.15, 0.80), (0.10, 0.45, 0.80), (0.15, 0.30, 0.55)],
}


@dataclass
class SpriteExample:
    image: np.ndarray  # (S, S, 3) float32 in [0, 1]
    composition: PartComposition
    pixel_masks: np.ndarray  # (SPRITE_PARTS + 1, S, S) uint8, exact
    image_id: str


def render_sprite(composition: PartComposition, rng: np.random.Generator,
                  noise: float = 0.015) -> tuple[np.ndarray, np.ndarray]:
    """Draw one sprite for `composition`; returns (image, pixel masks)."""
    if composition.num_slots != SPRITE_PARTS + 1:
        raise InputError(
            f"sprite compositions have {SPRITE_PARTS + 1} slots, "
            f"got {composition.num_slots}"
        )
    for code in composition:
        if code.absent or code.variant > SPRITE_VARIANTS:
            raise InputError(f"sprite code {code} outside 1..{SPRITE_VARIANTS}")
    s = SPRITE_SIZE
    img = np.empty((s, s, 3), dtype=np.float32)
    img[:] = _SLOT_COLORS[0][composition.codes[0].variant - 1]
    masks = np.zeros((SPRITE_PARTS + 1, s, s), dtype=np.uint8)

    top = 10 + int(rng.integers(-2, 3))
    bottom = 58 + int(rng.integers(-2, 3))
    edges = np.linspace(top, bottom, SPRITE_PARTS + 1).round().astype(int)
    edges[1:-1] += rng.integers(-2, 3, size=SPRITE_PARTS - 1)
    for m in range(1, SPRITE_PARTS + 1):
        left = 14 + int(rng.integers(-3, 4))
        right = 50 + int(rng.integers(-3, 4))
        r0, r1 = int(edges[m - 1]), int(edges[m])
        img[r0:r1, left:right] = _SLOT_COLORS[m][composition.codes[m].variant - 1]
        masks[m, r0:r1, left:right] = 1

    fg = masks[1:].any(axis=0)
    masks[0] = (~fg).astype(np.uint8)
    if noise > 0:
        img = img + rng.normal(0.0, noise, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0), masks


def sample_composition(rng: np.random.Generator,
                       correlated_prob: float = 0.7) -> PartComposition:
    """Random composition; with probability `correlated_prob` all part
    variants match (a "species"), mirroring co-occurrence in real corpora."""
    bg = int(rng.integers(1, SPRITE_VARIANTS + 1))
    if rng.random() < correlated_prob:
        v = int(rng.integers(1, SPRITE_VARIANTS + 1))
        variants = [bg] + [v] * SPRITE_PARTS
    else:
        variants = [bg] + [int(rng.integers(1, SPRITE_VARIANTS + 1))
                           for _ in range(SPRITE_PARTS)]
    return PartComposition.from_variants(variants)


def make_corpus(n: int, seed: int, correlated_prob: float = 0.7,
                noise: float = 0.015) -> list[SpriteExample]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        comp = sample_composition(rng, correlated_prob)
        img, masks = render_sprite(comp, rng, noise)
        out.append(SpriteExample(img, comp, masks, f"sprite_{i:04d}"))
    return out


def render_for_composition(composition: PartComposition, seed: int) -> np.ndarray:
    """Deterministic sprite for (composition, seed); the stub generator."""
    rng = np.random.default_rng(seed)
    img, _ = render_sprite(composition, rng)
    return img


def save_corpus(examples: list[SpriteExample], out_dir) -> Path:
    """Write PNGs, exact masks, and a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mask_arrays = {}
    records = []
    for ex in examples:
        Image.fromarray((ex.image * 255.0 + 0.5).astype(np.uint8)).save(
            out / f"{ex.image_id}.png"
        )
        mask_arrays[ex.image_id] = ex.pixel_masks
        records.append({
            "image_id": ex.image_id,
            "file": f"{ex.image_id}.png",
            "composition": ex.composition.to_spec_string(),
        })
    np.savez_compressed(out / "ground_truth_masks.npz", **mask_arrays)
    manifest = {
        "schema_version": 1,
        "n_parts": SPRITE_PARTS,
        "n_variants": SPRITE_VARIANTS,
        "images": records,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_corpus(corpus_dir) -> list[SpriteExample]:
    corpus_dir = Path(corpus_dir)
    manifest = json.loads((corpus_dir / "manifest.json").read_text())
    masks = np.load(corpus_dir / "ground_truth_masks.npz")
    out = []
    for rec in manifest["images"]:
        arr = np.asarray(
            Image.open(corpus_dir / rec["file"]).convert("RGB"), dtype=np.float32
        ) / 255.0
        out.append(SpriteExample(
            arr,
            PartComposition.from_spec_string(rec["composition"]),
            masks[rec["image_id"]],
            rec["image_id"],
        ))
    return out
