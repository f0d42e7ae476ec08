"""Versioned on-disk part dictionary.

The dictionary records everything needed to reproduce tagging: M, K,
seed, the extractor triple, all centroids (float32), and the per-image
tags produced at discovery time. Masks live in a sidecar .masks.npz next
to the dictionary file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, StateError
from .features import ExtractorSpec
from .hierarchy import PartHierarchy
from .parts import PartComposition, PartMaskSet

DICTIONARY_SCHEMA = 1


@dataclass
class ImageTag:
    composition: PartComposition
    masks: PartMaskSet | None = None


@dataclass
class PartDictionary:
    hierarchy: PartHierarchy
    tags: dict[str, ImageTag] = field(default_factory=dict)
    label_hints: dict[str, str] = field(default_factory=dict)  # "slot:variant" -> text
    path: Path | None = None

    @property
    def M(self) -> int:
        return self.hierarchy.M

    @property
    def K(self) -> int:
        return self.hierarchy.K

    def exemplars(self, slot: int, variant: int, limit: int = 8) -> list[str]:
        """Training images whose slot carries this code, in corpus order."""
        out = []
        for image_id in sorted(self.tags):
            code = self.tags[image_id].composition.codes[slot]
            if code.variant == variant:
                out.append(image_id)
                if len(out) >= limit:
                    break
        return out


def _mask_sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".masks.npz")


def save_dictionary(dictionary: PartDictionary, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h = dictionary.hierarchy
    h.validate()
    payload = {
        "schema_version": DICTIONARY_SCHEMA,
        "M": h.M,
        "K": h.K,
        "seed": h.seed,
        "extractor": h.extractor.to_dict(),
        "centroids": {
            "fg_bg": h.fg_bg_centroids.astype(np.float32).tolist(),
            "parts": h.part_centroids.astype(np.float32).tolist(),
            "subs": h.sub_centroids.astype(np.float32).tolist(),
        },
        "images": {
            image_id: {
                "composition": tag.composition.to_spec_string(),
                "mask_ref": image_id if tag.masks is not None else None,
            }
            for image_id, tag in dictionary.tags.items()
        },
        "label_hints": dictionary.label_hints,
    }
    path.write_text(json.dumps(payload, indent=2))
    mask_arrays = {
        image_id: np.packbits(tag.masks.masks, axis=None)
        for image_id, tag in dictionary.tags.items() if tag.masks is not None
    }
    meta = {
        image_id: (tag.masks.masks.shape, tag.masks.present)
        for image_id, tag in dictionary.tags.items() if tag.masks is not None
    }
    if mask_arrays:
        np.savez_compressed(
            _mask_sidecar(path),
            **mask_arrays,
            __shapes__=np.array(
                [(k, *shape) for k, (shape, _) in meta.items()], dtype=object
            ),
            **{f"__present__{k}": present for k, (_, present) in meta.items()},
        )
    dictionary.path = path
    return path


def load_dictionary(path) -> PartDictionary:
    path = Path(path)
    if not path.exists():
        raise StateError(f"no part dictionary at {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"cannot parse dictionary {path}: {exc}") from exc
    if payload.get("schema_version") != DICTIONARY_SCHEMA:
        raise InputError(f"unsupported dictionary schema in {path}")
    hier = PartHierarchy(
        fg_bg_centroids=np.asarray(payload["centroids"]["fg_bg"], dtype=np.float32),
        part_centroids=np.asarray(payload["centroids"]["parts"], dtype=np.float32),
        sub_centroids=np.asarray(payload["centroids"]["subs"], dtype=np.float32),
        M=int(payload["M"]),
        K=int(payload["K"]),
        seed=int(payload["seed"]),
        extractor=ExtractorSpec.from_dict(payload["extractor"]),
    )
    hier.validate()

    masks_by_id: dict[str, PartMaskSet] = {}
    sidecar = _mask_sidecar(path)
    if sidecar.exists():
        archive = np.load(sidecar, allow_pickle=True)
        shapes = {row[0]: tuple(int(v) for v in row[1:])
                  for row in archive["__shapes__"]}
        for image_id, shape in shapes.items():
            bits = np.unpackbits(archive[image_id])[: int(np.prod(shape))]
            masks_by_id[image_id] = PartMaskSet(
                bits.reshape(shape), archive[f"__present__{image_id}"]
            )

    tags = {}
    for image_id, rec in payload["images"].items():
        comp = PartComposition.from_spec_string(rec["composition"])
        tags[image_id] = ImageTag(comp, masks_by_id.get(rec.get("mask_ref")))
    return PartDictionary(hier, tags, dict(payload.get("label_hints", {})), path)
