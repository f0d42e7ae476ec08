"""Core part-identity types: codes, compositions, and mask sets.

A composition assigns one variant per slot. Slot 0 is the background
style; slots 1..M are object parts. Variants run 1..K; variant ABSENT (0)
marks a slot with no support in the image (e.g. occluded).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import InputError

ABSENT = 0


@dataclass(frozen=True)
class PartCode:
    """One (slot, variant) pair."""

    slot: int
    variant: int

    @property
    def absent(self) -> bool:
        return self.variant == ABSENT

    def validate(self, M: int, K: int) -> None:
        if not 0 <= self.slot <= M:
            raise InputError(f"slot {self.slot} outside [0, {M}]")
        if self.variant != ABSENT and not 1 <= self.variant <= K:
            raise InputError(
                f"variant {self.variant} for slot {self.slot} outside [1, {K}]"
            )

    def __str__(self) -> str:
        return f"({self.slot},{self.variant})"


@dataclass(frozen=True)
class PartComposition:
    """Ordered codes for slots 0..M, exactly one per slot."""

    codes: tuple[PartCode, ...]

    def __post_init__(self):
        slots = [c.slot for c in self.codes]
        if slots != list(range(len(self.codes))):
            raise InputError(f"slots must be exactly 0..M in order, got {slots}")

    @classmethod
    def from_variants(cls, variants: Sequence[int]) -> "PartComposition":
        return cls(tuple(PartCode(s, int(v)) for s, v in enumerate(variants)))

    @property
    def num_slots(self) -> int:
        return len(self.codes)

    @property
    def variants(self) -> tuple[int, ...]:
        return tuple(c.variant for c in self.codes)

    def present_slots(self) -> list[int]:
        return [c.slot for c in self.codes if not c.absent]

    def validate(self, M: int, K: int) -> None:
        if len(self.codes) != M + 1:
            raise InputError(f"composition has {len(self.codes)} codes, expected {M + 1}")
        for code in self.codes:
            code.validate(M, K)

    def replace(self, slot: int, code: PartCode) -> "PartComposition":
        if not 0 <= slot < len(self.codes):
            raise InputError(f"slot {slot} outside [0, {len(self.codes) - 1}]")
        if code.slot != slot:
            raise InputError(f"code {code} does not belong to slot {slot}")
        new = list(self.codes)
        new[slot] = code
        return PartComposition(tuple(new))

    def __iter__(self) -> Iterator[PartCode]:
        return iter(self.codes)

    def __str__(self) -> str:
        return " ".join(str(c) for c in self.codes)

    def to_spec_string(self) -> str:
        """Compact '0:12,1:87,...' form used by the CLI and provenance."""
        return ",".join(f"{c.slot}:{c.variant}" for c in self.codes)

    @classmethod
    def from_spec_string(cls, text: str) -> "PartComposition":
        try:
            pairs = [item.split(":") for item in text.split(",") if item.strip()]
            mapping = {int(s): int(v) for s, v in pairs}
        except (ValueError, TypeError) as exc:
            raise InputError(f"cannot parse composition {text!r}") from exc
        if sorted(mapping) != list(range(len(mapping))):
            raise InputError(f"composition {text!r} must cover slots 0..M exactly once")
        return cls.from_variants([mapping[s] for s in sorted(mapping)])


@dataclass
class PartMaskSet:
    """Binary per-slot masks on a spatial grid (slot 0 = background).

    masks: (M+1, H_g, W_g) uint8 in {0, 1}. present[s] is False for slots
    with no supporting patches; their masks are all zero.
    """

    masks: np.ndarray
    present: np.ndarray
    grid_resolution: tuple[int, int] = field(default=(16, 16))

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=np.uint8)
        self.present = np.asarray(self.present, dtype=bool)
        if self.masks.ndim != 3:
            raise InputError(f"masks must be (slots, H, W), got {self.masks.shape}")
        if self.present.shape[0] != self.masks.shape[0]:
            raise InputError("present flags and masks disagree on slot count")
        self.grid_resolution = (int(self.masks.shape[1]), int(self.masks.shape[2]))
        bad = self.masks > 1
        if bad.any():
            raise InputError("mask cells must be 0 or 1")
        for s in range(self.masks.shape[0]):
            if not self.present[s] and self.masks[s].any():
                raise InputError(f"slot {s} marked absent but has nonzero mask")

    @property
    def num_slots(self) -> int:
        return int(self.masks.shape[0])

    def flipped_lr(self) -> "PartMaskSet":
        return PartMaskSet(self.masks[:, :, ::-1].copy(), self.present.copy())

    def flat(self) -> np.ndarray:
        """Masks flattened to (M+1, H_g*W_g) float64."""
        return self.masks.reshape(self.masks.shape[0], -1).astype(np.float64)
