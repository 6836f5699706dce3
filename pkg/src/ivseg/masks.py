"""Mask containers and the mask algebra used across the pipeline.

Conventions: probability masks are float32 H×W arrays in [0, 1], label masks
are integer H×W arrays with 0 = background, and multi-object distributions
are (M+1)×H×W with channel 0 = background.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from PIL import Image

NEUTRAL = 0.5
ODDS_EPS = 1e-5


class DimensionError(ValueError):
    """Raised when array shapes do not line up."""


@dataclass
class Frame:
    """One RGB video frame with values in [0, 1]."""

    pixels: np.ndarray  # (H, W, 3) float32
    index: int = 0

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise DimensionError("Frame.pixels must have shape (H, W, 3)")
        h, w = self.pixels.shape[:2]
        if h < 8 or w < 8:
            raise DimensionError(f"frame too small: {h}x{w}, need at least 8x8")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("frame pixel values must lie in [0, 1]")
        if self.index < 0:
            raise ValueError("frame index must be >= 0")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass
class ProbMask:
    """Per-pixel foreground probability for a single object."""

    values: np.ndarray  # (H, W) float32 in [0, 1]
    object_id: int = 1

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise DimensionError("ProbMask.values must be 2-dimensional")
        if self.object_id < 1:
            raise ValueError("object_id must be >= 1")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError("probabilities must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class LabelMask:
    """Multi-object label map; 0 is background, objects are 1..num_objects."""

    labels: np.ndarray  # (H, W) int
    num_objects: int

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels)
        if not np.issubdtype(self.labels.dtype, np.integer):
            self.labels = self.labels.astype(np.int32)
        if self.labels.ndim != 2:
            raise DimensionError("LabelMask.labels must be 2-dimensional")
        if self.labels.min() < 0 or self.labels.max() > self.num_objects:
            raise ValueError("labels must lie in {0..num_objects}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def object_mask(self, object_id: int) -> np.ndarray:
        return self.labels == object_id


@dataclass
class MultiObjectProbs:
    """Per-pixel distribution over background + M objects, summing to 1."""

    dist: np.ndarray  # (M+1, H, W)

    def __post_init__(self) -> None:
        self.dist = np.asarray(self.dist, dtype=np.float32)
        if self.dist.ndim != 3 or self.dist.shape[0] < 2:
            raise DimensionError("dist must have shape (M+1, H, W) with M >= 1")

    @property
    def num_objects(self) -> int:
        return self.dist.shape[0] - 1


def neutral_mask(h: int, w: int, object_id: int = 1) -> ProbMask:
    """Probability map of 0.5 everywhere, used when no estimate exists yet."""
    if h < 1 or w < 1:
        raise DimensionError(f"non-positive mask dimensions: {h}x{w}")
    return ProbMask(np.full((h, w), NEUTRAL, dtype=np.float32), object_id)


def _as_binary(mask, object_id: int) -> np.ndarray:
    if isinstance(mask, LabelMask):
        return mask.labels == object_id
    arr = np.asarray(mask)
    if arr.dtype == bool:
        return arr
    return arr != 0


def jaccard(a, b, object_id: int = 1) -> float:
    """Intersection over union of one object's pixel sets.

    Both masks may be LabelMask or plain binary arrays. Returns 1.0 when both
    sets are empty (absent object predicted absent is not an error).
    """
    bin_a = _as_binary(a, object_id)
    bin_b = _as_binary(b, object_id)
    if bin_a.shape != bin_b.shape:
        raise DimensionError(f"mask shapes differ: {bin_a.shape} vs {bin_b.shape}")
    union = np.logical_or(bin_a, bin_b).sum()
    if union == 0:
        return 1.0
    inter = np.logical_and(bin_a, bin_b).sum()
    return float(inter) / float(union)


def soft_aggregate(per_object: Sequence[ProbMask]) -> MultiObjectProbs:
    """Merge per-object probability maps into one per-pixel distribution.

    Each object's probability is converted to odds p/(1-p); the background
    probability is the product of the complements. Normalizing the odds gives
    a distribution that keeps confident objects sharp while letting objects
    compete for shared pixels.
    """
    if len(per_object) == 0:
        raise ValueError("soft_aggregate needs at least one object mask")
    shape = per_object[0].shape
    for m in per_object:
        if m.shape != shape:
            raise DimensionError("all object masks must share dimensions")
    probs = np.stack([m.values for m in per_object]).astype(np.float64)
    probs = np.clip(probs, ODDS_EPS, 1.0 - ODDS_EPS)
    bg = np.clip(np.prod(1.0 - probs, axis=0), ODDS_EPS, 1.0 - ODDS_EPS)
    full = np.concatenate([bg[None], probs], axis=0)
    odds = full / (1.0 - full)
    dist = odds / odds.sum(axis=0, keepdims=True)
    return MultiObjectProbs(dist.astype(np.float32))


def argmax_label(dist: MultiObjectProbs) -> LabelMask:
    """Per-pixel argmax over the distribution; ties go to the lower channel."""
    labels = np.argmax(dist.dist, axis=0).astype(np.int32)
    return LabelMask(labels, dist.num_objects)


def blend(new: ProbMask, prev: ProbMask, w: float) -> ProbMask:
    """Weighted average w*new + (1-w)*prev of two probability masks."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"blend weight must lie in [0, 1], got {w}")
    if new.shape != prev.shape:
        raise DimensionError(f"mask shapes differ: {new.shape} vs {prev.shape}")
    vals = w * new.values + (1.0 - w) * prev.values
    return ProbMask(np.clip(vals, 0.0, 1.0), new.object_id)


def object_palette(n: int = 256) -> list[int]:
    """Flat RGB palette for indexed PNGs, DAVIS/PASCAL bit-shuffle colormap."""
    palette = []
    for i in range(n):
        r = g = b = 0
        c = i
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        palette.extend([r, g, b])
    return palette


_PALETTE = object_palette()


def encode_label_png(mask: LabelMask) -> bytes:
    """Serialize a LabelMask as an indexed PNG (palette index = label)."""
    img = Image.fromarray(mask.labels.astype(np.uint8), mode="P")
    img.putpalette(_PALETTE)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def decode_label_png(data: bytes, num_objects: int | None = None) -> LabelMask:
    img = Image.open(io.BytesIO(data))
    labels = np.asarray(img).astype(np.int32)
    if num_objects is None:
        num_objects = max(1, int(labels.max()))
    return LabelMask(labels, num_objects)


def encode_prob_png(mask: ProbMask) -> bytes:
    """Serialize a ProbMask as a 16-bit grayscale PNG, value = round(p*65535)."""
    q = np.round(mask.values.astype(np.float64) * 65535.0).astype(np.uint16)
    img = Image.fromarray(q)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def decode_prob_png(data: bytes, object_id: int = 1) -> ProbMask:
    img = Image.open(io.BytesIO(data))
    q = np.asarray(img, dtype=np.float64)
    return ProbMask((q / 65535.0).astype(np.float32), object_id)


def frame_to_png(frame: Frame) -> bytes:
    img = Image.fromarray(np.round(frame.pixels * 255.0).astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def frame_from_png(data: bytes, index: int = 0) -> Frame:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return Frame(np.asarray(img).astype(np.float32) / 255.0, index)
