"""Synthetic training data: toy videos, image-pair pretraining, clip sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .masks import Frame, LabelMask


class SkipSample(Exception):
    """Sample cannot be synthesized (e.g. the object is too small)."""


@dataclass
class ClipSample:
    """A short training clip with exact ground truth."""

    frames: list[Frame]
    gt: list[LabelMask]
    object_ids: list[int]

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.gt) or len(self.frames) < 2:
            raise ValueError("clip needs >= 2 frames with matching ground truth")


@dataclass
class ToyVideoSpec:
    """Procedural moving-shapes video; ground truth is exact by construction."""

    num_frames: int = 16
    h: int = 128
    w: int = 128
    num_objects: int = 1
    shape_kinds: tuple[str, ...] = ("ellipse", "polygon")
    motion_amplitude: float = 10.0  # max center excursion, pixels
    deformation: float = 0.0  # 0..~0.4, how much the outline pulses over time
    background_seed: int | None = None


# bright, well-separated object colors (RGB in [0,1])
_OBJECT_COLORS = np.array(
    [
        [0.95, 0.35, 0.25],
        [0.30, 0.85, 0.35],
        [0.30, 0.45, 0.95],
        [0.95, 0.85, 0.25],
        [0.85, 0.35, 0.90],
        [0.25, 0.90, 0.90],
    ]
)


def _background(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Dark low-frequency texture so objects stand out."""
    coarse = rng.random((3, 6, 6))
    zoom = (1, (h + 5) / 6, (w + 5) / 6)
    tex = ndimage.zoom(coarse, zoom, order=1)[:, :h, :w]
    tex = 0.08 + 0.30 * tex
    tex += rng.normal(0.0, 0.015, size=tex.shape)
    return np.clip(tex.transpose(1, 2, 0), 0.0, 1.0)


class _ToyShape:
    """Star-shaped region defined by a polar radius profile around a center."""

    def __init__(self, kind: str, rng: np.random.Generator, spec: ToyVideoSpec):
        scale = min(spec.h, spec.w) / 128.0
        self.base_radius = rng.uniform(18.0, 28.0) * scale
        self.kind = kind
        if kind == "ellipse":
            self.aspect = rng.uniform(0.35, 0.75)
            self.vertex_radii = None
        else:
            k = int(rng.integers(4, 8))
            self.vertex_radii = rng.uniform(0.45, 1.0, size=k)
            self.aspect = 1.0
        self.angle0 = rng.uniform(0, 2 * math.pi)
        # all motion, including spin and pulsing, vanishes with the amplitude knob
        motion_gate = min(1.0, spec.motion_amplitude / 4.0)
        self.spin = rng.uniform(-0.08, 0.08) * motion_gate
        color = _OBJECT_COLORS[rng.integers(0, len(_OBJECT_COLORS))]
        self.color = np.clip(color + rng.uniform(-0.05, 0.05, size=3), 0.0, 1.0)
        self.deform = rng.uniform(0.5, 1.0) * spec.deformation * motion_gate
        self.deform_freq = rng.uniform(1.0, 2.0)
        self.deform_phase = rng.uniform(0, 2 * math.pi)
        margin = self.base_radius * (1.0 + self.deform) + spec.motion_amplitude + 2
        cx_lo, cx_hi = margin, spec.w - margin
        cy_lo, cy_hi = margin, spec.h - margin
        if cx_lo >= cx_hi or cy_lo >= cy_hi:
            raise ValueError("toy shape does not fit: reduce radius or motion amplitude")
        self.cx0 = rng.uniform(cx_lo, cx_hi)
        self.cy0 = rng.uniform(cy_lo, cy_hi)
        self.freq = rng.uniform(0.8, 2.2, size=2)
        self.phase = rng.uniform(0, 2 * math.pi, size=2)
        self.amp = rng.uniform(0.6, 1.0, size=2) * spec.motion_amplitude

    def center(self, t: int, num_frames: int) -> tuple[float, float]:
        tau = 2 * math.pi * t / max(1, num_frames)
        dx = self.amp[0] * math.sin(self.freq[0] * tau + self.phase[0])
        dy = self.amp[1] * math.sin(self.freq[1] * tau + self.phase[1])
        return self.cx0 + dx, self.cy0 + dy

    def mask(self, t: int, num_frames: int, h: int, w: int) -> np.ndarray:
        cx, cy = self.center(t, num_frames)
        theta = self.angle0 + self.spin * t
        tau = 2 * math.pi * t / max(1, num_frames)
        pulse = 1.0 + self.deform * math.sin(self.deform_freq * tau + self.deform_phase)
        yy, xx = np.mgrid[0:h, 0:w]
        dx = (xx + 0.5) - cx
        dy = (yy + 0.5) - cy
        rx = dx * math.cos(-theta) - dy * math.sin(-theta)
        ry = dx * math.sin(-theta) + dy * math.cos(-theta)
        dist = np.hypot(rx, ry)
        phi = np.arctan2(ry, rx)
        if self.kind == "ellipse":
            a = self.base_radius
            b = self.base_radius * self.aspect
            limit = a * b / np.sqrt((b * np.cos(phi)) ** 2 + (a * np.sin(phi)) ** 2)
        else:
            k = len(self.vertex_radii)
            seg = (phi % (2 * math.pi)) / (2 * math.pi) * k
            i0 = np.floor(seg).astype(int) % k
            i1 = (i0 + 1) % k
            frac = seg - np.floor(seg)
            limit = self.base_radius * (
                self.vertex_radii[i0] * (1 - frac) + self.vertex_radii[i1] * frac
            )
        return dist <= limit * pulse


def generate_toy_video(spec: ToyVideoSpec, seed: int) -> tuple[list[Frame], list[LabelMask]]:
    """Deterministic moving-shapes video with exact per-frame labels."""
    rng = np.random.default_rng(seed)
    bg_seed = spec.background_seed if spec.background_seed is not None else seed + 10_000
    bg = _background(spec.h, spec.w, np.random.default_rng(bg_seed))
    shapes = []
    for _ in range(spec.num_objects):
        kind = spec.shape_kinds[rng.integers(0, len(spec.shape_kinds))]
        shapes.append(_ToyShape(kind, rng, spec))
    speckle = rng.normal(0.0, 0.02, size=(spec.h, spec.w, 1))

    frames: list[Frame] = []
    gts: list[LabelMask] = []
    for t in range(spec.num_frames):
        img = bg.copy()
        labels = np.zeros((spec.h, spec.w), dtype=np.int32)
        for oid, shape in enumerate(shapes, start=1):
            m = shape.mask(t, spec.num_frames, spec.h, spec.w)
            img[m] = np.clip(shape.color[None, :] + speckle[m], 0.0, 1.0)
            labels[m] = oid
        frames.append(Frame(np.clip(img, 0.0, 1.0).astype(np.float32), index=t))
        gts.append(LabelMask(labels, spec.num_objects))
    return frames, gts


def _inverse_affine(rotation: float, scale: float, translate: tuple[float, float],
                    center: tuple[float, float]):
    """(matrix, offset) for scipy affine_transform realizing the forward map."""
    cos, sin = math.cos(rotation), math.sin(rotation)
    fwd = scale * np.array([[cos, -sin], [sin, cos]])  # acts on (row, col)
    inv = np.linalg.inv(fwd)
    c = np.array(center)
    t = np.array(translate)
    offset = c - inv @ (c + t)
    return inv, offset


def _warp_channels(arr: np.ndarray, matrix, offset, order: int, cval: float = 0.0) -> np.ndarray:
    if arr.ndim == 2:
        return ndimage.affine_transform(arr, matrix, offset=offset, order=order, cval=cval, mode="constant")
    return np.stack(
        [ndimage.affine_transform(arr[..., c], matrix, offset=offset, order=order, cval=cval, mode="constant")
         for c in range(arr.shape[-1])],
        axis=-1,
    )


def synthesize_pretrain_pair(
    image: Frame,
    mask: LabelMask,
    rng: np.random.Generator,
    min_object_area: int = 100,
    max_rotation_deg: float = 15.0,
    scale_range: tuple[float, float] = (0.9, 1.1),
    max_translate_frac: float = 0.1,
) -> ClipSample:
    """Two-frame clip from one annotated image via random object motion.

    The reference keeps the original layout; the target re-composites each
    object after a random rotation/scale/translation, later object ids
    occluding earlier ones. Raises SkipSample when no object is big enough.
    """
    object_ids = [
        oid for oid in range(1, mask.num_objects + 1)
        if int((mask.labels == oid).sum()) >= min_object_area
    ]
    if not object_ids:
        raise SkipSample(f"no object with area >= {min_object_area}")
    h, w = mask.shape
    target_img = image.pixels.astype(np.float64).copy()
    target_labels = np.zeros((h, w), dtype=np.int32)
    for oid in object_ids:
        obj = mask.labels == oid
        rows, cols = np.nonzero(obj)
        center = (rows.mean(), cols.mean())
        rot = math.radians(rng.uniform(-max_rotation_deg, max_rotation_deg))
        scale = rng.uniform(*scale_range)
        limit = max_translate_frac * min(h, w)
        translate = (rng.uniform(-limit, limit), rng.uniform(-limit, limit))
        matrix, offset = _inverse_affine(rot, scale, translate, center)
        warped_mask = _warp_channels(obj.astype(np.float64), matrix, offset, order=0) >= 0.5
        warped_img = _warp_channels(image.pixels.astype(np.float64), matrix, offset, order=1)
        target_img[warped_mask] = warped_img[warped_mask]
        target_labels[warped_mask] = oid
    reference = Frame(image.pixels.copy(), index=0)
    ref_labels = np.where(np.isin(mask.labels, object_ids), mask.labels, 0)
    target = Frame(np.clip(target_img, 0.0, 1.0).astype(np.float32), index=1)
    return ClipSample(
        frames=[reference, target],
        gt=[LabelMask(ref_labels, mask.num_objects), LabelMask(target_labels, mask.num_objects)],
        object_ids=object_ids,
    )


def _resize_video(frames, gts, short_edge: int):
    h, w = frames[0].shape
    if min(h, w) == short_edge:
        return frames, gts
    z = short_edge / min(h, w)
    new_frames, new_gts = [], []
    for f, g in zip(frames, gts):
        img = ndimage.zoom(f.pixels, (z, z, 1), order=1)
        lab = ndimage.zoom(g.labels, (z, z), order=0)
        new_frames.append(Frame(np.clip(img, 0.0, 1.0).astype(np.float32), f.index))
        new_gts.append(LabelMask(lab, g.num_objects))
    return new_frames, new_gts


def _present_objects(labels: np.ndarray, num_objects: int, min_area: int) -> list[int]:
    return [oid for oid in range(1, num_objects + 1) if int((labels == oid).sum()) >= min_area]


def sample_training_clip(
    video: list[Frame],
    gt: list[LabelMask],
    n: int,
    rng: np.random.Generator,
    patch_size: int = 400,
    short_edge: int = 480,
    augment: bool = True,
    min_object_area: int = 30,
    max_rotation_deg: float = 10.0,
) -> ClipSample:
    """N temporally skipped frames, one shared patch window, one clip-wide affine."""
    if len(video) < n:
        raise ValueError(f"video has {len(video)} frames, need at least {n}")
    frames, gts = _resize_video(video, gt, short_edge)
    h, w = frames[0].shape
    patch = min(patch_size, h, w)

    feasible = [s for s in (1, 2, 3) if (n - 1) * s <= len(frames) - 1]
    skip = int(rng.choice(feasible)) if feasible else 1
    start = int(rng.integers(0, len(frames) - (n - 1) * skip))
    indices = [start + i * skip for i in range(n)]

    if augment:
        rot = math.radians(rng.uniform(-max_rotation_deg, max_rotation_deg))
        scale = rng.uniform(0.95, 1.05)
        shift = 0.04 * min(h, w)
        translate = (rng.uniform(-shift, shift), rng.uniform(-shift, shift))
        matrix, offset = _inverse_affine(rot, scale, translate, (h / 2, w / 2))

    def transformed(i: int) -> tuple[np.ndarray, np.ndarray]:
        img = frames[i].pixels.astype(np.float64)
        lab = gts[i].labels
        if augment:
            img = _warp_channels(img, matrix, offset, order=1)
            lab = _warp_channels(lab.astype(np.float64), matrix, offset, order=0).astype(np.int32)
        return img, lab

    first_img, first_lab = transformed(indices[0])
    num_objects = gts[0].num_objects
    window = None
    for _ in range(20):
        r0 = int(rng.integers(0, h - patch + 1))
        c0 = int(rng.integers(0, w - patch + 1))
        if _present_objects(first_lab[r0 : r0 + patch, c0 : c0 + patch], num_objects, min_object_area):
            window = (r0, c0)
            break
    if window is None:
        rows, cols = np.nonzero(first_lab > 0)
        if len(rows) == 0:
            raise SkipSample("no object visible in the clip's first frame")
        r0 = int(np.clip(int(rows.mean()) - patch // 2, 0, h - patch))
        c0 = int(np.clip(int(cols.mean()) - patch // 2, 0, w - patch))
        window = (r0, c0)
    r0, c0 = window

    out_frames, out_gts = [], []
    for j, i in enumerate(indices):
        img, lab = (first_img, first_lab) if j == 0 else transformed(i)
        img = np.clip(img[r0 : r0 + patch, c0 : c0 + patch], 0.0, 1.0).astype(np.float32)
        lab = lab[r0 : r0 + patch, c0 : c0 + patch]
        out_frames.append(Frame(img, index=i))
        out_gts.append(LabelMask(lab, num_objects))
    object_ids = _present_objects(out_gts[0].labels, num_objects, min_object_area)
    return ClipSample(out_frames, out_gts, object_ids)
