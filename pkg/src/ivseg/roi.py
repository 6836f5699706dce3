"""Region-of-interest geometry: guidance boxes, warping in, pasting back.

Boxes are half-open in continuous image coordinates with pixel centers at
integer + 0.5, so warping the whole image to its own size is the identity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masks import DimensionError, ProbMask

COLOR_PAD = 0.0
PROB_PAD = 0.5


@dataclass(frozen=True)
class Box:
    """Axis-aligned box (x0, y0) inclusive to (x1, y1) exclusive."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"empty box: {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def center(self) -> tuple[float, float]:
        return (self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0


@dataclass(frozen=True)
class Roi:
    """A box plus the fixed resolution its contents are warped to."""

    box: Box
    out_h: int = 256
    out_w: int = 256

    def __post_init__(self) -> None:
        if self.out_h < 1 or self.out_w < 1:
            raise ValueError("warp size must be positive")


def guidance_bbox(
    pos_scrib: np.ndarray,
    neg_scrib: np.ndarray,
    prev_frame_mask: ProbMask | None,
    prev_round_mask: ProbMask | None,
    mask_threshold: float = 0.5,
) -> Box | None:
    """Tight box over scribble pixels and mask pixels >= threshold.

    Returns None when no guidance pixel exists.
    """
    maps = [np.asarray(pos_scrib) != 0, np.asarray(neg_scrib) != 0]
    for m in (prev_frame_mask, prev_round_mask):
        if m is not None:
            maps.append(m.values >= mask_threshold)
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise DimensionError("guidance maps must share dimensions")
    union = np.logical_or.reduce(maps)
    ys, xs = np.nonzero(union)
    if len(ys) == 0:
        return None
    return Box(float(xs.min()), float(ys.min()), float(xs.max()) + 1.0, float(ys.max()) + 1.0)


def expand_box(tight: Box) -> Box:
    """Double the box's width and height around its center, unclamped."""
    cx, cy = tight.center
    return Box(cx - tight.width, cy - tight.height, cx + tight.width, cy + tight.height)


def first_round_roi(h: int, w: int, out_h: int = 256, out_w: int = 256) -> Roi:
    """Whole-image ROI used while no guidance exists yet."""
    if h < 1 or w < 1:
        raise DimensionError(f"invalid image dimensions: {h}x{w}")
    return Roi(Box(0.0, 0.0, float(w), float(h)), out_h, out_w)


def _bilinear_gather(channel: np.ndarray, xs: np.ndarray, ys: np.ndarray, pad: float) -> np.ndarray:
    """Sample one channel at continuous positions; out-of-image reads pad.

    Positions are in box coordinates where pixel (r, c) is centered at
    (c + 0.5, r + 0.5).
    """
    h, w = channel.shape
    u = xs - 0.5
    v = ys - 0.5
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = u - u0
    fv = v - v0

    out = np.zeros(u.shape, dtype=np.float64)
    for dv in (0, 1):
        for du in (0, 1):
            cc = u0 + du
            rr = v0 + dv
            weight = (fu if du else 1.0 - fu) * (fv if dv else 1.0 - fv)
            inside = (cc >= 0) & (cc < w) & (rr >= 0) & (rr < h)
            vals = np.where(
                inside, channel[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)], pad
            )
            out += weight * vals
    return out


def warp_to_roi(maps: np.ndarray, roi: Roi, pad=COLOR_PAD) -> np.ndarray:
    """Bilinearly resample channels onto a uniform grid over the ROI box.

    `maps` is (C, H, W) or (H, W); `pad` is a scalar or per-channel sequence
    read where the grid leaves the image (0 for colors, 0.5 for masks).
    """
    arr = np.asarray(maps, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    box = roi.box
    xs = box.x0 + (np.arange(roi.out_w) + 0.5) * box.width / roi.out_w
    ys = box.y0 + (np.arange(roi.out_h) + 0.5) * box.height / roi.out_h
    grid_x, grid_y = np.meshgrid(xs, ys)
    pads = np.broadcast_to(np.asarray(pad, dtype=np.float64), (arr.shape[0],))
    out = np.stack(
        [_bilinear_gather(c, grid_x, grid_y, p) for c, p in zip(arr, pads)]
    ).astype(np.float32)
    return out[0] if squeeze else out


def paste_from_roi(pred: np.ndarray, roi: Roi, full: ProbMask) -> ProbMask:
    """Inverse-warp an ROI prediction back into a full-frame mask.

    Pixels whose centers fall inside the ROI box are replaced by bilinear
    samples of `pred` (edge-replicated at the pred border); everything else
    keeps the values of `full`.
    """
    pred = np.asarray(pred, dtype=np.float64)
    ph, pw = pred.shape
    if (ph, pw) != (roi.out_h, roi.out_w):
        raise DimensionError(f"pred shape {pred.shape} does not match roi {roi.out_h}x{roi.out_w}")
    h, w = full.shape
    box = roi.box
    out = full.values.astype(np.float64).copy()

    c0 = max(0, int(np.ceil(box.x0 - 0.5)))
    c1 = min(w - 1, int(np.floor(box.x1 - 0.5 - 1e-9)))
    r0 = max(0, int(np.ceil(box.y0 - 0.5)))
    r1 = min(h - 1, int(np.floor(box.y1 - 0.5 - 1e-9)))
    if c0 > c1 or r0 > r1:
        return ProbMask(out.astype(np.float32), full.object_id)

    cols = np.arange(c0, c1 + 1)
    rows = np.arange(r0, r1 + 1)
    # map full-frame pixel centers into pred grid coordinates
    px = (cols + 0.5 - box.x0) * pw / box.width - 0.5
    py = (rows + 0.5 - box.y0) * ph / box.height - 0.5
    gx, gy = np.meshgrid(np.clip(px, 0, pw - 1), np.clip(py, 0, ph - 1))
    x0i = np.floor(gx).astype(np.int64)
    y0i = np.floor(gy).astype(np.int64)
    x1i = np.minimum(x0i + 1, pw - 1)
    y1i = np.minimum(y0i + 1, ph - 1)
    fx = gx - x0i
    fy = gy - y0i
    patch = (
        pred[y0i, x0i] * (1 - fx) * (1 - fy)
        + pred[y0i, x1i] * fx * (1 - fy)
        + pred[y1i, x0i] * (1 - fx) * fy
        + pred[y1i, x1i] * fx * fy
    )
    out[r0 : r1 + 1, c0 : c1 + 1] = patch
    return ProbMask(np.clip(out, 0.0, 1.0).astype(np.float32), full.object_id)
