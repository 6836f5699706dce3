"""Simulated-user scribbles: error regions, thinning, stroke tracing.

The robot user marks mistakes the same way the training synthesizer does:
take the false-negative / false-positive regions, clean away speckle,
thin what remains to a one-pixel skeleton, and emit the skeleton branches
as signed polylines.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .masks import DimensionError, LabelMask, jaccard

POSITIVE = "pos"
NEGATIVE = "neg"

_NBR_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class Scribble:
    """One signed stroke in normalized [0,1] image coordinates."""

    points: list[tuple[float, float]]  # (x, y)
    object_id: int
    sign: str = POSITIVE

    def __post_init__(self) -> None:
        if len(self.points) < 2:
            raise ValueError("a scribble needs at least 2 points")
        if self.sign not in (POSITIVE, NEGATIVE):
            raise ValueError(f"sign must be '{POSITIVE}' or '{NEGATIVE}'")
        if self.object_id < 1:
            raise ValueError("object_id must be >= 1")


@dataclass
class ScribbleSet:
    """All scribbles submitted for one frame in one round."""

    frame_index: int
    scribbles: list[Scribble] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.scribbles)

    def object_ids(self) -> list[int]:
        return sorted({s.object_id for s in self.scribbles})

    def to_json(self) -> str:
        return json.dumps(
            {
                "frame": self.frame_index,
                "scribbles": [
                    {
                        "object_id": s.object_id,
                        "sign": s.sign,
                        "points": [[float(x), float(y)] for x, y in s.points],
                    }
                    for s in self.scribbles
                ],
            }
        )

    @classmethod
    def from_json(cls, data: str | bytes | dict) -> "ScribbleSet":
        obj = data if isinstance(data, dict) else json.loads(data)
        scribbles = [
            Scribble(
                points=[(float(p[0]), float(p[1])) for p in s["points"]],
                object_id=int(s["object_id"]),
                sign=str(s["sign"]),
            )
            for s in obj.get("scribbles", [])
        ]
        return cls(frame_index=int(obj["frame"]), scribbles=scribbles)


def disk(radius: int) -> np.ndarray:
    """Boolean disk footprint, dy^2 + dx^2 <= radius^2."""
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (yy * yy + xx * xx) <= r * r


def error_regions(pred: LabelMask, gt: LabelMask, object_id: int) -> tuple[np.ndarray, np.ndarray]:
    """False-negative and false-positive pixels of one object vs ground truth."""
    if pred.shape != gt.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    gt_obj = gt.labels == object_id
    pred_obj = pred.labels == object_id
    fn = gt_obj & ~pred_obj
    fp = pred_obj & ~gt_obj
    return fn, fp


def clean_region(region: np.ndarray, kernel_radius: int = 1, min_component_area: int = 9) -> np.ndarray:
    """Morphological opening plus removal of components below an area floor."""
    cur = np.asarray(region).astype(bool)
    footprint = disk(kernel_radius)
    while cur.any():
        opened = ndimage.binary_opening(cur, structure=footprint)
        labels, n = ndimage.label(opened, structure=_EIGHT)
        if n == 0:
            return opened
        areas = np.bincount(labels.ravel())
        keep = areas >= min_component_area
        keep[0] = False
        kept = keep[labels]
        if np.array_equal(kept, cur):
            break
        cur = kept
    return cur


def _gh_neighborhood(img: np.ndarray):
    """Shifted views p2..p9 (clockwise from north) with zero padding."""
    pad = [(0, 0)] * (img.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(img, pad)
    p2 = p[..., :-2, 1:-1]
    p3 = p[..., :-2, 2:]
    p4 = p[..., 1:-1, 2:]
    p5 = p[..., 2:, 2:]
    p6 = p[..., 2:, 1:-1]
    p7 = p[..., 2:, :-2]
    p8 = p[..., 1:-1, :-2]
    p9 = p[..., :-2, :-2]
    return p2, p3, p4, p5, p6, p7, p8, p9


def _gh_deletable(img: np.ndarray, subiter: int) -> np.ndarray:
    """Pixels removable in one thinning sub-iteration (parallel deletion)."""
    p2, p3, p4, p5, p6, p7, p8, p9 = _gh_neighborhood(img)
    c = (
        (~p2 & (p3 | p4)).astype(np.int8)
        + (~p4 & (p5 | p6)).astype(np.int8)
        + (~p6 & (p7 | p8)).astype(np.int8)
        + (~p8 & (p9 | p2)).astype(np.int8)
    )
    n1 = (p9 | p2).astype(np.int8) + (p3 | p4).astype(np.int8) + (p5 | p6).astype(np.int8) + (p7 | p8).astype(np.int8)
    n2 = (p2 | p3).astype(np.int8) + (p4 | p5).astype(np.int8) + (p6 | p7).astype(np.int8) + (p8 | p9).astype(np.int8)
    n = np.minimum(n1, n2)
    if subiter == 0:
        m = (p6 | p7 | ~p9) & p8
    else:
        m = (p2 | p3 | ~p5) & p4
    return img & (c == 1) & (n >= 2) & (n <= 3) & ~m


def skeletonize(region: np.ndarray) -> np.ndarray:
    """Two-sub-iteration parallel thinning to a 1-pixel-wide skeleton.

    Out-of-image neighbors count as background; iterates until a full pass
    deletes nothing. Accepts (..., H, W) batches of binary maps.
    """
    img = np.asarray(region).astype(bool).copy()
    while True:
        before = img.sum()
        img &= ~_gh_deletable(img, 0)
        img &= ~_gh_deletable(img, 1)
        if img.sum() == before:
            return img


def trace_polylines(skeleton: np.ndarray, min_length_px: int = 3) -> list[list[tuple[float, float]]]:
    """Walk skeleton pixels into ordered 8-connected paths.

    Paths start at remaining pixels of lowest degree (branch tips first,
    cycles last); paths shorter than min_length_px are dropped. Points are
    returned as normalized (x, y) with pixel centers at (c+0.5)/W, (r+0.5)/H.
    """
    skel = np.asarray(skeleton).astype(bool)
    h, w = skel.shape
    remaining = {(int(r), int(c)) for r, c in zip(*np.nonzero(skel))}

    def live_neighbors(p):
        r, c = p
        return [(r + dr, c + dc) for dr, dc in _NBR_OFFSETS if (r + dr, c + dc) in remaining]

    paths = []
    while remaining:
        start = min(remaining, key=lambda p: (len(live_neighbors(p)), p))
        path = [start]
        remaining.discard(start)
        cur = start
        while True:
            nbrs = live_neighbors(cur)
            if not nbrs:
                break
            nxt = min(nbrs, key=lambda p: (len(live_neighbors(p)), p))
            path.append(nxt)
            remaining.discard(nxt)
            cur = nxt
        if len(path) >= min_length_px:
            paths.append([((c + 0.5) / w, (r + 0.5) / h) for r, c in path])
    return paths


def _region_polylines(region: np.ndarray, min_length_px: int) -> list[list[tuple[float, float]]]:
    """Strokes for one region, with a fallback for degenerate skeletons.

    Compact blobs thin to one or two pixels, which would leave a real region
    unannotated; in that case emit the shortest valid stroke that still lies
    inside the cleaned region.
    """
    cleaned = clean_region(region)
    if not cleaned.any():
        return []
    skeleton = skeletonize(cleaned)
    polylines = trace_polylines(skeleton, min_length_px=min_length_px)
    if polylines:
        return polylines
    polylines = trace_polylines(skeleton, min_length_px=2)
    if polylines:
        return polylines
    h, w = cleaned.shape
    rows, cols = np.nonzero(skeleton)
    r0, c0 = int(rows[0]), int(cols[0])
    for dr, dc in _NBR_OFFSETS:
        r1, c1 = r0 + dr, c0 + dc
        if 0 <= r1 < h and 0 <= c1 < w and cleaned[r1, c1]:
            return [[((c0 + 0.5) / w, (r0 + 0.5) / h), ((c1 + 0.5) / w, (r1 + 0.5) / h)]]
    return []


def _subsample(polylines, max_strokes: int, rng: np.random.Generator):
    """Keep at most max_strokes polylines, longer ones preferred."""
    if len(polylines) <= max_strokes:
        return polylines
    lengths = np.array([len(p) for p in polylines], dtype=np.float64)
    probs = lengths / lengths.sum()
    idx = rng.choice(len(polylines), size=max_strokes, replace=False, p=probs)
    return [polylines[i] for i in sorted(idx)]


def synthesize_round_scribbles(
    pred: LabelMask | None,
    gt: LabelMask,
    object_ids,
    round_index: int,
    rng: np.random.Generator,
    frame_index: int = 0,
    max_strokes: int = 3,
    min_length_px: int = 3,
) -> ScribbleSet:
    """Simulate one round of user scribbles for the given frame.

    Round 1 samples positive strokes from each object's ground-truth region;
    later rounds sample positive strokes from false negatives and negative
    strokes from false positives of the current prediction.
    """
    if round_index >= 2 and pred is None:
        raise ValueError("a prediction is required from round 2 onward")
    scribbles: list[Scribble] = []
    for oid in object_ids:
        if round_index <= 1:
            signed_regions = [(gt.labels == oid, POSITIVE)]
        else:
            fn, fp = error_regions(pred, gt, oid)
            signed_regions = [(fn, POSITIVE), (fp, NEGATIVE)]
        for region, sign in signed_regions:
            polylines = _region_polylines(region, min_length_px)
            for pts in _subsample(polylines, max_strokes, rng):
                if len(pts) >= 2:
                    scribbles.append(Scribble(points=pts, object_id=int(oid), sign=sign))
    return ScribbleSet(frame_index=frame_index, scribbles=scribbles)


def select_worst_frame(preds, gts, exclude=frozenset()) -> int:
    """Index of the non-excluded frame with the lowest mean-object Jaccard."""
    candidates = [i for i in range(len(gts)) if i not in exclude]
    if not candidates:
        raise ValueError("all frames are excluded")
    num_objects = max(g.num_objects for g in gts)

    def mean_j(i: int) -> float:
        return float(
            np.mean([jaccard(preds[i], gts[i], oid) for oid in range(1, num_objects + 1)])
        )

    return min(candidates, key=lambda i: (mean_j(i), i))


def _draw_polyline(canvas: np.ndarray, points, h: int, w: int) -> None:
    pix = [
        (
            int(np.clip(round(y * h - 0.5), 0, h - 1)),
            int(np.clip(round(x * w - 0.5), 0, w - 1)),
        )
        for x, y in points
    ]
    for (r0, c0), (r1, c1) in zip(pix[:-1], pix[1:]):
        steps = max(abs(r1 - r0), abs(c1 - c0)) + 1
        rr = np.round(np.linspace(r0, r1, steps)).astype(int)
        cc = np.round(np.linspace(c0, c1, steps)).astype(int)
        canvas[rr, cc] = True


def rasterize(
    scribbles: ScribbleSet, h: int, w: int, brush_radius_px: int = 2
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Stroke maps per object: {object_id: (positive map, negative map)}.

    Each polyline is drawn as connected segments and dilated by a disk of
    brush_radius_px. Points outside [0,1] are clipped to the image.
    """
    footprint = disk(brush_radius_px)
    out: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for oid in scribbles.object_ids():
        pos = np.zeros((h, w), dtype=bool)
        neg = np.zeros((h, w), dtype=bool)
        for s in scribbles.scribbles:
            if s.object_id != oid:
                continue
            _draw_polyline(pos if s.sign == POSITIVE else neg, s.points, h, w)
        if brush_radius_px > 0:
            pos = ndimage.binary_dilation(pos, structure=footprint)
            neg = ndimage.binary_dilation(neg, structure=footprint)
        out[oid] = (pos, neg)
    return out


def combined_scribble_maps(
    scribbles: ScribbleSet, h: int, w: int, object_id: int, brush_radius_px: int = 2
) -> tuple[np.ndarray, np.ndarray]:
    """(pos, neg) maps for one object; zeros when it has no scribbles."""
    maps = rasterize(scribbles, h, w, brush_radius_px)
    if object_id in maps:
        return maps[object_id]
    zero = np.zeros((h, w), dtype=bool)
    return zero, zero.copy()
