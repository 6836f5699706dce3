"""Round-based interactive inference over a full video.

Each round applies the user's scribbles on one frame through the interaction
network, then walks outward frame-by-frame with the propagation network.
Propagation halts before any frame annotated in an earlier round, and new
estimates are averaged with the previous round's masks using weights that
decay linearly with the propagated distance.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import roi as roi_mod
from .masks import (
    LabelMask,
    MultiObjectProbs,
    NEUTRAL,
    ProbMask,
    argmax_label,
    blend,
    decode_label_png,
    decode_prob_png,
    encode_label_png,
    encode_prob_png,
    frame_from_png,
    frame_to_png,
    soft_aggregate,
)
from .nets import IPNModel
from .scribbles import ScribbleSet, rasterize


@dataclass
class PropagationPlan:
    """Frame ranges one round may write to, with per-frame blend distances."""

    forward_range: list[int]
    backward_range: list[int]
    distances: dict[int, tuple[int, int]]  # frame -> (d, D)


def plan_propagation(t: int, history_frames, total_frames: int) -> PropagationPlan:
    """Frames reachable from the annotated frame before hitting a barrier.

    A barrier is any frame annotated in an earlier round; the barrier frame
    itself is excluded and keeps its mask. The annotated frame may re-appear
    in the history without blocking its own round.
    """
    if not 0 <= t < total_frames:
        raise ValueError(f"annotated frame {t} outside [0, {total_frames})")
    after = [h for h in history_frames if h > t]
    before = [h for h in history_frames if h < t]
    bound_fwd = min(after) if after else total_frames
    bound_bwd = max(before) if before else -1
    forward = list(range(t + 1, bound_fwd))
    backward = list(range(t - 1, bound_bwd, -1))
    distances: dict[int, tuple[int, int]] = {}
    for q in forward:
        distances[q] = (q - t, len(forward))
    for q in backward:
        distances[q] = (t - q, len(backward))
    return PropagationPlan(forward, backward, distances)


def blend_weight(d: int, total: int, first_round: bool = False, mode: str = "linear") -> float:
    """Trust in the new estimate at propagated distance d of a range of length D.

    Decays from 1 next to the source to 1/D at the far end; in the first
    round there is no previous estimate worth keeping, so the weight is 1.
    """
    if first_round:
        return 1.0
    if d < 1 or total < 1:
        raise ValueError(f"need 1 <= d <= D, got d={d}, D={total}")
    if d > total:
        raise ValueError(f"distance {d} exceeds range length {total}")
    if mode == "gaussian":
        sigma = max(total / 2.0, 0.5)
        return math.exp(-((d - 1) ** 2) / (2.0 * sigma * sigma))
    if mode != "linear":
        raise ValueError(f"unknown weighting mode {mode!r}")
    return (total - d + 1) / total


@dataclass
class Session:
    """All interactive state for one video: masks per round, history, features."""

    frames: list
    num_objects: int
    round: int = 0
    masks: list[dict[int, list[np.ndarray]]] = field(default_factory=list)
    raw_masks: list[dict[int, list[np.ndarray]]] = field(default_factory=list)
    labels: list[list[LabelMask]] = field(default_factory=list)
    annotation_history: list[tuple[int, int, ScribbleSet]] = field(default_factory=list)
    aggregated: dict[int, torch.Tensor] = field(default_factory=dict)
    annotated_objects: set[int] = field(default_factory=set)

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames[0].shape

    def history_frames(self) -> set[int]:
        return {t for (_, t, _) in self.annotation_history}


def _neutral_stack(h: int, w: int, t: int) -> list[np.ndarray]:
    return [np.full((h, w), NEUTRAL, dtype=np.float32) for _ in range(t)]


def start_session(frames, num_objects: int) -> Session:
    """Fresh session at round 0 with neutral masks everywhere."""
    if len(frames) < 1:
        raise ValueError("a session needs at least one frame")
    if num_objects < 1:
        raise ValueError("a session needs at least one object")
    h, w = frames[0].shape
    for f in frames:
        if f.shape != (h, w):
            raise ValueError("all frames must share dimensions")
    session = Session(frames=list(frames), num_objects=num_objects)
    initial = {oid: _neutral_stack(h, w, len(frames)) for oid in range(1, num_objects + 1)}
    session.masks.append(initial)
    session.raw_masks.append({oid: [m.copy() for m in stack] for oid, stack in initial.items()})
    session.labels.append(
        [LabelMask(np.zeros((h, w), dtype=np.int32), num_objects) for _ in frames]
    )
    return session


def _aggregate_round(
    per_object: dict[int, list[np.ndarray]], object_ids: list[int], num_objects: int
) -> tuple[list[LabelMask], list[MultiObjectProbs]]:
    """Aggregate the annotated objects' masks per frame.

    Only objects the user has ever marked compete for pixels; a neutral mask
    carries no claim, and with the odds formula it would otherwise beat the
    background product on every unclaimed pixel.
    """
    total = len(next(iter(per_object.values())))
    if not object_ids:
        h, w = per_object[1][0].shape
        empty = [LabelMask(np.zeros((h, w), dtype=np.int32), num_objects) for _ in range(total)]
        return empty, []
    labels, dists = [], []
    id_list = sorted(object_ids)
    channel_to_oid = np.array([0] + id_list, dtype=np.int32)
    for q in range(total):
        dist = soft_aggregate([ProbMask(per_object[oid][q], oid) for oid in id_list])
        dists.append(dist)
        raw = argmax_label(dist)
        labels.append(LabelMask(channel_to_oid[raw.labels], num_objects))
    return labels, dists


def _roi_from_guidance(
    pos: np.ndarray | None,
    neg: np.ndarray | None,
    mask_a: np.ndarray | None,
    mask_b: np.ndarray | None,
    h: int,
    w: int,
    roi_size: int,
    whole_image: bool,
) -> roi_mod.Roi:
    if whole_image:
        return roi_mod.first_round_roi(h, w, roi_size, roi_size)
    zeros = np.zeros((h, w), dtype=bool)
    box = roi_mod.guidance_bbox(
        pos if pos is not None else zeros,
        neg if neg is not None else zeros,
        ProbMask(np.clip(mask_a, 0.0, 1.0)) if mask_a is not None else None,
        ProbMask(np.clip(mask_b, 0.0, 1.0)) if mask_b is not None else None,
    )
    if box is None:
        return roi_mod.first_round_roi(h, w, roi_size, roi_size)
    return roi_mod.Roi(roi_mod.expand_box(box), roi_size, roi_size)


def _warp_net_inputs(frame_px, roi, mask_channels, scrib_channels):
    color = roi_mod.warp_to_roi(frame_px.transpose(2, 0, 1), roi, pad=roi_mod.COLOR_PAD)
    tensors = [torch.from_numpy(color.astype(np.float32))[None]]
    for m in mask_channels:
        warped = roi_mod.warp_to_roi(m, roi, pad=roi_mod.PROB_PAD)
        tensors.append(torch.from_numpy(warped.astype(np.float32))[None, None])
    for s in scrib_channels:
        warped = roi_mod.warp_to_roi(s.astype(np.float32), roi, pad=roi_mod.COLOR_PAD)
        tensors.append(torch.from_numpy(warped.astype(np.float32))[None, None])
    return tensors


def run_round(
    session: Session,
    scribbles: ScribbleSet,
    model: IPNModel,
    brush_radius_px: int = 2,
    weighting: str = "linear",
) -> Session:
    """Apply one round of scribbles: interact, propagate both ways, blend.

    Objects without scribbles this round carry their previous masks; objects
    never annotated stay neutral. Stored per-round masks are the channels of
    the soft-aggregated distribution.
    """
    if session.round + 1 != len(session.masks):
        raise RuntimeError("session state is inconsistent")
    t = scribbles.frame_index
    total = session.num_frames
    if not 0 <= t < total:
        raise ValueError(f"annotated frame {t} outside [0, {total})")
    oids = scribbles.object_ids()
    for oid in oids:
        if not 1 <= oid <= session.num_objects:
            raise ValueError(f"unknown object id {oid} (session has {session.num_objects})")
    h, w = session.shape
    s = model.cfg.roi_size
    r = session.round + 1
    first_round = len(session.annotation_history) == 0
    whole_image = r == 1

    plan = plan_propagation(t, session.history_frames(), total)
    stroke_maps = rasterize(scribbles, h, w, brush_radius_px)
    prev_round = session.masks[r - 1]
    new_raw = {
        oid: [m.copy() for m in prev_round[oid]] for oid in range(1, session.num_objects + 1)
    }

    model.eval()
    with torch.no_grad():
        for oid in oids:
            pos, neg = stroke_maps[oid]
            roi = _roi_from_guidance(pos, neg, None, prev_round[oid][t], h, w, s, whole_image)
            color, prev_round_t, pos_t, neg_t = _warp_net_inputs(
                session.frames[t].pixels, roi, [prev_round[oid][t]], [pos, neg]
            )
            prob_roi, r_enc = model.interaction(color, prev_round_t, pos_t, neg_t)
            interaction_mask = roi_mod.paste_from_roi(
                prob_roi.numpy()[0, 0], roi, ProbMask(prev_round[oid][t], oid)
            )
            new_raw[oid][t] = interaction_mask.values
            session.aggregated[oid] = model.aggregate(session.aggregated.get(oid), r_enc).detach()

            for q in plan.forward_range + plan.backward_range:
                source = q - 1 if q > t else q + 1
                prev_frame_mask = new_raw[oid][source]
                roi_q = _roi_from_guidance(
                    None, None, prev_frame_mask, prev_round[oid][q], h, w, s, whole_image
                )
                color, prev_frame_t, prev_round_t = _warp_net_inputs(
                    session.frames[q].pixels, roi_q, [prev_frame_mask, prev_round[oid][q]], []
                )
                prob_q = model.propagate(color, prev_frame_t, prev_round_t, session.aggregated[oid])
                pasted = roi_mod.paste_from_roi(
                    prob_q.numpy()[0, 0], roi_q, ProbMask(prev_round[oid][q], oid)
                )
                d, dist_total = plan.distances[q]
                weight = blend_weight(d, dist_total, first_round=first_round, mode=weighting)
                new_raw[oid][q] = blend(pasted, ProbMask(prev_round[oid][q], oid), weight).values

    session.annotated_objects.update(oids)
    annotated = sorted(session.annotated_objects)
    labels, dists = _aggregate_round(new_raw, annotated, session.num_objects)
    new_masks: dict[int, list[np.ndarray]] = {}
    for oid in range(1, session.num_objects + 1):
        if oid in session.annotated_objects:
            channel = annotated.index(oid) + 1
            new_masks[oid] = [dist.dist[channel].copy() for dist in dists]
        else:
            new_masks[oid] = _neutral_stack(h, w, total)
    session.masks.append(new_masks)
    session.raw_masks.append(new_raw)
    session.labels.append(labels)
    session.annotation_history.append((r, t, scribbles))
    session.round = r
    return session


def get_masks(session: Session, round_index: int | None = None) -> list[LabelMask]:
    """Per-frame label masks of a completed round (default: latest)."""
    r = session.round if round_index is None else round_index
    if not 0 <= r <= session.round:
        raise ValueError(f"round {r} not completed (current round {session.round})")
    return session.labels[r]


# --- snapshot persistence -------------------------------------------------

def save_snapshot(session: Session, directory: str | Path) -> None:
    """Write the canonical on-disk layout; completed rounds are immutable."""
    root = Path(directory)
    frames_dir = root / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(session.frames):
        path = frames_dir / f"frame_{i:05d}.png"
        if not path.exists():
            path.write_bytes(frame_to_png(frame))
    for r in range(session.round + 1):
        mask_dir = root / "masks" / f"round_{r:03d}"
        if not (mask_dir / f"frame_{session.num_frames - 1:05d}.png").exists():
            mask_dir.mkdir(parents=True, exist_ok=True)
            for i, label in enumerate(session.labels[r]):
                (mask_dir / f"frame_{i:05d}.png").write_bytes(encode_label_png(label))
            prob_dir = root / "probs" / f"round_{r:03d}"
            prob_dir.mkdir(parents=True, exist_ok=True)
            for oid in range(1, session.num_objects + 1):
                for i, values in enumerate(session.masks[r][oid]):
                    (prob_dir / f"obj_{oid:02d}_frame_{i:05d}.png").write_bytes(
                        encode_prob_png(ProbMask(values, oid))
                    )
    scrib_dir = root / "scribbles"
    scrib_dir.mkdir(exist_ok=True)
    for r, _, scribble_set in session.annotation_history:
        path = scrib_dir / f"round_{r:03d}.json"
        if not path.exists():
            path.write_text(scribble_set.to_json())
    state_dir = root / "state"
    state_dir.mkdir(exist_ok=True)
    for oid in range(1, session.num_objects + 1):
        np.savez_compressed(
            state_dir / f"masks_obj_{oid:02d}.npz",
            masks=np.stack(session.masks[session.round][oid]),
        )
        if oid in session.aggregated:
            np.save(state_dir / f"aggregated_obj_{oid:02d}.npy",
                    session.aggregated[oid].numpy())
    meta = {
        "T": session.num_frames,
        "M": session.num_objects,
        "round": session.round,
        "history": [[r, t] for (r, t, _) in session.annotation_history],
        "annotated_objects": sorted(session.annotated_objects),
    }
    (root / "session.json").write_text(json.dumps(meta, indent=2))


def load_snapshot(directory: str | Path) -> Session:
    """Rebuild a resumable session from its snapshot directory."""
    root = Path(directory)
    meta = json.loads((root / "session.json").read_text())
    total, num_objects = meta["T"], meta["M"]
    frames = [
        frame_from_png((root / "frames" / f"frame_{i:05d}.png").read_bytes(), i)
        for i in range(total)
    ]
    session = Session(frames=frames, num_objects=num_objects)
    session.round = meta["round"]
    session.annotated_objects = set(meta.get("annotated_objects", []))

    for r in range(session.round + 1):
        label_dir = root / "masks" / f"round_{r:03d}"
        session.labels.append([
            decode_label_png((label_dir / f"frame_{i:05d}.png").read_bytes(), num_objects)
            for i in range(total)
        ])
        prob_dir = root / "probs" / f"round_{r:03d}"
        per_object = {
            oid: [
                decode_prob_png(
                    (prob_dir / f"obj_{oid:02d}_frame_{i:05d}.png").read_bytes(), oid
                ).values
                for i in range(total)
            ]
            for oid in range(1, num_objects + 1)
        }
        session.masks.append(per_object)
        session.raw_masks.append({oid: [m.copy() for m in s] for oid, s in per_object.items()})

    # the latest round keeps full float32 precision for exact resumption
    state_dir = root / "state"
    for oid in range(1, num_objects + 1):
        npz = state_dir / f"masks_obj_{oid:02d}.npz"
        if npz.exists():
            stack = np.load(npz)["masks"]
            session.masks[session.round][oid] = [stack[i] for i in range(total)]
        agg = state_dir / f"aggregated_obj_{oid:02d}.npy"
        if agg.exists():
            session.aggregated[oid] = torch.from_numpy(np.load(agg))

    scribble_rounds = {}
    for r, t in meta["history"]:
        data = (root / "scribbles" / f"round_{r:03d}.json").read_text()
        scribble_rounds[r] = ScribbleSet.from_json(data)
    session.annotation_history = [
        (r, t, scribble_rounds[r]) for r, t in meta["history"]
    ]
    return session
