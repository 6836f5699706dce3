"""Multi-round training: curriculum, loss, and the per-iteration round loop.

A single iteration replays the interactive scenario on one clip: simulated
scribbles trigger the interaction network on one frame, the result is
propagated over the rest of the clip, and the whole cycle repeats for R
rounds. Every intermediate estimate contributes a loss and an immediate
parameter update; estimates handed between steps are detached so each loss
only trains the network that produced the estimate.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml

from . import roi as roi_mod
from .data import ClipSample, SkipSample, ToyVideoSpec, generate_toy_video, sample_training_clip
from .masks import LabelMask, NEUTRAL
from .nets import IPNModel, ModelConfig, init_params, save_checkpoint
from .scribbles import combined_scribble_maps, synthesize_round_scribbles


class NonFiniteLossError(RuntimeError):
    """Raised when training produces a NaN/Inf loss; carries the location."""

    def __init__(self, message: str, iteration: int | None, round_index: int, frame_index: int):
        super().__init__(message)
        self.iteration = iteration
        self.round_index = round_index
        self.frame_index = frame_index


@dataclass
class TrainConfig:
    lr: float = 1e-5
    optimizer: str = "adam"
    iterations: int = 1500
    seed: int = 0
    clip_len_min: int = 4
    clip_len_max: int = 8
    rounds_min: int = 1
    rounds_max: int = 3
    ramp_fraction: float = 0.8
    patch_size: int = 400
    short_edge_resize: int = 480
    pretrain_iterations: int = 0
    checkpoint_every: int = 500
    max_strokes: int = 3
    brush_radius_px: int = 2
    torch_threads: int = 1  # small tensors: intra-op threading costs more than it buys
    # model
    variant: str = "reduced"
    roi_size: int = 256
    decoder_width: int = 64
    # toy corpus used when no external data source is given
    num_toy_videos: int = 5
    toy_video_seed: int = 0
    toy: ToyVideoSpec = field(default_factory=ToyVideoSpec)

    def __post_init__(self) -> None:
        if self.clip_len_min < 2:
            raise ValueError("clips need at least 2 frames")
        if self.rounds_min < 1:
            raise ValueError("need at least one round")
        if self.patch_size > self.short_edge_resize:
            raise ValueError("patch_size must not exceed the resized short edge")

    def model_config(self) -> ModelConfig:
        if self.variant == "paper":
            return ModelConfig.paper(roi_size=self.roi_size, agg_bottleneck_ratio=4)
        return ModelConfig(
            variant="reduced",
            roi_size=self.roi_size,
            decoder_width=self.decoder_width,
        )

    @classmethod
    def from_yaml(cls, path: str | Path) -> "TrainConfig":
        raw = yaml.safe_load(Path(path).read_text()) or {}
        toy = raw.pop("toy", None)
        cfg = cls(**raw)
        if toy:
            cfg.toy = ToyVideoSpec(**{k: tuple(v) if k == "shape_kinds" else v for k, v in toy.items()})
        return cfg

    def to_yaml(self, path: str | Path) -> None:
        raw = asdict(self)
        raw["toy"]["shape_kinds"] = list(raw["toy"]["shape_kinds"])
        Path(path).write_text(yaml.safe_dump(raw, sort_keys=False))


def curriculum_schedule(
    iteration: int,
    total: int,
    n_range: tuple[int, int] = (4, 8),
    r_range: tuple[int, int] = (1, 3),
    ramp_fraction: float = 0.8,
) -> tuple[int, int]:
    """Clip length and round count for this iteration, ramping up linearly.

    Both reach their maxima at ramp_fraction of the run and stay there.
    """
    if not 0 <= iteration < total:
        raise ValueError(f"iteration {iteration} outside [0, {total})")
    ramp_len = max(1.0, ramp_fraction * total)
    p = min(1.0, iteration / ramp_len)
    n = n_range[0] + int(math.floor((n_range[1] - n_range[0]) * p + 0.5))
    r = r_range[0] + int(math.floor((r_range[1] - r_range[0]) * p + 0.5))
    return n, r


def masked_bce_loss(pred_prob: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over all ROI pixels."""
    p = pred_prob.clamp(1e-6, 1.0 - 1e-6)
    g = gt.to(p.dtype)
    return -(g * torch.log(p) + (1.0 - g) * torch.log(1.0 - p)).mean()


def _roi_for(
    guidance_masks: list[np.ndarray | None],
    pos: np.ndarray,
    neg: np.ndarray,
    h: int,
    w: int,
    roi_size: int,
    whole_image: bool,
) -> roi_mod.Roi:
    """Guidance-driven ROI; whole image in round 1 or when guidance is empty."""
    if not whole_image:
        from .masks import ProbMask

        masks = [ProbMask(np.clip(m, 0.0, 1.0)) if m is not None else None for m in guidance_masks]
        while len(masks) < 2:
            masks.append(None)
        box = roi_mod.guidance_bbox(pos, neg, masks[0], masks[1])
        if box is not None:
            return roi_mod.Roi(roi_mod.expand_box(box), roi_size, roi_size)
    return roi_mod.first_round_roi(h, w, roi_size, roi_size)


def _to_tensor(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))[None]


def _warp_inputs(frame_px: np.ndarray, roi: roi_mod.Roi, mask_channels: list[np.ndarray],
                 scrib_channels: list[np.ndarray]) -> list[torch.Tensor]:
    """Warp color (pad 0), mask (pad 0.5) and scribble (pad 0) channels."""
    color = roi_mod.warp_to_roi(frame_px.transpose(2, 0, 1), roi, pad=roi_mod.COLOR_PAD)
    out = [_to_tensor(color)]
    for m in mask_channels:
        out.append(_to_tensor(roi_mod.warp_to_roi(m, roi, pad=roi_mod.PROB_PAD)[None]))
    for s in scrib_channels:
        out.append(_to_tensor(roi_mod.warp_to_roi(s.astype(np.float32), roi, pad=roi_mod.COLOR_PAD)[None]))
    return out


def _warp_gt(gt_bin: np.ndarray, roi: roi_mod.Roi) -> torch.Tensor:
    warped = roi_mod.warp_to_roi(gt_bin.astype(np.float32), roi, pad=0.0)
    return _to_tensor((warped >= 0.5).astype(np.float32)[None])


def _paste(prob_roi: torch.Tensor, roi: roi_mod.Roi, full_prev: np.ndarray) -> np.ndarray:
    from .masks import ProbMask

    pred = prob_roi.detach().numpy()[0, 0]
    return roi_mod.paste_from_roi(pred, roi, ProbMask(full_prev)).values


def _check_finite(loss: torch.Tensor, round_index: int, frame_index: int) -> None:
    if not torch.isfinite(loss):
        raise NonFiniteLossError(
            f"non-finite loss at round {round_index}, frame {frame_index}",
            None, round_index, frame_index,
        )


def multiround_train_step(
    model: IPNModel,
    opt_interaction: torch.optim.Optimizer,
    opt_propagation: torch.optim.Optimizer,
    clip: ClipSample,
    rounds: int,
    rng: np.random.Generator,
    max_strokes: int = 3,
    brush_radius_px: int = 2,
) -> list[float]:
    """One training iteration: R simulated rounds on one clip, one target object.

    Returns the per-estimation losses in computation order: for each round one
    interaction loss followed by N-1 propagation losses.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    model.train()
    n = len(clip.frames)
    h, w = clip.frames[0].shape
    s = model.cfg.roi_size
    oid = int(rng.choice(clip.object_ids))
    gt_bin = [(g.labels == oid) for g in clip.gt]
    gt_label = [LabelMask((g.labels == oid).astype(np.int32), 1) for g in clip.gt]

    prev_round = [np.full((h, w), NEUTRAL, dtype=np.float32) for _ in range(n)]
    aggregated: torch.Tensor | None = None
    losses: list[float] = []

    for r in range(1, rounds + 1):
        if r == 1:
            t = int(np.argmax([g.sum() for g in gt_bin]))
            pred_at_t = None
        else:
            from .scribbles import select_worst_frame

            est_labels = [LabelMask((m >= 0.5).astype(np.int32), 1) for m in prev_round]
            t = select_worst_frame(est_labels, gt_label)
            pred_at_t = est_labels[t]

        scribbles = synthesize_round_scribbles(
            pred_at_t, gt_label[t], [1], r, rng, frame_index=t, max_strokes=max_strokes
        )
        pos, neg = combined_scribble_maps(scribbles, h, w, 1, brush_radius_px)

        roi = _roi_for([None, prev_round[t]], pos, neg, h, w, s, whole_image=(r == 1))
        color, prev_round_t, pos_t, neg_t = _warp_inputs(
            clip.frames[t].pixels, roi, [prev_round[t]], [pos, neg]
        )
        prob_roi, r_enc = model.interaction(color, prev_round_t, pos_t, neg_t)
        loss = masked_bce_loss(prob_roi, _warp_gt(gt_bin[t], roi))
        _check_finite(loss, r, t)
        opt_interaction.zero_grad()
        loss.backward()
        opt_interaction.step()
        losses.append(float(loss.detach()))

        r_enc = r_enc.detach()
        a_prev = aggregated  # last round's reference, already detached

        estimates = [m.copy() for m in prev_round]
        estimates[t] = _paste(prob_roi, roi, prev_round[t])

        order = list(range(t + 1, n)) + list(range(t - 1, -1, -1))
        for q in order:
            source = q - 1 if q > t else q + 1
            prev_frame_mask = estimates[source]
            roi_q = _roi_for([prev_frame_mask, prev_round[q]],
                             np.zeros((h, w), bool), np.zeros((h, w), bool),
                             h, w, s, whole_image=(r == 1))
            color, prev_frame_t, prev_round_t = _warp_inputs(
                clip.frames[q].pixels, roi_q, [prev_frame_mask, prev_round[q]], []
            )
            # fresh aggregation graph per step so its parameters train with
            # every propagation loss; inputs stay detached
            reference = r_enc if a_prev is None else model.aggregator(a_prev, r_enc)
            prob_q = model.propagate(color, prev_frame_t, prev_round_t, reference)
            loss_q = masked_bce_loss(prob_q, _warp_gt(gt_bin[q], roi_q))
            _check_finite(loss_q, r, q)
            opt_propagation.zero_grad()
            loss_q.backward()
            opt_propagation.step()
            losses.append(float(loss_q.detach()))
            estimates[q] = _paste(prob_q, roi_q, prev_round[q])

        with torch.no_grad():
            aggregated = (r_enc if a_prev is None else model.aggregator(a_prev, r_enc)).detach()
        prev_round = estimates

    model.eval()
    return losses


def build_optimizers(model: IPNModel, cfg: TrainConfig) -> tuple[torch.optim.Optimizer, torch.optim.Optimizer]:
    if cfg.optimizer != "adam":
        raise ValueError(f"unsupported optimizer {cfg.optimizer!r}")
    opt_i = torch.optim.Adam(model.interaction_parameters(), lr=cfg.lr)
    opt_p = torch.optim.Adam(model.propagation_parameters(), lr=cfg.lr)
    return opt_i, opt_p


def _pretrain_clip(videos, cfg: TrainConfig, rng: np.random.Generator) -> ClipSample:
    """Two-frame pair synthesized from a random still of the corpus."""
    from .data import synthesize_pretrain_pair

    for _ in range(20):
        frames, gts = videos[rng.integers(0, len(videos))]
        i = int(rng.integers(0, len(frames)))
        try:
            return synthesize_pretrain_pair(frames[i], gts[i], rng)
        except SkipSample:
            continue
    raise SkipSample("could not synthesize a pretraining pair")


def train(
    cfg: TrainConfig,
    out_dir: str | Path,
    seed: int | None = None,
    videos: list[tuple[list, list]] | None = None,
    log_every: int = 50,
    progress: bool = False,
) -> Path:
    """Run the full curriculum and write checkpoints plus a loss-curve CSV.

    Returns the path of the final checkpoint. `videos` overrides the toy
    corpus with any (frames, labelmasks) source.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    if cfg.torch_threads:
        torch.set_num_threads(cfg.torch_threads)

    model = init_params(cfg.model_config(), seed)
    opt_i, opt_p = build_optimizers(model, cfg)

    if videos is None:
        videos = [
            generate_toy_video(cfg.toy, cfg.toy_video_seed + i)
            for i in range(cfg.num_toy_videos)
        ]

    cfg.to_yaml(out / "train_config.yaml")
    curve_path = out / "loss_curve.csv"
    start = time.time()
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "n", "r"])
        total = cfg.pretrain_iterations + cfg.iterations
        for iteration in range(total):
            pretraining = iteration < cfg.pretrain_iterations
            if pretraining:
                n_len, r_rounds = 2, 1
                clip = _pretrain_clip(videos, cfg, rng)
            else:
                n_len, r_rounds = curriculum_schedule(
                    iteration - cfg.pretrain_iterations,
                    cfg.iterations,
                    (cfg.clip_len_min, cfg.clip_len_max),
                    (cfg.rounds_min, cfg.rounds_max),
                    cfg.ramp_fraction,
                )
                frames, gts = videos[rng.integers(0, len(videos))]
                try:
                    clip = sample_training_clip(
                        frames, gts, n_len, rng,
                        patch_size=cfg.patch_size, short_edge=cfg.short_edge_resize,
                    )
                except SkipSample:
                    continue
            try:
                losses = multiround_train_step(
                    model, opt_i, opt_p, clip, r_rounds, rng,
                    max_strokes=cfg.max_strokes, brush_radius_px=cfg.brush_radius_px,
                )
            except NonFiniteLossError as err:
                err.iteration = iteration
                raise NonFiniteLossError(
                    f"iteration {iteration}: {err}", iteration, err.round_index, err.frame_index
                ) from err
            writer.writerow([iteration, f"{float(np.mean(losses)):.6f}", n_len, r_rounds])
            if progress and (iteration % log_every == 0 or iteration == total - 1):
                print(
                    f"iter {iteration}/{total} loss {float(np.mean(losses)):.4f} "
                    f"N={n_len} R={r_rounds} elapsed {time.time() - start:.0f}s",
                    flush=True,
                )
            if cfg.checkpoint_every and (iteration + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(model, out / f"ckpt_{iteration + 1:06d}.pt", iteration + 1)
    final = out / "final.pt"
    save_checkpoint(model, final, total)
    return final
