"""Interaction and propagation networks with a shared decoder design.

Both networks are encoder-decoder CNNs over ROI-aligned inputs. The encoder
follows a 4-stage residual layout with strides 4/8/16/32; the decoder refines
back to stride 4 through skip connections. A small channel-attention module
recurrently merges the interaction encoder's outputs across rounds into the
reference feature consumed by the propagation decoder.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import torch
import torch.nn.functional as F
from torch import nn

PROB_CLAMP = 1e-6

REDUCED_CHANNELS = (16, 32, 64, 128)
PAPER_CHANNELS = (256, 512, 1024, 2048)


class ConfigError(ValueError):
    """Raised for inconsistent network configurations."""


@dataclass(frozen=True)
class BackboneConfig:
    """Encoder layout; strides per stage are fixed at 4/8/16/32."""

    in_channels: int
    variant: str = "reduced"
    stage_channels: tuple[int, ...] = REDUCED_CHANNELS

    def __post_init__(self) -> None:
        if self.in_channels not in (5, 6):
            raise ConfigError(f"in_channels must be 5 or 6, got {self.in_channels}")
        if self.variant not in ("reduced", "paper"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if len(self.stage_channels) != 4 or any(c < 1 for c in self.stage_channels):
            raise ConfigError("stage_channels must be 4 positive ints")


@dataclass(frozen=True)
class ModelConfig:
    """Configuration shared by both networks, the decoder and the aggregator."""

    variant: str = "reduced"
    stage_channels: tuple[int, ...] = REDUCED_CHANNELS
    decoder_width: int = 64
    agg_bottleneck_ratio: int = 4
    roi_size: int = 256

    def __post_init__(self) -> None:
        if self.roi_size < 32 or self.roi_size % 32 != 0:
            raise ConfigError("roi_size must be a positive multiple of 32")
        if self.agg_bottleneck_ratio < 1:
            raise ConfigError("agg_bottleneck_ratio must be >= 1")
        BackboneConfig(6, self.variant, tuple(self.stage_channels))

    @classmethod
    def reduced(cls, roi_size: int = 128, **kw) -> "ModelConfig":
        return cls(variant="reduced", stage_channels=REDUCED_CHANNELS, decoder_width=64,
                   roi_size=roi_size, **kw)

    @classmethod
    def paper(cls, roi_size: int = 256, **kw) -> "ModelConfig":
        return cls(variant="paper", stage_channels=PAPER_CHANNELS, decoder_width=256,
                   roi_size=roi_size, **kw)


class EncoderOutput(NamedTuple):
    bottom: torch.Tensor  # (B, C4, S/32, S/32)
    skips: tuple[torch.Tensor, torch.Tensor, torch.Tensor]  # strides 4, 8, 16


def _norm(channels: int) -> nn.GroupNorm:
    groups = max(g for g in range(1, min(8, channels) + 1) if channels % g == 0)
    return nn.GroupNorm(groups, channels)


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.n1 = _norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.n2 = _norm(out_ch)
        self.down = None
        if stride != 1 or in_ch != out_ch:
            self.down = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False), _norm(out_ch))

    def forward(self, x):
        identity = self.down(x) if self.down is not None else x
        out = F.relu(self.n1(self.conv1(x)))
        out = self.n2(self.conv2(out))
        return F.relu(out + identity)


class BottleneckBlock(nn.Module):
    expansion = 4

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        mid = out_ch // self.expansion
        self.conv1 = nn.Conv2d(in_ch, mid, 1, bias=False)
        self.n1 = _norm(mid)
        self.conv2 = nn.Conv2d(mid, mid, 3, stride=stride, padding=1, bias=False)
        self.n2 = _norm(mid)
        self.conv3 = nn.Conv2d(mid, out_ch, 1, bias=False)
        self.n3 = _norm(out_ch)
        self.down = None
        if stride != 1 or in_ch != out_ch:
            self.down = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False), _norm(out_ch))

    def forward(self, x):
        identity = self.down(x) if self.down is not None else x
        out = F.relu(self.n1(self.conv1(x)))
        out = F.relu(self.n2(self.conv2(out)))
        out = self.n3(self.conv3(out))
        return F.relu(out + identity)


class Encoder(nn.Module):
    """4-stage residual encoder exposing stride 4/8/16 skips and the bottom map."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        c = cfg.stage_channels
        if cfg.variant == "paper":
            block, blocks_per_stage, stem_ch = BottleneckBlock, (3, 4, 6, 3), 64
        else:
            block, blocks_per_stage, stem_ch = BasicBlock, (2, 2, 2, 2), c[0]
        self.stem = nn.Sequential(
            nn.Conv2d(cfg.in_channels, stem_ch, 7, stride=2, padding=3, bias=False),
            _norm(stem_ch),
            nn.ReLU(inplace=True),
        )
        self.pool = nn.MaxPool2d(3, stride=2, padding=1)

        def make_stage(in_ch, out_ch, n_blocks, stride):
            blocks = [block(in_ch, out_ch, stride)]
            blocks += [block(out_ch, out_ch) for _ in range(n_blocks - 1)]
            return nn.Sequential(*blocks)

        self.stage1 = make_stage(stem_ch, c[0], blocks_per_stage[0], 1)
        self.stage2 = make_stage(c[0], c[1], blocks_per_stage[1], 2)
        self.stage3 = make_stage(c[1], c[2], blocks_per_stage[2], 2)
        self.stage4 = make_stage(c[2], c[3], blocks_per_stage[3], 2)

    def forward(self, x) -> EncoderOutput:
        x = self.pool(self.stem(x))
        s4 = self.stage1(x)
        s8 = self.stage2(s4)
        s16 = self.stage3(s8)
        bottom = self.stage4(s16)
        return EncoderOutput(bottom, (s4, s8, s16))


class RefineBlock(nn.Module):
    """One decoder step: upsample, add projected skip, residual refinement."""

    def __init__(self, skip_ch: int, width: int):
        super().__init__()
        self.skip_proj = nn.Conv2d(skip_ch, width, 1)
        self.conv1 = nn.Conv2d(width, width, 3, padding=1, bias=False)
        self.n1 = _norm(width)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1, bias=False)
        self.n2 = _norm(width)

    def forward(self, coarse, skip):
        x = F.interpolate(coarse, scale_factor=2, mode="bilinear", align_corners=False)
        x = x + self.skip_proj(skip)
        res = self.n2(self.conv2(F.relu(self.n1(self.conv1(x)))))
        return F.relu(x + res)


class Decoder(nn.Module):
    """Refines the bottom feature map back to single-channel logits at stride 4."""

    def __init__(self, bottom_ch: int, skip_channels: Sequence[int], width: int):
        super().__init__()
        c4, c8, c16 = skip_channels
        self.bottom_proj = nn.Conv2d(bottom_ch, width, 1)
        self.refine16 = RefineBlock(c16, width)
        self.refine8 = RefineBlock(c8, width)
        self.refine4 = RefineBlock(c4, width)
        self.head = nn.Sequential(
            nn.Conv2d(width, width, 3, padding=1, bias=False),
            _norm(width),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, 1, 1),
        )

    def forward(self, bottom, skips):
        s4, s8, s16 = skips
        x = self.bottom_proj(bottom)
        x = self.refine16(x, s16)
        x = self.refine8(x, s8)
        x = self.refine4(x, s4)
        return self.head(x)


class FeatureAggregator(nn.Module):
    """Recurrent channel-attention merge of the accumulated reference features.

    Produces per-channel convex weights (alpha, beta) from globally pooled
    descriptors of both maps and returns alpha * previous + beta * new.
    """

    def __init__(self, channels: int, bottleneck_ratio: int = 4):
        super().__init__()
        hidden = max(1, channels // bottleneck_ratio)
        self.channels = channels
        self.fc1 = nn.Linear(2 * channels, hidden)
        self.fc2 = nn.Linear(hidden, 2 * channels)

    def weights(self, a_prev: torch.Tensor, r_new: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        pooled = torch.cat([a_prev.mean(dim=(2, 3)), r_new.mean(dim=(2, 3))], dim=1)
        logits = self.fc2(F.relu(self.fc1(pooled))).view(-1, 2, self.channels)
        w = torch.softmax(logits, dim=1)
        return w[:, 0], w[:, 1]

    def forward(self, a_prev: torch.Tensor, r_new: torch.Tensor) -> torch.Tensor:
        if a_prev.shape != r_new.shape:
            raise ConfigError(f"feature shapes differ: {tuple(a_prev.shape)} vs {tuple(r_new.shape)}")
        alpha, beta = self.weights(a_prev, r_new)
        return alpha[:, :, None, None] * a_prev + beta[:, :, None, None] * r_new


class IPNModel(nn.Module):
    """The interaction network, the propagation network and their aggregator."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        channels = tuple(cfg.stage_channels)
        self.interaction_encoder = Encoder(BackboneConfig(6, cfg.variant, channels))
        self.propagation_encoder = Encoder(BackboneConfig(5, cfg.variant, channels))
        skips = channels[:3]
        c4 = channels[3]
        self.interaction_decoder = Decoder(c4, skips, cfg.decoder_width)
        self.propagation_decoder = Decoder(2 * c4, skips, cfg.decoder_width)
        self.aggregator = FeatureAggregator(c4, cfg.agg_bottleneck_ratio)
        self.init_seed: int | None = None

    def _mask_from_logits(self, logits: torch.Tensor) -> torch.Tensor:
        up = F.interpolate(logits, scale_factor=4, mode="bilinear", align_corners=False)
        return torch.sigmoid(up).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)

    def interaction(
        self,
        frame: torch.Tensor,       # (B, 3, S, S)
        prev_round_mask: torch.Tensor,  # (B, 1, S, S)
        pos_scrib: torch.Tensor,   # (B, 1, S, S)
        neg_scrib: torch.Tensor,   # (B, 1, S, S)
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Segment the annotated frame; returns (prob, encoder bottom output)."""
        x = torch.cat([frame, prev_round_mask, pos_scrib, neg_scrib], dim=1)
        self._check_input(x, 6)
        enc = self.interaction_encoder(x)
        logits = self.interaction_decoder(enc.bottom, enc.skips)
        return self._mask_from_logits(logits), enc.bottom

    def propagate(
        self,
        frame: torch.Tensor,            # (B, 3, S, S)
        prev_frame_mask: torch.Tensor,  # (B, 1, S, S)
        prev_round_mask: torch.Tensor,  # (B, 1, S, S)
        reference: torch.Tensor,        # (B, C4, S/32, S/32)
    ) -> torch.Tensor:
        """Transfer the neighboring frame's mask, guided by the reference."""
        x = torch.cat([frame, prev_frame_mask, prev_round_mask], dim=1)
        self._check_input(x, 5)
        enc = self.propagation_encoder(x)
        if reference.shape != enc.bottom.shape:
            raise ConfigError(
                f"reference shape {tuple(reference.shape)} does not match encoder "
                f"output {tuple(enc.bottom.shape)}"
            )
        logits = self.propagation_decoder(torch.cat([enc.bottom, reference], dim=1), enc.skips)
        return self._mask_from_logits(logits)

    def aggregate(self, a_prev: torch.Tensor | None, r_new: torch.Tensor) -> torch.Tensor:
        """Merge a new interaction encoding into the running reference.

        The first interaction has nothing to merge with and passes through.
        """
        if a_prev is None:
            return r_new
        return self.aggregator(a_prev, r_new)

    def _check_input(self, x: torch.Tensor, channels: int) -> None:
        s = self.cfg.roi_size
        if x.ndim != 4 or x.shape[1] != channels or x.shape[2] != s or x.shape[3] != s:
            raise ConfigError(f"expected (B, {channels}, {s}, {s}) input, got {tuple(x.shape)}")

    def interaction_parameters(self):
        yield from self.interaction_encoder.parameters()
        yield from self.interaction_decoder.parameters()

    def propagation_parameters(self):
        yield from self.propagation_encoder.parameters()
        yield from self.propagation_decoder.parameters()
        yield from self.aggregator.parameters()


def _init_module(module: nn.Module, gen: torch.Generator) -> None:
    if isinstance(module, (nn.Conv2d, nn.Linear)):
        fan_in = module.weight.shape[1] * (
            module.weight.shape[2] * module.weight.shape[3] if module.weight.ndim == 4 else 1
        )
        std = (2.0 / max(1, fan_in)) ** 0.5
        with torch.no_grad():
            module.weight.normal_(0.0, std, generator=gen)
            if module.bias is not None:
                module.bias.zero_()
    elif isinstance(module, nn.GroupNorm):
        with torch.no_grad():
            module.weight.fill_(1.0)
            module.bias.zero_()


def init_params(cfg: ModelConfig, seed: int, pretrained_backbone: str | Path | None = None) -> IPNModel:
    """Build both networks with deterministic, seed-reproducible weights.

    `pretrained_backbone` is the hook for initializing encoder weights from a
    classification backbone (with the extra first-layer input filters zeroed);
    loading external weights is not implemented at desk scale.
    """
    if pretrained_backbone is not None:
        raise NotImplementedError(
            "pretrained backbone initialization is not available at desk scale"
        )
    model = IPNModel(cfg)
    gen = torch.Generator().manual_seed(seed)
    for module in model.modules():
        _init_module(module, gen)
    model.init_seed = seed
    model.eval()
    return model


def save_checkpoint(model: IPNModel, path: str | Path, iteration: int = 0) -> None:
    """Self-describing checkpoint: config, seed, iteration and all weights."""
    payload = {
        "format": "ivseg-checkpoint-v1",
        "model_config": asdict(model.cfg),
        "init_seed": model.init_seed,
        "iteration": int(iteration),
        "state_dict": model.state_dict(),
    }
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path) -> tuple[IPNModel, dict]:
    payload = torch.load(str(path), map_location="cpu", weights_only=False)
    if payload.get("format") != "ivseg-checkpoint-v1":
        raise ValueError(f"not an ivseg checkpoint: {path}")
    raw = dict(payload["model_config"])
    raw["stage_channels"] = tuple(raw["stage_channels"])
    cfg = ModelConfig(**raw)
    model = IPNModel(cfg)
    model.load_state_dict(payload["state_dict"])
    model.init_seed = payload.get("init_seed")
    model.eval()
    meta = {"iteration": payload.get("iteration", 0), "init_seed": model.init_seed}
    return model, meta
