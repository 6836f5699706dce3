import math

import numpy as np
import pytest
import torch

from ivseg.data import ToyVideoSpec, generate_toy_video, sample_training_clip
from ivseg.nets import ModelConfig, init_params
from ivseg.train import (
    NonFiniteLossError,
    TrainConfig,
    build_optimizers,
    curriculum_schedule,
    masked_bce_loss,
    multiround_train_step,
    train,
)

TINY = ModelConfig(variant="reduced", stage_channels=(8, 16, 16, 16), decoder_width=8, roi_size=32)


def _tiny_setup(seed=0, lr=1e-3):
    model = init_params(TINY, seed)
    cfg = TrainConfig(roi_size=32, lr=lr, patch_size=48, short_edge_resize=48)
    opt_i, opt_p = build_optimizers(model, cfg)
    return model, opt_i, opt_p


def _clip(n=4, seed=0):
    frames, gts = generate_toy_video(
        ToyVideoSpec(num_frames=12, h=48, w=48, motion_amplitude=3.0), seed
    )
    return sample_training_clip(
        frames, gts, n, np.random.default_rng(seed), patch_size=48, short_edge=48, augment=False
    )


class TestCurriculum:
    def test_start(self):
        assert curriculum_schedule(0, 1000) == (4, 1)

    def test_end(self):
        assert curriculum_schedule(999, 1000) == (8, 3)

    def test_midpoint_of_ramp(self):
        assert curriculum_schedule(400, 1000) == (6, 2)

    def test_monotone(self):
        values = [curriculum_schedule(i, 200) for i in range(200)]
        assert all(a[0] <= b[0] and a[1] <= b[1] for a, b in zip(values[:-1], values[1:]))

    def test_range_checked(self):
        with pytest.raises(ValueError):
            curriculum_schedule(5, 5)


class TestMaskedBce:
    def test_perfect_prediction_tiny_loss(self):
        gt = torch.tensor([[0.0, 1.0], [1.0, 0.0]])
        loss = masked_bce_loss(gt.clone(), gt)
        assert float(loss) == pytest.approx(1e-6, abs=2e-6)

    def test_uniform_half_is_ln2(self):
        pred = torch.full((8, 8), 0.5)
        gt = torch.zeros(8, 8)
        assert float(masked_bce_loss(pred, gt)) == pytest.approx(math.log(2.0), abs=1e-6)

    def test_point_nine_on_ones(self):
        pred = torch.full((4, 4), 0.9)
        gt = torch.ones(4, 4)
        assert float(masked_bce_loss(pred, gt)) == pytest.approx(-math.log(0.9), abs=1e-6)


class TestMultiRoundStep:
    def test_loss_count_r1(self):
        model, oi, op = _tiny_setup()
        losses = multiround_train_step(model, oi, op, _clip(4), 1, np.random.default_rng(0))
        assert len(losses) == 4  # 1 interaction + 3 propagation

    def test_loss_count_r3(self):
        model, oi, op = _tiny_setup()
        losses = multiround_train_step(model, oi, op, _clip(4), 3, np.random.default_rng(0))
        assert len(losses) == 12

    def test_losses_finite_positive(self):
        model, oi, op = _tiny_setup()
        losses = multiround_train_step(model, oi, op, _clip(5), 2, np.random.default_rng(1))
        assert all(np.isfinite(v) and v > 0 for v in losses)

    def test_deterministic(self):
        a = multiround_train_step(*_tiny_setup(seed=3), _clip(4), 2, np.random.default_rng(7))
        b = multiround_train_step(*_tiny_setup(seed=3), _clip(4), 2, np.random.default_rng(7))
        assert a == b

    def test_every_param_gets_gradient(self):
        model, oi, op = _tiny_setup()
        seen = {name: False for name, _ in model.named_parameters()}

        def record():
            for name, p in model.named_parameters():
                if p.grad is not None and float(p.grad.abs().max()) > 0:
                    seen[name] = True

        class Recording(torch.optim.Adam):
            def step(self, closure=None):
                record()
                return super().step(closure)

        oi = Recording(model.interaction_parameters(), lr=1e-3)
        op = Recording(model.propagation_parameters(), lr=1e-3)
        multiround_train_step(model, oi, op, _clip(4), 2, np.random.default_rng(0))
        missing = [n for n, got in seen.items() if not got]
        assert missing == []

    def test_aggregator_untrained_when_single_round(self):
        model, oi, op = _tiny_setup()
        before = [p.clone() for p in model.aggregator.parameters()]
        multiround_train_step(model, oi, op, _clip(4), 1, np.random.default_rng(0))
        after = list(model.aggregator.parameters())
        assert all(torch.equal(a, b) for a, b in zip(before, after))

    def test_nonfinite_loss_reported(self, monkeypatch):
        model, oi, op = _tiny_setup()
        import ivseg.train as train_mod

        def bad_loss(pred, gt):
            return torch.tensor(float("nan"), requires_grad=True)

        monkeypatch.setattr(train_mod, "masked_bce_loss", bad_loss)
        with pytest.raises(NonFiniteLossError) as err:
            multiround_train_step(model, oi, op, _clip(4), 1, np.random.default_rng(0))
        assert err.value.round_index == 1

    def test_smoke_loss_decreases_on_fixed_clip(self):
        model, oi, op = _tiny_setup(lr=2e-3)
        clip = _clip(4, seed=2)
        rng = np.random.default_rng(0)
        means = []
        for _ in range(200):
            means.append(float(np.mean(multiround_train_step(model, oi, op, clip, 1, rng))))
        first = float(np.mean(means[:50]))
        last = float(np.mean(means[-50:]))
        assert last < first


class TestTrainDriver:
    def test_writes_checkpoints_and_curve(self, tmp_path):
        cfg = TrainConfig(
            iterations=4,
            seed=0,
            lr=1e-3,
            clip_len_min=3,
            clip_len_max=3,
            rounds_min=1,
            rounds_max=1,
            patch_size=48,
            short_edge_resize=48,
            roi_size=32,
            decoder_width=8,
            checkpoint_every=2,
            num_toy_videos=1,
            toy=ToyVideoSpec(num_frames=6, h=48, w=48, motion_amplitude=3.0),
        )
        cfg_model = cfg.model_config()
        assert cfg_model.roi_size == 32
        final = train(cfg, tmp_path, seed=0)
        assert final.exists()
        assert (tmp_path / "ckpt_000002.pt").exists()
        curve = (tmp_path / "loss_curve.csv").read_text().strip().splitlines()
        assert curve[0] == "iteration,loss,n,r"
        assert len(curve) == 5

    def test_training_run_deterministic(self, tmp_path):
        cfg = TrainConfig(
            iterations=3,
            seed=5,
            lr=1e-3,
            clip_len_min=3,
            clip_len_max=3,
            rounds_min=1,
            rounds_max=1,
            patch_size=48,
            short_edge_resize=48,
            roi_size=32,
            decoder_width=8,
            checkpoint_every=0,
            num_toy_videos=1,
            toy=ToyVideoSpec(num_frames=4, h=48, w=48, motion_amplitude=3.0),
        )
        train(cfg, tmp_path / "a")
        train(cfg, tmp_path / "b")
        curve_a = (tmp_path / "a" / "loss_curve.csv").read_text()
        curve_b = (tmp_path / "b" / "loss_curve.csv").read_text()
        assert curve_a == curve_b

    def test_config_yaml_roundtrip(self, tmp_path):
        cfg = TrainConfig(iterations=7, lr=2e-4, toy=ToyVideoSpec(num_frames=5, num_objects=2))
        path = tmp_path / "cfg.yaml"
        cfg.to_yaml(path)
        back = TrainConfig.from_yaml(path)
        assert back.iterations == 7
        assert back.lr == pytest.approx(2e-4)
        assert back.toy.num_frames == 5
        assert back.toy.num_objects == 2

    def test_paper_lr_default(self):
        assert TrainConfig().lr == pytest.approx(1e-5)
        assert TrainConfig().clip_len_min == 4
        assert TrainConfig().clip_len_max == 8
        assert TrainConfig().rounds_max == 3
