import numpy as np
import pytest

from ivseg.data import (
    ClipSample,
    SkipSample,
    ToyVideoSpec,
    generate_toy_video,
    sample_training_clip,
    synthesize_pretrain_pair,
)
from ivseg.masks import Frame, LabelMask


class TestToyVideo:
    def test_deterministic(self):
        spec = ToyVideoSpec(num_frames=5, h=64, w=64)
        a_frames, a_gts = generate_toy_video(spec, 9)
        b_frames, b_gts = generate_toy_video(spec, 9)
        for fa, fb in zip(a_frames, b_frames):
            assert np.array_equal(fa.pixels, fb.pixels)
        for ga, gb in zip(a_gts, b_gts):
            assert np.array_equal(ga.labels, gb.labels)

    def test_single_object_labels(self):
        _, gts = generate_toy_video(ToyVideoSpec(num_frames=4, num_objects=1), 2)
        for g in gts:
            assert set(np.unique(g.labels)) <= {0, 1}

    def test_zero_amplitude_static(self):
        frames, gts = generate_toy_video(ToyVideoSpec(num_frames=5, motion_amplitude=0.0), 4)
        assert all(np.array_equal(frames[0].pixels, f.pixels) for f in frames)
        assert all(np.array_equal(gts[0].labels, g.labels) for g in gts)

    def test_objects_present_every_frame(self):
        _, gts = generate_toy_video(ToyVideoSpec(num_frames=16, num_objects=2), 7)
        for g in gts:
            assert (g.labels == 1).sum() > 50
            assert (g.labels == 2).sum() > 50


class TestPretrainPair:
    def _image(self, seed=0):
        frames, gts = generate_toy_video(ToyVideoSpec(num_frames=2, h=64, w=64), seed)
        return frames[0], gts[0]

    def test_identity_transform(self, rng):
        image, mask = self._image()
        pair = synthesize_pretrain_pair(
            image, mask, rng, max_rotation_deg=0.0, scale_range=(1.0, 1.0), max_translate_frac=0.0
        )
        assert np.allclose(pair.frames[0].pixels, pair.frames[1].pixels, atol=1e-6)
        assert np.array_equal(pair.gt[0].labels, pair.gt[1].labels)

    def test_pure_translation_shifts_mask(self, rng):
        image, mask = self._image(3)
        # drive the four uniform draws: rotation 0, scale 1, translation (0, +5)
        draws = iter([0.0, 1.0, 0.0, 5.0])

        class Seq:
            def uniform(self, lo, hi):
                return next(draws)

        pair = synthesize_pretrain_pair(
            image, mask, Seq(), max_rotation_deg=15.0, scale_range=(0.9, 1.1), max_translate_frac=0.5
        )
        ref = pair.gt[0].labels
        tgt = pair.gt[1].labels
        assert np.array_equal(tgt[:, 5:], ref[:, :-5])

    def test_z_order_later_occludes(self):
        h = w = 40
        img = np.full((h, w, 3), 0.5, np.float32)
        labels = np.zeros((h, w), np.int32)
        labels[5:25, 5:25] = 1
        labels[5:25, 22:39] = 2

        draws = iter([0.0, 1.0, 0.0, 0.0,   # object 1: identity
                      0.0, 1.0, 0.0, -10.0])  # object 2: shift left onto object 1

        class Seq:
            def uniform(self, lo, hi):
                return next(draws)

        pair = synthesize_pretrain_pair(
            Frame(img), LabelMask(labels, 2), Seq(),
            max_rotation_deg=15.0, scale_range=(0.9, 1.1), max_translate_frac=0.5,
        )
        tgt = pair.gt[1].labels
        assert (tgt[10, 12:29] == 2).all()  # object 2 moved onto object 1's area
        assert (tgt[10, 5:12] == 1).all()

    def test_tiny_object_skipped(self, rng):
        img = Frame(np.full((16, 16, 3), 0.5, np.float32))
        labels = np.zeros((16, 16), np.int32)
        labels[4:6, 4:6] = 1
        with pytest.raises(SkipSample):
            synthesize_pretrain_pair(img, LabelMask(labels, 1), rng)


class TestClipSampling:
    def _video(self, n=12, seed=0):
        return generate_toy_video(ToyVideoSpec(num_frames=n, h=64, w=64, motion_amplitude=4.0), seed)

    def test_consecutive_when_skip_one(self):
        frames, gts = self._video()
        for seed in range(20):
            clip = sample_training_clip(
                frames, gts, 4, np.random.default_rng(seed), patch_size=48, short_edge=64, augment=False
            )
            idx = [f.index for f in clip.frames]
            skip = idx[1] - idx[0]
            assert skip in (1, 2, 3)
            assert all(b - a == skip for a, b in zip(idx[:-1], idx[1:]))

    def test_skip_three_spacing(self):
        frames, gts = self._video()
        found = set()
        for seed in range(40):
            clip = sample_training_clip(
                frames, gts, 4, np.random.default_rng(seed), patch_size=48, short_edge=64, augment=False
            )
            idx = [f.index for f in clip.frames]
            found.add(idx[1] - idx[0])
        assert found == {1, 2, 3}

    def test_single_window_shared(self):
        frames, gts = self._video()
        clip = sample_training_clip(
            frames, gts, 3, np.random.default_rng(1), patch_size=48, short_edge=64, augment=False
        )
        # without augmentation each clip frame must be an exact crop of its
        # source frame, and the same crop window for all of them
        for f, g in zip(clip.frames, clip.gt):
            src = frames[f.index].pixels
            matches = []
            for r0 in range(64 - 48 + 1):
                for c0 in range(64 - 48 + 1):
                    if np.array_equal(src[r0 : r0 + 48, c0 : c0 + 48], f.pixels):
                        matches.append((r0, c0))
            assert matches, "clip frame is not a crop of its source"

    def test_object_present_in_first_frame(self):
        frames, gts = self._video()
        for seed in range(10):
            clip = sample_training_clip(
                frames, gts, 4, np.random.default_rng(seed), patch_size=48, short_edge=64
            )
            assert clip.object_ids
            assert (clip.gt[0].labels > 0).sum() >= 30

    def test_too_short_video_rejected(self):
        frames, gts = self._video(3)
        with pytest.raises(ValueError):
            sample_training_clip(frames, gts, 4, np.random.default_rng(0), patch_size=48, short_edge=64)

    def test_resize_applied(self):
        frames, gts = self._video()
        clip = sample_training_clip(
            frames, gts, 3, np.random.default_rng(0), patch_size=32, short_edge=32, augment=False
        )
        assert clip.frames[0].shape == (32, 32)

    def test_clip_validation(self):
        with pytest.raises(ValueError):
            ClipSample(frames=[], gt=[], object_ids=[1])
