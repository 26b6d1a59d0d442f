"""End-to-end training and synthesis mechanics.

Covers config validation, the freeze ledger (exactly the advertised
parameter groups change per phase), checkpoint round trips, window
scheduling and aggregation against hand oracles, and bit-determinism of
training and sampling under fixed seeds.
"""

import json

import numpy as np
import pytest
import torch

from texpose import pngio
from texpose.body import BodyModelState, PoseMap
from texpose.checkpoint import CheckpointError, load_checkpoint
from texpose.codec import LatentCodec, save_codec, train_codec
from texpose.dataio import SyntheticSceneSpec, generate_synthetic_clip, make_identity_texture
from texpose.pipeline import (
    CHECKPOINT_KIND,
    PHASE_TRAINABLE,
    InferenceJob,
    TrainConfig,
    aggregate_windows,
    apply_freeze_plan,
    build_models,
    composite_preview,
    group_checksums,
    job_hash,
    load_models,
    parameter_groups,
    save_models,
    synthesize,
    train,
    window_starts,
)
from texpose.pipeline.models import ModelSet


@pytest.fixture(scope="module")
def clip(tmp_path_factory):
    spec = SyntheticSceneSpec(identity_seed=3, motion_seed=4, camera_kind="orbit",
                              background_kind="gradient", num_frames=8)
    return generate_synthetic_clip(spec, tmp_path_factory.mktemp("clip") / "c0")


@pytest.fixture(scope="module")
def codec(clip):
    frames = np.stack([
        np.moveaxis(pngio.load_image(p), -1, 0) for p in clip.frame_paths
    ]).astype(np.float32)
    return train_codec(frames, steps=0, codec=LatentCodec(base_width=16))


@pytest.fixture(scope="module")
def phase1_run(clip, codec, tmp_path_factory):
    """One phase-1 step, with checksums captured before and after."""
    models = build_models(codec, seed=0)
    before = group_checksums(models)
    out_dir = tmp_path_factory.mktemp("phase1")
    result = train(TrainConfig(phase=1, steps=1, seed=0), [clip], models, out_dir)
    return before, result


@pytest.fixture(scope="module")
def job(clip, codec):
    frames = [np.moveaxis(pngio.load_image(p), -1, 0).astype(np.float32)
              for p in clip.frame_paths]
    plates = np.stack([
        np.moveaxis(pngio.load_image(p), -1, 0) for p in clip.plate_paths
    ]).astype(np.float32)
    mask = pngio.load_mask(clip.mask_paths[0])[None].astype(np.float32)
    return InferenceJob(
        reference_image=frames[0],
        reference_mask=mask,
        texture=make_identity_texture(3, clip.texture_size),
        states=clip.states,
        cameras=clip.cameras,
        background_frames=plates,
        window=4,
        stride=2,
        seed=11,
    )


class TestTrainConfig:
    @pytest.mark.parametrize("kwargs,match", [
        (dict(phase=3), "phase"),
        (dict(steps=-1), "steps"),
        (dict(batch_size=0), "batch_size"),
        (dict(lr=0.0), "lr"),
        (dict(window=0), "window"),
        (dict(flip_probability=1.5), "flip_probability"),
        (dict(lr_final=2e-3), "lr_final"),
        (dict(lr_final=0.0), "lr_final"),
        (dict(checkpoint_interval=0), "checkpoint_interval"),
    ])
    def test_rejects_bad_values(self, kwargs, match):
        base = dict(phase=1, steps=10, lr=1e-3)
        with pytest.raises(ValueError, match=match):
            TrainConfig(**{**base, **kwargs})

    def test_lr_constant_without_final(self):
        config = TrainConfig(phase=1, steps=100, lr=2e-3)
        assert config.lr_at(0) == config.lr_at(99) == 2e-3

    def test_lr_decay_endpoints(self):
        config = TrainConfig(phase=1, steps=100, lr=2e-3, lr_final=1e-5)
        assert config.lr_at(0) == pytest.approx(2e-3, abs=1e-15)
        assert config.lr_at(99) == pytest.approx(1e-5, abs=1e-15)
        mid = config.lr_at(50)
        assert 1e-5 < mid < 2e-3


class TestWindowStarts:
    @pytest.mark.parametrize("n,window,stride,expected", [
        (8, 8, 4, [0]),
        (10, 4, 2, [0, 2, 4, 6]),
        (10, 4, 3, [0, 3, 6]),
        (10, 4, 4, [0, 4, 6]),
        (9, 4, 4, [0, 4, 5]),
        (3, 8, 1, []),
        (1, 1, 1, [0]),
    ])
    def test_hand_cases(self, n, window, stride, expected):
        assert window_starts(n, window, stride) == expected

    @pytest.mark.parametrize("n,window,stride", [
        (17, 5, 3), (20, 8, 8), (6, 6, 1), (13, 4, 2),
    ])
    def test_coverage_properties(self, n, window, stride):
        starts = window_starts(n, window, stride)
        covered = set()
        for s in starts:
            assert 0 <= s <= n - window
            covered.update(range(s, s + window))
        assert covered == set(range(n))
        assert starts == sorted(starts)
        assert starts[-1] == n - window


class TestAggregateWindows:
    def test_hand_oracle_overlap(self):
        # starts [0, 1]; frame 1 is covered by both windows
        a = np.array([[1.0], [2.0]])
        b = np.array([[3.0], [4.0]])
        merged = aggregate_windows([a, b], num_frames=3, window=2, stride=1)
        np.testing.assert_allclose(merged, [[1.0], [2.5], [4.0]])

    def test_disjoint_windows_pass_through(self):
        parts = [np.arange(8.0).reshape(2, 4), np.arange(8.0, 16.0).reshape(2, 4)]
        merged = aggregate_windows(parts, num_frames=4, window=2, stride=2)
        np.testing.assert_array_equal(merged, np.concatenate(parts))

    def test_equal_windows_idempotent(self):
        out = np.full((3, 2), 7.0)
        merged = aggregate_windows([out, out], num_frames=4, window=3, stride=1)
        np.testing.assert_allclose(merged, np.full((4, 2), 7.0))

    def test_torch_inputs_stay_torch(self):
        a = torch.ones(2, 3)
        merged = aggregate_windows([a, a + 2], num_frames=3, window=2, stride=1)
        assert isinstance(merged, torch.Tensor)
        torch.testing.assert_close(merged[1], torch.full((3,), 2.0))

    def test_count_mismatch_rejected(self):
        with pytest.raises(ValueError, match="expected"):
            aggregate_windows([np.ones((2, 1))], num_frames=3, window=2, stride=1)

    def test_short_window_output_rejected(self):
        outs = [np.ones((1, 1)), np.ones((2, 1))]
        with pytest.raises(ValueError, match="frames"):
            aggregate_windows(outs, num_frames=3, window=2, stride=1)

    def test_uncoverable_sequence_rejected(self):
        with pytest.raises(ValueError, match="coverage gap"):
            aggregate_windows([], num_frames=3, window=8, stride=1)

    def test_bad_stride_rejected(self):
        with pytest.raises(ValueError, match="stride"):
            aggregate_windows([], num_frames=3, window=2, stride=3)


class TestModelBundle:
    def test_unfrozen_codec_rejected(self):
        with pytest.raises(ValueError, match="frozen"):
            build_models(LatentCodec(base_width=16))

    def test_groups_partition_every_parameter(self, codec):
        models = build_models(codec, seed=0)
        groups = parameter_groups(models)
        seen: set[int] = set()
        for params in groups.values():
            for p in params.values():
                assert id(p) not in seen
                seen.add(id(p))
        total = sum(1 for m in models.modules().values() for _ in m.parameters())
        assert len(seen) == total

    def test_phase_groups_exist(self, codec):
        models = build_models(codec, seed=0)
        names = set(parameter_groups(models))
        for phase_groups in PHASE_TRAINABLE.values():
            assert set(phase_groups) <= names

    def test_freeze_plan_rejects_bad_phase(self, codec):
        with pytest.raises(ValueError, match="phase"):
            apply_freeze_plan(build_models(codec, seed=0), 3)

    def test_freeze_plan_marks_exactly_phase_groups(self, codec):
        models = build_models(codec, seed=0)
        apply_freeze_plan(models, 2)
        for name, params in parameter_groups(models).items():
            expected = name in PHASE_TRAINABLE[2]
            assert all(p.requires_grad == expected for p in params.values()), name


class TestTraining:
    def test_phase1_touches_exactly_its_groups(self, phase1_run):
        before, result = phase1_run
        after = group_checksums(result.models)
        changed = {name for name in before if before[name] != after[name]}
        assert changed == set(PHASE_TRAINABLE[1])

    def test_log_records_every_step(self, phase1_run, codec, clip, tmp_path):
        models = build_models(codec, seed=0)
        config = TrainConfig(phase=1, steps=2, seed=0, lr_final=None)
        result = train(config, [clip], models, tmp_path)
        lines = result.log_path.read_text().splitlines()
        assert len(lines) == 2
        for i, line in enumerate(lines):
            rec = json.loads(line)
            assert rec["step"] == i
            assert rec["lr"] == config.lr_at(i)
            assert np.isfinite(rec["loss"])
            assert set(rec["checksums"]) == set(parameter_groups(models))

    def test_same_seed_same_losses(self, codec, clip, tmp_path):
        losses = []
        for run in range(2):
            models = build_models(codec, seed=0)
            config = TrainConfig(phase=1, steps=3, seed=7)
            result = train(config, [clip], models, tmp_path / f"run{run}")
            losses.append(result.losses)
        assert losses[0] == losses[1]

    def test_phase2_requires_checkpoint(self, codec, clip, tmp_path):
        models = build_models(codec, seed=0)
        with pytest.raises(ValueError, match="phase-1 checkpoint"):
            train(TrainConfig(phase=2, steps=1), [clip], models, tmp_path)

    def test_phase2_touches_only_temporal(self, phase1_run, codec, clip, tmp_path):
        _, p1 = phase1_run
        restored, _ = load_models(p1.checkpoint_path)
        before = group_checksums(restored)
        models = build_models(codec, seed=0)
        config = TrainConfig(phase=2, steps=1, seed=0, init_checkpoint=p1.checkpoint_path)
        result = train(config, [clip], models, tmp_path)
        after = group_checksums(result.models)
        changed = {name for name in before if before[name] != after[name]}
        assert changed == set(PHASE_TRAINABLE[2])

    def test_phase2_rejects_phase2_checkpoint(self, phase1_run, codec, clip, tmp_path):
        _, p1 = phase1_run
        models = build_models(codec, seed=0)
        first = TrainConfig(phase=2, steps=1, seed=0, init_checkpoint=p1.checkpoint_path)
        p2 = train(first, [clip], models, tmp_path / "a")
        again = TrainConfig(phase=2, steps=1, seed=0, init_checkpoint=p2.checkpoint_path)
        with pytest.raises(ValueError, match="phase-1 checkpoint"):
            train(again, [clip], build_models(codec, seed=0), tmp_path / "b")

    def test_interval_checkpoints_written(self, codec, clip, tmp_path):
        models = build_models(codec, seed=0)
        config = TrainConfig(phase=1, steps=3, checkpoint_interval=2)
        train(config, [clip], models, tmp_path)
        assert (tmp_path / "phase1_step000002.ckpt").exists()
        assert (tmp_path / "phase1_final.ckpt").exists()

    def test_short_clips_rejected(self, codec, clip, tmp_path):
        models = build_models(codec, seed=0)
        config = TrainConfig(phase=1, steps=1, window=16)
        with pytest.raises(ValueError, match="window"):
            train(config, [clip], models, tmp_path)

    def test_unfrozen_codec_rejected(self, codec, clip, tmp_path):
        models = build_models(codec, seed=0)
        models = ModelSet(schedule=models.schedule, codec=LatentCodec(base_width=16),
                          denoiser=models.denoiser, fg_encoder=models.fg_encoder,
                          pose_extractor=models.pose_extractor, bg_encoder=models.bg_encoder,
                          identity_embedder=models.identity_embedder)
        with pytest.raises(ValueError, match="frozen"):
            train(TrainConfig(phase=1, steps=1), [clip], models, tmp_path)


class TestCheckpointRoundTrip:
    def test_save_load_preserves_every_group(self, phase1_run, tmp_path):
        _, result = phase1_run
        path = tmp_path / "bundle.ckpt"
        save_models(path, result.models, {"note": "test"})
        restored, meta = load_models(path)
        assert meta["kind"] == CHECKPOINT_KIND
        assert meta["note"] == "test"
        assert group_checksums(restored) == group_checksums(result.models)

    def test_final_checkpoint_metadata(self, phase1_run):
        _, result = phase1_run
        _, meta = load_checkpoint(result.checkpoint_path)
        assert meta["phase"] == 1
        assert meta["step"] == 1
        assert meta["kind"] == CHECKPOINT_KIND

    def test_wrong_kind_rejected(self, codec, tmp_path):
        path = tmp_path / "codec.ckpt"
        save_codec(path, codec)
        with pytest.raises(CheckpointError, match="kind"):
            load_models(path)


class TestInferenceJob:
    def test_camera_count_mismatch(self, job):
        with pytest.raises(ValueError, match="cameras"):
            InferenceJob(
                reference_image=job.reference_image, reference_mask=job.reference_mask,
                texture=job.texture, states=job.states, cameras=job.cameras[:-1],
                background_frames=job.background_frames,
            )

    def test_background_shape_mismatch(self, job):
        with pytest.raises(ValueError, match="background_frames"):
            InferenceJob(
                reference_image=job.reference_image, reference_mask=job.reference_mask,
                texture=job.texture, states=job.states, cameras=job.cameras,
                background_frames=job.background_frames[:, :1],
            )

    def test_mask_shape_mismatch(self, job):
        with pytest.raises(ValueError, match="reference_mask"):
            InferenceJob(
                reference_image=job.reference_image, reference_mask=job.reference_mask[:, :32],
                texture=job.texture, states=job.states, cameras=job.cameras,
                background_frames=job.background_frames,
            )

    def test_window_larger_than_sequence(self, job):
        with pytest.raises(ValueError, match="window"):
            InferenceJob(
                reference_image=job.reference_image, reference_mask=job.reference_mask,
                texture=job.texture, states=job.states, cameras=job.cameras,
                background_frames=job.background_frames, window=16, stride=4,
            )

    def test_stride_out_of_range(self, job):
        with pytest.raises(ValueError, match="stride"):
            InferenceJob(
                reference_image=job.reference_image, reference_mask=job.reference_mask,
                texture=job.texture, states=job.states, cameras=job.cameras,
                background_frames=job.background_frames, window=4, stride=5,
            )

    def test_job_hash_stable_and_sensitive(self, job):
        assert job_hash(job) == job_hash(job)
        reseeded = InferenceJob(
            reference_image=job.reference_image, reference_mask=job.reference_mask,
            texture=job.texture, states=job.states, cameras=job.cameras,
            background_frames=job.background_frames, window=job.window,
            stride=job.stride, seed=job.seed + 1,
        )
        assert job_hash(job) != job_hash(reseeded)
        assert job_hash(job, sample_steps=5) != job_hash(job, sample_steps=6)


class TestSynthesize:
    def test_deterministic_and_writes_manifest(self, job, codec, tmp_path):
        models = build_models(codec, seed=0)
        first = synthesize(job, models, out_dir=tmp_path, sample_steps=2)
        second = synthesize(job, models, sample_steps=2)
        assert first.shape == (8, 3, 64, 64)
        assert np.array_equal(first, second)
        assert first.min() >= 0.0 and first.max() <= 1.0
        manifest = json.loads((tmp_path / "synthesis.json").read_text())
        assert manifest["frame_count"] == 8
        assert manifest["frames"] == [f"{i:04d}.png" for i in range(8)]
        assert manifest["job_hash"] == job_hash(job, sample_steps=2)
        assert manifest["config_hash"] == manifest["job_hash"]
        for name in manifest["frames"]:
            assert (tmp_path / name).exists()

    def test_config_hash_passthrough(self, job, codec, tmp_path):
        models = build_models(codec, seed=0)
        synthesize(job, models, out_dir=tmp_path, sample_steps=1, config_hash="abc123")
        manifest = json.loads((tmp_path / "synthesis.json").read_text())
        assert manifest["config_hash"] == "abc123"
        assert manifest["job_hash"] != "abc123"

    def test_single_frame_job(self, job, codec):
        models = build_models(codec, seed=0)
        single = InferenceJob(
            reference_image=job.reference_image, reference_mask=job.reference_mask,
            texture=job.texture, states=job.states[:1], cameras=job.cameras[:1],
            background_frames=job.background_frames[:1], window=1, stride=1, seed=3,
        )
        frames = synthesize(single, models, sample_steps=2)
        assert frames.shape == (1, 3, 64, 64)

    def test_failures_name_their_stage(self, job, codec):
        models = build_models(codec, seed=0)
        bad_states = tuple(
            BodyModelState(theta=np.zeros((2, 3)), frame_index=i) for i in range(8)
        )
        broken = InferenceJob(
            reference_image=job.reference_image, reference_mask=job.reference_mask,
            texture=job.texture, states=bad_states, cameras=job.cameras,
            background_frames=job.background_frames, window=4, stride=2,
        )
        with pytest.raises(ValueError, match="pose rendering:"):
            synthesize(broken, models, sample_steps=1)


class TestCompositePreview:
    def test_full_coverage_returns_render(self):
        rng = np.random.default_rng(0)
        pixels = rng.random((6, 5, 3))
        pose_map = PoseMap(pixels=pixels, coverage_mask=np.ones((6, 5), dtype=bool))
        background = rng.random((6, 5, 3))
        np.testing.assert_array_equal(composite_preview(pose_map, background), pixels)

    def test_empty_coverage_returns_background(self):
        pose_map = PoseMap(pixels=np.zeros((4, 4, 3)),
                           coverage_mask=np.zeros((4, 4), dtype=bool))
        background = np.random.default_rng(1).random((4, 4, 3))
        np.testing.assert_array_equal(composite_preview(pose_map, background), background)

    def test_partial_coverage_elementwise_oracle(self):
        rng = np.random.default_rng(2)
        coverage = np.zeros((4, 6), dtype=bool)
        coverage[:, :3] = True
        pixels = np.where(coverage[..., None], rng.random((4, 6, 3)), 0.0)
        pose_map = PoseMap(pixels=pixels, coverage_mask=coverage)
        background = rng.random((4, 6, 3))
        out = composite_preview(pose_map, background)
        for r in range(4):
            for c in range(6):
                expected = pixels[r, c] if coverage[r, c] else background[r, c]
                np.testing.assert_array_equal(out[r, c], expected)

    def test_shape_mismatch_rejected(self):
        pose_map = PoseMap(pixels=np.zeros((4, 4, 3)),
                           coverage_mask=np.zeros((4, 4), dtype=bool))
        with pytest.raises(ValueError, match="background"):
            composite_preview(pose_map, np.zeros((5, 4, 3)))
