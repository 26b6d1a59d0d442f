"""Command line surface: spec-file workflows, exit codes, provenance.

Each command is exercised through main() on real files in a shared temp
tree: generate a tiny corpus, train one step (auto-training the codec),
render controls, synthesize a single frame, and score it. Provenance
hashes must flow from the training config into the checkpoint and on into
the synthesis manifest.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from texpose import cli, pngio
from texpose.body import render_sequence, save_trajectory
from texpose.checkpoint import load_checkpoint, save_checkpoint
from texpose.dataio import build_humanoid, load_clip, make_identity_texture


@pytest.fixture(scope="module")
def tree(tmp_path_factory):
    """Shared workspace: corpus, configs, training run, job inputs."""
    root = tmp_path_factory.mktemp("cli")
    spec = {
        "camera_kind": "orbit",
        "background_kind": "gradient",
        "num_frames": 8,
        "clips": [
            {"identity_seed": 3, "motion_seed": 4},
            {"identity_seed": 5, "motion_seed": 6},
        ],
    }
    spec_path = root / "corpus.json"
    spec_path.write_text(json.dumps(spec))
    data_dir = root / "data"
    assert cli.main(["gen-data", "--config", str(spec_path), "--out", str(data_dir)]) == 0

    train_doc = {
        "phase": 1,
        "steps": 2,
        "data": ["data/clip_0000", "data/clip_0001"],
        "codec": {"train_steps": 4},
        "seed": 0,
    }
    train_path = root / "train.json"
    train_path.write_text(json.dumps(train_doc))
    run_dir = root / "run"
    assert cli.main(["train", "--config", str(train_path), "--out", str(run_dir)]) == 0
    return {
        "root": root,
        "spec": spec,
        "spec_path": spec_path,
        "data_dir": data_dir,
        "train_doc": train_doc,
        "run_dir": run_dir,
        "checkpoint": run_dir / "phase1_final.ckpt",
    }


@pytest.fixture(scope="module")
def job_setup(tree):
    """Single-frame job file built from the first generated clip."""
    root = tree["root"]
    record = load_clip(tree["data_dir"] / "clip_0000")
    job_dir = root / "job"
    job_dir.mkdir()
    (job_dir / "states.json").write_text(
        json.dumps([record.states[0].theta.ravel().tolist()])
    )
    save_trajectory(job_dir / "track.txt", list(record.cameras[:1]))
    bg_dir = job_dir / "bg"
    bg_dir.mkdir()
    plate = pngio.load_image(record.plate_paths[0])
    pngio.save_image(bg_dir / "0000.png", plate)
    doc = {
        "reference_image": str(record.frame_paths[0]),
        "reference_mask": str(record.mask_paths[0]),
        "texture": {"identity_seed": 3, "size": list(record.texture_size)},
        "states": "states.json",
        "trajectory": "track.txt",
        "background_dir": "bg",
        "window": 1,
        "stride": 1,
        "seed": 9,
        "sample_steps": 2,
    }
    job_path = job_dir / "job.json"
    job_path.write_text(json.dumps(doc))
    return {"record": record, "job_path": job_path, "job_dir": job_dir}


class TestGenData:
    def test_writes_every_clip(self, tree):
        index = json.loads((tree["data_dir"] / "index.json").read_text())
        assert index["clips"] == ["clip_0000", "clip_0001"]
        for name in index["clips"]:
            record = load_clip(tree["data_dir"] / name)
            assert len(record) == 8

    def test_rerun_is_byte_identical(self, tree, tmp_path):
        again = tmp_path / "data2"
        code = cli.main(["gen-data", "--config", str(tree["spec_path"]), "--out", str(again)])
        assert code == 0
        for rel in ("clip_0000/manifest.json", "clip_0001/manifest.json"):
            assert (again / rel).read_bytes() == (tree["data_dir"] / rel).read_bytes()
        manifest = json.loads((again / "clip_0000" / "manifest.json").read_text())
        rel = Path("clip_0000") / manifest["frames"][0]
        assert (again / rel).read_bytes() == (tree["data_dir"] / rel).read_bytes()

    def test_missing_config_exits_one(self, tmp_path, capsys):
        code = cli.main(["gen-data", "--config", str(tmp_path / "nope.json"),
                         "--out", str(tmp_path / "d")])
        assert code == 1
        assert "not found" in capsys.readouterr().err

    def test_empty_clip_list_exits_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"clips": []}))
        code = cli.main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "d")])
        assert code == 1
        assert "clips" in capsys.readouterr().err


class TestTrain:
    def test_outputs_and_log(self, tree):
        assert tree["checkpoint"].exists()
        assert (tree["run_dir"] / "codec.ckpt").exists()
        lines = (tree["run_dir"] / "train_log.jsonl").read_text().splitlines()
        assert len(lines) == 2
        assert all(np.isfinite(json.loads(line)["loss"]) for line in lines)

    def test_checkpoint_carries_config_hash(self, tree):
        _, meta = load_checkpoint(tree["checkpoint"])
        assert meta["config_hash"] == cli.config_hash(tree["train_doc"])
        assert meta["phase"] == 1

    def test_phase2_without_checkpoint_exits_one(self, tree, tmp_path, capsys):
        doc = {**tree["train_doc"], "phase": 2,
               "data": [str(tree["data_dir"] / "clip_0000")],
               "codec": {"checkpoint": str(tree["run_dir"] / "codec.ckpt")}}
        path = tmp_path / "p2.json"
        path.write_text(json.dumps(doc))
        code = cli.main(["train", "--config", str(path), "--out", str(tmp_path / "out")])
        assert code == 1
        assert "phase-1 checkpoint" in capsys.readouterr().err

    def test_data_root_env_resolves_paths(self, tree, tmp_path, monkeypatch):
        # config lives elsewhere; clips resolve through the env root
        monkeypatch.setenv(cli.DATA_ROOT_ENV, str(tree["root"]))
        doc = {**tree["train_doc"], "steps": 1,
               "codec": {"checkpoint": str(tree["run_dir"] / "codec.ckpt")}}
        path = tmp_path / "train.json"
        path.write_text(json.dumps(doc))
        code = cli.main(["train", "--config", str(path), "--out", str(tmp_path / "out")])
        assert code == 0


class TestRenderPose:
    def test_writes_maps_and_previews(self, tree, job_setup, tmp_path):
        out = tmp_path / "maps"
        code = cli.main(["render-pose", "--config", str(job_setup["job_path"]),
                         "--out", str(out)])
        assert code == 0
        assert sorted(p.name for p in out.glob("pose_*.png")) == ["pose_0000.png"]
        assert sorted(p.name for p in out.glob("preview_*.png")) == ["preview_0000.png"]

    def test_matches_library_render(self, job_setup, tmp_path):
        out = tmp_path / "maps"
        cli.main(["render-pose", "--config", str(job_setup["job_path"]), "--out", str(out)])
        record = job_setup["record"]
        maps = render_sequence(
            build_humanoid(),
            make_identity_texture(3, record.texture_size),
            list(record.states[:1]),
            list(record.cameras[:1]),
            record.image_size,
        )
        direct = tmp_path / "direct.png"
        pngio.save_image(direct, maps[0].pixels)
        np.testing.assert_array_equal(
            pngio.load_image(out / "pose_0000.png"), pngio.load_image(direct)
        )


class TestSynthesize:
    def test_single_frame_with_provenance(self, tree, job_setup, tmp_path):
        out = tmp_path / "frames"
        code = cli.main([
            "synthesize", "--config", str(job_setup["job_path"]),
            "--checkpoint", str(tree["checkpoint"]), "--out", str(out),
        ])
        assert code == 0
        manifest = json.loads((out / "synthesis.json").read_text())
        assert manifest["frame_count"] == 1
        assert (out / "0000.png").exists()
        _, meta = load_checkpoint(tree["checkpoint"])
        assert manifest["config_hash"] == meta["config_hash"]
        assert manifest["sample_steps"] == 2

    def test_missing_checkpoint_exits_one(self, job_setup, tmp_path, capsys):
        code = cli.main([
            "synthesize", "--config", str(job_setup["job_path"]),
            "--checkpoint", str(tmp_path / "none.ckpt"), "--out", str(tmp_path / "f"),
        ])
        assert code == 1
        assert "checkpoint" in capsys.readouterr().err

    def test_directory_checkpoint_exits_one(self, job_setup, tmp_path, capsys):
        # a directory passes the existence check but cannot be parsed
        code = cli.main([
            "synthesize", "--config", str(job_setup["job_path"]),
            "--checkpoint", str(tmp_path), "--out", str(tmp_path / "f"),
        ])
        assert code == 1
        assert "checkpoint" in capsys.readouterr().err

    def test_gutted_checkpoint_exits_two(self, tree, job_setup, tmp_path, capsys):
        # right kind, arrays missing: fails deep inside model rebuild
        _, meta = load_checkpoint(tree["checkpoint"])
        gutted = tmp_path / "gutted.ckpt"
        save_checkpoint(gutted, {"denoiser.bogus": np.zeros(1)}, meta)
        code = cli.main([
            "synthesize", "--config", str(job_setup["job_path"]),
            "--checkpoint", str(gutted), "--out", str(tmp_path / "f"),
        ])
        assert code == 2
        assert "failure" in capsys.readouterr().err


class TestEvaluate:
    def test_self_comparison_fixed_points(self, tree, tmp_path, capsys):
        frames_dir = tree["data_dir"] / "clip_0000"
        pred = tmp_path / "pred"
        pred.mkdir()
        record = load_clip(frames_dir)
        for p in record.frame_paths:
            (pred / p.name).write_bytes(p.read_bytes())
        gt = pred  # identical directories
        report_path = tmp_path / "report.jsonl"
        code = cli.main(["evaluate", "--pred", str(pred), "--gt", str(gt),
                         "--out", str(report_path)])
        assert code == 0
        rows = [json.loads(line) for line in report_path.read_text().splitlines()]
        summary = rows[-1]
        assert summary["kind"] == "summary"
        assert summary["l1"] == 0.0
        assert summary["psnr"] == 100.0
        assert summary["ssim"] == pytest.approx(1.0, abs=1e-9)
        assert summary["lpips"] is None

    def test_count_mismatch_exits_one(self, tree, tmp_path, capsys):
        record = load_clip(tree["data_dir"] / "clip_0000")
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir()
        gt.mkdir()
        (pred / "0000.png").write_bytes(record.frame_paths[0].read_bytes())
        for p in record.frame_paths[:2]:
            (gt / p.name).write_bytes(p.read_bytes())
        code = cli.main(["evaluate", "--pred", str(pred), "--gt", str(gt),
                         "--out", str(tmp_path / "r.jsonl")])
        assert code == 1
        assert "mismatch" in capsys.readouterr().err
