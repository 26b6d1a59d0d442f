"""File-in, file-out command line surface.

Commands: gen-data, train, render-pose, synthesize, evaluate. Every
command reads structured JSON configs, resolves relative data paths
against TEXPOSE_DATA_ROOT (falling back to the config file's directory),
and exits 0 on success, 1 on validation errors, 2 on unexpected failures.
Outputs are deterministic given identical inputs and seeds.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from texpose import pngio
from texpose.body import BodyModelState, UVTextureMap, load_trajectory, render_sequence
from texpose.checkpoint import CheckpointError
from texpose.codec import LatentCodec, load_codec, save_codec, train_codec
from texpose.dataio import (
    SyntheticSceneSpec,
    build_humanoid,
    generate_synthetic_clip,
    load_clip,
    make_identity_texture,
)
from texpose.evalkit import evaluate_frames, read_report, write_report
from texpose.pipeline import (
    InferenceJob,
    TrainConfig,
    build_models,
    composite_preview,
    load_models,
    synthesize,
    train,
)

log = logging.getLogger("texpose.cli")

DATA_ROOT_ENV = "TEXPOSE_DATA_ROOT"

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2


class ConfigError(ValueError):
    """Malformed or incomplete configuration input."""


def config_hash(doc: dict) -> str:
    """Digest of a canonicalized config document."""
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()


def _load_json(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def _data_root(config_path: Path) -> Path:
    root = os.environ.get(DATA_ROOT_ENV)
    return Path(root) if root else config_path.parent


def _resolve(path_str: str, root: Path) -> Path:
    path = Path(path_str)
    return path if path.is_absolute() else root / path


def _require(doc: dict, key: str, context: str):
    if key not in doc:
        raise ConfigError(f"{context}: missing required key {key!r}")
    return doc[key]


def _load_chw(path: Path) -> np.ndarray:
    img = pngio.load_image(path)
    if img.ndim == 2:
        img = img[..., None]
    return np.moveaxis(img[..., :3], -1, 0).astype(np.float32)


def _load_states(path: Path) -> tuple[BodyModelState, ...]:
    """States file: JSON list of flat joint-rotation rows."""
    try:
        rows = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(rows, list) or not rows:
        raise ConfigError(f"{path}: expected a nonempty list of state rows")
    return tuple(
        BodyModelState(theta=np.asarray(row, dtype=np.float64).reshape(-1, 3), frame_index=i)
        for i, row in enumerate(rows)
    )


def _load_texture(spec, root: Path) -> UVTextureMap:
    """Texture from a PNG path or a {identity_seed, size} recipe."""
    if isinstance(spec, str):
        texels = pngio.load_image(_resolve(spec, root))
        if texels.ndim != 3 or texels.shape[2] != 3:
            raise ConfigError(f"texture {spec}: expected an RGB image")
        return UVTextureMap(texels=texels, validity_mask=np.ones(texels.shape[:2], dtype=bool))
    if isinstance(spec, dict):
        seed = int(_require(spec, "identity_seed", "texture"))
        size = tuple(spec.get("size", (48, 48)))
        return make_identity_texture(seed, size)
    raise ConfigError("texture must be a PNG path or an {identity_seed, size} object")


def _load_background_dir(path: Path) -> np.ndarray:
    if not path.is_dir():
        raise ConfigError(f"background directory not found: {path}")
    files = sorted(path.glob("*.png"))
    if not files:
        raise ConfigError(f"background directory {path} has no PNG frames")
    return np.stack([_load_chw(p) for p in files])


def _build_job(doc: dict, root: Path, seed_override: int | None) -> InferenceJob:
    ref_image = _load_chw(_resolve(_require(doc, "reference_image", "job"), root))
    ref_mask = pngio.load_mask(_resolve(_require(doc, "reference_mask", "job"), root))[None]
    texture = _load_texture(_require(doc, "texture", "job"), root)
    states = _load_states(_resolve(_require(doc, "states", "job"), root))
    cameras = tuple(load_trajectory(_resolve(_require(doc, "trajectory", "job"), root)))
    backgrounds = _load_background_dir(_resolve(_require(doc, "background_dir", "job"), root))
    seed = seed_override if seed_override is not None else int(doc.get("seed", 0))
    return InferenceJob(
        reference_image=ref_image,
        reference_mask=ref_mask.astype(np.float32),
        texture=texture,
        states=states,
        cameras=cameras,
        background_frames=backgrounds,
        window=int(doc.get("window", 8)),
        stride=int(doc.get("stride", 4)),
        seed=seed,
        lam=float(doc.get("lam", 1.0)),
    )


def cmd_gen_data(args: argparse.Namespace) -> int:
    """Generate synthetic clips listed in the config file."""
    config_path = Path(args.config)
    doc = _load_json(config_path)
    clip_docs = _require(doc, "clips", str(config_path))
    if not isinstance(clip_docs, list) or not clip_docs:
        raise ConfigError(f"{config_path}: 'clips' must be a nonempty list")
    defaults = {k: v for k, v in doc.items() if k != "clips"}
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    clip_dirs = []
    for i, clip_doc in enumerate(clip_docs):
        merged = {**defaults, **clip_doc}
        for key in ("image_size", "texture_size", "background_drift"):
            if key in merged:
                merged[key] = tuple(merged[key])
        try:
            spec = SyntheticSceneSpec(**merged)
        except TypeError as exc:
            raise ConfigError(f"clip {i}: {exc}") from exc
        clip_dir = out_dir / f"clip_{i:04d}"
        generate_synthetic_clip(spec, clip_dir)
        clip_dirs.append(clip_dir.name)
        log.info("clip %d -> %s", i, clip_dir)

    index = {
        "clips": clip_dirs,
        "seed": args.seed if args.seed is not None else 0,
        "config_hash": config_hash(doc),
    }
    (out_dir / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True),
                                        encoding="utf-8")
    print(f"generated {len(clip_dirs)} clips in {out_dir}")
    return EXIT_OK


def _codec_from_config(doc: dict, root: Path, records, out_dir: Path) -> LatentCodec:
    """Load the referenced codec checkpoint, or train one from the clips."""
    codec_doc = doc.get("codec", {})
    ckpt = codec_doc.get("checkpoint")
    if ckpt is not None:
        codec = load_codec(_resolve(ckpt, root))
        if not codec.frozen:
            raise ConfigError(f"codec checkpoint {ckpt} is not frozen")
        return codec
    frames = np.concatenate([
        np.stack([_load_chw(p) for p in record.frame_paths]) for record in records
    ])
    codec = train_codec(
        frames,
        steps=int(codec_doc.get("train_steps", 800)),
        lr=float(codec_doc.get("lr", 2e-3)),
        batch_size=int(codec_doc.get("batch_size", 8)),
        seed=int(codec_doc.get("seed", 1)),
        codec=LatentCodec(base_width=int(codec_doc.get("base_width", 16))),
    )
    save_codec(out_dir / "codec.ckpt", codec)
    log.info("trained codec from %d frames", frames.shape[0])
    return codec


def cmd_train(args: argparse.Namespace) -> int:
    """Train one phase from a config file."""
    config_path = Path(args.config)
    doc = _load_json(config_path)
    root = _data_root(config_path)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    data_paths = _require(doc, "data", str(config_path))
    if not isinstance(data_paths, list) or not data_paths:
        raise ConfigError(f"{config_path}: 'data' must be a nonempty list of clip paths")
    records = [load_clip(_resolve(p, root)) for p in data_paths]

    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    init_ckpt = doc.get("init_checkpoint")
    config = TrainConfig(
        phase=int(_require(doc, "phase", str(config_path))),
        steps=int(_require(doc, "steps", str(config_path))),
        batch_size=int(doc.get("batch_size", 1)),
        lr=float(doc.get("lr", 1e-3)),
        window=int(doc.get("window", 8)),
        seed=seed,
        lam=float(doc.get("lam", 1.0)),
        flip_probability=float(doc.get("flip_probability", 0.0)),
        lr_final=float(doc["lr_final"]) if doc.get("lr_final") is not None else None,
        checkpoint_interval=int(doc.get("checkpoint_interval", 500)),
        init_checkpoint=_resolve(init_ckpt, root) if init_ckpt is not None else None,
    )
    codec = _codec_from_config(doc, root, records, out_dir)
    models = build_models(
        codec,
        seed=int(doc.get("model_seed", 0)),
        schedule_kind=doc.get("schedule_kind", "linear-beta"),
        diffusion_steps=int(doc.get("diffusion_steps", 1000)),
    )
    result = train(config, records, models, out_dir,
                   metadata={"config_hash": config_hash(doc)})
    final = result.losses[-1] if result.losses else float("nan")
    print(f"phase {config.phase}: {config.steps} steps, final loss {final:.6f}, "
          f"checkpoint {result.checkpoint_path}")
    return EXIT_OK


def cmd_render_pose(args: argparse.Namespace) -> int:
    """Render pose maps and composite previews for a job file."""
    config_path = Path(args.config)
    doc = _load_json(config_path)
    root = _data_root(config_path)
    job = _build_job(doc, root, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    maps = render_sequence(build_humanoid(), job.texture, list(job.states),
                           list(job.cameras), job.image_size)
    for i, pose_map in enumerate(maps):
        pngio.save_image(out_dir / f"pose_{i:04d}.png", pose_map.pixels)
        preview = composite_preview(pose_map, np.moveaxis(job.background_frames[i], 0, -1))
        pngio.save_image(out_dir / f"preview_{i:04d}.png", preview)
    print(f"rendered {len(maps)} pose maps in {out_dir}")
    return EXIT_OK


def cmd_synthesize(args: argparse.Namespace) -> int:
    """Sample a video for a job file using a trained checkpoint."""
    config_path = Path(args.config)
    doc = _load_json(config_path)
    root = _data_root(config_path)
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise ConfigError(f"checkpoint not found: {ckpt_path}")
    models, meta = load_models(ckpt_path)
    job = _build_job(doc, root, args.seed)
    frames = synthesize(
        job,
        models,
        out_dir=args.out,
        sample_steps=int(doc.get("sample_steps", 20)),
        config_hash=meta.get("config_hash"),
    )
    print(f"synthesized {frames.shape[0]} frames in {args.out}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Score prediction frames against ground-truth frames."""
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for name, d in (("pred", pred_dir), ("gt", gt_dir)):
        if not d.is_dir():
            raise ConfigError(f"{name} directory not found: {d}")
    pred_files = sorted(pred_dir.glob("*.png"))
    gt_files = sorted(gt_dir.glob("*.png"))
    if len(pred_files) != len(gt_files):
        raise ConfigError(
            f"frame count mismatch: {len(pred_files)} predictions vs {len(gt_files)} references"
        )
    if not pred_files:
        raise ConfigError("no PNG frames to evaluate")
    pred = np.stack([_load_chw(p) for p in pred_files])
    gt = np.stack([_load_chw(p) for p in gt_files])
    report = evaluate_frames(pred, gt, clip_id=pred_dir.name)
    write_report(report, args.out)
    print(f"l1={report.l1_mean:.6f} psnr={report.psnr_mean:.2f} ssim={report.ssim_mean:.4f} "
          f"-> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="texpose",
        description="Pose-conditioned human video synthesis pipeline.",
        epilog=f"Relative data paths resolve against ${DATA_ROOT_ENV} when set, "
               "otherwise against the config file's directory.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the seed recorded in the config")
    common.add_argument("--log-level", default="warning",
                        choices=("debug", "info", "warning", "error"),
                        help="logging verbosity")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common],
                       help="generate synthetic clips from a config file")
    p.add_argument("--config", required=True, help="clip config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train one phase")
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--out", required=True, help="run directory for logs and checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render-pose", parents=[common],
                       help="render pose maps and previews for a job")
    p.add_argument("--config", required=True, help="job JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_render_pose)

    p = sub.add_parser("synthesize", parents=[common],
                       help="sample video frames for a job")
    p.add_argument("--config", required=True, help="job JSON")
    p.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score predicted frames against references")
    p.add_argument("--pred", required=True, help="directory of predicted PNG frames")
    p.add_argument("--gt", required=True, help="directory of reference PNG frames")
    p.add_argument("--out", required=True, help="report path (JSONL)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()))
    try:
        return args.func(args)
    except (ConfigError, ValueError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - last-resort runtime barrier
        log.exception("unhandled failure")
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
