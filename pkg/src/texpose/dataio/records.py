"""Clip records, manifests, the synthetic generator, and batching."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from texpose import pngio
from texpose.body import (
    BodyMesh,
    BodyModelState,
    CameraPose,
    UVTextureMap,
    pose_mesh,
    rasterize,
)
from texpose.dataio.humanoid import build_humanoid
from texpose.dataio.synthetic import (
    SyntheticSceneSpec,
    camera_path,
    make_identity_texture,
    motion_states,
    plate_sequence,
)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class ClipRecord:
    """One clip on disk: per-frame assets plus states and cameras."""

    frame_paths: tuple[Path, ...]
    mask_paths: tuple[Path, ...]
    plate_paths: tuple[Path, ...]
    states: tuple[BodyModelState, ...]
    cameras: tuple[CameraPose, ...]
    identity_id: int
    image_size: tuple[int, int]
    texture_size: tuple[int, int]

    def __post_init__(self) -> None:
        n = len(self.frame_paths)
        for name in ("mask_paths", "plate_paths", "states", "cameras"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries, expected {n}")
        if n < 1:
            raise ValueError("clip must have at least one frame")

    def __len__(self) -> int:
        return len(self.frame_paths)


def quantize(image: np.ndarray) -> np.ndarray:
    """Apply the 8-bit PNG quantization without touching disk."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def generate_synthetic_clip(spec: SyntheticSceneSpec, out_dir: str | Path) -> ClipRecord:
    """Render a clip to ``out_dir`` and return its record.

    Emits frames (textured humanoid composited over the plate), exact
    coverage masks, clean plates, and a manifest. Deterministic per spec
    seeds; every frame satisfies frame = render*mask + plate*(1-mask)
    up to shared 8-bit quantization.
    """
    out_dir = Path(out_dir)
    for sub in ("frames", "masks", "plates"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    mesh = build_humanoid()
    texture = make_identity_texture(spec.identity_seed, spec.texture_size)
    states = motion_states(spec.motion_seed, spec.num_frames, spec.motion_amplitude)
    cameras = camera_path(spec.camera_kind, spec.num_frames, spec.image_size)
    plates = plate_sequence(spec)

    frame_paths, mask_paths, plate_paths = [], [], []
    for i, (state, camera, plate) in enumerate(zip(states, cameras, plates)):
        render, _ = rasterize(pose_mesh(mesh, state), texture, camera, spec.image_size)
        mask = render.coverage_mask
        frame = np.where(mask[..., None], render.pixels, plate)
        fp = out_dir / "frames" / f"{i:04d}.png"
        mp = out_dir / "masks" / f"{i:04d}.png"
        pp = out_dir / "plates" / f"{i:04d}.png"
        pngio.save_image(fp, frame)
        pngio.save_mask(mp, mask)
        pngio.save_image(pp, plate)
        frame_paths.append(fp)
        mask_paths.append(mp)
        plate_paths.append(pp)

    record = ClipRecord(
        frame_paths=tuple(frame_paths),
        mask_paths=tuple(mask_paths),
        plate_paths=tuple(plate_paths),
        states=tuple(states),
        cameras=tuple(cameras),
        identity_id=spec.identity_seed,
        image_size=spec.image_size,
        texture_size=spec.texture_size,
    )
    _write_manifest(out_dir / MANIFEST_NAME, record)
    return record


def _write_manifest(path: Path, record: ClipRecord) -> None:
    root = path.parent
    doc = {
        "version": MANIFEST_VERSION,
        "identity_id": record.identity_id,
        "image_size": list(record.image_size),
        "texture_size": list(record.texture_size),
        "frames": [str(p.relative_to(root)) for p in record.frame_paths],
        "masks": [str(p.relative_to(root)) for p in record.mask_paths],
        "plates": [str(p.relative_to(root)) for p in record.plate_paths],
        "states": [s.theta.ravel().tolist() for s in record.states],
        "cameras": [
            np.concatenate([c.rotation.ravel(), c.translation, c.intrinsics]).tolist()
            for c in record.cameras
        ],
    }
    path.write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_clip(manifest_path: str | Path) -> ClipRecord:
    """Load and eagerly validate a clip manifest.

    Validation failures name the offending frame index. Masks must be
    strictly binary (0 or 255) at the byte level.
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest at {manifest_path}")
    doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    if doc.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{manifest_path}: manifest version {doc.get('version')} unsupported")
    root = manifest_path.parent

    lengths = {key: len(doc[key]) for key in ("frames", "masks", "plates", "states", "cameras")}
    if len(set(lengths.values())) != 1:
        raise ValueError(f"{manifest_path}: per-frame lists disagree on length: {lengths}")

    states = tuple(
        BodyModelState(theta=np.asarray(row, dtype=np.float64).reshape(-1, 3), frame_index=i)
        for i, row in enumerate(doc["states"])
    )
    cameras = []
    for i, nums in enumerate(doc["cameras"]):
        if len(nums) != 16:
            raise ValueError(f"{manifest_path}: camera record {i} must have 16 numbers")
        nums = np.asarray(nums, dtype=np.float64)
        cameras.append(
            CameraPose(rotation=nums[:9].reshape(3, 3), translation=nums[9:12], intrinsics=nums[12:16])
        )

    def _resolve(kind: str) -> tuple[Path, ...]:
        paths = []
        for i, rel in enumerate(doc[kind]):
            p = root / rel
            if not p.exists():
                raise FileNotFoundError(f"{manifest_path}: missing {kind} file for frame {i}: {p}")
            paths.append(p)
        return tuple(paths)

    frame_paths = _resolve("frames")
    mask_paths = _resolve("masks")
    plate_paths = _resolve("plates")

    from PIL import Image

    for i, mp in enumerate(mask_paths):
        with Image.open(mp) as img:
            values = np.unique(np.asarray(img.convert("L")))
        if not np.isin(values, (0, 255)).all():
            raise ValueError(f"{manifest_path}: mask for frame {i} is not binary (values {values[:5]})")

    return ClipRecord(
        frame_paths=frame_paths,
        mask_paths=mask_paths,
        plate_paths=plate_paths,
        states=states,
        cameras=tuple(cameras),
        identity_id=int(doc["identity_id"]),
        image_size=tuple(doc["image_size"]),
        texture_size=tuple(doc["texture_size"]),
    )


@dataclass(frozen=True)
class TrainingBatch:
    """Windowed clip samples, channels-first float32 throughout.

    frames/plates/pose_maps are (B, F, 3, H, W); masks (B, F, 1, H, W);
    the reference image is the masked clip-level frame 0.
    """

    frames: np.ndarray
    masks: np.ndarray
    plates: np.ndarray
    pose_maps: np.ndarray
    ref_images: np.ndarray
    ref_masks: np.ndarray
    flips: np.ndarray

    @property
    def window(self) -> int:
        return self.frames.shape[1]


def _load_chw(path: Path) -> np.ndarray:
    img = pngio.load_image(path)
    if img.ndim == 2:
        img = img[..., None]
    return np.moveaxis(img[..., :3], -1, 0)


class _IdentityAssets:
    """Per-identity mesh/texture cache for on-the-fly pose-map rendering."""

    def __init__(self) -> None:
        self.mesh: BodyMesh = build_humanoid()
        self._textures: dict[tuple[int, tuple[int, int]], UVTextureMap] = {}

    def texture(self, identity_id: int, size: tuple[int, int]) -> UVTextureMap:
        key = (identity_id, size)
        if key not in self._textures:
            self._textures[key] = make_identity_texture(identity_id, size)
        return self._textures[key]


_ASSETS = _IdentityAssets()


def render_record_pose_maps(record: ClipRecord, start: int, count: int) -> np.ndarray:
    """(count, 3, H, W) pose maps for record frames [start, start+count)."""
    texture = _ASSETS.texture(record.identity_id, record.texture_size)
    maps = []
    for i in range(start, start + count):
        posed = pose_mesh(_ASSETS.mesh, record.states[i])
        pm, _ = rasterize(posed, texture, record.cameras[i], record.image_size)
        maps.append(np.moveaxis(pm.pixels, -1, 0))
    return np.stack(maps)


def make_batch(
    records: list[ClipRecord],
    window: int,
    rng: np.random.Generator,
    batch_size: int = 2,
    flip_probability: float = 0.5,
) -> TrainingBatch:
    """Sample contiguous windows; horizontal flip is all-or-nothing per sample."""
    eligible = []
    for idx, record in enumerate(records):
        if len(record) < window:
            log.warning("record %d has %d frames, shorter than window %d; skipped",
                        idx, len(record), window)
            continue
        eligible.append(record)
    if not eligible:
        raise ValueError(f"no record long enough for window {window}")

    frames, masks, plates, pose_maps, refs, ref_masks, flips = [], [], [], [], [], [], []
    for _ in range(batch_size):
        record = eligible[int(rng.integers(len(eligible)))]
        start = int(rng.integers(len(record) - window + 1))
        flip = bool(rng.random() < flip_probability)

        f = np.stack([_load_chw(record.frame_paths[i]) for i in range(start, start + window)])
        m = np.stack(
            [pngio.load_mask(record.mask_paths[i])[None] for i in range(start, start + window)]
        )
        p = np.stack([_load_chw(record.plate_paths[i]) for i in range(start, start + window)])
        pm = render_record_pose_maps(record, start, window)
        ref = _load_chw(record.frame_paths[0])
        ref_mask = pngio.load_mask(record.mask_paths[0])[None]
        ref = ref * ref_mask  # foreground only

        if flip:
            f, m, p, pm = (np.flip(x, axis=-1).copy() for x in (f, m, p, pm))
            ref, ref_mask = (np.flip(x, axis=-1).copy() for x in (ref, ref_mask))

        frames.append(f)
        masks.append(m)
        plates.append(p)
        pose_maps.append(pm)
        refs.append(ref)
        ref_masks.append(ref_mask)
        flips.append(flip)

    return TrainingBatch(
        frames=np.stack(frames).astype(np.float32),
        masks=np.stack(masks).astype(np.float32),
        plates=np.stack(plates).astype(np.float32),
        pose_maps=np.stack(pose_maps).astype(np.float32),
        ref_images=np.stack(refs).astype(np.float32),
        ref_masks=np.stack(ref_masks).astype(np.float32),
        flips=np.array(flips),
    )
