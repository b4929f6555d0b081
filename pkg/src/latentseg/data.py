"""Synthetic-shapes dataset: generation, directory I/O, and split management.

Each sample is a textured background with 1-4 overlapping foreground
primitives (convex polygons, rings, thin bars with holes — deliberately
including 1-2 pixel structures), rendered as an RGB image plus an exact
binary mask and its derived edge map. Everything is reproducible from the
generation seed.
"""

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .training import Sample, derive_edge

logger = logging.getLogger(__name__)

GENERATOR_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass
class GenConfig:
    min_shapes: int = 1
    max_shapes: int = 4
    fg_fraction_min: float = 0.02
    fg_fraction_max: float = 0.6
    split_ratios: tuple = (0.8, 0.1, 0.1)
    edge_thickness: int = 1
    max_resample: int = 60

    def __post_init__(self):
        if self.min_shapes < 1 or self.max_shapes < self.min_shapes:
            raise ValueError("invalid shape-count range")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")


@dataclass
class DatasetManifest:
    root: str
    resolution: int
    seed: int
    splits: dict = field(default_factory=dict)
    generator: dict = field(default_factory=dict)
    version: int = GENERATOR_VERSION

    def all_ids(self):
        return [i for split in SPLITS for i in self.splits.get(split, [])]

    def save(self):
        path = Path(self.root) / "manifest.json"
        payload = asdict(self)
        payload["root"] = "."
        path.write_text(json.dumps(payload, indent=2))

    @classmethod
    def load(cls, root) -> "DatasetManifest":
        path = Path(root) / "manifest.json"
        payload = json.loads(path.read_text())
        payload["root"] = str(root)
        payload["generator"] = dict(payload.get("generator", {}))
        return cls(**payload)


def _smooth_noise(rng: np.random.Generator, res: int, cells: int = 8) -> np.ndarray:
    coarse = rng.standard_normal((cells, cells))
    return ndimage.zoom(coarse, res / cells, order=1, mode="nearest")


def _polygon_mask(rng: np.random.Generator, res: int) -> np.ndarray:
    cx, cy = rng.uniform(0.25, 0.75, size=2) * res
    radius = rng.uniform(0.10, 0.32) * res
    k = int(rng.integers(3, 9))
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=k))
    radii = radius * rng.uniform(0.55, 1.0, size=k)
    pts = [(cx + r * np.cos(a), cy + r * np.sin(a)) for a, r in zip(angles, radii)]
    img = Image.new("1", (res, res), 0)
    ImageDraw.Draw(img).polygon(pts, fill=1)
    return np.asarray(img, dtype=bool)


def _ring_mask(rng: np.random.Generator, res: int) -> np.ndarray:
    cx, cy = rng.uniform(0.25, 0.75, size=2) * res
    outer = rng.uniform(0.08, 0.30) * res
    thickness = rng.uniform(1.0, max(1.5, 0.12 * res))
    inner = max(outer - thickness, 0.0)
    yy, xx = np.mgrid[0:res, 0:res]
    d = np.hypot(xx - cx, yy - cy)
    return (d <= outer) & (d >= inner)


def _bar_mask(rng: np.random.Generator, res: int) -> np.ndarray:
    # rotated thin rectangle, occasionally with punched holes
    cx, cy = rng.uniform(0.25, 0.75, size=2) * res
    length = rng.uniform(0.3, 0.8) * res
    width = rng.uniform(1.0, max(2.0, 0.08 * res))
    angle = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:res, 0:res]
    u = (xx - cx) * np.cos(angle) + (yy - cy) * np.sin(angle)
    v = -(xx - cx) * np.sin(angle) + (yy - cy) * np.cos(angle)
    m = (np.abs(u) <= length / 2) & (np.abs(v) <= width / 2)
    if width >= 6:
        for _ in range(int(rng.integers(1, 4))):
            hu = rng.uniform(-length / 2.5, length / 2.5)
            hr = rng.uniform(width / 6, width / 3)
            m &= ~(np.hypot(u - hu, v) <= hr)
    return m


_PRIMITIVES = (_polygon_mask, _ring_mask, _bar_mask)


def _draw_mask(rng: np.random.Generator, res: int, cfg: GenConfig) -> np.ndarray:
    for _ in range(cfg.max_resample):
        mask = np.zeros((res, res), dtype=bool)
        for _ in range(int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))):
            prim = _PRIMITIVES[int(rng.integers(0, len(_PRIMITIVES)))]
            mask |= prim(rng, res)
        frac = mask.mean()
        if cfg.fg_fraction_min <= frac <= cfg.fg_fraction_max:
            return mask
    raise RuntimeError(
        f"could not draw a mask with foreground fraction in "
        f"[{cfg.fg_fraction_min}, {cfg.fg_fraction_max}] after {cfg.max_resample} tries"
    )


def _render_image(rng: np.random.Generator, mask: np.ndarray, res: int) -> np.ndarray:
    bg_color = rng.uniform(0.05, 0.95, size=3)
    while True:
        fg_color = rng.uniform(0.05, 0.95, size=3)
        if np.abs(fg_color - bg_color).sum() >= 0.8:
            break
    bg_tex = np.stack([
        np.clip(bg_color[c] + 0.18 * _smooth_noise(rng, res) + 0.02 * rng.standard_normal((res, res)), 0, 1)
        for c in range(3)
    ])
    fg_tex = np.stack([
        np.clip(fg_color[c] + 0.12 * _smooth_noise(rng, res) + 0.02 * rng.standard_normal((res, res)), 0, 1)
        for c in range(3)
    ])
    m = mask[None].astype(np.float64)
    return (bg_tex * (1 - m) + fg_tex * m).astype(np.float32)


def make_sample(sample_seed, res: int, cfg: GenConfig, sample_id: str) -> Sample:
    rng = np.random.default_rng(sample_seed)
    mask = _draw_mask(rng, res, cfg)
    image = _render_image(rng, mask, res)
    mask_f = mask[None].astype(np.float32)
    return Sample(
        image=image,
        mask=mask_f,
        edge=derive_edge(mask_f, cfg.edge_thickness),
        id=sample_id,
    ).validate()


def _save_gray(path: Path, arr: np.ndarray):
    Image.fromarray((np.clip(arr, 0, 1) * 255).round().astype(np.uint8)).save(path)


def _save_rgb(path: Path, arr: np.ndarray):
    Image.fromarray(
        (np.clip(arr, 0, 1) * 255).round().astype(np.uint8).transpose(1, 2, 0)
    ).save(path)


def generate_synthetic(
    n: int, resolution: int, seed: int, root, cfg: GenConfig = GenConfig()
) -> DatasetManifest:
    """Render n samples to root/{images,masks,edges}/ and write the manifest.

    Per-sample RNG streams are derived from (seed, index), so the dataset is
    reproducible sample-by-sample.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    root = Path(root)
    for sub in ("images", "masks", "edges"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    ids = []
    for i in range(n):
        sid = f"s{i:05d}"
        s = make_sample([seed, i], resolution, cfg, sid)
        _save_rgb(root / "images" / f"{sid}.png", s.image)
        _save_gray(root / "masks" / f"{sid}.png", s.mask[0])
        _save_gray(root / "edges" / f"{sid}.png", s.edge[0])
        ids.append(sid)

    n_train = int(round(n * cfg.split_ratios[0]))
    n_val = int(round(n * cfg.split_ratios[1]))
    if n_train == 0 and n > 0:
        n_train = n
    splits = {
        "train": ids[:n_train],
        "val": ids[n_train : n_train + n_val],
        "test": ids[n_train + n_val :],
    }
    manifest = DatasetManifest(
        root=str(root),
        resolution=resolution,
        seed=seed,
        splits=splits,
        generator=asdict(cfg) | {"n": n, "version": GENERATOR_VERSION},
    )
    manifest.save()
    logger.info("generated %d samples at %s", n, root)
    return manifest


class Dataset:
    """Directory-backed dataset with lazy sample loading and fault isolation."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest = DatasetManifest.load(self.root)
        self.errors = []

    def _load_one(self, sid: str) -> Sample:
        img_path = self.root / "images" / f"{sid}.png"
        mask_path = self.root / "masks" / f"{sid}.png"
        edge_path = self.root / "edges" / f"{sid}.png"
        image = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float32) / 255.0
        image = image.transpose(2, 0, 1)
        raw = np.asarray(Image.open(mask_path).convert("L"), dtype=np.float32) / 255.0
        if image.shape[1:] != raw.shape:
            raise ValueError(f"{sid}: image dims {image.shape[1:]} != mask dims {raw.shape}")
        nonbinary = np.mean((raw != 0.0) & (raw != 1.0))
        if nonbinary > 0.001:
            warnings.warn(f"{sid}: {nonbinary:.2%} non-binary mask pixels, binarizing at 0.5")
        mask = (raw > 0.5).astype(np.float32)[None]
        if edge_path.exists():
            eraw = np.asarray(Image.open(edge_path).convert("L"), dtype=np.float32) / 255.0
            edge = (eraw > 0.5).astype(np.float32)[None]
        else:
            edge = derive_edge(mask)
        return Sample(image=image, mask=mask, edge=edge, id=sid)

    def iter_split(self, split: str):
        for sid in self.manifest.splits.get(split, []):
            try:
                yield self._load_one(sid)
            except Exception as exc:  # noqa: BLE001 - fault isolation per sample
                self.errors.append({"id": sid, "error": str(exc)})
                logger.warning("skipping sample %s: %s", sid, exc)

    def load_split(self, split: str) -> list:
        return list(self.iter_split(split))


def load_dataset(root) -> Dataset:
    return Dataset(root)


def dataset_digest(root) -> str:
    """Order-independent content digest of all PNGs and the manifest."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(root.rglob("*.png")) + [root / "manifest.json"]:
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()
