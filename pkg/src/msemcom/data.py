"""Aligned RGB-thermal image pairs: disk layout, synthetic generation, prompts, splits.

Arrays are channels-last numpy (H, W, C) at this layer; :func:`collate`
converts a list of pairs into channels-first torch batches.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import ConfigError, RunConfig

LAYOUT_DIRS = ("rgb", "thermal", "labels")
MANIFEST_NAME = "manifest.json"


class DatasetError(ValueError):
    pass


@dataclass
class ImagePair:
    rgb: np.ndarray  # (H, W, 3) float32 in [0, 1]
    thermal: np.ndarray  # (H, W, 1) float32 in [0, 1]
    label: np.ndarray  # (H, W) int64 in [0, N)
    id: str
    is_night: bool = False

    def validate(self, num_classes: int) -> "ImagePair":
        h, w = self.label.shape
        if self.rgb.shape != (h, w, 3) or self.thermal.shape != (h, w, 1):
            raise DatasetError(f"{self.id}: shape mismatch rgb={self.rgb.shape} thermal={self.thermal.shape} label={self.label.shape}")
        for name, arr in (("rgb", self.rgb), ("thermal", self.thermal)):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise DatasetError(f"{self.id}: {name} values outside [0, 1]")
        if self.label.size and (self.label.min() < 0 or self.label.max() >= num_classes):
            raise DatasetError(f"{self.id}: label value {int(self.label.max())} >= num_classes={num_classes}")
        return self


@dataclass
class PromptImage:
    gray: np.ndarray  # (H, W, 1), grayscale of the rgb image
    expanded: np.ndarray  # (H, W, 3), thermal replicated over channels


@dataclass
class DatasetSplit:
    train: list[str]
    test: list[str]
    val: list[str]
    ratios: tuple[int, int, int] = (2, 1, 1)


# Luminance weights (BT.601). The form below is algebraically the usual
# 0.299 R + 0.587 G + 0.114 B but is exact for achromatic pixels.
_WR, _WB = 0.299, 0.114


def grayscale(rgb: np.ndarray) -> np.ndarray:
    """Channels-last luminance, keeping a trailing unit channel."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    return (g + _WR * (r - g) + _WB * (b - g))[..., None].astype(rgb.dtype)


def to_prompts(pair: ImagePair) -> PromptImage:
    return PromptImage(gray=grayscale(pair.rgb), expanded=np.repeat(pair.thermal, 3, axis=-1))


def prompt_tensors(rgb: torch.Tensor, thermal: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Batch version on (B, C, H, W) tensors: returns (gray rgb, 3-channel thermal)."""
    r, g, b = rgb[:, 0:1], rgb[:, 1:2], rgb[:, 2:3]
    gray = g + _WR * (r - g) + _WB * (b - g)
    return gray, thermal.expand(-1, 3, -1, -1).contiguous()


# ---------------------------------------------------------------- disk layout


def _read_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im)


def load_mfnet_layout(root: str | Path, config: RunConfig) -> list[ImagePair]:
    """Read ``root/{rgb,thermal,labels}/<id>.png`` triples matched by file stem.

    RGB and thermal are scaled to [0, 1]. Label files hold raw class indices;
    ``data.unlabeled_value`` (when set) is remapped to class 0.
    """
    root = Path(root)
    for d in LAYOUT_DIRS:
        if not (root / d).is_dir():
            raise DatasetError(f"missing directory {root / d}")
    n = config.data.num_classes
    unlabeled = config.data.unlabeled_value
    stems = {d: {p.stem: p for p in sorted((root / d).glob("*.png"))} for d in LAYOUT_DIRS}
    all_ids = sorted(set().union(*stems.values()))
    pairs = []
    for stem in all_ids:
        for d in LAYOUT_DIRS:
            if stem not in stems[d]:
                raise DatasetError(f"missing {'label' if d == 'labels' else d} for {stem}")
        rgb = _read_png(stems["rgb"][stem])
        if rgb.ndim == 2:
            rgb = np.repeat(rgb[..., None], 3, axis=-1)
        rgb = rgb[..., :3].astype(np.float32) / 255.0
        th = _read_png(stems["thermal"][stem])
        if th.ndim == 3:
            th = th[..., 0]
        th = th.astype(np.float32)[..., None] / 255.0
        lab = _read_png(stems["labels"][stem])
        if lab.ndim == 3:
            lab = lab[..., 0]
        lab = lab.astype(np.int64)
        if unlabeled is not None:
            lab = np.where(lab == unlabeled, 0, lab)
        if lab.size and lab.max() >= n:
            raise DatasetError(f"{stem}: label value {int(lab.max())} >= num_classes={n}")
        # MFNet convention: ids ending in N are night captures
        pairs.append(ImagePair(rgb, th, lab, stem, is_night=stem.upper().endswith("N")).validate(n))
    return pairs


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


def write_layout(pairs: list[ImagePair], root: str | Path, manifest: dict | None = None) -> Path:
    root = Path(root)
    for d in LAYOUT_DIRS:
        (root / d).mkdir(parents=True, exist_ok=True)
    for p in pairs:
        Image.fromarray(_to_u8(p.rgb), mode="RGB").save(root / "rgb" / f"{p.id}.png")
        Image.fromarray(_to_u8(p.thermal[..., 0]), mode="L").save(root / "thermal" / f"{p.id}.png")
        if p.label.max(initial=0) > 255:
            raise DatasetError(f"{p.id}: label values do not fit in 8 bits")
        Image.fromarray(p.label.astype(np.uint8), mode="L").save(root / "labels" / f"{p.id}.png")
    if manifest is not None:
        (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


# ------------------------------------------------------------------ synthetic


def class_colors(num_classes: int) -> np.ndarray:
    """Fixed, well-separated RGB color per foreground class (row 0 unused)."""
    base = np.array([[0.0, 0.0, 0.0], [0.9, 0.15, 0.15], [0.15, 0.85, 0.25], [0.2, 0.3, 0.95]])
    if num_classes <= len(base):
        return base[:num_classes]
    extra = []
    for k in range(len(base), num_classes):
        hue = (k * 0.618034) % 1.0
        extra.append([0.5 + 0.4 * math.cos(2 * math.pi * (hue + s / 3)) for s in range(3)])
    return np.vstack([base, np.array(extra)])


def thermal_levels(num_classes: int) -> np.ndarray:
    return np.array([0.0] + [0.5 + 0.45 * k / (num_classes - 1) for k in range(1, num_classes)])


def _size_bounds(cell: int, lo: float, hi: float) -> tuple[int, int]:
    a = max(2, int(cell * lo + 1e-9))
    b = min(cell, max(a, int(cell * hi + 1e-9)))
    return a, b


def _shape_mask(
    rng: np.random.Generator, h0: int, w0: int, ch: int, cw: int, H: int, W: int, size_range=(0.4, 0.9)
) -> np.ndarray:
    lo, hi = size_range
    h_lo, h_hi = _size_bounds(ch, lo, hi)
    w_lo, w_hi = _size_bounds(cw, lo, hi)
    sh = int(rng.integers(h_lo, h_hi + 1))
    sw = int(rng.integers(w_lo, w_hi + 1))
    top = h0 + int(rng.integers(0, ch - sh + 1))
    left = w0 + int(rng.integers(0, cw - sw + 1))
    yy, xx = np.mgrid[0:H, 0:W]
    if rng.random() < 0.5:
        return (yy >= top) & (yy < top + sh) & (xx >= left) & (xx < left + sw)
    cy, cx = top + (sh - 1) / 2, left + (sw - 1) / 2
    return ((yy - cy) / (sh / 2)) ** 2 + ((xx - cx) / (sw / 2)) ** 2 <= 1.0


def generate_synthetic(config: RunConfig, seed: int) -> list[ImagePair]:
    """Deterministic toy RGB-thermal scenes with modality-exclusive classes.

    The image is divided into ``grid x grid`` cells; each cell holds at most
    one rectangle or ellipse of a random foreground class. An instance of a
    class in ``rgb_only`` is, with probability ``exclusivity``, not drawn in
    the thermal image (its pixels keep the thermal background statistics),
    and symmetrically for ``thermal_only``.
    """
    d = config.data
    if d.num_classes < 2:
        raise ConfigError("data.num_classes", "at least 2 classes required")
    H, W, N = d.height, d.width, d.num_classes
    rng = np.random.default_rng(seed)
    colors = class_colors(N)
    levels = thermal_levels(N)
    rgb_only, th_only = set(d.rgb_only), set(d.thermal_only)
    ch, cw = H // d.grid, W // d.grid
    pairs = []
    for i in range(d.count):
        rgb_bg = rng.uniform(0.25, 0.45, size=3)
        th_bg = rng.uniform(0.15, 0.3)
        rgb = np.broadcast_to(rgb_bg, (H, W, 3)).copy()
        th = np.full((H, W), th_bg)
        label = np.zeros((H, W), dtype=np.int64)
        for gy in range(d.grid):
            for gx in range(d.grid):
                if rng.random() >= d.object_prob:
                    continue
                cls = int(rng.integers(1, N))
                mask = _shape_mask(rng, gy * ch, gx * cw, ch, cw, H, W, d.size_range)
                hidden = rng.random() < d.exclusivity
                jitter = rng.uniform(-0.04, 0.04, size=4)
                label[mask] = cls
                if not (cls in th_only and hidden):
                    rgb[mask] = np.clip(colors[cls] + jitter[:3], 0, 1)
                if not (cls in rgb_only and hidden):
                    th[mask] = levels[cls] + jitter[3]
        rgb = np.clip(rgb + rng.normal(0.0, d.noise, size=rgb.shape), 0.0, 1.0)
        th = np.clip(th + rng.normal(0.0, d.noise, size=th.shape), 0.0, 1.0)
        pairs.append(ImagePair(rgb.astype(np.float32), th[..., None].astype(np.float32), label, f"syn{i:05d}"))
    return pairs


def synthetic_manifest(config: RunConfig, seed: int) -> dict:
    d = config.data
    exclusive = {str(k): "rgb" for k in d.rgb_only} | {str(k): "thermal" for k in d.thermal_only}
    return {
        "generator": "synthetic",
        "seed": seed,
        "count": d.count,
        "height": d.height,
        "width": d.width,
        "num_classes": d.num_classes,
        "exclusivity": d.exclusivity,
        "exclusive_classes": exclusive,
        "grid": d.grid,
        "noise": d.noise,
        "size_range": list(d.size_range),
    }


# ------------------------------------------------------------------- splitting


def split_dataset(pairs: list, seed: int) -> DatasetSplit:
    """Seeded uniform shuffle into train/test/val at 2:1:1.

    Sizes are ceil(n/2), floor(n/4) and the remainder.
    """
    ids = [p.id if isinstance(p, ImagePair) else str(p) for p in pairs]
    n = len(ids)
    if n < 4:
        raise DatasetError(f"need at least 4 samples to split, got {n}")
    if len(set(ids)) != n:
        raise DatasetError("sample ids are not unique")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[k] for k in order]
    n_train = -(-n * 2 // 4)
    n_test = n // 4
    return DatasetSplit(
        train=shuffled[:n_train],
        test=shuffled[n_train : n_train + n_test],
        val=shuffled[n_train + n_test :],
    )


def select(pairs: list[ImagePair], ids: list[str]) -> list[ImagePair]:
    index = {p.id: p for p in pairs}
    return [index[i] for i in ids]


def collate(pairs: list[ImagePair]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack pairs into (B,3,H,W) rgb, (B,1,H,W) thermal and (B,H,W) labels."""
    rgb = torch.from_numpy(np.stack([p.rgb for p in pairs])).permute(0, 3, 1, 2).contiguous()
    th = torch.from_numpy(np.stack([p.thermal for p in pairs])).permute(0, 3, 1, 2).contiguous()
    lab = torch.from_numpy(np.stack([p.label for p in pairs])).long()
    return rgb.float(), th.float(), lab


def load_dataset(config: RunConfig) -> list[ImagePair]:
    """Pairs from ``data.root`` when set, otherwise freshly generated."""
    if config.data.root:
        return load_mfnet_layout(config.data.root, config)
    return generate_synthetic(config, config.train.data_seed)
