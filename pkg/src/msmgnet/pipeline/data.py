"""Samples, manifests, edge ground truth and training-time augmentation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from ..config import AugmentConfig
from ..robustness import gaussian_blur, jpeg_compress

AUTHENTIC = "AUTHENTIC"


class DataError(RuntimeError):
    pass


@dataclass
class SampleRecord:
    """One item: image 3 x H x W in [0, 1], binary mask 1 x H x W, edge 1 x H/4 x W/4."""

    id: str
    image: np.ndarray
    mask: np.ndarray
    edge: np.ndarray


@dataclass
class ManifestEntry:
    id: str
    image_path: Path
    mask_path: Path | None


def derive_edge_gt(mask: np.ndarray, width: int = 3) -> np.ndarray:
    """Quarter-resolution boundary band of a binary mask.

    ``dilate(mask) & ~erode(mask)`` with a ``(2*width+1)``-square structuring
    element (outside the image counts as background), then any-pooled by 4.
    Accepts H x W or 1 x H x W and returns the same rank.
    """
    m = np.asarray(mask) > 0.5
    squeeze = m.ndim == 3
    if squeeze:
        m = m[0]
    h, w = m.shape
    if h % 4 or w % 4:
        raise ValueError(f"mask size {h}x{w} must be divisible by 4")
    se = np.ones((2 * width + 1, 2 * width + 1), dtype=bool)
    band = ndimage.binary_dilation(m, se, border_value=0) & ~ndimage.binary_erosion(m, se, border_value=0)
    pooled = band.reshape(h // 4, 4, w // 4, 4).any(axis=(1, 3)).astype(np.float32)
    return pooled[None] if squeeze else pooled


def make_sample(id: str, image: np.ndarray, mask: np.ndarray, edge_width: int = 3) -> SampleRecord:
    image = np.asarray(image, dtype=np.float32)
    mask = (np.asarray(mask) > 0.5).astype(np.float32)
    if mask.ndim == 2:
        mask = mask[None]
    if image.shape[1:] != mask.shape[1:]:
        raise DataError(f"{id}: image {image.shape[1:]} and mask {mask.shape[1:]} sizes differ")
    return SampleRecord(id, image, mask, derive_edge_gt(mask, edge_width))


def replace_image(sample: SampleRecord, image: np.ndarray) -> SampleRecord:
    return dataclasses.replace(sample, image=image)


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse a tab-separated manifest: ``id<TAB>image_path<TAB>mask_path|AUTHENTIC``.

    Relative paths resolve against the manifest's directory. Blank lines and
    lines starting with ``#`` are skipped.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    root = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        sid, img, msk = (p.strip() for p in parts)
        img_path = (root / img) if not Path(img).is_absolute() else Path(img)
        if not img_path.is_file():
            raise DataError(f"{path}:{lineno}: image not found: {img_path}")
        mask_path = None
        if msk != AUTHENTIC:
            mask_path = (root / msk) if not Path(msk).is_absolute() else Path(msk)
            if not mask_path.is_file():
                raise DataError(f"{path}:{lineno}: mask not found: {mask_path}")
        entries.append(ManifestEntry(sid, img_path, mask_path))
    return entries


def load_image(path: Path, size: int) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB").resize((size, size), Image.BILINEAR)
            return np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def load_mask(path: Path, size: int) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("L").resize((size, size), Image.NEAREST)
            return (np.asarray(im) > 127).astype(np.float32)[None]
    except OSError as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc


def load_sample(entry: ManifestEntry, size: int, edge_width: int = 3) -> SampleRecord:
    image = load_image(entry.image_path, size)
    if entry.mask_path is None:
        mask = np.zeros((1, size, size), dtype=np.float32)
    else:
        mask = load_mask(entry.mask_path, size)
    return make_sample(entry.id, image, mask, edge_width)


def load_samples(manifest: str | Path, size: int, edge_width: int = 3) -> list[SampleRecord]:
    return [load_sample(e, size, edge_width) for e in read_manifest(manifest)]


def save_image(path: str | Path, image: np.ndarray) -> None:
    u8 = np.clip(np.round(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8).save(path)


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask)[0] > 0.5).astype(np.uint8) * 255).save(path)


def write_manifest(samples: list[SampleRecord], directory: str | Path, name: str = "manifest.tsv") -> Path:
    """Write samples as PNG files plus a manifest; all-zero masks become AUTHENTIC."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        save_image(directory / f"{s.id}.png", s.image)
        if s.mask.any():
            save_mask(directory / f"{s.id}_mask.png", s.mask)
            lines.append(f"{s.id}\t{s.id}.png\t{s.id}_mask.png")
        else:
            lines.append(f"{s.id}\t{s.id}.png\t{AUTHENTIC}")
    path = directory / name
    path.write_text("\n".join(lines) + "\n")
    return path


def augment(sample: SampleRecord, cfg: AugmentConfig, rng: np.random.Generator) -> SampleRecord:
    """Random horizontal flip (image, mask and edge together), blur and JPEG (image only).

    Three uniforms are always drawn so the stream position does not depend on
    which branches fire.
    """
    u_flip, u_blur, u_jpeg = rng.random(3)
    kernel = int(rng.choice(cfg.blur_kernels))
    quality = int(rng.integers(cfg.jpeg_quality[0], cfg.jpeg_quality[1] + 1))
    image, mask, edge = sample.image, sample.mask, sample.edge
    if u_flip < cfg.flip_p:
        image = image[:, :, ::-1].copy()
        mask = mask[:, :, ::-1].copy()
        edge = edge[:, :, ::-1].copy()
    if u_blur < cfg.blur_p or u_jpeg < cfg.jpeg_p:
        img255 = image.transpose(1, 2, 0).astype(np.float64) * 255.0
        if u_blur < cfg.blur_p:
            img255 = gaussian_blur(img255, kernel)
        if u_jpeg < cfg.jpeg_p:
            img255 = jpeg_compress(img255, quality)
        image = (img255 / 255.0).transpose(2, 0, 1).astype(np.float32)
    return SampleRecord(sample.id, image, mask, edge)


def _texture(rng: np.random.Generator, size: int, coarse: int, fine_std: float) -> np.ndarray:
    low = rng.random((3, coarse, coarse))
    zoom = size / coarse
    smooth = np.stack([ndimage.zoom(c, zoom, order=1) for c in low])
    return smooth * 0.6 + 0.2 + rng.normal(0.0, fine_std, size=(3, size, size))


def make_synthetic_samples(n: int, size: int = 64, seed: int = 0, edge_width: int = 3) -> list[SampleRecord]:
    """Images with a rectangle pasted from a differently textured source, plus exact masks."""
    rng = np.random.default_rng(seed)
    samples = []
    for k in range(n):
        host = _texture(rng, size, 4, 0.02)
        donor = _texture(rng, size, 8, 0.08)
        h = int(rng.integers(size // 4, size // 2 + 1))
        w = int(rng.integers(size // 4, size // 2 + 1))
        top = int(rng.integers(0, size - h + 1))
        left = int(rng.integers(0, size - w + 1))
        mask = np.zeros((1, size, size), dtype=np.float32)
        mask[:, top : top + h, left : left + w] = 1.0
        image = np.where(mask > 0, donor, host)
        image = np.clip(image, 0.0, 1.0).astype(np.float32)
        samples.append(make_sample(f"synthetic_{k:03d}", image, mask, edge_width))
    return samples


def collate(samples: list[SampleRecord]):
    import torch

    x = torch.from_numpy(np.stack([s.image for s in samples]).astype(np.float32))
    y = torch.from_numpy(np.stack([s.mask for s in samples]).astype(np.float32))
    e = torch.from_numpy(np.stack([s.edge for s in samples]).astype(np.float32))
    return x, y, e
