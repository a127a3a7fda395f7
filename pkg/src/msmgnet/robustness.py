"""Post-processing perturbations and the robustness sweep over them.

Images here are H x W x C (or H x W) arrays in 8-bit value scale. ``uint8``
input gives ``uint8`` output; float input gives float output clipped to
``[0, 255]``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d

GRIDS = {
    "gaussian_blur": [3, 5, 7, 9],
    "gaussian_noise": [3, 5, 7, 9],
    "jpeg": [50, 60, 70, 80, 90, 100],
    "iso_noise": [0.05, 0.1, 0.15, 0.2],
}


@dataclass
class PerturbationSpec:
    kind: str
    params: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in GRIDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}; expected one of {sorted(GRIDS)}")
        if not self.params:
            self.params = list(GRIDS[self.kind])
        for p in self.params:
            if self.kind == "gaussian_blur" and (int(p) != p or p < 1 or p % 2 == 0):
                raise ValueError(f"blur kernel must be a positive odd integer, got {p}")
            if self.kind == "jpeg" and not 1 <= p <= 100:
                raise ValueError(f"jpeg quality must lie in [1, 100], got {p}")
            if self.kind in ("gaussian_noise", "iso_noise") and p <= 0:
                raise ValueError(f"noise variance must be positive, got {p}")


def _restore(out: np.ndarray, like: np.ndarray) -> np.ndarray:
    out = np.clip(out, 0.0, 255.0)
    if like.dtype == np.uint8:
        return np.round(out).astype(np.uint8)
    return out.astype(like.dtype, copy=False)


def gaussian_kernel(kernel: int) -> np.ndarray:
    """Normalized 1-D Gaussian taps with ``sigma = 0.3 * ((k - 1) / 2 - 1) + 0.8``."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"blur kernel must be a positive odd integer, got {kernel}")
    sigma = 0.3 * ((kernel - 1) / 2 - 1) + 0.8
    x = np.arange(kernel, dtype=np.float64) - (kernel - 1) / 2
    taps = np.exp(-(x**2) / (2 * sigma**2))
    return taps / taps.sum()


def gaussian_blur(image: np.ndarray, kernel: int) -> np.ndarray:
    image = np.asarray(image)
    if kernel == 1:
        return image.copy()
    taps = gaussian_kernel(kernel)
    out = image.astype(np.float64)
    out = correlate1d(out, taps, axis=0, mode="reflect")
    out = correlate1d(out, taps, axis=1, mode="reflect")
    return _restore(out, image)


def gaussian_noise(image: np.ndarray, variance: float, rng: np.random.Generator) -> np.ndarray:
    image = np.asarray(image)
    if variance <= 0:
        return image.copy()
    noise = rng.normal(0.0, np.sqrt(variance), size=image.shape)
    return _restore(image.astype(np.float64) + noise, image)


def jpeg_compress(image: np.ndarray, quality: int) -> np.ndarray:
    """Baseline JPEG encode/decode round trip (4:4:4 chroma) through Pillow."""
    image = np.asarray(image)
    if not 1 <= quality <= 100:
        raise ValueError(f"jpeg quality must lie in [1, 100], got {quality}")
    u8 = np.clip(np.round(image), 0, 255).astype(np.uint8) if image.dtype != np.uint8 else image
    src = Image.fromarray(u8)
    buf = io.BytesIO()
    src.save(buf, format="JPEG", quality=int(quality), subsampling=0)
    buf.seek(0)
    out = np.asarray(Image.open(buf).convert(src.mode))
    return out.copy() if image.dtype == np.uint8 else out.astype(image.dtype)


def iso_noise(
    image: np.ndarray, variance: float, rng: np.random.Generator, color_shift: float = 0.05
) -> np.ndarray:
    """Signal-dependent sensor noise.

    Per pixel a shared luminance draw scaled by ``sqrt(x / 255)`` plus a small
    independent per-channel draw; both scale with ``sqrt(variance)``.
    """
    image = np.asarray(image)
    if variance <= 0:
        return image.copy()
    x = image.astype(np.float64)
    std = np.sqrt(variance)
    lum_shape = x.shape[:2] + ((1,) if x.ndim == 3 else ())
    lum = rng.normal(0.0, 1.0, size=lum_shape)
    chroma = rng.normal(0.0, 1.0, size=x.shape)
    brightness = np.sqrt(np.clip(x / 255.0, 0.0, 1.0))
    out = x + 255.0 * std * (brightness * lum + color_shift * chroma)
    return _restore(out, image)


def perturb(image: np.ndarray, kind: str, param, rng: np.random.Generator | None = None) -> np.ndarray:
    rng = rng if rng is not None else np.random.default_rng(0)
    if kind == "gaussian_blur":
        return gaussian_blur(image, int(param))
    if kind == "gaussian_noise":
        return gaussian_noise(image, float(param), rng)
    if kind == "jpeg":
        return jpeg_compress(image, int(param))
    if kind == "iso_noise":
        return iso_noise(image, float(param), rng)
    raise ValueError(f"unknown perturbation kind {kind!r}")


@dataclass
class SweepRow:
    kind: str
    param: float
    f1_mean: float | None
    auc_mean: float | None
    n_images: int


def robustness_sweep(model, samples, specs, seed: int = 0, batch_size: int = 4) -> list[SweepRow]:
    """Evaluate ``model`` on perturbed copies of ``samples`` at every grid point.

    Masks are never touched. Each grid point reseeds its noise generator from
    ``seed``, kind and parameter, so the table does not depend on the order
    grid points are visited.
    """
    from .pipeline import evaluate, replace_image

    rows = []
    for spec in specs:
        for param in spec.params:
            rng = np.random.default_rng([seed, sorted(GRIDS).index(spec.kind), int(round(float(param) * 1000))])
            perturbed = []
            for s in samples:
                img255 = s.image.transpose(1, 2, 0).astype(np.float64) * 255.0
                out = perturb(img255, spec.kind, param, rng)
                perturbed.append(replace_image(s, (out / 255.0).transpose(2, 0, 1).astype(np.float32)))
            result = evaluate(model, perturbed, batch_size=batch_size)
            rows.append(SweepRow(spec.kind, param, result.f1_mean, result.auc_mean, len(perturbed)))
    return rows


def _fmt(v) -> str:
    return "nan" if v is None else f"{v:.6f}"


def write_table(rows: list[SweepRow], path: str | Path) -> None:
    lines = ["kind\tparam\tf1_mean\tauc_mean\tn_images"]
    for r in rows:
        lines.append(f"{r.kind}\t{r.param:g}\t{_fmt(r.f1_mean)}\t{_fmt(r.auc_mean)}\t{r.n_images}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path: str | Path) -> list[SweepRow]:
    rows = []
    for line in Path(path).read_text().splitlines()[1:]:
        kind, param, f1, auc, n = line.split("\t")
        rows.append(
            SweepRow(
                kind,
                float(param),
                None if f1 == "nan" else float(f1),
                None if auc == "nan" else float(auc),
                int(n),
            )
        )
    return rows
