"""Synthetic shape datasets, image/mask I/O, preprocessing and flips."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .ops import interp_matrix

SHAPE_KINDS = ("ellipse", "rectangle", "triangle")
MIN_FOREGROUND = 0.05
MAX_FOREGROUND = 0.60
MANIFEST_NAME = "manifest.txt"


@dataclass
class Sample:
    image: np.ndarray  # 3 x S x S, float, [0, 255]
    mask: np.ndarray  # 1 x S x S, float, {0, 1}
    id: str = ""

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must be 3 x H x W, got {self.image.shape}")
        if self.mask.shape != (1,) + self.image.shape[1:]:
            raise ValueError(f"mask shape {self.mask.shape} does not match image {self.image.shape}")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask must be binary {0, 1}")


@dataclass
class DatasetManifest:
    root: Path
    pairs: list = field(default_factory=list)  # (image path, mask path), relative to root
    channel_means: tuple = (0.0, 0.0, 0.0)

    def paths(self):
        for img, msk in self.pairs:
            yield self.root / img, self.root / msk

    def write(self, path: Optional[os.PathLike] = None) -> Path:
        path = Path(path) if path is not None else self.root / MANIFEST_NAME
        lines = ["#means " + " ".join(repr(float(m)) for m in self.channel_means)]
        lines += [f"{img}\t{msk}" for img, msk in self.pairs]
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def read(cls, path: os.PathLike) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        means = None
        pairs = []
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            if line.startswith("#means"):
                vals = line.split()[1:]
                if len(vals) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 3 channel means")
                means = tuple(float(v) for v in vals)
                continue
            if line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'image<TAB>mask'")
            pairs.append((parts[0], parts[1]))
        root = path.parent
        manifest = cls(root=root, pairs=pairs, channel_means=means or (0.0, 0.0, 0.0))
        for img, msk in manifest.paths():
            for p in (img, msk):
                if not p.is_file():
                    raise FileNotFoundError(f"manifest {path} lists missing file {p}")
        if means is None:
            manifest.channel_means = compute_channel_means(manifest)
        return manifest


# ---------------------------------------------------------------------------
# synthetic generation


def value_noise(rng: np.random.Generator, size: int, octaves=(4, 8, 16)) -> np.ndarray:
    """Smooth noise in roughly [-1, 1]: bilinearly upsampled random grids."""
    out = np.zeros((size, size))
    amp = 1.0
    total = 0.0
    for cells in octaves:
        cells = min(cells, size)
        grid = rng.uniform(-1.0, 1.0, size=(cells, cells))
        m = interp_matrix(cells, size)
        out += amp * (m @ grid @ m.T)
        total += amp
        amp *= 0.5
    return out / total


def _shape_mask(rng: np.random.Generator, kind: str, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    cx, cy = rng.uniform(0.2, 0.8, size=2) * size
    if kind == "ellipse":
        a, b = rng.uniform(0.12, 0.3, size=2) * size
        th = rng.uniform(0, np.pi)
        dx, dy = xx - cx, yy - cy
        u = dx * np.cos(th) + dy * np.sin(th)
        v = -dx * np.sin(th) + dy * np.cos(th)
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0
    if kind == "rectangle":
        hw, hh = rng.uniform(0.1, 0.28, size=2) * size
        return (np.abs(xx - cx) <= hw) & (np.abs(yy - cy) <= hh)
    if kind == "triangle":
        r = rng.uniform(0.18, 0.4) * size
        angles = rng.uniform(0, 2 * np.pi) + np.array([0, 2 * np.pi / 3, 4 * np.pi / 3])
        angles += rng.uniform(-0.4, 0.4, size=3)
        px, py = cx + r * np.cos(angles), cy + r * np.sin(angles)
        inside = np.ones((size, size), dtype=bool)
        sign = np.sign((px[1] - px[0]) * (py[2] - py[0]) - (py[1] - py[0]) * (px[2] - px[0]))
        for i in range(3):
            j = (i + 1) % 3
            cross = (px[j] - px[i]) * (yy - py[i]) - (py[j] - py[i]) * (xx - px[i])
            inside &= sign * cross >= 0
        return inside
    raise ValueError(f"unknown shape kind {kind!r}")


def _contrasting_color(rng: np.random.Generator, background: np.ndarray, min_dist: float = 120.0) -> np.ndarray:
    while True:
        c = rng.uniform(0, 255, size=3)
        if np.linalg.norm(c - background) >= min_dist:
            return c


def synth_sample(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray, list]:
    """One synthetic (image uint8 HxWx3, mask uint8 HxW in {0,255}, kinds)."""
    while True:
        n_shapes = int(rng.integers(1, 4))
        kinds = [SHAPE_KINDS[int(rng.integers(3))] for _ in range(n_shapes)]
        masks = [_shape_mask(rng, k, size) for k in kinds]
        union = np.zeros((size, size), dtype=bool)
        for m in masks:
            union |= m
        frac = union.mean()
        if MIN_FOREGROUND <= frac <= MAX_FOREGROUND and all(m.any() for m in masks):
            break

    base = rng.uniform(60, 190, size=3)
    tex = value_noise(rng, size)
    img = base[None, None, :] + 35.0 * tex[..., None] + rng.uniform(-15, 15, size=(1, 1, 3)) * tex[..., None]
    for m in masks:
        color = _contrasting_color(rng, base)
        shade = 1.0 + 0.08 * value_noise(rng, size, octaves=(4,))
        img[m] = np.clip(color[None, :] * shade[m][:, None], 0, 255)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return img, (union.astype(np.uint8) * 255), kinds


def synth_generate(n: int, size: int, seed: int, out_dir: os.PathLike) -> DatasetManifest:
    """Write ``n`` PNG image/mask pairs plus ``manifest.txt`` under ``out_dir``.

    Output is byte-identical for identical ``(n, size, seed)``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if size < 16:
        raise ValueError(f"size must be >= 16, got {size}")
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    pairs = []
    sums = np.zeros(3)
    for i in range(n):
        img, mask, _ = synth_sample(rng, size)
        name = f"{i:05d}.png"
        write_png(root / "images" / name, img)
        write_png(root / "masks" / name, mask)
        pairs.append((f"images/{name}", f"masks/{name}"))
        sums += img.reshape(-1, 3).mean(axis=0)
    manifest = DatasetManifest(root=root, pairs=pairs, channel_means=tuple(float(s) for s in sums / n))
    manifest.write()
    return manifest


# ---------------------------------------------------------------------------
# I/O


def write_png(path: os.PathLike, array: np.ndarray) -> None:
    """Write an HxW (grayscale) or HxWx3 (RGB) uint8 array as PNG."""
    mode = "L" if array.ndim == 2 else "RGB"
    Image.fromarray(np.ascontiguousarray(array, dtype=np.uint8), mode=mode).save(path, format="PNG")


def _decode(path: os.PathLike, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert(mode))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot decode image {path}: {exc}") from exc


def read_rgb(path: os.PathLike) -> np.ndarray:
    """3 x H x W float64 in [0, 255]."""
    return _decode(path, "RGB").transpose(2, 0, 1).astype(np.float64)


def read_gray(path: os.PathLike) -> np.ndarray:
    """H x W uint8."""
    return _decode(path, "L")


def resize_bilinear(image: np.ndarray, size: int) -> np.ndarray:
    c, h, w = image.shape
    if (h, w) == (size, size):
        return image.copy()
    return np.matmul(np.matmul(interp_matrix(h, size), image), interp_matrix(w, size).T)


def resize_nearest(array: np.ndarray, size: int) -> np.ndarray:
    h, w = array.shape[-2:]
    if (h, w) == (size, size):
        return array.copy()
    rows = np.minimum(((np.arange(size) + 0.5) * h / size).astype(int), h - 1)
    cols = np.minimum(((np.arange(size) + 0.5) * w / size).astype(int), w - 1)
    return array[..., rows[:, None], cols[None, :]]


def binarize_mask(gray: np.ndarray) -> np.ndarray:
    return (gray >= 128).astype(np.float64)


def load_sample(image_path: os.PathLike, mask_path: os.PathLike, target_size: int, id: str = "") -> Sample:
    image = read_rgb(image_path)
    gray = read_gray(mask_path)
    if gray.shape != image.shape[1:]:
        raise OSError(
            f"mask {mask_path} is {gray.shape[1]}x{gray.shape[0]} but image {image_path} "
            f"is {image.shape[2]}x{image.shape[1]}"
        )
    image = resize_bilinear(image, target_size)
    mask = binarize_mask(resize_nearest(gray, target_size))[None]
    return Sample(image=image, mask=mask, id=id or Path(image_path).stem)


def load_manifest_samples(manifest: DatasetManifest, target_size: int) -> list[Sample]:
    return [load_sample(img, msk, target_size) for img, msk in manifest.paths()]


def compute_channel_means(manifest: DatasetManifest) -> tuple:
    sums = np.zeros(3)
    for img, _ in manifest.paths():
        sums += read_rgb(img).reshape(3, -1).mean(axis=1)
    return tuple(float(s) for s in sums / max(1, len(manifest.pairs)))


# ---------------------------------------------------------------------------
# preprocessing and augmentation


def preprocess(sample: Sample, means) -> np.ndarray:
    """Subtract per-channel means; no other scaling."""
    return sample.image - np.asarray(means, dtype=np.float64).reshape(3, 1, 1)


def hflip_array(a: np.ndarray) -> np.ndarray:
    return a[..., ::-1].copy()


def hflip(sample: Sample) -> Sample:
    return Sample(image=hflip_array(sample.image), mask=hflip_array(sample.mask), id=sample.id)
