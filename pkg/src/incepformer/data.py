"""Synthetic segmentation corpus and augmentation.

Samples are (image [C,H,W] float32 in [0,1], mask [H,W] int labels).
Each foreground class gets a distinct intensity band plus ellipse or
rectangle geometry; per-class pixel fractions are forced into [0.02, 0.6]
by bounded resampling. Generation is deterministic per (seed, index).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import IntegrityError, Tensor

SAMPLE_MAGIC = b"TCSM"

AUGMENT_KINDS = ("flip_h", "flip_v", "rot90", "contrast", "noise", "blur")


@dataclass
class Sample:
    sample_id: str
    image: np.ndarray  # [C, H, W] float32 in [0, 1]
    mask: np.ndarray   # [H, W] int64 labels in [0, num_classes)


def _draw_shape(rng, size: int) -> np.ndarray:
    """Boolean inside-mask of one random ellipse or axis-aligned rectangle."""
    yy, xx = np.mgrid[0:size, 0:size]
    cy, cx = rng.uniform(0.2 * size, 0.8 * size, size=2)
    if rng.random() < 0.5:
        ry, rx = rng.uniform(0.13 * size, 0.30 * size, size=2)
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    hy, hx = rng.uniform(0.11 * size, 0.26 * size, size=2)
    return (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)


def class_intensity(cls: int, num_classes: int) -> float:
    """Distinct foreground band per class, spread over [0.35, 0.9]."""
    if num_classes == 2:
        return 0.9
    return 0.35 + 0.55 * (cls - 1) / (num_classes - 2)


def make_sample(rng, size: int, num_classes: int, sample_id: str,
                channels: int = 3, max_tries: int = 200) -> Sample:
    for _ in range(max_tries):
        mask = np.zeros((size, size), dtype=np.int64)
        for cls in range(1, num_classes):
            mask[_draw_shape(rng, size)] = cls
        fractions = [(mask == cls).mean() for cls in range(1, num_classes)]
        if all(0.02 <= f <= 0.6 for f in fractions):
            break
    else:
        raise RuntimeError(f"could not satisfy class fractions for {sample_id}")
    image = rng.normal(0.12, 0.03, size=(channels, size, size))
    for cls in range(1, num_classes):
        inside = mask == cls
        base = class_intensity(cls, num_classes)
        per_channel = base + rng.normal(0.0, 0.02, size=channels)
        for c in range(channels):
            image[c, inside] = per_channel[c]
    image += rng.normal(0.0, 0.03, size=image.shape)
    return Sample(sample_id, np.clip(image, 0.0, 1.0).astype(np.float32), mask)


def synth_corpus(n: int, size: int, num_classes: int, seed: int,
                 channels: int = 3) -> list[Sample]:
    streams = np.random.SeedSequence(seed).spawn(n)
    return [
        make_sample(np.random.Generator(np.random.PCG64(streams[i])), size,
                    num_classes, f"sample_{i:04d}", channels=channels)
        for i in range(n)
    ]


# -- augmentation ---------------------------------------------------------------


def flip_h(sample: Sample) -> Sample:
    return Sample(sample.sample_id, np.ascontiguousarray(sample.image[:, :, ::-1]),
                  np.ascontiguousarray(sample.mask[:, ::-1]))


def flip_v(sample: Sample) -> Sample:
    return Sample(sample.sample_id, np.ascontiguousarray(sample.image[:, ::-1, :]),
                  np.ascontiguousarray(sample.mask[::-1, :]))


def rot90(sample: Sample, k: int = 1) -> Sample:
    return Sample(sample.sample_id,
                  np.ascontiguousarray(np.rot90(sample.image, k, axes=(1, 2))),
                  np.ascontiguousarray(np.rot90(sample.mask, k)))


def contrast(sample: Sample, alpha: float) -> Sample:
    img = np.clip((sample.image - 0.5) * alpha + 0.5, 0.0, 1.0).astype(np.float32)
    return Sample(sample.sample_id, img, sample.mask)


def gauss_noise(sample: Sample, rng, sigma: float) -> Sample:
    img = sample.image + rng.normal(0.0, sigma, size=sample.image.shape)
    return Sample(sample.sample_id, np.clip(img, 0.0, 1.0).astype(np.float32), sample.mask)


def _gauss_kernel(sigma: float, radius: int = 2) -> np.ndarray:
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def gauss_blur(sample: Sample, sigma: float) -> Sample:
    """Separable gaussian with reflect padding (labels untouched)."""
    k = _gauss_kernel(sigma)
    radius = len(k) // 2
    img = sample.image.astype(np.float64)
    for axis in (1, 2):
        padded = np.pad(img, [(0, 0)] * axis + [(radius, radius)] + [(0, 0)] * (2 - axis),
                        mode="reflect")
        win = np.lib.stride_tricks.sliding_window_view(padded, len(k), axis=axis)
        img = np.tensordot(win, k, axes=([3], [0]))
    return Sample(sample.sample_id, np.clip(img, 0.0, 1.0).astype(np.float32), sample.mask)


def augment(sample: Sample, rng) -> Sample:
    """Apply 1-4 distinct ops drawn from flips, 90-degree rotation, linear
    contrast, gaussian noise, and gaussian blur; geometry ops transform the
    mask identically."""
    count = int(rng.integers(1, 5))
    picks = rng.choice(len(AUGMENT_KINDS), size=count, replace=False)
    for idx in picks:
        kind = AUGMENT_KINDS[idx]
        if kind == "flip_h":
            sample = flip_h(sample)
        elif kind == "flip_v":
            sample = flip_v(sample)
        elif kind == "rot90":
            sample = rot90(sample, int(rng.integers(1, 4)))
        elif kind == "contrast":
            sample = contrast(sample, float(rng.uniform(0.7, 1.3)))
        elif kind == "noise":
            sample = gauss_noise(sample, rng, float(rng.uniform(0.01, 0.05)))
        elif kind == "blur":
            sample = gauss_blur(sample, float(rng.uniform(0.5, 1.2)))
    return sample


# -- TCSM sample cache -----------------------------------------------------------


def save_sample(path, sample: Sample) -> None:
    """TCSM layout: magic + image tensor + mask tensor; the sample id is the
    file stem. Label values are tiny integers, so the f32 round trip is exact."""
    with open(path, "wb") as f:
        f.write(SAMPLE_MAGIC)
        Tensor(sample.image).write_to(f)
        Tensor(sample.mask.astype(np.float32)).write_to(f)


def load_sample(path) -> Sample:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != SAMPLE_MAGIC:
            raise IntegrityError(f"bad sample magic {magic!r}, expected {SAMPLE_MAGIC!r}")
        image = Tensor.read_from(f).array
        mask = np.rint(Tensor.read_from(f).array).astype(np.int64)
    return Sample(path.stem, image, mask)


def write_corpus(dirpath, samples: list[Sample]) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    for s in samples:
        save_sample(d / f"{s.sample_id}.tcsm", s)


def read_corpus(dirpath) -> list[Sample]:
    d = Path(dirpath)
    paths = sorted(d.glob("*.tcsm"))
    if not paths:
        raise FileNotFoundError(f"no .tcsm samples under {d}")
    return [load_sample(p) for p in paths]
