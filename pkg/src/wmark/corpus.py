"""Deterministic synthetic image corpus and directory ingestion.

Four generator families keep the verifier from keying on a single synthetic
artifact: smooth random Fourier textures, linear/radial color gradients,
rectangle/circle collages, and box-filtered noise. Every image is a pure
function of (spec, index).
"""

import os
from dataclasses import dataclass, field

import numpy as np

from ._rng import NS_CORPUS, rng_stream
from .augment import resize_bilinear
from .errors import ConfigError
from .imaging import load_image

GENERATORS = ("low_freq_fourier", "gradient_field", "shape_collage", "filtered_noise")


@dataclass(frozen=True)
class CorpusSpec:
    n_images: int
    height: int = 64
    width: int = 64
    channels: int = 3
    seed: int = 0
    weights: tuple[float, ...] = field(default_factory=lambda: (1.0, 1.0, 1.0, 1.0))

    def __post_init__(self):
        if self.n_images < 1:
            raise ConfigError("n_images must be >= 1")
        if len(self.weights) != len(GENERATORS):
            raise ConfigError(f"weights must have {len(GENERATORS)} entries")
        if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise ConfigError("weights must be nonnegative with positive sum")


def generate(spec: CorpusSpec) -> np.ndarray:
    """Synthesize ``spec.n_images`` images as an (N, C, H, W) array in [0, 1]."""
    probs = np.asarray(spec.weights, dtype=np.float64)
    probs = probs / probs.sum()
    out = np.empty((spec.n_images, spec.channels, spec.height, spec.width))
    for i in range(spec.n_images):
        rng = rng_stream(spec.seed, NS_CORPUS, i)
        kind = GENERATORS[rng.choice(len(GENERATORS), p=probs)]
        out[i] = _GENERATORS[kind](spec.channels, spec.height, spec.width, rng)
    return out


def ingest_dir(path, height: int, width: int, channels: int = 3) -> np.ndarray:
    """Load every PNG/PPM in ``path`` (byte-lexicographic order) resized to H x W."""
    names = [
        n for n in os.listdir(path) if os.path.splitext(n)[1].lower() in (".png", ".ppm")
    ]
    if not names:
        raise ConfigError(f"no PNG/PPM files in {path}")
    names.sort(key=lambda n: n.encode("utf-8"))
    images = []
    for name in names:
        img = load_image(os.path.join(path, name), channels=channels)
        if img.shape[1] != height or img.shape[2] != width:
            img = np.clip(resize_bilinear(img, height, width), 0.0, 1.0)
        images.append(img)
    return np.asarray(images)


def _minmax(img: np.ndarray) -> np.ndarray:
    lo, hi = img.min(), img.max()
    if hi - lo < 1e-12:
        return np.full_like(img, 0.5)
    return (img - lo) / (hi - lo)


def _low_freq_fourier(c: int, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    fy = np.minimum(np.arange(h), h - np.arange(h))[:, None]
    fx = np.minimum(np.arange(w), w - np.arange(w))[None, :]
    amp = 1.0 / np.sqrt(1.0 + fy**2 + fx**2)  # power ~ 1 / (1 + f^2)
    out = np.empty((c, h, w))
    for ch in range(c):
        z = rng.normal(size=(h, w)) + 1j * rng.normal(size=(h, w))
        out[ch] = np.fft.ifft2(z * amp).real
    return _minmax(out)


def _gradient_field(c: int, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    if rng.random() < 0.5:
        theta = rng.uniform(0, 2 * np.pi)
        t = xx * np.cos(theta) + yy * np.sin(theta)
    else:
        cy, cx = rng.uniform(0, 1, size=2)
        t = np.hypot(yy - cy, xx - cx)
    t = _minmax(t)
    c0 = rng.random(c)
    c1 = rng.random(c)
    return c0[:, None, None] * (1.0 - t)[None] + c1[:, None, None] * t[None]


def _shape_collage(c: int, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    img = np.empty((c, h, w))
    img[:] = rng.random(c)[:, None, None]
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    for _ in range(int(rng.integers(5, 21))):
        color = rng.random(c)
        if rng.random() < 0.5:
            y0, x0 = rng.integers(0, h), rng.integers(0, w)
            hh = int(rng.integers(max(1, h // 8), max(2, h // 2)))
            ww = int(rng.integers(max(1, w // 8), max(2, w // 2)))
            mask = (yy >= y0) & (yy < y0 + hh) & (xx >= x0) & (xx < x0 + ww)
        else:
            cy, cx = rng.integers(0, h), rng.integers(0, w)
            r = int(rng.integers(max(1, h // 10), max(2, h // 3)))
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
        img[:, mask] = color[:, None]
    return img


def _box_matrix(n: int, taps: int) -> np.ndarray:
    m = np.zeros((n, n))
    half = taps // 2
    for i in range(n):
        for t in range(taps):
            j = i - half + t
            if j < 0:
                j = -j - 1
            elif j >= n:
                j = 2 * n - 1 - j
            m[i, j] += 1.0 / taps
    return m


def _filtered_noise(c: int, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    taps = int(rng.choice([3, 5, 7]))
    noise = rng.random((c, h, w))
    bv = _box_matrix(h, taps)
    bh = _box_matrix(w, taps)
    return _minmax(bv[None] @ noise @ bh.T[None])


_GENERATORS = {
    "low_freq_fourier": _low_freq_fourier,
    "gradient_field": _gradient_field,
    "shape_collage": _shape_collage,
    "filtered_noise": _filtered_noise,
}
