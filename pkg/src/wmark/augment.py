"""Image modification modules: training-time views and test-time manipulations.

Seven kinds are supported: rotate90, crop_resize, gaussian_blur,
gaussian_noise, jitter, jpeg_approx and identity. Every application is pure
and deterministic given the spec, the image and an explicit rng. The linear
kinds expose their exact adjoints through ``apply_with_vjp`` so the watermark
gradient can flow through augmented views; jpeg_approx is treated as constant
for that path (quantization has zero derivative almost everywhere).
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DimensionError
from .spectral import dct8_forward, dct8_inverse

KINDS = (
    "rotate90",
    "crop_resize",
    "gaussian_blur",
    "gaussian_noise",
    "jitter",
    "jpeg_approx",
    "identity",
)

_DEFAULTS: dict[str, dict[str, float]] = {
    "rotate90": {},
    "crop_resize": {"fraction": 0.7},
    "gaussian_blur": {"taps_v": 7, "taps_h": 9, "sigma": 4.0},
    "gaussian_noise": {"sigma": 0.05},
    "jitter": {"brightness": 0.6},
    "jpeg_approx": {"quality": 50},
    "identity": {},
}


@dataclass(frozen=True)
class AugmentationSpec:
    kind: str
    params: tuple[tuple[str, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown augmentation kind {self.kind!r}")
        known = _DEFAULTS[self.kind]
        for key, _ in self.params:
            if key not in known:
                raise ConfigError(f"unknown parameter {key!r} for {self.kind}")

    def param(self, key: str) -> float:
        for k, v in self.params:
            if k == key:
                return v
        return _DEFAULTS[self.kind][key]


def spec(kind: str, **params: float) -> AugmentationSpec:
    return AugmentationSpec(kind, tuple(sorted(params.items())))


def default_pool() -> tuple[AugmentationSpec, ...]:
    """The six manipulations used for training views and robustness cells."""
    return (
        spec("rotate90"),
        spec("crop_resize", fraction=0.7),
        spec("gaussian_blur", taps_v=7, taps_h=9, sigma=4.0),
        spec("gaussian_noise", sigma=0.05),
        spec("jitter", brightness=0.6),
        spec("jpeg_approx", quality=50),
    )


def sample_two_views(pool, rng: np.random.Generator):
    """Two independent uniform draws (with replacement) from the pool."""
    pool = tuple(pool)
    if not pool:
        raise ConfigError("augmentation pool is empty")
    i, j = rng.integers(0, len(pool), size=2)
    return pool[i], pool[j]


def apply(spec_: AugmentationSpec, img: np.ndarray, rng: np.random.Generator | None = None):
    """Apply one modification. Output always satisfies the [0, 1] invariant."""
    out, _ = apply_with_vjp(spec_, img, rng)
    return out


def apply_with_vjp(spec_: AugmentationSpec, img: np.ndarray, rng: np.random.Generator | None = None):
    """Apply one modification and return ``(out, vjp)``.

    ``vjp`` maps d(loss)/d(out) back to d(loss)/d(img), or is ``None`` for
    kinds without a usable derivative (jpeg_approx).
    """
    x = np.asarray(img, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionError(f"augmentation expects (C, H, W), got {x.shape}")
    kind = spec_.kind
    if kind == "identity":
        return x, lambda g: g
    if kind == "rotate90":
        out = np.ascontiguousarray(np.rot90(x, 1, axes=(1, 2)))
        return out, lambda g: np.ascontiguousarray(np.rot90(g, -1, axes=(1, 2)))
    if kind == "crop_resize":
        return _crop_resize(x, spec_.param("fraction"), _need_rng(rng, kind))
    if kind == "gaussian_blur":
        return _blur(
            x, int(spec_.param("taps_v")), int(spec_.param("taps_h")), spec_.param("sigma")
        )
    if kind == "gaussian_noise":
        noisy = x + _need_rng(rng, kind).normal(0.0, spec_.param("sigma"), x.shape)
        mask = (noisy >= 0.0) & (noisy <= 1.0)
        return np.clip(noisy, 0.0, 1.0), lambda g: np.where(mask, g, 0.0)
    if kind == "jitter":
        b = spec_.param("brightness")
        f = _need_rng(rng, kind).uniform(1.0 - b, 1.0 + b)
        scaled = f * x
        mask = scaled <= 1.0  # lower bound never clips for f, x >= 0
        return np.clip(scaled, 0.0, 1.0), lambda g: np.where(mask, f * g, 0.0)
    if kind == "jpeg_approx":
        return _jpeg_approx(x, int(spec_.param("quality"))), None
    raise ConfigError(f"unknown augmentation kind {kind!r}")


def _need_rng(rng, kind) -> np.random.Generator:
    if rng is None:
        raise ConfigError(f"{kind} needs an rng")
    return rng


# --- bilinear resize / crop ------------------------------------------------

def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a (C, H, W) array with half-pixel-center alignment."""
    x = np.asarray(img, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionError(f"resize expects (C, H, W), got {x.shape}")
    av = _resize_weights(height, x.shape[1])
    ah = _resize_weights(width, x.shape[2])
    return av[None] @ x @ ah.T[None]


def _resize_weights(n_out: int, n_in: int) -> np.ndarray:
    """(n_out, n_in) bilinear interpolation matrix, half-pixel-center aligned."""
    w = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    lo = np.floor(src).astype(int)
    t = src - lo
    for i in range(n_out):
        a = min(max(lo[i], 0), n_in - 1)
        b = min(max(lo[i] + 1, 0), n_in - 1)
        w[i, a] += 1.0 - t[i]
        w[i, b] += t[i]
    return w


def _crop_resize(x: np.ndarray, fraction: float, rng: np.random.Generator):
    c, h, w = x.shape
    ch, cw = int(np.floor(fraction * h)), int(np.floor(fraction * w))
    if ch < 1 or cw < 1:
        raise DimensionError(f"crop window empty for {h}x{w} at fraction {fraction}")
    oy = int(rng.integers(0, h - ch + 1))
    ox = int(rng.integers(0, w - cw + 1))
    av = np.zeros((h, h))
    av[:, oy : oy + ch] = _resize_weights(h, ch)
    ah = np.zeros((w, w))
    ah[:, ox : ox + cw] = _resize_weights(w, cw)
    out = av[None] @ x @ ah.T[None]
    return out, lambda g: av.T[None] @ np.asarray(g, dtype=np.float64) @ ah[None]


# --- gaussian blur ----------------------------------------------------------

def _gauss_taps(n: int, sigma: float) -> np.ndarray:
    t = np.arange(n) - (n - 1) / 2.0
    k = np.exp(-(t**2) / (2.0 * sigma**2))
    return k / k.sum()


@lru_cache(maxsize=64)
def _blur_matrix(n: int, taps: int, sigma: float) -> np.ndarray:
    """1D blur with reflect padding as an (n, n) matrix.

    Edge-repeating reflection: with a symmetric kernel the operator is
    doubly stochastic, so constant images and the image mean are preserved
    exactly.
    """
    if n < taps:
        raise DimensionError(f"axis of {n} is smaller than the {taps}-tap kernel")
    k = _gauss_taps(taps, sigma)
    half = taps // 2
    m = np.zeros((n, n))
    for i in range(n):
        for t in range(taps):
            j = i - half + t
            if j < 0:
                j = -j - 1
            elif j >= n:
                j = 2 * n - 1 - j
            m[i, j] += k[t]
    return m


def _blur(x: np.ndarray, taps_v: int, taps_h: int, sigma: float):
    c, h, w = x.shape
    bv = _blur_matrix(h, taps_v, sigma)
    bh = _blur_matrix(w, taps_h, sigma)
    out = bv[None] @ x @ bh.T[None]
    return out, lambda g: bv.T[None] @ np.asarray(g, dtype=np.float64) @ bh[None]


# --- jpeg approximation -----------------------------------------------------

# Annex-K reference quantization tables.
_Q_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)
_Q_CHROMA = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.float64,
)


def jpeg_tables(quality: int) -> tuple[np.ndarray, np.ndarray]:
    """Quality-scaled quantization tables (scale = 200 - 2q percent for q >= 50)."""
    if not 1 <= quality <= 100:
        raise ConfigError(f"jpeg quality must be in [1, 100], got {quality}")
    scale = 200.0 - 2.0 * quality if quality >= 50 else 5000.0 / quality
    def scaled(t):
        return np.clip(np.floor((t * scale + 50.0) / 100.0), 1.0, 255.0)
    return scaled(_Q_LUMA), scaled(_Q_CHROMA)


def _jpeg_approx(x: np.ndarray, quality: int) -> np.ndarray:
    c, h, w = x.shape
    if h < 8 or w < 8:
        raise DimensionError(f"jpeg approximation needs H, W >= 8, got {h}x{w}")
    qy, qc = jpeg_tables(quality)
    if c == 3:
        planes = _rgb_to_ycbcr(x)
        tables = (qy, qc, qc)
    elif c == 1:
        planes = x.copy()
        tables = (qy,)
    else:
        raise DimensionError(f"jpeg approximation expects 1 or 3 channels, got {c}")

    out = np.empty_like(planes)
    for i, q in enumerate(tables):
        out[i] = _jpeg_plane(planes[i], q)
    if c == 3:
        out = _ycbcr_to_rgb(out)
    return np.clip(out, 0.0, 1.0)


def _jpeg_plane(plane: np.ndarray, q: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    hp, wp = -h % 8, -w % 8
    p = np.pad(plane, ((0, hp), (0, wp)), mode="edge") * 255.0 - 128.0
    hh, ww = p.shape
    blocks = p.reshape(hh // 8, 8, ww // 8, 8).transpose(0, 2, 1, 3)
    coef = dct8_forward(blocks)
    coef = np.round(coef / q) * q
    rec = dct8_inverse(coef).transpose(0, 2, 1, 3).reshape(hh, ww)
    return (rec[:h, :w] + 128.0) / 255.0


def _rgb_to_ycbcr(x: np.ndarray) -> np.ndarray:
    r, g, b = x
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 0.5
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 0.5
    return np.stack([y, cb, cr])


def _ycbcr_to_rgb(x: np.ndarray) -> np.ndarray:
    y, cb, cr = x[0], x[1] - 0.5, x[2] - 0.5
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b])
