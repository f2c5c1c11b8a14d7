"""Dual-domain watermark embedding.

The watermark is a pair of image-shaped real arrays: ``v`` is added to the
image's Fourier spectrum (real part) with visibility ``c1``, ``u`` is added in
pixel space with visibility ``c2``, and the result is clamped back to [0, 1]:

    embed(x) = clip01( ifft2( fft2(x) + c1 * v ) + c2 * u )

Because the transforms are linear, the whole operation is an image-independent
pixel-space shift followed by the clamp, which is how it is computed here; one
inverse transform serves an entire batch.
"""

from dataclasses import dataclass

import numpy as np

from ._rng import NS_WATERMARK_INIT, rng_stream
from .errors import DimensionError, NumericError
from .spectral import fft2, ifft2


@dataclass
class WatermarkPair:
    """Frequency watermark ``v``, spatial watermark ``u``, visibilities ``c1``, ``c2``.

    ``u`` and ``v`` start elementwise IID uniform on [0, 1] and are
    unconstrained afterwards: training may move them anywhere. Only embedded
    images are clamped, never the watermark itself.
    """

    v: np.ndarray
    u: np.ndarray
    c1: float
    c2: float

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.v.ndim != 3 or self.u.shape != self.v.shape:
            raise DimensionError(
                f"u and v must share an image shape, got {self.u.shape} vs {self.v.shape}"
            )
        if not (np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.u))):
            raise NumericError("watermark arrays must be finite")
        # c = 0 is a degenerate setting used by tests and the spatial-term
        # ablation; negative visibilities are never meaningful.
        if not (np.isfinite(self.c1) and np.isfinite(self.c2)):
            raise NumericError("c1 and c2 must be finite")
        if self.c1 < 0 or self.c2 < 0:
            raise NumericError(f"c1 and c2 must be >= 0, got {self.c1}, {self.c2}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.v.shape


def init_watermark(shape: tuple[int, int, int], c1: float, c2: float, seed: int) -> WatermarkPair:
    """Fresh watermark pair with IID U[0, 1] entries, deterministic per seed."""
    rng = rng_stream(seed, NS_WATERMARK_INIT)
    v = rng.random(shape, dtype=np.float64)
    u = rng.random(shape, dtype=np.float64)
    return WatermarkPair(v=v, u=u, c1=c1, c2=c2)


def pixel_shift(wm: WatermarkPair) -> np.ndarray:
    """The image-independent pixel-space shift c1 * Re(ifft2(v)) + c2 * u."""
    return wm.c1 * ifft2(wm.v) + wm.c2 * wm.u


def embed(x: np.ndarray, wm: WatermarkPair) -> np.ndarray:
    """Embed the watermark into one image. Deterministic and pure."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != wm.shape:
        raise DimensionError(f"image shape {x.shape} != watermark shape {wm.shape}")
    return np.clip(x + pixel_shift(wm), 0.0, 1.0)


def embed_batch(xs, wm: WatermarkPair) -> np.ndarray:
    """Embed into every image of a batch; equals per-image ``embed`` bitwise.

    Accepts a list of (C, H, W) arrays or one (N, C, H, W) array and returns
    an (N, C, H, W) array.
    """
    xs = _stack_batch(xs, wm.shape)
    if xs.shape[0] == 0:
        return xs
    return np.clip(xs + pixel_shift(wm)[None], 0.0, 1.0)


def embed_preclip_batch(xs, wm: WatermarkPair) -> np.ndarray:
    """Embedded batch before the clamp; used for gradient masks."""
    xs = _stack_batch(xs, wm.shape)
    return xs + pixel_shift(wm)[None]


def embed_gradient(x: np.ndarray, wm: WatermarkPair, upstream: np.ndarray):
    """Gradients of a scalar loss w.r.t. (v, u) given d(loss)/d(embedded pixels).

    The clamp contributes a straight-zero subgradient: positions whose
    pre-clip value left [0, 1] pass nothing through. Under the orthonormal
    convention the adjoint of taking the real part of the inverse transform
    is the real part of the forward transform.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != wm.shape or upstream.shape != wm.shape:
        raise DimensionError(
            f"shapes must match watermark {wm.shape}: image {x.shape}, upstream {upstream.shape}"
        )
    grad_v, grad_u = embed_gradient_batch(x[None], wm, upstream[None])
    return grad_v, grad_u


def embed_gradient_batch(xs, wm: WatermarkPair, upstreams) -> tuple[np.ndarray, np.ndarray]:
    """Summed (grad_v, grad_u) over a batch of images and upstream gradients."""
    xs = _stack_batch(xs, wm.shape)
    upstreams = _stack_batch(upstreams, wm.shape, kind="upstream")
    if xs.shape != upstreams.shape:
        raise DimensionError(f"batch shapes differ: {xs.shape} vs {upstreams.shape}")
    pre = xs + pixel_shift(wm)[None]
    mask = (pre >= 0.0) & (pre <= 1.0)
    masked_sum = np.where(mask, upstreams, 0.0).sum(axis=0)
    grad_u = wm.c2 * masked_sum
    grad_v = wm.c1 * fft2(masked_sum).real
    return grad_v, grad_u


def _stack_batch(xs, shape, kind: str = "image") -> np.ndarray:
    if isinstance(xs, np.ndarray) and xs.ndim == 4:
        arr = np.asarray(xs, dtype=np.float64)
        if arr.shape[1:] != shape:
            raise DimensionError(f"{kind} batch shape {arr.shape[1:]} != watermark shape {shape}")
        return arr
    items = list(xs)
    if not items:
        return np.empty((0,) + shape, dtype=np.float64)
    for i, item in enumerate(items):
        a = np.asarray(item)
        if a.shape != shape:
            raise DimensionError(
                f"{kind} {i} has shape {a.shape}, expected watermark shape {shape}"
            )
    return np.asarray(items, dtype=np.float64)
