"""Canonical image representation, file I/O and quality metrics.

An image is a ``float64`` ndarray of shape ``(C, H, W)`` with every intensity
in ``[0, 1]``, channel-major then row-major. All functions are pure: inputs
are never mutated.
"""

import os

import numpy as np
from PIL import Image as _PILImage
from PIL import UnidentifiedImageError

from .errors import DimensionError, FormatError, NumericError

PSNR_CAP_DB = 99.0
_MSE_FLOOR = 1e-10


def as_image(arr, channels: int | None = None) -> np.ndarray:
    """Validate ``arr`` as an image and return it as a float64 (C, H, W) array.

    Raises ``DimensionError`` on bad shape, ``NumericError`` on non-finite
    values or values outside [0, 1].
    """
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 3:
        raise DimensionError(f"image must have shape (C, H, W), got {a.shape}")
    c, h, w = a.shape
    if c < 1 or h < 1 or w < 1:
        raise DimensionError(f"image dimensions must be >= 1, got {a.shape}")
    if channels is not None and c != channels:
        raise DimensionError(f"expected {channels} channels, got {c}")
    if not np.all(np.isfinite(a)):
        raise NumericError("image contains non-finite values")
    if a.min() < 0.0 or a.max() > 1.0:
        raise NumericError("image intensities must lie in [0, 1]")
    return np.ascontiguousarray(a)


def clip01(arr) -> np.ndarray:
    """Clamp every element to [0, 1]. Rejects NaN/inf input."""
    a = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NumericError("clip01 requires finite input")
    return np.clip(a, 0.0, 1.0)


def quantize_u8(img: np.ndarray) -> np.ndarray:
    """Map [0,1] intensities to bytes with round-half-up: floor(x*255 + 0.5)."""
    return np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB against peak 1.0, capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < _MSE_FLOOR:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def load_png(path, channels: int | None = 3) -> np.ndarray:
    """Read an 8- or 16-bit RGB/grayscale PNG, scaling intensities by the
    bit-depth maximum. Grayscale is replicated when 3 channels are requested.
    """
    try:
        with _PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "RGB"):
                data = np.asarray(im, dtype=np.float64) / 255.0
            elif mode in ("I;16", "I;16B", "I;16L"):
                data = np.asarray(im, dtype=np.float64) / 65535.0
            elif mode == "I":
                # Pillow promotes some 16-bit grayscale PNGs to 32-bit ints.
                data = np.asarray(im, dtype=np.float64) / 65535.0
            else:
                raise FormatError(f"unsupported PNG color type {mode!r} in {path}")
    except UnidentifiedImageError as e:
        raise FormatError(f"not a readable image file: {path}") from e
    return _to_chw(data, channels, path)


def save_png(img: np.ndarray, path) -> None:
    """Write an image as an 8-bit PNG (RGB for C=3, grayscale for C=1)."""
    img = as_image(img)
    bytes_ = quantize_u8(img)
    c = bytes_.shape[0]
    if c == 1:
        pil = _PILImage.fromarray(bytes_[0], mode="L")
    elif c == 3:
        pil = _PILImage.fromarray(np.transpose(bytes_, (1, 2, 0)), mode="RGB")
    else:
        raise DimensionError(f"PNG write supports 1 or 3 channels, got {c}")
    pil.save(path, format="PNG")


def load_ppm(path, channels: int | None = 3) -> np.ndarray:
    """Read a binary PPM (P6). Dependency-free fallback format for tests."""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P6"):
        raise FormatError(f"not a binary PPM (P6) file: {path}")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"truncated PPM header: {path}")
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval <= 0 or maxval > 65535:
        raise FormatError(f"bad PPM maxval {maxval}: {path}")
    nbytes = w * h * 3 * (2 if maxval > 255 else 1)
    body = raw[pos : pos + nbytes]
    if len(body) != nbytes:
        raise FormatError(f"truncated PPM pixel data: {path}")
    if maxval > 255:
        data = np.frombuffer(body, dtype=">u2").astype(np.float64)
    else:
        data = np.frombuffer(body, dtype=np.uint8).astype(np.float64)
    data = (data / maxval).reshape(h, w, 3)
    return _to_chw(data, channels, path)


def save_ppm(img: np.ndarray, path) -> None:
    """Write an image as an 8-bit binary PPM (P6)."""
    img = as_image(img, channels=3)
    bytes_ = quantize_u8(img)
    h, w = img.shape[1], img.shape[2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.transpose(bytes_, (1, 2, 0)).tobytes())


def load_image(path, channels: int | None = 3) -> np.ndarray:
    """Read a PNG or PPM file based on its extension."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ppm":
        return load_ppm(path, channels)
    return load_png(path, channels)


def _to_chw(data: np.ndarray, channels: int | None, path) -> np.ndarray:
    if data.ndim == 2:
        chw = data[None, :, :]
    elif data.ndim == 3 and data.shape[2] in (1, 3):
        chw = np.transpose(data, (2, 0, 1))
    else:
        raise FormatError(f"unsupported pixel layout {data.shape} in {path}")
    if channels == 3 and chw.shape[0] == 1:
        chw = np.repeat(chw, 3, axis=0)
    elif channels is not None and chw.shape[0] != channels:
        raise FormatError(
            f"requested {channels} channels but {path} has {chw.shape[0]}"
        )
    # Defend against out-of-range samples from odd encoders.
    return np.ascontiguousarray(np.clip(chw, 0.0, 1.0))
