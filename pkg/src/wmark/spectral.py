"""2D Fourier transform pair used for embedding, plus the 8x8 block DCT.

Both transforms use the orthonormal convention (a 1/sqrt(N) factor in each
direction), so Parseval holds exactly and the pixel-space magnitude of a
spectral perturbation equals its spectral norm. No frequency-centering shift
is applied anywhere.
"""

import numpy as np

from .errors import DimensionError


def fft2(img: np.ndarray) -> np.ndarray:
    """Per-channel orthonormal 2D DFT of a (C, H, W) array -> complex (C, H, W)."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3:
        raise DimensionError(f"fft2 expects (C, H, W), got {a.shape}")
    return np.fft.fft2(a, axes=(-2, -1), norm="ortho")


def ifft2(spec: np.ndarray) -> np.ndarray:
    """Per-channel orthonormal inverse 2D DFT; returns the real part."""
    s = np.asarray(spec)
    if s.ndim != 3:
        raise DimensionError(f"ifft2 expects (C, H, W), got {s.shape}")
    return np.fft.ifft2(s, axes=(-2, -1), norm="ortho").real


def ifft2_imag_max(spec: np.ndarray) -> float:
    """Max-abs imaginary residue discarded by ``ifft2`` (diagnostic)."""
    s = np.asarray(spec)
    return float(np.abs(np.fft.ifft2(s, axes=(-2, -1), norm="ortho").imag).max())


def _dct8_matrix() -> np.ndarray:
    # Orthonormal DCT-II basis: D[k, n] = s_k * cos((2n+1) k pi / 16).
    k = np.arange(8)[:, None]
    n = np.arange(8)[None, :]
    d = np.cos((2 * n + 1) * k * np.pi / 16.0)
    d[0, :] *= np.sqrt(1.0 / 8.0)
    d[1:, :] *= np.sqrt(2.0 / 8.0)
    return d


_DCT8 = _dct8_matrix()


def dct8_forward(blocks: np.ndarray) -> np.ndarray:
    """Orthonormal 2D DCT-II of one 8x8 block or a stack (..., 8, 8)."""
    b = np.asarray(blocks, dtype=np.float64)
    if b.shape[-2:] != (8, 8):
        raise DimensionError(f"dct8 operates on (..., 8, 8) blocks, got {b.shape}")
    return _DCT8 @ b @ _DCT8.T


def dct8_inverse(coeffs: np.ndarray) -> np.ndarray:
    """Inverse (DCT-III) of ``dct8_forward``."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape[-2:] != (8, 8):
        raise DimensionError(f"dct8 operates on (..., 8, 8) blocks, got {c.shape}")
    return _DCT8.T @ c @ _DCT8
