"""Convolutional scorer mapping an image to the probability it is watermarked.

Fixed architecture: three 3x3 stride-2 zero-pad-1 convolutions (16, 32, 64
channels) each followed by ReLU, global average pooling over the remaining
spatial grid, one dense unit, and a logistic sigmoid. Global pooling makes the
net accept any H, W >= 8 with a 3-channel input. Roughly 24k parameters.

``forward`` caches per-layer pre-activations in a ``ForwardTrace``;
``backward`` consumes the trace exactly once and returns reverse-mode
gradients for every parameter and every input pixel. Arithmetic runs in the
dtype of the parameters (float32 from ``init_params``; cast with
``VerifierParams.as_dtype`` for float64 checks).
"""

from dataclasses import dataclass, fields

import numpy as np

from ._rng import NS_VERIFIER_INIT, rng_stream
from .errors import DimensionError, StateError

_LAYERS = (
    ("conv1", 3, 16),
    ("conv2", 16, 32),
    ("conv3", 32, 64),
)
_KSIZE = 3
_STRIDE = 2
_PAD = 1
# Sigmoid output is kept strictly inside (0, 1) even when the logit saturates.
_SCORE_GUARD = 1e-12


@dataclass
class VerifierParams:
    conv1_w: np.ndarray  # (16, 3, 3, 3)
    conv1_b: np.ndarray  # (16,)
    conv2_w: np.ndarray  # (32, 16, 3, 3)
    conv2_b: np.ndarray  # (32,)
    conv3_w: np.ndarray  # (64, 32, 3, 3)
    conv3_b: np.ndarray  # (64,)
    dense_w: np.ndarray  # (64,)
    dense_b: np.ndarray  # (1,)

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        """Parameter arrays in their canonical serialization order."""
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    @property
    def dtype(self):
        return self.conv1_w.dtype

    def as_dtype(self, dtype) -> "VerifierParams":
        return VerifierParams(**{n: a.astype(dtype) for n, a in self.arrays()})

    def copy(self) -> "VerifierParams":
        return VerifierParams(**{n: a.copy() for n, a in self.arrays()})

    def n_params(self) -> int:
        return sum(a.size for _, a in self.arrays())


def expected_shapes() -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for name, cin, cout in _LAYERS:
        shapes[f"{name}_w"] = (cout, cin, _KSIZE, _KSIZE)
        shapes[f"{name}_b"] = (cout,)
    shapes["dense_w"] = (64,)
    shapes["dense_b"] = (1,)
    return shapes


def init_params(seed: int) -> VerifierParams:
    """Uniform [-s, s] weights with s = sqrt(6 / fan_in); zero biases."""
    out = {}
    for i, (name, cin, cout) in enumerate(_LAYERS):
        rng = rng_stream(seed, NS_VERIFIER_INIT, i)
        s = np.sqrt(6.0 / (cin * _KSIZE * _KSIZE))
        out[f"{name}_w"] = rng.uniform(-s, s, (cout, cin, _KSIZE, _KSIZE)).astype(np.float32)
        out[f"{name}_b"] = np.zeros(cout, dtype=np.float32)
    rng = rng_stream(seed, NS_VERIFIER_INIT, len(_LAYERS))
    s = np.sqrt(6.0 / 64.0)
    out["dense_w"] = rng.uniform(-s, s, 64).astype(np.float32)
    out["dense_b"] = np.zeros(1, dtype=np.float32)
    return VerifierParams(**out)


@dataclass
class ForwardTrace:
    """Cached activations of one forward pass, valid for exactly one backward."""

    x0: np.ndarray  # input batch, channels-last, in compute dtype
    z1: np.ndarray  # conv1 pre-activation (channels-last)
    z2: np.ndarray
    z3: np.ndarray
    pooled: np.ndarray  # (N, 64)
    scores: np.ndarray  # (N,) float64
    params_id: int
    consumed: bool = False


def forward(params: VerifierParams, batch) -> tuple[np.ndarray, ForwardTrace]:
    """Score a batch of 3xHxW images.

    Returns float64 scores strictly inside (0, 1) and the trace for
    ``backward``. The scores of one image never depend on the rest of the
    batch. Activations are kept channels-last internally so the convolution
    window gathers stay cache-friendly.
    """
    x0 = _stack(batch, params.dtype).transpose(0, 2, 3, 1).copy()
    return _forward_nhwc(params, x0)


def _forward_nhwc(params: VerifierParams, x0: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    # fast entry for callers that already hold contiguous (N, H, W, C) data
    z1 = _conv(x0, params.conv1_w, params.conv1_b)
    z2 = _conv(np.maximum(z1, 0), params.conv2_w, params.conv2_b)
    z3 = _conv(np.maximum(z2, 0), params.conv3_w, params.conv3_b)
    pooled = np.maximum(z3, 0).mean(axis=(1, 2))
    logits = pooled.astype(np.float64) @ params.dense_w.astype(np.float64) + float(
        params.dense_b[0]
    )
    scores = np.clip(_sigmoid(logits), _SCORE_GUARD, 1.0 - _SCORE_GUARD)
    trace = ForwardTrace(
        x0=x0, z1=z1, z2=z2, z3=z3, pooled=pooled, scores=scores, params_id=id(params)
    )
    return scores, trace


def scores_only(params: VerifierParams, batch) -> np.ndarray:
    scores, _ = forward(params, batch)
    return scores


def backward(
    params: VerifierParams, trace: ForwardTrace, dloss_dscore
) -> tuple[VerifierParams, np.ndarray]:
    """Exact gradients of a scalar loss given its derivative per score.

    Returns (parameter gradients in a VerifierParams-shaped container, input
    gradients shaped like the forward batch). ReLU passes zero subgradient at
    exactly zero. A trace may be consumed once and only with the parameters
    that produced it.
    """
    if trace.consumed:
        raise StateError("trace already consumed by a previous backward")
    if trace.params_id != id(params):
        raise StateError("trace does not match these parameters")
    trace.consumed = True

    ds = np.asarray(dloss_dscore, dtype=np.float64)
    if ds.shape != trace.scores.shape:
        raise DimensionError(f"dloss_dscore shape {ds.shape} != scores {trace.scores.shape}")
    dt = params.dtype

    s = trace.scores
    dlogit = (ds * s * (1.0 - s)).astype(dt)  # sigmoid'(z) = s (1 - s)

    grad_dense_w = trace.pooled.T.astype(dt) @ dlogit
    grad_dense_b = np.array([dlogit.sum()], dtype=dt)
    dpooled = np.outer(dlogit, params.dense_w)

    n3, h3, w3, c3 = trace.z3.shape
    da3 = np.broadcast_to(dpooled[:, None, None, :], (n3, h3, w3, c3)) / dt.type(h3 * w3)
    dz3 = np.where(trace.z3 > 0, da3, 0).astype(dt)

    a2 = np.maximum(trace.z2, 0)
    gw3, gb3, da2 = _conv_backward(a2, params.conv3_w, dz3)
    dz2 = np.where(trace.z2 > 0, da2, 0)

    a1 = np.maximum(trace.z1, 0)
    gw2, gb2, da1 = _conv_backward(a1, params.conv2_w, dz2)
    dz1 = np.where(trace.z1 > 0, da1, 0)

    gw1, gb1, dx = _conv_backward(trace.x0, params.conv1_w, dz1)

    grads = VerifierParams(
        conv1_w=gw1, conv1_b=gb1,
        conv2_w=gw2, conv2_b=gb2,
        conv3_w=gw3, conv3_b=gb3,
        dense_w=grad_dense_w, dense_b=grad_dense_b,
    )
    return grads, dx.transpose(0, 3, 1, 2).copy()


def bce_loss(scores, labels) -> tuple[float, np.ndarray]:
    """Mean binary cross entropy and its derivative per score.

    Scores are clamped to [1e-7, 1 - 1e-7] before the logs.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise DimensionError(f"scores shape {s.shape} != labels shape {y.shape}")
    if s.size == 0:
        raise DimensionError("bce_loss requires at least one score")
    sc = np.clip(s, 1e-7, 1.0 - 1e-7)
    n = s.size
    loss = -float(np.mean(y * np.log(sc) + (1.0 - y) * np.log1p(-sc)))
    dscores = -(y / sc - (1.0 - y) / (1.0 - sc)) / n
    return loss, dscores


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _stack(batch, dtype) -> np.ndarray:
    if isinstance(batch, np.ndarray) and batch.ndim == 4:
        x = batch
    else:
        items = list(batch)
        if not items:
            raise DimensionError("forward requires a non-empty batch")
        shape0 = np.asarray(items[0]).shape
        for i, item in enumerate(items):
            if np.asarray(item).shape != shape0:
                raise DimensionError(f"batch image {i} shape differs from image 0")
        x = np.asarray(items)
    if x.ndim != 4:
        raise DimensionError(f"batch must stack to (N, 3, H, W), got {x.shape}")
    n, c, h, w = x.shape
    if c != 3:
        raise DimensionError(f"verifier expects 3 input channels, got {c}")
    if h < 8 or w < 8:
        raise DimensionError(f"verifier requires H, W >= 8, got {h}x{w}")
    return np.ascontiguousarray(x, dtype=dtype)


def _out_hw(h: int, w: int) -> tuple[int, int]:
    return (h + 2 * _PAD - _KSIZE) // _STRIDE + 1, (w + 2 * _PAD - _KSIZE) // _STRIDE + 1


def _im2col(x: np.ndarray) -> tuple[np.ndarray, int, int]:
    # x is channels-last (N, H, W, C); window features are laid out
    # (ki, kj, C) with C innermost, matching _wmat
    n, h, w, c = x.shape
    ho, wo = _out_hw(h, w)
    xp = np.zeros((n, h + 2 * _PAD, w + 2 * _PAD, c), dtype=x.dtype)
    xp[:, _PAD : _PAD + h, _PAD : _PAD + w, :] = x
    sn, sh, sw, sc = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, ho, wo, _KSIZE, _KSIZE, c),
        strides=(sn, sh * _STRIDE, sw * _STRIDE, sh, sw, sc),
        writeable=False,
    )
    return win.reshape(n * ho * wo, _KSIZE * _KSIZE * c), ho, wo


def _wmat(w: np.ndarray) -> np.ndarray:
    # (Cout, Cin, k, k) -> (k*k*Cin, Cout)
    return w.transpose(2, 3, 1, 0).reshape(-1, w.shape[0])


def _conv(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    cols, ho, wo = _im2col(x)
    out = cols @ _wmat(w)
    out += b
    return out.reshape(n, ho, wo, w.shape[0])


def _conv_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray):
    n, h, w_in, c = x.shape
    cout = w.shape[0]
    cols, ho, wo = _im2col(x)
    dout2d = dout.reshape(n * ho * wo, cout)
    gw = (dout2d.T @ cols).reshape(cout, _KSIZE, _KSIZE, c).transpose(0, 3, 1, 2)
    gb = dout2d.sum(axis=0)
    dcols = dout2d @ _wmat(w).T
    dwin = dcols.reshape(n, ho, wo, _KSIZE, _KSIZE, c)
    dxp = np.zeros((n, h + 2 * _PAD, w_in + 2 * _PAD, c), dtype=x.dtype)
    for i in range(_KSIZE):
        for j in range(_KSIZE):
            dxp[:, i : i + ho * _STRIDE : _STRIDE, j : j + wo * _STRIDE : _STRIDE, :] += dwin[
                :, :, :, i, j, :
            ]
    dx = dxp[:, _PAD : _PAD + h, _PAD : _PAD + w_in, :]
    return gw, gb, dx
