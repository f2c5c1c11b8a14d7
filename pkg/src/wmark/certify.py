"""Certified detection: score smoothing, conformal calibration, decisions.

The detector declares an image watermarked when its smoothed score reaches a
threshold. The smoothed score is the normal quantile of the Gaussian-noise
average of the base verifier's output, which makes it (1/sigma)-Lipschitz in
the input, so a threshold calibrated on watermarked data keeps its
false-positive guarantee under any perturbation of bounded L2 norm.

Calibration picks the k-th smallest smoothed score of the calibration set,
k = floor((alpha - correction) * n) with the finite-sample DKW correction
sqrt(ln(2/delta) / (2n)), then shifts DOWN by gamma/sigma. The downward shift
is the conservative direction: a gamma-bounded attack can lower a smoothed
score by at most gamma/sigma, so the miss rate stays below alpha with
probability 1 - delta. ``offset_mode="literal"`` flips the shift upward for
comparison.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from ._rng import NS_SMOOTHING, rng_stream
from .errors import ConfigError, DimensionError, FormatError, InfeasibleAlphaError
from .verifier import VerifierParams, _forward_nhwc, backward, forward
from .watermark import WatermarkPair, embed_batch

WATERMARKED = "watermarked"
UNWATERMARKED = "unwatermarked"


@dataclass(frozen=True)
class SmoothingConfig:
    sigma: float = 0.05
    n_mc: int = 256
    clamp_eps: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.n_mc < 1:
            raise ConfigError("n_mc must be >= 1")
        if not 0 < self.clamp_eps < 0.5:
            raise ConfigError("clamp_eps must lie in (0, 0.5)")


# --- standard normal quantile ------------------------------------------------

_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF via a rational approximation plus one
    Halley refinement; absolute error well below 1e-8 on (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ConfigError(f"quantile argument must lie in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        )
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    # One Halley step against the exact CDF.
    err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


# --- smoothing ----------------------------------------------------------------

def smooth_score(
    params: VerifierParams, x: np.ndarray, cfg: SmoothingConfig, rng: np.random.Generator
) -> float:
    """Normal quantile of the Monte-Carlo Gaussian-average verifier output.

    The noisy copies are NOT clamped to [0, 1]; the Lipschitz property needs
    exact Gaussian convolution, and the verifier accepts out-of-range inputs.
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise DimensionError(f"smooth_score expects one (C, H, W) image, got {x.shape}")
    noisy = _noisy_copies(x, cfg, rng)
    mean = _mc_means(params, noisy, cfg.n_mc)[0]
    return normal_quantile(_clamp_mean(mean, cfg.clamp_eps))


def smooth_scores(
    params: VerifierParams,
    images: np.ndarray,
    cfg: SmoothingConfig,
    stream: int = 0,
) -> np.ndarray:
    """Smoothed scores for a batch with per-image derived noise streams.

    Image ``i`` uses the stream ``(cfg.seed, stream, i)``, so the result does
    not depend on chunking and a single image scored alone gets the same
    value.
    """
    images = np.asarray(images)
    if images.ndim != 4:
        raise DimensionError(f"smooth_scores expects (N, C, H, W), got {images.shape}")
    n_img = images.shape[0]
    out = np.empty(n_img)
    per = max(1, 4_000_000 // (images[0].size * cfg.n_mc))
    sigma32 = np.float32(cfg.sigma)
    n, c, h, w = images.shape
    for start in range(0, n_img, per):
        chunk = images[start : start + per]
        # drawn channels-last so the batch feeds the verifier's fast entry
        # without a large transposition; element order matches smooth_score
        noisy = np.empty((len(chunk) * cfg.n_mc, h, w, c), dtype=np.float32)
        for j, img in enumerate(chunk):
            view = noisy[j * cfg.n_mc : (j + 1) * cfg.n_mc]
            stream_rng(cfg, stream, start + j).standard_normal(
                out=view, dtype=np.float32
            )
            view *= sigma32
            view += img.transpose(1, 2, 0).astype(np.float32)[None]
        means = _mc_means(params, noisy, cfg.n_mc)
        for j, m in enumerate(means):
            out[start + j] = normal_quantile(_clamp_mean(m, cfg.clamp_eps))
    return out


def stream_rng(cfg: SmoothingConfig, stream: int, index: int) -> np.random.Generator:
    return rng_stream(cfg.seed, NS_SMOOTHING, stream, index)


def smoothing_mc_slack(m_hat: float, cfg: SmoothingConfig, z: float = 3.0) -> float:
    """Half-width of a z-sigma binomial band around a Monte-Carlo mean, mapped
    through the quantile transform. Used to budget MC error in Lipschitz checks."""
    se = math.sqrt(max(m_hat * (1.0 - m_hat), cfg.clamp_eps) / cfg.n_mc)
    lo = normal_quantile(_clamp_mean(m_hat - z * se, cfg.clamp_eps))
    hi = normal_quantile(_clamp_mean(m_hat + z * se, cfg.clamp_eps))
    mid = normal_quantile(_clamp_mean(m_hat, cfg.clamp_eps))
    return max(hi - mid, mid - lo)


def smooth_mean(
    params: VerifierParams, x: np.ndarray, cfg: SmoothingConfig, rng: np.random.Generator
) -> float:
    """The raw (unclamped) Monte-Carlo mean behind ``smooth_score``."""
    noisy = _noisy_copies(np.asarray(x), cfg, rng)
    return float(_mc_means(params, noisy, cfg.n_mc)[0])


def _noisy_copies(x: np.ndarray, cfg: SmoothingConfig, rng: np.random.Generator) -> np.ndarray:
    """Channels-last stack of n_mc Gaussian-perturbed copies of one image."""
    c, h, w = x.shape
    z = rng.standard_normal((cfg.n_mc, h, w, c), dtype=np.float32)
    z *= np.float32(cfg.sigma)
    z += x.transpose(1, 2, 0).astype(np.float32)[None]
    return z


def _mc_means(params: VerifierParams, noisy_nhwc: np.ndarray, n_mc: int) -> np.ndarray:
    scores, _ = _forward_nhwc(params, noisy_nhwc)
    return scores.reshape(-1, n_mc).mean(axis=1)


def _clamp_mean(m: float, eps: float) -> float:
    return float(min(max(m, eps), 1.0 - eps))


# --- calibration ----------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationResult:
    tau: float
    alpha: float
    delta: float
    gamma: float
    sigma: float
    n: int
    correction: float
    scores: np.ndarray  # sorted ascending, smoothed scores of the embedded set
    offset_mode: str = "conservative"
    n_mc: int = 256
    clamp_eps: float = 1e-6
    seed: int = 0


def dkw_correction(n: int, delta: float) -> float:
    """Finite-sample uniform CDF error bound sqrt(ln(2/delta) / (2n))."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


def calibrate(
    params: VerifierParams,
    wm: WatermarkPair,
    calib_set: np.ndarray,
    alpha: float,
    delta: float,
    gamma: float,
    cfg: SmoothingConfig,
    offset_mode: str = "conservative",
) -> CalibrationResult:
    """Threshold selection from unwatermarked originals of the calibration set.

    Embeds every original, computes smoothed scores, and takes the corrected
    empirical quantile shifted by gamma/sigma (downward for the conservative
    mode the guarantee needs; upward under ``offset_mode="literal"``).
    """
    calib_set = np.asarray(calib_set, dtype=np.float64)
    if calib_set.ndim != 4 or calib_set.shape[0] < 2:
        raise ConfigError("calibration set must hold at least 2 images")
    marked = embed_batch(calib_set, wm)
    scores = np.sort(smooth_scores(params, marked, cfg, stream=0))
    base = CalibrationResult(
        tau=float("nan"),
        alpha=alpha,
        delta=delta,
        gamma=gamma,
        sigma=cfg.sigma,
        n=int(calib_set.shape[0]),
        correction=dkw_correction(calib_set.shape[0], delta),
        scores=scores,
        offset_mode=offset_mode,
        n_mc=cfg.n_mc,
        clamp_eps=cfg.clamp_eps,
        seed=cfg.seed,
    )
    return derive_threshold(base, alpha)


def derive_threshold(cal: CalibrationResult, alpha: float) -> CalibrationResult:
    """Re-derive the threshold for a new alpha from stored calibration scores."""
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if alpha <= cal.correction:
        raise InfeasibleAlphaError(alpha, cal.correction, cal.n, cal.delta)
    k = math.floor((alpha - cal.correction) * cal.n)
    if k < 1:
        raise InfeasibleAlphaError(alpha, cal.correction, cal.n, cal.delta)
    tau_quantile = float(cal.scores[k - 1])
    shift = cal.gamma / cal.sigma
    if cal.offset_mode == "conservative":
        tau = tau_quantile - shift
    elif cal.offset_mode == "literal":
        tau = tau_quantile + shift
    else:
        raise ConfigError(f"unknown offset_mode {cal.offset_mode!r}")
    return replace(cal, tau=tau, alpha=alpha)


def decide(
    params: VerifierParams,
    cal: CalibrationResult,
    x: np.ndarray,
    cfg: SmoothingConfig,
    rng: np.random.Generator,
) -> tuple[str, float]:
    """Classify one image: watermarked iff its smoothed score reaches tau."""
    if cfg.sigma != cal.sigma:
        raise ConfigError(
            f"smoothing sigma {cfg.sigma} does not match calibration sigma {cal.sigma}"
        )
    score = smooth_score(params, x, cfg, rng)
    return (WATERMARKED if score >= cal.tau else UNWATERMARKED), score


# --- bounded-L2 attack -----------------------------------------------------------

def pgd_l2_attack(
    params: VerifierParams,
    x: np.ndarray,
    radius: float,
    steps: int = 20,
    step_size: float | None = None,
) -> np.ndarray:
    """Projected gradient descent pushing the verifier score down within an
    L2 ball of ``radius`` around ``x``. Output stays in [0, 1] and satisfies
    ||out - x|| <= radius exactly."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionError(f"attack expects one (C, H, W) image, got {x.shape}")
    return pgd_l2_attack_batch(params, x[None], radius, steps, step_size)[0]


def pgd_l2_attack_batch(
    params: VerifierParams,
    xs: np.ndarray,
    radius: float,
    steps: int = 20,
    step_size: float | None = None,
) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if radius <= 0:
        return xs.copy()
    if step_size is None:
        step_size = radius / 4.0
    n = xs.shape[0]
    delta = np.zeros_like(xs)
    for _ in range(steps):
        scores, trace = forward(params, xs + delta)
        _, dx = backward(params, trace, np.ones(n))
        dx = dx.astype(np.float64)
        norms = np.sqrt((dx**2).sum(axis=(1, 2, 3), keepdims=True))
        delta -= step_size * dx / np.maximum(norms, 1e-12)
        delta = _project_l2(delta, radius)
    out = np.clip(xs + delta, 0.0, 1.0)
    # Clipping can only shrink per-pixel deviations, but re-project anyway so
    # the radius bound holds exactly.
    return xs + _project_l2(out - xs, radius)


def _project_l2(delta: np.ndarray, radius: float) -> np.ndarray:
    norms = np.sqrt((delta**2).sum(axis=(1, 2, 3), keepdims=True))
    scale = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
    return delta * scale


# --- calibration persistence ------------------------------------------------------

_CAL_HEADER = "wmark-calibration v1"


def save_calibration(cal: CalibrationResult, path) -> None:
    lines = [
        _CAL_HEADER,
        f"tau = {cal.tau!r}",
        f"alpha = {cal.alpha!r}",
        f"delta = {cal.delta!r}",
        f"gamma = {cal.gamma!r}",
        f"sigma = {cal.sigma!r}",
        f"n = {cal.n}",
        f"correction = {cal.correction!r}",
        f"offset_mode = {cal.offset_mode}",
        f"n_mc = {cal.n_mc}",
        f"clamp_eps = {cal.clamp_eps!r}",
        f"seed = {cal.seed}",
        "scores = " + " ".join(repr(float(s)) for s in cal.scores),
        "",
    ]
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines))


def load_calibration(path) -> CalibrationResult:
    with open(path, "r", encoding="ascii") as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0] != _CAL_HEADER:
        raise FormatError(f"not a calibration file: {path}")
    kv = {}
    for ln in lines[1:]:
        if not ln.strip():
            continue
        key, _, value = ln.partition(" = ")
        kv[key.strip()] = value
    try:
        return CalibrationResult(
            tau=float(kv["tau"]),
            alpha=float(kv["alpha"]),
            delta=float(kv["delta"]),
            gamma=float(kv["gamma"]),
            sigma=float(kv["sigma"]),
            n=int(kv["n"]),
            correction=float(kv["correction"]),
            scores=np.array([float(s) for s in kv["scores"].split()]),
            offset_mode=kv["offset_mode"],
            n_mc=int(kv["n_mc"]),
            clamp_eps=float(kv["clamp_eps"]),
            seed=int(kv["seed"]),
        )
    except (KeyError, ValueError) as e:
        raise FormatError(f"malformed calibration file {path}: {e}") from e
