"""Learned dual-domain image watermarking with certified detection.

Train an image-sized watermark pair jointly with a small convolutional
verifier, embed watermarks on the fly, and detect them with a
distribution-free false-positive guarantee that survives bounded-L2
perturbations.
"""

from .artifact import ModelArtifact, artifact_model, load_model, make_artifact, save_model
from .augment import AugmentationSpec, apply, default_pool, sample_two_views, spec
from .certify import (
    CalibrationResult,
    SmoothingConfig,
    calibrate,
    decide,
    load_calibration,
    normal_quantile,
    pgd_l2_attack,
    save_calibration,
    smooth_score,
    smooth_scores,
)
from .corpus import CorpusSpec, generate, ingest_dir
from .errors import (
    ConfigError,
    CorruptArtifactError,
    DimensionError,
    FormatError,
    InfeasibleAlphaError,
    NumericError,
    StateError,
    WmarkError,
)
from .harness import EvalReport, PgdL2, auroc, run_ablations, run_fpr_suite, run_robustness_suite
from .imaging import clip01, load_image, load_png, load_ppm, psnr, save_png, save_ppm
from .spectral import dct8_forward, dct8_inverse, fft2, ifft2
from .training import RunConfig, TrainReport, compute_loss_raw, sgd_step, signsgd_step, train_joint
from .verifier import VerifierParams, backward, bce_loss, forward, init_params
from .watermark import WatermarkPair, embed, embed_batch, embed_gradient, init_watermark

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
