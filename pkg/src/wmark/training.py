"""Joint training of the watermark pair and the verifier.

Each iteration draws a balanced minibatch (every sampled source image appears
unwatermarked with label 0 and watermarked with label 1), samples two
augmentation views, and forms the combined loss

    total = BCE(clean batch) + BCE(view_a(batch)) + BCE(view_b(batch))

with every BCE term mean-reduced. The watermark is updated first by SignSGD
from its own gradient evaluation, then the verifier by momentum SGD from a
fresh evaluation against the updated watermark; the two updates never share a
gradient evaluation. All augmentation draws for an iteration are replayed
identically in both evaluations.
"""

import time
from dataclasses import dataclass, field, fields

import numpy as np

from ._rng import NS_TRAIN_EVAL, NS_TRAIN_SHUFFLE, NS_TRAIN_VIEWS, rng_stream
from .augment import AugmentationSpec, apply_with_vjp, default_pool, sample_two_views
from .errors import ConfigError
from .verifier import VerifierParams, backward, bce_loss, forward
from .watermark import WatermarkPair, embed_batch, embed_gradient_batch, init_watermark


@dataclass
class RunConfig:
    """Hyperparameters of the training loop and default pipeline settings.

    ``batch_size`` counts combined samples per step, so each minibatch holds
    ``batch_size // 2`` source images in both classes.
    """

    epochs: int = 30
    batch_size: int = 16
    mu: float = 0.01          # verifier step size
    momentum: float = 0.9
    nu: float = 2e-3          # watermark step size
    c1: float = 0.1           # frequency-domain visibility
    c2: float = 0.01          # spatial visibility
    seed: int = 0
    channels: int = 3
    height: int = 64
    width: int = 64
    n_views: int = 2
    update_watermark: bool = True
    pool: tuple[AugmentationSpec, ...] = field(default_factory=default_pool)

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            raise ConfigError("batch_size must be even and >= 2 (balanced batches)")
        if self.mu <= 0 or self.nu <= 0:
            raise ConfigError("step sizes mu and nu must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.c1 < 0 or self.c2 < 0:
            raise ConfigError("c1 and c2 must be >= 0")
        if self.n_views < 0:
            raise ConfigError("n_views must be >= 0")
        if self.n_views > 0 and not self.pool:
            raise ConfigError("augmentation pool may not be empty when views are used")

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


@dataclass
class EpochStats:
    epoch: int
    loss_clean: float
    loss_aug: float
    loss_total: float
    train_acc: float
    heldout_acc: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)

    def column(self, name: str) -> list[float]:
        return [getattr(e, name) for e in self.epochs]


@dataclass
class LossBundle:
    loss_clean: float
    loss_aug: float
    loss_total: float
    grad_params: VerifierParams
    grad_v: np.ndarray
    grad_u: np.ndarray
    scores_clean: np.ndarray  # over [originals, watermarked]


def compute_loss_raw(
    params: VerifierParams,
    wm: WatermarkPair,
    batch: np.ndarray,
    views: tuple[AugmentationSpec, ...],
    rng: np.random.Generator,
) -> LossBundle:
    """Combined loss and its gradients w.r.t. the verifier and the watermark.

    ``batch`` holds unwatermarked source images; the balanced set is built
    here. ``rng`` is consumed sequentially by the stochastic views, so a
    generator in a known state replays the same augmentations.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[0] == 0:
        raise ConfigError(f"batch must be a non-empty (N, C, H, W) array, got {batch.shape}")
    n_src = batch.shape[0]
    marked = embed_batch(batch, wm)
    combined = np.concatenate([batch, marked])
    labels = np.concatenate([np.zeros(n_src), np.ones(n_src)])

    scores, trace = forward(params, combined)
    loss_clean, dscores = bce_loss(scores, labels)
    grad_params, dx = backward(params, trace, dscores)
    # d(loss)/d(embedded pixels), accumulated across the clean term and every
    # view with a usable derivative; the unwatermarked half never touches w.
    upstream_marked = dx[n_src:].astype(np.float64)

    loss_aug = 0.0
    for view in views:
        aug_images = []
        vjps = []
        for img in combined:
            out, vjp = apply_with_vjp(view, img, rng)
            aug_images.append(out)
            vjps.append(vjp)
        aug_scores, aug_trace = forward(params, np.asarray(aug_images))
        term, dterm = bce_loss(aug_scores, labels)
        loss_aug += term
        g, dxa = backward(params, aug_trace, dterm)
        grad_params = _param_add(grad_params, g)
        for i in range(n_src):
            vjp = vjps[n_src + i]
            if vjp is not None:
                upstream_marked[i] += vjp(dxa[n_src + i].astype(np.float64))

    grad_v, grad_u = embed_gradient_batch(batch, wm, upstream_marked)
    return LossBundle(
        loss_clean=loss_clean,
        loss_aug=loss_aug,
        loss_total=loss_clean + loss_aug,
        grad_params=grad_params,
        grad_v=grad_v,
        grad_u=grad_u,
        scores_clean=scores,
    )


def sgd_step(
    params: VerifierParams,
    grad_params: VerifierParams,
    mu: float,
    velocity: VerifierParams | None,
    momentum: float = 0.9,
) -> tuple[VerifierParams, VerifierParams]:
    """Momentum SGD: velocity = momentum * velocity + grad; params -= mu * velocity."""
    if velocity is None:
        velocity = _param_zeros_like(params)
    velocity = VerifierParams(
        **{
            n: momentum * getattr(velocity, n) + getattr(grad_params, n)
            for n in _param_names()
        }
    )
    new = VerifierParams(
        **{
            n: (getattr(params, n) - mu * getattr(velocity, n)).astype(params.dtype)
            for n in _param_names()
        }
    )
    return new, velocity


def signsgd_step(
    wm: WatermarkPair, grad_v: np.ndarray, grad_u: np.ndarray, nu: float
) -> WatermarkPair:
    """Fixed-magnitude coordinate update from gradient signs; sign(0) = 0."""
    if grad_v.shape != wm.v.shape or grad_u.shape != wm.u.shape:
        raise ConfigError("gradient shapes do not match the watermark")
    return WatermarkPair(
        v=wm.v - nu * np.sign(grad_v),
        u=wm.u - nu * np.sign(grad_u),
        c1=wm.c1,
        c2=wm.c2,
    )


def train_joint(
    config: RunConfig,
    corpus: np.ndarray,
    heldout: np.ndarray | None = None,
    heldout_view: AugmentationSpec | None = None,
    step_hook=None,
    init: tuple[VerifierParams, WatermarkPair] | None = None,
) -> tuple[VerifierParams, WatermarkPair, TrainReport]:
    """Alternating optimization over shuffled balanced minibatches.

    Within every iteration the watermark moves first (SignSGD against the
    current verifier), then the verifier (SGD against the moved watermark).
    Fully reproducible from ``config.seed``. ``step_hook(kind, epoch, it)``
    observes each optimizer step; ``heldout_view`` manipulates the held-out
    pairs before scoring them.
    """
    corpus = np.asarray(corpus, dtype=np.float64)
    n_src_per_batch = config.batch_size // 2
    if corpus.ndim != 4 or corpus.shape[0] < n_src_per_batch:
        raise ConfigError(
            f"corpus must hold at least {n_src_per_batch} images, got "
            f"{corpus.shape[0] if corpus.ndim == 4 else 'non-batch input'}"
        )
    if corpus.shape[1:] != config.image_shape:
        raise ConfigError(
            f"corpus image shape {corpus.shape[1:]} != configured {config.image_shape}"
        )

    if init is not None:
        params, wm = init
    else:
        from .verifier import init_params

        params = init_params(config.seed)
        wm = init_watermark(config.image_shape, config.c1, config.c2, config.seed)
    velocity = None
    report = TrainReport()

    n = corpus.shape[0]
    n_batches = n // n_src_per_batch
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng_stream(config.seed, NS_TRAIN_SHUFFLE, epoch).permutation(n)
        sum_clean = sum_aug = 0.0
        n_correct = 0
        n_scored = 0
        for it in range(n_batches):
            batch = corpus[order[it * n_src_per_batch : (it + 1) * n_src_per_batch]]
            view_rng = rng_stream(config.seed, NS_TRAIN_VIEWS, epoch, it, 0)
            views = _draw_views(config, view_rng)

            def evaluate(p, w):
                aug_rng = rng_stream(config.seed, NS_TRAIN_VIEWS, epoch, it, 1)
                return compute_loss_raw(p, w, batch, views, aug_rng)

            if config.update_watermark:
                bundle = evaluate(params, wm)
                wm = signsgd_step(wm, bundle.grad_v, bundle.grad_u, config.nu)
                if step_hook is not None:
                    step_hook("watermark_step", epoch, it)

            bundle = evaluate(params, wm)
            params, velocity = sgd_step(
                params, bundle.grad_params, config.mu, velocity, config.momentum
            )
            if step_hook is not None:
                step_hook("verifier_step", epoch, it)

            sum_clean += bundle.loss_clean
            sum_aug += bundle.loss_aug
            preds = bundle.scores_clean >= 0.5
            truth = np.concatenate(
                [np.zeros(len(batch), bool), np.ones(len(batch), bool)]
            )
            n_correct += int((preds == truth).sum())
            n_scored += len(preds)

        loss_clean = sum_clean / max(n_batches, 1)
        loss_aug = sum_aug / max(n_batches, 1)
        heldout_acc = (
            evaluate_accuracy(params, wm, heldout, heldout_view, config.seed, epoch)
            if heldout is not None and len(heldout)
            else float("nan")
        )
        report.epochs.append(
            EpochStats(
                epoch=epoch,
                loss_clean=loss_clean,
                loss_aug=loss_aug,
                loss_total=loss_clean + loss_aug,
                train_acc=n_correct / max(n_scored, 1),
                heldout_acc=heldout_acc,
                seconds=time.perf_counter() - t0,
            )
        )
    return params, wm, report


def evaluate_accuracy(
    params: VerifierParams,
    wm: WatermarkPair,
    originals: np.ndarray,
    view: AugmentationSpec | None = None,
    seed: int = 0,
    epoch: int = 0,
) -> float:
    """Balanced accuracy at threshold 0.5 over originals and their embeddings."""
    originals = np.asarray(originals, dtype=np.float64)
    marked = embed_batch(originals, wm)
    combined = np.concatenate([originals, marked])
    if view is not None:
        rng = rng_stream(seed, NS_TRAIN_EVAL, epoch)
        combined = np.asarray([apply_with_vjp(view, img, rng)[0] for img in combined])
    scores, _ = forward(params, combined)
    preds = scores >= 0.5
    truth = np.concatenate(
        [np.zeros(len(originals), bool), np.ones(len(originals), bool)]
    )
    return float((preds == truth).mean())


def _draw_views(config: RunConfig, rng: np.random.Generator) -> tuple[AugmentationSpec, ...]:
    if config.n_views == 0:
        return ()
    if config.n_views == 2:
        return sample_two_views(config.pool, rng)
    pool = tuple(config.pool)
    return tuple(pool[i] for i in rng.integers(0, len(pool), size=config.n_views))


def _param_names() -> list[str]:
    return [f.name for f in fields(VerifierParams)]


def _param_add(a: VerifierParams, b: VerifierParams) -> VerifierParams:
    return VerifierParams(**{n: getattr(a, n) + getattr(b, n) for n in _param_names()})


def _param_zeros_like(p: VerifierParams) -> VerifierParams:
    return VerifierParams(**{n: np.zeros_like(getattr(p, n)) for n in _param_names()})
