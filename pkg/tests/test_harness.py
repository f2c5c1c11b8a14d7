import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmark.augment import spec
from wmark.certify import SmoothingConfig, calibrate
from wmark.errors import ConfigError
from wmark.harness import (
    OUT_OF_SCOPE_ROWS,
    PgdL2,
    auroc,
    run_ablations,
    run_fpr_suite,
    run_robustness_suite,
)
from wmark.corpus import CorpusSpec, generate
from wmark.training import RunConfig
from wmark.watermark import embed_batch


def brute_force_auroc(pos, neg):
    """O(n^2) pairwise oracle: wins count 1, ties count 0.5."""
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([0.9, 0.8], [0.1, 0.2]) == 1.0

    def test_all_ties(self):
        assert auroc([0.5, 0.5], [0.5, 0.5, 0.5]) == 0.5

    def test_mixed_case(self):
        # brute force over the 4 pairs: (0.9 beats both) + (0.4 beats 0.1) = 3/4
        assert brute_force_auroc([0.9, 0.4], [0.5, 0.1]) == 0.75
        assert auroc([0.9, 0.4], [0.5, 0.1]) == 0.75

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            auroc([], [0.5])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 40), st.integers(1, 40))
    def test_matches_brute_force_with_ties(self, seed, n_pos, n_neg):
        r = np.random.default_rng(seed)
        # coarse grid forces plenty of exact ties
        pos = r.integers(0, 6, n_pos) / 5.0
        neg = r.integers(0, 6, n_neg) / 5.0
        assert auroc(pos, neg) == brute_force_auroc(list(pos), list(neg))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_invariant_under_monotone_transform(self, seed):
        r = np.random.default_rng(seed)
        pos, neg = r.normal(size=12), r.normal(size=9)
        direct = auroc(pos, neg)
        squashed = auroc(np.tanh(3 * pos) + 1, np.tanh(3 * neg) + 1)
        assert direct == pytest.approx(squashed, abs=1e-12)


class TestRobustnessSuite:
    def test_identity_cell_equals_clean(self, tiny_model):
        params, wm, cfg, corpus = tiny_model
        report = run_robustness_suite(
            params, wm, corpus[:24], [spec("identity")], SmoothingConfig(seed=0)
        )
        assert report.cell("identity").auroc == report.cell("clean").auroc

    def test_row_count(self, tiny_model):
        params, wm, cfg, corpus = tiny_model
        manips = [spec("identity"), spec("rotate90"), PgdL2(radius=0.01, steps=2)]
        report = run_robustness_suite(
            params, wm, corpus[:16], manips, SmoothingConfig(seed=0)
        )
        assert len(report.cells) == len(manips) + 1
        assert report.out_of_scope == OUT_OF_SCOPE_ROWS

    def test_metrics_populated(self, tiny_model):
        params, wm, cfg, corpus = tiny_model
        report = run_robustness_suite(
            params, wm, corpus[:16], [], SmoothingConfig(seed=0), throughput_n=50
        )
        assert 0 < report.mean_psnr <= 99.0
        assert report.throughput_n == 50
        assert report.throughput_ips > 0

    def test_deterministic(self, tiny_model):
        params, wm, cfg, corpus = tiny_model
        manips = [spec("gaussian_noise"), spec("crop_resize")]
        r1 = run_robustness_suite(params, wm, corpus[:16], manips, SmoothingConfig(seed=7))
        r2 = run_robustness_suite(params, wm, corpus[:16], manips, SmoothingConfig(seed=7))
        assert [c.auroc for c in r1.cells] == [c.auroc for c in r2.cells]


class TestFprSuite:
    def test_rows_and_monotonicity(self, tiny_model):
        params, wm, cfg, corpus = tiny_model
        smooth = SmoothingConfig(n_mc=8, seed=2)
        cal = calibrate(params, wm, corpus[:80], alpha=0.3, delta=0.1,
                        gamma=0.001, cfg=smooth)
        fresh = embed_batch(generate(CorpusSpec(n_images=40, height=32, width=32, seed=77)), wm)
        rows = run_fpr_suite(params, wm, cal, fresh, gamma=0.001, cfg=smooth,
                             alphas=(0.25, 0.35), attack_steps=3)
        assert [r.alpha for r in rows] == [0.25, 0.35]
        for r in rows:
            assert 0.0 <= r.fpr_clean <= 1.0
            assert 0.0 <= r.fpr_attacked <= 1.0
            assert r.n == 40

    def test_infeasible_alpha_propagates(self, tiny_model):
        params, wm, cfg, corpus = tiny_model
        smooth = SmoothingConfig(n_mc=8, seed=2)
        cal = calibrate(params, wm, corpus[:80], alpha=0.3, delta=0.1,
                        gamma=0.001, cfg=smooth)
        fresh = embed_batch(corpus[:8], wm)
        with pytest.raises(ConfigError):
            run_fpr_suite(params, wm, cal, fresh, 0.001, smooth, alphas=(0.01,))


class TestAblations:
    def test_structure(self):
        corpus = generate(CorpusSpec(n_images=28, height=16, width=16, seed=5))
        cfg = RunConfig(epochs=2, batch_size=8, height=16, width=16, seed=1)
        result = run_ablations(cfg, corpus[:20], heldout=corpus[20:])
        for name in ("joint", "fixed", "spatial_full", "spatial_none"):
            report = getattr(result, name)
            assert len(report.epochs) == 2
        assert np.isfinite(result.final("joint", "heldout_acc"))

    def test_empty_heldout_rejected(self):
        corpus = generate(CorpusSpec(n_images=8, height=16, width=16, seed=5))
        cfg = RunConfig(epochs=1, batch_size=8, height=16, width=16, seed=1)
        with pytest.raises(ConfigError):
            run_ablations(cfg, corpus, heldout=corpus[:0])
