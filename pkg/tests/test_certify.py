import math

import mpmath
import numpy as np
import pytest

from conftest import constant_score_params, mid_range_images
from wmark._rng import rng_stream
from wmark.certify import (
    CalibrationResult,
    SmoothingConfig,
    UNWATERMARKED,
    WATERMARKED,
    calibrate,
    decide,
    derive_threshold,
    dkw_correction,
    load_calibration,
    normal_quantile,
    pgd_l2_attack,
    save_calibration,
    smooth_score,
    smooth_scores,
)
from wmark.errors import ConfigError, FormatError, InfeasibleAlphaError
from wmark.verifier import init_params, scores_only
from wmark.watermark import init_watermark


def mp_quantile(p: float) -> float:
    """High-precision reference: Phi^-1(p) = sqrt(2) erfinv(2p - 1)."""
    with mpmath.workdps(50):
        return float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(p) - 1))


class TestNormalQuantile:
    def test_median_is_zero(self):
        assert normal_quantile(0.5) == 0.0

    def test_against_high_precision_grid(self):
        ps = [1e-9, 1e-7, 1e-4, 0.01, 0.02425, 0.2, 0.5, 0.7, 0.9, 0.97575,
              0.999, 1 - 1e-6, 1 - 1e-9]
        for p in ps:
            assert abs(normal_quantile(p) - mp_quantile(p)) <= 1e-8, p

    def test_known_point_seven(self):
        assert normal_quantile(0.7) == pytest.approx(0.5244005127080409, abs=1e-9)

    def test_clamped_upper_value(self):
        assert normal_quantile(1 - 1e-6) == pytest.approx(4.753424308822899, abs=1e-8)

    def test_symmetry(self):
        for p in (0.01, 0.3, 0.45):
            assert normal_quantile(p) == pytest.approx(-normal_quantile(1 - p), abs=1e-12)

    def test_rejects_endpoints(self):
        with pytest.raises(ConfigError):
            normal_quantile(0.0)
        with pytest.raises(ConfigError):
            normal_quantile(1.0)


class TestSmoothScore:
    def test_constant_half_maps_to_zero(self, zero_params):
        cfg = SmoothingConfig(n_mc=16, seed=0)
        x = mid_range_images(1)[0]
        assert smooth_score(zero_params, x, cfg, rng_stream(0, 1)) == 0.0

    def test_constant_seventy_percent(self):
        p = constant_score_params(0.7)
        cfg = SmoothingConfig(n_mc=16, seed=0)
        x = mid_range_images(1)[0]
        score = smooth_score(p, x, cfg, rng_stream(0, 1))
        assert score == pytest.approx(normal_quantile(0.7), abs=1e-6)

    def test_confident_verifier_hits_clamp(self):
        p = constant_score_params(0.5)
        p.dense_b[:] = 50.0  # scores saturate at ~1
        cfg = SmoothingConfig(n_mc=8, clamp_eps=1e-6, seed=0)
        x = mid_range_images(1)[0]
        score = smooth_score(p, x, cfg, rng_stream(0, 1))
        assert score == pytest.approx(normal_quantile(1 - 1e-6), abs=1e-9)

    def test_deterministic_given_stream(self):
        p = init_params(0)
        cfg = SmoothingConfig(n_mc=32, seed=3)
        x = mid_range_images(1)[0]
        a = smooth_score(p, x, cfg, rng_stream(3, 9))
        b = smooth_score(p, x, cfg, rng_stream(3, 9))
        assert a == b

    def test_batch_matches_per_image(self):
        p = init_params(0)
        cfg = SmoothingConfig(n_mc=8, seed=5)
        imgs = mid_range_images(5)
        batch = smooth_scores(p, imgs, cfg, stream=2)
        from wmark.certify import stream_rng

        singles = [
            smooth_score(p, imgs[i], cfg, stream_rng(cfg, 2, i)) for i in range(5)
        ]
        assert np.array_equal(batch, np.array(singles))

    def test_mc_error_shrinks_with_n(self):
        # binomial expectation: quadrupling n_mc halves the std of the mean
        p = init_params(1)
        x = mid_range_images(1, shape=(3, 8, 8))[0]
        from wmark.certify import smooth_mean

        def stds(n_mc):
            cfg = SmoothingConfig(n_mc=n_mc, seed=0)
            vals = [
                smooth_mean(p, x, cfg, rng_stream(0, 50, n_mc, rep)) for rep in range(48)
            ]
            return np.std(vals)

        s1, s4 = stds(16), stds(64)
        assert 1.4 < s1 / s4 < 2.9  # ideal ratio 2


class TestDkwAndCalibrate:
    def test_correction_formula(self):
        # closed form: sqrt(ln(2 / 0.05) / (2 * 2000))
        expected = math.sqrt(math.log(40.0) / 4000.0)
        assert dkw_correction(2000, 0.05) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(0.03037, abs=5e-6)

    def test_min_alpha_message_names_correction(self):
        # n = 500, delta = 0.05 -> minimum feasible alpha ~ 0.0607
        with pytest.raises(InfeasibleAlphaError, match="0.0607"):
            _raise_for(alpha=0.001, n=500)

    def test_k_zero_also_infeasible(self):
        corr = dkw_correction(500, 0.05)
        with pytest.raises(InfeasibleAlphaError):
            _raise_for(alpha=corr + 1e-4, n=500)  # k = floor(0.05) = 0

    def test_order_statistic_selection(self):
        # n = 2000, alpha = 0.05, delta = 0.05 -> k = floor(0.01963 * 2000) = 39
        cal = _cal_with_scores(np.arange(2000.0), alpha=0.05)
        k = math.floor((0.05 - cal.correction) * 2000)
        assert k == 39
        assert cal.tau == pytest.approx(38.0 - 0.001 / 0.05)  # 39th smallest is 38.0

    def test_gamma_sigma_offset_subtracted(self):
        # gamma = 0.001, sigma = 0.05 -> tau = tau' - 0.02
        cal = _cal_with_scores(np.arange(2000.0), alpha=0.05)
        assert cal.tau == pytest.approx(38.0 - 0.02, abs=1e-12)

    def test_literal_mode_adds_offset(self):
        cal = _cal_with_scores(np.arange(2000.0), alpha=0.05, offset_mode="literal")
        assert cal.tau == pytest.approx(38.0 + 0.02, abs=1e-12)

    def test_tau_nondecreasing_in_alpha(self):
        scores = np.sort(np.random.default_rng(0).normal(size=1000))
        taus = [
            _cal_with_scores(scores, alpha=a, n=1000).tau
            for a in (0.08, 0.1, 0.15, 0.2, 0.3)
        ]
        assert all(a <= b for a, b in zip(taus, taus[1:]))

    def test_end_to_end_small_calibration(self, tiny_model):
        params, wm, cfg, corpus = tiny_model
        smooth = SmoothingConfig(n_mc=8, seed=1)
        cal = calibrate(params, wm, corpus[:64], alpha=0.3, delta=0.1, gamma=0.001,
                        cfg=smooth)
        assert cal.n == 64
        assert len(cal.scores) == 64
        assert np.all(np.diff(cal.scores) >= 0)
        k = math.floor((0.3 - cal.correction) * 64)
        assert cal.tau == pytest.approx(cal.scores[k - 1] - 0.001 / smooth.sigma)


def _raise_for(alpha, n, delta=0.05):
    scores = np.sort(np.random.default_rng(0).normal(size=n))
    base = CalibrationResult(
        tau=float("nan"), alpha=alpha, delta=delta, gamma=0.001, sigma=0.05,
        n=n, correction=dkw_correction(n, delta), scores=scores,
    )
    derive_threshold(base, alpha)


def _cal_with_scores(scores, alpha, n=None, offset_mode="conservative"):
    scores = np.sort(np.asarray(scores, dtype=np.float64))
    n = n or len(scores)
    base = CalibrationResult(
        tau=float("nan"), alpha=alpha, delta=0.05, gamma=0.001, sigma=0.05,
        n=n, correction=dkw_correction(n, 0.05), scores=scores,
        offset_mode=offset_mode,
    )
    return derive_threshold(base, alpha)


class TestDecide:
    def test_boundary_is_watermarked(self, zero_params):
        cfg = SmoothingConfig(n_mc=4, seed=0)
        x = mid_range_images(1)[0]
        score = smooth_score(zero_params, x, cfg, rng_stream(0, 7, 0))
        cal = _cal_with_scores(np.linspace(-1, 1, 100), alpha=0.3)
        cal_eq = _replace_tau(cal, score)
        verdict, got = decide(zero_params, cal_eq, x, cfg, rng_stream(0, 7, 0))
        assert got == score
        assert verdict == WATERMARKED

    def test_just_below_is_unwatermarked(self, zero_params):
        cfg = SmoothingConfig(n_mc=4, seed=0)
        x = mid_range_images(1)[0]
        score = smooth_score(zero_params, x, cfg, rng_stream(0, 7, 0))
        cal = _replace_tau(_cal_with_scores(np.linspace(-1, 1, 100), alpha=0.3),
                           score + 1e-9)
        verdict, _ = decide(zero_params, cal, x, cfg, rng_stream(0, 7, 0))
        assert verdict == UNWATERMARKED

    def test_sigma_mismatch_rejected(self, zero_params):
        cal = _cal_with_scores(np.linspace(-1, 1, 100), alpha=0.3)
        cfg = SmoothingConfig(sigma=0.1, n_mc=4, seed=0)
        with pytest.raises(ConfigError):
            decide(zero_params, cal, mid_range_images(1)[0], cfg, rng_stream(0, 0))


def _replace_tau(cal, tau):
    from dataclasses import replace

    return replace(cal, tau=tau)


class TestPgdAttack:
    def test_zero_radius_returns_input(self):
        p = init_params(0)
        x = mid_range_images(1)[0]
        out = pgd_l2_attack(p, x, radius=0.0)
        assert np.array_equal(out, x)

    def test_radius_bound_holds_exactly(self, tiny_model):
        params, wm, cfg, corpus = tiny_model
        from wmark.watermark import embed

        x = embed(corpus[0], wm)
        for radius in (0.001, 0.05, 0.5):
            out = pgd_l2_attack(params, x, radius=radius, steps=8)
            assert np.linalg.norm(out - x) <= radius + 1e-6
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_attack_lowers_score(self, tiny_model):
        params, wm, cfg, corpus = tiny_model
        from wmark.watermark import embed

        x = embed(corpus[1], wm)
        before = scores_only(params, x[None])[0]
        out = pgd_l2_attack(params, x, radius=0.5, steps=12)
        after = scores_only(params, out[None])[0]
        assert after < before


class TestCalibrationPersistence:
    def test_round_trip(self, tmp_path):
        cal = _cal_with_scores(np.random.default_rng(0).normal(size=321), alpha=0.2)
        path = tmp_path / "cal.txt"
        save_calibration(cal, path)
        back = load_calibration(path)
        assert back.tau == cal.tau
        assert back.alpha == cal.alpha
        assert back.n == cal.n
        assert back.correction == cal.correction
        assert np.array_equal(back.scores, cal.scores)
        assert back.offset_mode == cal.offset_mode

    def test_bad_header(self, tmp_path):
        p = tmp_path / "x.txt"
        p.write_text("not a calibration\n")
        with pytest.raises(FormatError):
            load_calibration(p)

    def test_missing_key(self, tmp_path):
        p = tmp_path / "x.txt"
        p.write_text("wmark-calibration v1\ntau = 0.5\n")
        with pytest.raises(FormatError):
            load_calibration(p)
