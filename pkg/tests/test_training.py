import numpy as np
import pytest

from conftest import mid_range_images
from gradcheck import check_watermark_gradients
from wmark.augment import spec
from wmark.corpus import CorpusSpec, generate
from wmark.errors import ConfigError
from wmark.training import (
    RunConfig,
    compute_loss_raw,
    sgd_step,
    signsgd_step,
    train_joint,
)
from wmark.verifier import VerifierParams, init_params
from wmark.watermark import WatermarkPair, init_watermark


def zero_verifier():
    p = init_params(0)
    return VerifierParams(**{n: np.zeros_like(a) for n, a in p.arrays()})


class TestSgdStep:
    def test_zero_grad_zero_velocity_unchanged(self):
        p = init_params(0)
        zero = VerifierParams(**{n: np.zeros_like(a) for n, a in p.arrays()})
        new, _ = sgd_step(p, zero, mu=0.01, velocity=None, momentum=0.9)
        for (_, a), (_, b) in zip(p.arrays(), new.arrays()):
            assert np.array_equal(a, b)

    def test_no_momentum_plain_step(self):
        p = init_params(0)
        g = VerifierParams(**{n: np.ones_like(a) for n, a in p.arrays()})
        new, _ = sgd_step(p, g, mu=0.25, velocity=None, momentum=0.0)
        assert np.allclose(new.conv1_w, p.conv1_w - 0.25, atol=1e-6)

    def test_two_step_hand_recurrence(self):
        # oracle: v1 = 0.5, step 0.005; v2 = 0.9*0.5 + 0.5 = 0.95, step 0.0095
        w = 1.0
        velocity = 0.0
        for _ in range(2):
            velocity = 0.9 * velocity + 0.5
            w -= 0.01 * velocity
        assert w == pytest.approx(0.9855, abs=1e-12)

        p = init_params(0)
        p64 = p.as_dtype(np.float64)
        p64.dense_b[:] = 1.0
        g = VerifierParams(**{n: np.zeros_like(a) for n, a in p64.arrays()})
        g.dense_b[:] = 0.5
        vel = None
        cur = p64
        for _ in range(2):
            cur, vel = sgd_step(cur, g, mu=0.01, velocity=vel, momentum=0.9)
        assert cur.dense_b[0] == pytest.approx(0.9855, abs=1e-12)


class TestSignSgdStep:
    def wm(self):
        return init_watermark((3, 8, 8), 0.1, 0.01, 0)

    def test_zero_grad_unchanged(self):
        wm = self.wm()
        out = signsgd_step(wm, np.zeros(wm.v.shape), np.zeros(wm.u.shape), nu=0.01)
        assert np.array_equal(out.v, wm.v) and np.array_equal(out.u, wm.u)

    def test_magnitude_is_nu_regardless_of_scale(self):
        wm = self.wm()
        gv = np.full(wm.v.shape, 2.3)
        gu = np.full(wm.u.shape, -1e9)
        out = signsgd_step(wm, gv, gu, nu=0.001)
        assert np.allclose(wm.v - out.v, 0.001, atol=1e-15)
        assert np.allclose(out.u - wm.u, 0.001, atol=1e-15)

    def test_mixed_signs(self):
        wm = self.wm()
        gv = np.zeros(wm.v.shape)
        gv[0, 0, 0], gv[0, 0, 1] = 5.0, -5.0
        out = signsgd_step(wm, gv, np.zeros(wm.u.shape), nu=0.01)
        assert out.v[0, 0, 0] == pytest.approx(wm.v[0, 0, 0] - 0.01)
        assert out.v[0, 0, 1] == pytest.approx(wm.v[0, 0, 1] + 0.01)
        assert np.array_equal(out.v[1:], wm.v[1:])


class TestComputeLossRaw:
    def batch(self):
        return mid_range_images(4)

    def test_untrained_three_log_two(self):
        # constant-0.5 scorer makes every BCE term exactly ln 2
        wm = init_watermark((3, 16, 16), 0.02, 0.01, 1)
        views = (spec("identity"), spec("gaussian_noise"))
        bundle = compute_loss_raw(
            zero_verifier(), wm, self.batch(), views, np.random.default_rng(0)
        )
        assert bundle.loss_total == pytest.approx(3 * np.log(2), abs=1e-12)

    def test_identity_pool_doubles_clean_loss(self):
        wm = init_watermark((3, 16, 16), 0.02, 0.01, 1)
        views = (spec("identity"), spec("identity"))
        bundle = compute_loss_raw(
            init_params(0), wm, self.batch(), views, np.random.default_rng(0)
        )
        assert abs(bundle.loss_aug - 2 * bundle.loss_clean) < 1e-6

    def test_loss_decomposition_exact(self):
        wm = init_watermark((3, 16, 16), 0.02, 0.01, 1)
        views = (spec("jitter"), spec("gaussian_blur"))
        bundle = compute_loss_raw(
            init_params(0), wm, self.batch(), views, np.random.default_rng(0)
        )
        assert bundle.loss_total == bundle.loss_clean + bundle.loss_aug

    def test_watermark_gradient_finite_differences(self):
        # identity views keep the FD oracle simple; mid-range pixels and a
        # small c1 keep every clip inactive
        params = init_params(0)
        wm = init_watermark((3, 16, 16), 0.02, 0.01, 3)
        batch = mid_range_images(2)
        worst, checked = check_watermark_gradients(
            params, wm, batch, (spec("identity"), spec("identity")), 7, 60,
            np.random.default_rng(5),
        )
        assert checked >= 60
        assert worst <= 1e-3

    def test_empty_batch_rejected(self):
        wm = init_watermark((3, 16, 16), 0.02, 0.01, 1)
        with pytest.raises(ConfigError):
            compute_loss_raw(
                init_params(0), wm, np.empty((0, 3, 16, 16)), (), np.random.default_rng(0)
            )


class TestRunConfig:
    def test_odd_batch_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig(batch_size=7)

    def test_negative_epochs_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig(epochs=-1)

    def test_bad_steps_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig(mu=0.0)
        with pytest.raises(ConfigError):
            RunConfig(nu=-1e-3)


class TestTrainJoint:
    def corpus(self, n=24):
        return generate(CorpusSpec(n_images=n, height=16, width=16, seed=8))

    def cfg(self, **kw):
        base = dict(epochs=2, batch_size=8, height=16, width=16, seed=5)
        base.update(kw)
        return RunConfig(**base)

    def test_zero_epochs_returns_initial(self):
        cfg = self.cfg(epochs=0)
        params, wm, report = train_joint(cfg, self.corpus())
        ref_p = init_params(cfg.seed)
        ref_w = init_watermark(cfg.image_shape, cfg.c1, cfg.c2, cfg.seed)
        for (_, a), (_, b) in zip(params.arrays(), ref_p.arrays()):
            assert np.array_equal(a, b)
        assert np.array_equal(wm.v, ref_w.v) and np.array_equal(wm.u, ref_w.u)
        assert report.epochs == []

    def test_deterministic_across_runs(self):
        cfg = self.cfg()
        corpus = self.corpus()
        p1, w1, r1 = train_joint(cfg, corpus)
        p2, w2, r2 = train_joint(cfg, corpus)
        for (_, a), (_, b) in zip(p1.arrays(), p2.arrays()):
            assert np.array_equal(a, b)
        assert np.array_equal(w1.v, w2.v) and np.array_equal(w1.u, w2.u)
        assert [e.loss_total for e in r1.epochs] == [e.loss_total for e in r2.epochs]

    def test_alternating_hook_order(self):
        events = []
        train_joint(
            self.cfg(epochs=1),
            self.corpus(),
            step_hook=lambda kind, ep, it: events.append(kind),
        )
        assert events, "hook never fired"
        kinds = events[::2], events[1::2]
        assert set(kinds[0]) == {"watermark_step"}
        assert set(kinds[1]) == {"verifier_step"}

    def test_fixed_watermark_never_steps_watermark(self):
        events = []
        params, wm, _ = train_joint(
            self.cfg(update_watermark=False),
            self.corpus(),
            step_hook=lambda kind, ep, it: events.append(kind),
        )
        assert "watermark_step" not in events
        assert "verifier_step" in events
        ref = init_watermark((3, 16, 16), 0.1, 0.01, 5)
        assert np.array_equal(wm.v, ref.v) and np.array_equal(wm.u, ref.u)

    def test_c2_zero_keeps_u_at_initialization(self):
        cfg = self.cfg(c2=0.0)
        _, wm, _ = train_joint(cfg, self.corpus())
        ref = init_watermark(cfg.image_shape, cfg.c1, 0.0, cfg.seed)
        assert np.array_equal(wm.u, ref.u)
        assert not np.array_equal(wm.v, ref.v)

    def test_losses_decompose_in_report(self):
        _, _, report = train_joint(self.cfg(), self.corpus(), heldout=self.corpus(8))
        for e in report.epochs:
            assert e.loss_total == e.loss_clean + e.loss_aug
            assert 0.0 <= e.train_acc <= 1.0
            assert 0.0 <= e.heldout_acc <= 1.0

    def test_corpus_too_small(self):
        with pytest.raises(ConfigError):
            train_joint(self.cfg(batch_size=64), self.corpus(4))

    def test_wrong_image_size(self):
        with pytest.raises(ConfigError):
            train_joint(self.cfg(height=32), self.corpus())
