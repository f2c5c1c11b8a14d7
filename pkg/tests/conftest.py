import numpy as np
import pytest

from wmark.corpus import CorpusSpec, generate
from wmark.training import RunConfig, train_joint
from wmark.verifier import VerifierParams, init_params


def pytest_addoption(parser):
    parser.addoption(
        "--skip-slow",
        action="store_true",
        default=False,
        help="skip the long-running acceptance criteria",
    )


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--skip-slow"):
        return
    marker = pytest.mark.skip(reason="--skip-slow given")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(marker)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance test")


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


def mid_range_images(n: int, shape=(3, 16, 16), seed: int = 5) -> np.ndarray:
    """Images comfortably inside [0.25, 0.75] so small perturbations never clip."""
    r = np.random.default_rng(seed)
    return 0.25 + 0.5 * r.random((n,) + shape)


@pytest.fixture(scope="session")
def small_images():
    return mid_range_images(6)


@pytest.fixture(scope="session")
def zero_params() -> VerifierParams:
    p = init_params(0)
    return VerifierParams(**{n: np.zeros_like(a) for n, a in p.arrays()})


@pytest.fixture(scope="session")
def tiny_model():
    """A quickly trained 3x32x32 model shared by integration-level tests."""
    corpus = generate(CorpusSpec(n_images=96, height=32, width=32, seed=11))
    cfg = RunConfig(epochs=6, batch_size=16, height=32, width=32, seed=3)
    params, wm, report = train_joint(cfg, corpus)
    return params, wm, cfg, corpus


def constant_score_params(score: float) -> VerifierParams:
    """Verifier that outputs ``score`` for every input (all weights zero)."""
    p = init_params(0)
    zeroed = {n: np.zeros_like(a) for n, a in p.arrays()}
    logit = np.log(score / (1.0 - score))
    zeroed["dense_b"] = np.array([logit], dtype=np.float32)
    return VerifierParams(**zeroed)
