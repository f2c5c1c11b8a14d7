"""Seed-stream derivation.

Every random draw in the package flows from one integer seed through
``np.random.SeedSequence`` spawn keys, so any unit of work (an image index, a
training iteration, a Monte-Carlo batch) gets its own independent stream and
results do not depend on evaluation order or chunking.
"""

import numpy as np

# Namespace tags for spawn keys, one per subsystem, so two modules never
# collide on the same derived stream.
NS_CORPUS = 1
NS_WATERMARK_INIT = 2
NS_VERIFIER_INIT = 3
NS_TRAIN_SHUFFLE = 4
NS_TRAIN_VIEWS = 5
NS_SMOOTHING = 6
NS_HARNESS = 7
NS_TRAIN_EVAL = 8


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Return a generator for stream ``key`` derived from ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))
