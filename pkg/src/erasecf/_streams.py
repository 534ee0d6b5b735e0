"""Deterministic RNG substreams.

Every stochastic step draws from its own generator keyed by
(seed, stream id, *tags), so replaying any stage in isolation
reproduces the exact draw sequence regardless of what ran before it.
"""

import numpy as np

STREAM_SPLIT = 1
STREAM_WALK = 2
STREAM_EMBED = 3
STREAM_GROUP = 4
STREAM_INIT = 5
STREAM_TRAIN = 6
STREAM_REQUEST = 7
STREAM_EVAL = 8
STREAM_SYNTH = 9
STREAM_RANDOM_GROUP = 10
STREAM_RANDOM_SCORE = 11
STREAM_COST = 12


def substream(seed: int, stream: int, *tags: int) -> np.random.Generator:
    """Generator keyed by (seed, stream, *tags). Seeds must be non-negative."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.default_rng((seed, stream) + tuple(int(t) for t in tags))
