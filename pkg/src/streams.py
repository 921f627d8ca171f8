"""Counter-based random substreams and categorical draws.

A substream is a Philox generator whose key is derived from a root seed and a
tuple of integer keys, e.g. (chain, outer step, inner step). Draws that are
spread over positions take one uniform per position from the stream, so
position l always consumes uniform number l regardless of evaluation order.
"""
from __future__ import annotations

import numpy as np
import numpy.typing as npt

# purpose tags mixed into substream keys
INIT = 0
DENOISE = 1
PROPOSAL = 2
ACCEPT = 3
RENOISE = 4
OPERATOR = 5
NOISE = 6


def substream(seed: int, *keys: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFF, *(int(k) & 0xFFFFFFFF for k in keys)]
    key = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_categorical(probs: npt.ArrayLike, rng: np.random.Generator) -> np.ndarray:
    """Draw one index per row of an (L, K) probability matrix by inverse CDF."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"expected a 2-D probability matrix, got shape {p.shape}")
    u = rng.random(p.shape[0])
    cdf = np.cumsum(p, axis=1)
    cdf /= cdf[:, -1:]
    cdf[:, -1] = 1.0
    return np.argmax(cdf > u[:, None], axis=1).astype(np.int64)


def derive_seed(seed: int, *keys: int) -> int:
    """A child seed for (seed, *keys), e.g. one per image of an experiment."""
    entropy = [int(seed) & 0xFFFFFFFF, *(int(k) & 0xFFFFFFFF for k in keys)]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])
