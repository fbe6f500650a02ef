"""Deterministic random streams derived from (seed, purpose, step, unit) keys.

Every stochastic draw in the library comes from a counter-based Philox
generator whose 256-bit counter encodes the purpose tag, the step index,
and the unit (usually a particle index).  Streams with different keys are
disjoint by construction, and re-creating a stream replays it exactly, so
any run can be reproduced or resumed mid-trajectory without carrying
generator state around.

Within a stream, draws are addressed positionally: requesting
``standard_normal((n_draws, dim))`` places draw ``s`` at row ``s``
regardless of how many rows are requested, so draw indices are stable.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Purpose tags keep unrelated consumers of the same (seed, step, unit) from
# ever sharing a counter block.
TAG_GUIDE_DRAWS = 1
TAG_MINIBATCH = 2
TAG_INIT = 3
TAG_PREDICTIVE = 4
TAG_DATA = 5
TAG_ELBO = 6


def substream(seed: int, tag: int, step: int = 0, unit: int = 0) -> np.random.Generator:
    """Return the generator for the (seed, tag, step, unit) stream.

    The key is derived from the seed; the counter's upper words hold
    (step, unit, tag).  Generation only increments the low counter word,
    so distinct keys can never collide.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    if step < 0 or unit < 0:
        raise ValueError(f"step and unit must be non-negative, got {(step, unit)}")
    key = np.array([seed & _MASK64, (seed >> 64) & _MASK64], dtype=np.uint64)
    counter = np.array([0, step & _MASK64, unit & _MASK64, tag & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))
