"""Named random substreams derived from one experiment seed.

Every consumer of randomness gets its own stream so that adding or
removing one consumer never perturbs the draws seen by the others.
"""

import numpy as np

# Registry of stream names; the index is part of the stream identity and
# must never be reordered.
_STREAMS = {
    "split": 0,
    "init": 1,
    "batch": 2,
    "vmf": 3,
    "epsilon": 4,
    "semantic": 5,
    "geometry": 6,
}


def substream(seed: int, name: str) -> np.random.Generator:
    """Return the generator for the named substream of ``seed``."""
    try:
        index = _STREAMS[name]
    except KeyError:
        raise ValueError(f"unknown rng stream {name!r}") from None
    return np.random.default_rng(np.random.SeedSequence([int(seed), index]))
