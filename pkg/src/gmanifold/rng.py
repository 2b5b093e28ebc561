"""Deterministic random streams.

Every generator in the package draws from a Philox-4x64 counter-based bit
generator keyed by ``(seed, purpose)``.  Each purpose gets its own
independent stream, so adding draws for one purpose never shifts the numbers
another purpose sees.
"""

import numpy as np

# Stream identifiers are part of the reproducibility contract: never renumber.
STREAMS = {
    "cloud": 1,
    "rewire": 2,
    "alignments": 3,
    "cluster": 4,
    "kmeans": 5,
    "lanczos": 6,
    "graph": 7,
    "test": 99,
}


def stream(seed, purpose, *subkeys):
    """Return a ``numpy.random.Generator`` for ``(seed, purpose, *subkeys)``.

    ``subkeys`` are extra non-negative integers (trial index, frequency, ...)
    that further split the stream.
    """
    if purpose not in STREAMS:
        raise KeyError(f"unknown RNG stream {purpose!r}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[purpose], *map(int, subkeys)))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, *keys):
    """A 63-bit child seed for ``(seed, *keys)``, e.g. one per trial."""
    # the leading 1000 keeps these keys disjoint from the purpose streams above
    ss = np.random.SeedSequence(int(seed), spawn_key=(1000, *(int(k) for k in keys)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
