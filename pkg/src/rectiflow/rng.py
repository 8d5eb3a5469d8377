"""Reproducible random streams.

Every stochastic routine takes an integer ``seed`` and turns it into a
``numpy.random.Generator`` backed by the counter-based Philox4x64 bit
generator, which produces identical streams on every platform.

Split rule: a seed ``s`` is split into ``k`` independent child streams by
``numpy.random.SeedSequence(s).spawn(k)``; child ``j`` drives chunk ``j``
(or step ``j``, or path block ``j``). Chunk boundaries are fixed constants,
never a function of the number of worker threads, so results do not depend
on how the work is scheduled.
"""

from __future__ import annotations

import numpy as np

#: Rows drawn per child stream when sampling is chunked.
CHUNK_ROWS = 65536


def make_rng(seed) -> np.random.Generator:
    """Return a Philox-backed generator for ``seed``.

    ``seed`` may be an int, a ``SeedSequence`` or an existing generator
    (returned unchanged).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    if seed is None:
        raise ValueError("an explicit seed is required")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def split_seed(seed, k: int) -> list[np.random.SeedSequence]:
    """Split ``seed`` into ``k`` independent child seed sequences."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return ss.spawn(int(k))


def child_int(seed, index: int) -> int:
    """Derive a plain integer seed for sub-task ``index`` of ``seed``.

    Integer seeds are convenient to record in reports; this maps
    ``(seed, index)`` to a 63-bit integer deterministically.
    """
    ss = np.random.SeedSequence([int(seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def standard_normal(n: int, d: int, seed) -> np.ndarray:
    """Draw an ``(n, d)`` standard normal array using the chunked split rule."""
    n = int(n)
    if isinstance(seed, np.random.Generator):
        return seed.standard_normal((n, d))
    nchunks = max(1, -(-n // CHUNK_ROWS))
    children = split_seed(seed, nchunks)
    out = np.empty((n, d))
    for j, child in enumerate(children):
        lo = j * CHUNK_ROWS
        hi = min(n, lo + CHUNK_ROWS)
        out[lo:hi] = make_rng(child).standard_normal((hi - lo, d))
    return out
