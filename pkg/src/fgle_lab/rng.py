"""Reproducible per-path random streams.

Every path gets its own Philox generator keyed by ``(seed, stream, index)``,
so path ``i`` draws the same numbers no matter how paths are chunked or
how many worker threads run.
"""

import numpy as np

# stream tags keep independent uses of the same root seed apart
FGN_STREAM = 0
G_STREAM = 1


def path_rng(seed: int, index: int, stream: int = G_STREAM) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def standard_normals(seed: int, start: int, stop: int, n: int,
                     stream: int = G_STREAM) -> np.ndarray:
    """Rows ``start..stop-1`` of the per-path standard normal matrix."""
    out = np.empty((stop - start, n))
    for row, i in enumerate(range(start, stop)):
        out[row] = path_rng(seed, i, stream).standard_normal(n)
    return out
