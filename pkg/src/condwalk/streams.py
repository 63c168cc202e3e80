"""Reproducible random streams and chunked parallel reduction.

Work is split into fixed-size chunks; chunk ``j`` of stream ``tag`` draws from
a Philox generator keyed by ``(seed, tag, j)``.  Because the chunking does not
depend on the number of workers, results are identical for any worker count.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK = 4096


def _tag_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag)
    return zlib.crc32(str(tag).encode())


def chunk_rng(seed: int, tag="main", chunk: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=(_tag_int(tag), int(chunk)))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an integer seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    return chunk_rng(0 if rng is None else rng)


def chunk_sizes(total: int, chunk: int = CHUNK):
    sizes = [chunk] * (total // chunk)
    if total % chunk:
        sizes.append(total % chunk)
    return sizes


def map_chunks(func, total, seed, tag="main", workers=1, chunk=CHUNK):
    """Run ``func(rng, size, index)`` over chunks; results in chunk order."""
    sizes = chunk_sizes(int(total), chunk)
    jobs = [(chunk_rng(seed, tag, j), size, j) for j, size in enumerate(sizes)]
    if workers is None or workers <= 1 or len(jobs) <= 1:
        return [func(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: func(*job), jobs))


def concat(parts, axis=0):
    """Concatenate per-chunk arrays (or tuples of arrays) in chunk order."""
    if not parts:
        raise ValueError("nothing to concatenate")
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p, axis=axis) for p in zip(*parts))
    return np.concatenate(parts, axis=axis)


def derive_seed(seed: int, tag) -> int:
    """A fresh 63-bit seed derived from ``(seed, tag)``."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(_tag_int(tag),))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
