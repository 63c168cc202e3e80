"""Forward walks, reversed walks, the ideal perturbed walk and exit times."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InfiniteDelta
from .projective import (DualProjPoint, GroupElement, ProjPoint, delta_rows,
                         normalize_rows)
from .streams import as_generator, concat, map_chunks

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Censored:
    """No exit within a record of length ``horizon``; read as ``{tau > horizon}``."""

    horizon: int

    def __gt__(self, k):
        return k <= self.horizon

    def __ge__(self, k):
        return k <= self.horizon


def is_censored(value) -> bool:
    return isinstance(value, Censored)


@dataclass(frozen=True, eq=False)
class PathRecord:
    x0: ProjPoint
    increments: np.ndarray
    partial_sums: np.ndarray
    running_min_prefix: float
    terminal_point: ProjPoint
    elements: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.increments.shape[0]

    @property
    def lower_cut(self) -> float:
        """``max(0, -min_{1<=k<=n-1} S_k)``; zero when ``n = 1``."""
        return max(0.0, -self.running_min_prefix)


@dataclass(frozen=True, eq=False)
class ReversedRecord:
    y: DualProjPoint
    m: int
    values: np.ndarray
    threshold: float
    terminal_point: ProjPoint


def _as_coords(p) -> np.ndarray:
    if isinstance(p, ProjPoint):
        return np.asarray(p.coords, dtype=float)
    return normalize_rows(np.asarray(p, dtype=float))


def _record(x, mats, keep_elements) -> PathRecord:
    inc, v = kernels.propagate(mats[None], x[None])
    inc = inc[0]
    sums = np.cumsum(inc)
    prefix_min = float(sums[:-1].min()) if sums.size > 1 else math.inf
    return PathRecord(ProjPoint(x), inc, sums, prefix_min, ProjPoint(v[0]),
                      mats if keep_elements else None)


def simulate_path(ensemble, x, n, keep_elements=False, rng=None) -> PathRecord:
    """One trajectory of length ``n`` started at ``x`` (renormalised every step)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_generator(rng)
    mats = np.ascontiguousarray(ensemble.sample(rng, n))
    return _record(_as_coords(x), mats, keep_elements)


def path_from_elements(elements, x) -> PathRecord:
    """Record for a given letter sequence ``[g_1, ..., g_n]``."""
    mats = np.array([g.mat if isinstance(g, GroupElement) else np.asarray(g, dtype=float)
                     for g in elements])
    return _record(_as_coords(x), np.ascontiguousarray(mats), True)


def exit_time(path: PathRecord, t: float, direction: str = "plus"):
    """First ``k >= 1`` with ``t + S_k < 0`` (``t - S_k`` for ``minus``), else censored."""
    sums = _signed(path.partial_sums, direction)
    hit = np.flatnonzero(t + sums < 0)
    return int(hit[0]) + 1 if hit.size else Censored(path.n)


def _signed(x, direction):
    if direction == "plus":
        return x
    if direction == "minus":
        return -x
    raise ValueError("direction must be 'plus' or 'minus'")


def exit_times(sums: np.ndarray, t: float):
    """Vectorised exit times for rows of partial sums.

    Returns ``(times, censored)``; censored rows carry ``times = n + 1``.
    """
    below = (t + sums) < 0
    any_hit = below.any(axis=1)
    times = np.where(any_hit, below.argmax(axis=1) + 1, sums.shape[1] + 1)
    return times, ~any_hit


def perturbed_exit_time(values, t):
    """First ``k`` with ``t + values[k-1] < 0``, censored at ``len(values)``."""
    values = np.asarray(values, dtype=float)
    hit = np.flatnonzero(t + values < 0)
    return int(hit[0]) + 1 if hit.size else Censored(values.size)


# ---------------------------------------------------------------------------
# batched forward walks


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Walk data at step ``n`` for a batch of paths.

    ``min_prefix`` is ``min_{1<=k<=n-1} S_k`` (``+inf`` for ``n = 1``) and
    ``min_all`` is ``min_{1<=k<=n} S_k``.
    """

    n: int
    s: np.ndarray
    min_prefix: np.ndarray
    min_all: np.ndarray
    terminal: np.ndarray

    @property
    def lower_cut(self) -> np.ndarray:
        return np.maximum(0.0, -self.min_prefix)

    @property
    def threshold(self) -> np.ndarray:
        """Smallest ``t`` with ``tau_{x,t} > n``: ``max(0, -min S_k)`` is not used
        because ``t < 0`` is allowed; survival holds iff ``t >= -min_all``."""
        return -self.min_all


def _walk_chunk(ensemble, starts, checkpoints, rng, sign, block=64):
    v = np.array(starts, dtype=float)
    size = v.shape[0]
    s = np.zeros(size)
    run_min = np.full(size, np.inf)
    out = []
    done = 0
    targets = list(checkpoints)
    while targets:
        stop = min(done + block, targets[0])
        mats = ensemble.sample(rng, (size, stop - done))
        inc, v = kernels.propagate(mats, v)
        sums = s[:, None] + sign * np.cumsum(inc, axis=1)
        # minimum over all steps except the last one of this block
        if stop - done > 1:
            run_min_before_last = np.minimum(run_min, sums[:, :-1].min(axis=1))
        else:
            run_min_before_last = run_min
        s = sums[:, -1]
        run_min = np.minimum(run_min_before_last, s)
        done = stop
        if done == targets[0]:
            out.append((run_min_before_last.copy(), run_min.copy(), s.copy(), v.copy()))
            targets.pop(0)
    return out


def walk_checkpoints(ensemble, x, checkpoints, N, seed=0, direction="plus", tag="walk",
                     workers=1, starts=None):
    """Simulate ``N`` paths once and report :class:`Checkpoint` data at each ``n``.

    All checkpoints share the same paths (common random numbers).  ``x`` is a
    single start point; alternatively ``starts(rng, size)`` draws start points.
    """
    checkpoints = sorted({int(c) for c in checkpoints})
    if checkpoints[0] < 1:
        raise ValueError("checkpoints must be >= 1")
    sign = 1.0 if direction == "plus" else -1.0
    _signed(np.zeros(1), direction)
    x = None if x is None else _as_coords(x)

    def work(rng, size, _):
        s0 = starts(rng, size) if starts is not None else np.tile(x, (size, 1))
        return _walk_chunk(ensemble, s0, checkpoints, rng, sign)

    parts = map_chunks(work, N, seed, tag, workers)
    result = []
    for j, n in enumerate(checkpoints):
        mp, ma, s, v = (np.concatenate([p[j][i] for p in parts]) for i in range(4))
        result.append(Checkpoint(n, s, mp, ma, v))
    return result


def simulate_batch(ensemble, x, n, N, seed=0, keep_elements=False, tag="batch"):
    """Full partial sums ``(N, n)`` and terminal points; letters optional."""
    x = _as_coords(x)

    def work(rng, size, _):
        mats = ensemble.sample(rng, (size, n))
        inc, v = kernels.propagate(mats, np.tile(x, (size, 1)))
        sums = np.cumsum(inc, axis=1)
        return (sums, v, mats) if keep_elements else (sums, v)

    return concat(map_chunks(work, N, seed, tag))


# ---------------------------------------------------------------------------
# reversed walks


def reversed_values(mats, x, phi):
    """Reversed walk values for a batch of letter sequences.

    ``mats`` is ``(N, m, d, d)`` holding ``g_1..g_m``; ``x`` and ``phi`` are
    unit vectors, ``(d,)`` or ``(N, d)``.  Returns ``(values (N, m), finite
    mask (N,))`` with

        value_k = -log||g_k^T...g_1^T phi|| + delta(g_{k+1}...g_m x, y_k)
                  - delta(g_1...g_m x, y),

    where ``y_k`` is the direction of ``g_k^T...g_1^T phi``.
    """
    mats = np.asarray(mats, dtype=float)
    n_paths, m, d = mats.shape[:3]
    x = np.broadcast_to(np.asarray(x, dtype=float), (n_paths, d))
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (n_paths, d))
    suffix = kernels.suffix_points(mats, np.ascontiguousarray(x))
    tmats = np.ascontiguousarray(np.swapaxes(mats, -1, -2))
    inc, ys = kernels.propagate_points(tmats, np.ascontiguousarray(phi))
    logs = np.cumsum(inc, axis=1)
    d_inner = delta_rows(suffix[:, 1:], ys[:, 1:])
    d_outer = delta_rows(suffix[:, 0], phi)
    finite = np.isfinite(d_inner).all(axis=1) & np.isfinite(d_outer)
    with np.errstate(invalid="ignore"):
        values = -logs + d_inner - d_outer[:, None]
    return values, finite


def reversed_walk_values(path: PathRecord, y: DualProjPoint, m=None) -> ReversedRecord:
    """Reversed walk along the letters of ``path`` for the dual point ``y``."""
    if path.elements is None:
        raise ValueError("the path did not retain its elements")
    m = path.n if m is None else int(m)
    if not 1 <= m <= path.n:
        raise ValueError("need 1 <= m <= path length")
    mats = np.ascontiguousarray(path.elements[None, :m])
    values, finite = reversed_values(mats, path.x0.coords, y.coords)
    if not finite[0]:
        raise InfiniteDelta("a pairing underflowed along the reversed walk", where=(m,))
    terminal = kernels.suffix_points(mats[:, :m], path.x0.coords[None])[0, 0]
    vals = values[0]
    return ReversedRecord(y, m, vals, float(np.max(-vals)), ProjPoint(terminal))


# ---------------------------------------------------------------------------
# the ideal perturbed walk


def ideal_values(mats, phi, x0, n, depth):
    """Ideal perturbed walk with the boundary truncated at ``depth`` letters.

    ``mats`` is ``(N, n + depth, d, d)``.  The boundary point of the shifted
    sequence is ``g_{k+1}...g_{k+depth} x0``.  Returns ``(values (N, n), finite)``.
    """
    mats = np.asarray(mats, dtype=float)
    n_paths, _, d = mats.shape[:3]
    if mats.shape[1] < n + depth:
        raise ValueError("need n + depth letters")
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (n_paths, d))
    bnd = kernels.window_points(mats, np.asarray(x0, dtype=float), n, depth)
    tmats = np.ascontiguousarray(np.swapaxes(mats[:, :n], -1, -2))
    inc, ys = kernels.propagate_points(tmats, np.ascontiguousarray(phi))
    f = delta_rows(bnd, ys)
    finite = np.isfinite(f).all(axis=1)
    with np.errstate(invalid="ignore"):
        values = -np.cumsum(inc, axis=1) + f[:, 1:] - f[:, :1]
    return values, finite


@dataclass(frozen=True, eq=False)
class IdealPath:
    values: np.ndarray
    depth: int


def ideal_perturbed_path(ensemble, y, n, boundary_depth, rng=None, x0=None) -> IdealPath:
    """One ideal perturbed walk ``S~_1..S~_n`` for the dual point ``y``."""
    from .ensemble import default_start

    if boundary_depth < 1 or n < 1:
        raise ValueError("need n >= 1 and boundary_depth >= 1")
    rng = as_generator(rng)
    d = ensemble.dim
    x0 = default_start(d) if x0 is None else _as_coords(x0)
    phi = y.coords if isinstance(y, ProjPoint) else normalize_rows(np.asarray(y, dtype=float))
    mats = ensemble.sample(rng, (1, n + boundary_depth))
    values, finite = ideal_values(mats, phi, x0, n, boundary_depth)
    if not finite[0]:
        raise InfiniteDelta("a pairing underflowed along the ideal walk")
    return IdealPath(values[0], int(boundary_depth))
