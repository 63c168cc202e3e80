"""Hot inner loops over batches of matrix products.

Every kernel exists twice: a numba version (``_jit_*``) and a vectorised numpy
version (``_np_*``).  The public names are bound to one or the other at import
time according to :data:`condwalk._accel.USE_JIT`; both are importable
directly so tests and benchmarks can compare them.

Conventions: ``mats`` has shape ``(N, L, d, d)`` (letter ``k`` of path ``i`` is
``mats[i, k]``), point batches have shape ``(N, d)`` and hold unit vectors.
"""

import math

import numpy as np

from ._accel import USE_JIT, njit


# ---------------------------------------------------------------------------
# forward propagation with renormalisation


def _np_propagate(mats, v):
    n_paths, n_steps = mats.shape[:2]
    inc = np.empty((n_paths, n_steps))
    v = np.array(v, dtype=float, copy=True)
    for k in range(n_steps):
        w = np.einsum("nij,nj->ni", mats[:, k], v)
        r = np.sqrt(np.einsum("ni,ni->n", w, w))
        inc[:, k] = np.log(r)
        v = w / r[:, None]
    return inc, v


def _np_propagate_points(mats, v):
    n_paths, n_steps, d = mats.shape[:3]
    inc = np.empty((n_paths, n_steps))
    pts = np.empty((n_paths, n_steps + 1, d))
    pts[:, 0] = v
    for k in range(n_steps):
        w = np.einsum("nij,nj->ni", mats[:, k], pts[:, k])
        r = np.sqrt(np.einsum("ni,ni->n", w, w))
        inc[:, k] = np.log(r)
        pts[:, k + 1] = w / r[:, None]
    return inc, pts


@njit
def _jit_propagate(mats, v):
    n_paths, n_steps, d = mats.shape[0], mats.shape[1], mats.shape[2]
    inc = np.empty((n_paths, n_steps))
    out = np.empty((n_paths, d))
    cur = np.empty(d)
    nxt = np.empty(d)
    for i in range(n_paths):
        for a in range(d):
            cur[a] = v[i, a]
        for k in range(n_steps):
            r2 = 0.0
            for a in range(d):
                acc = 0.0
                for b in range(d):
                    acc += mats[i, k, a, b] * cur[b]
                nxt[a] = acc
                r2 += acc * acc
            r = math.sqrt(r2)
            inc[i, k] = math.log(r)
            for a in range(d):
                cur[a] = nxt[a] / r
        for a in range(d):
            out[i, a] = cur[a]
    return inc, out


@njit
def _jit_propagate_points(mats, v):
    n_paths, n_steps, d = mats.shape[0], mats.shape[1], mats.shape[2]
    inc = np.empty((n_paths, n_steps))
    pts = np.empty((n_paths, n_steps + 1, d))
    nxt = np.empty(d)
    for i in range(n_paths):
        for a in range(d):
            pts[i, 0, a] = v[i, a]
        for k in range(n_steps):
            r2 = 0.0
            for a in range(d):
                acc = 0.0
                for b in range(d):
                    acc += mats[i, k, a, b] * pts[i, k, b]
                nxt[a] = acc
                r2 += acc * acc
            r = math.sqrt(r2)
            inc[i, k] = math.log(r)
            for a in range(d):
                pts[i, k + 1, a] = nxt[a] / r
    return inc, pts


# ---------------------------------------------------------------------------
# right-to-left products applied to a point


def _np_suffix_points(mats, x):
    n_paths, m, d = mats.shape[:3]
    w = np.empty((n_paths, m + 1, d))
    w[:, m] = x
    for k in range(m - 1, -1, -1):
        u = np.einsum("nij,nj->ni", mats[:, k], w[:, k + 1])
        w[:, k] = u / np.linalg.norm(u, axis=1)[:, None]
    return w


@njit
def _jit_suffix_points(mats, x):
    n_paths, m, d = mats.shape[0], mats.shape[1], mats.shape[2]
    w = np.empty((n_paths, m + 1, d))
    for i in range(n_paths):
        for a in range(d):
            w[i, m, a] = x[i, a]
        for k in range(m - 1, -1, -1):
            r2 = 0.0
            for a in range(d):
                acc = 0.0
                for b in range(d):
                    acc += mats[i, k, a, b] * w[i, k + 1, b]
                w[i, k, a] = acc
                r2 += acc * acc
            r = math.sqrt(r2)
            for a in range(d):
                w[i, k, a] /= r
    return w


def _np_window_points(mats, x0, n, depth):
    n_paths, _, d = mats.shape[:3]
    out = np.empty((n_paths, n + 1, d))
    for k in range(n + 1):
        u = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths, d)).copy()
        for j in range(k + depth - 1, k - 1, -1):
            u = np.einsum("nij,nj->ni", mats[:, j], u)
            u /= np.linalg.norm(u, axis=1)[:, None]
        out[:, k] = u
    return out


@njit
def _jit_window_points(mats, x0, n, depth):
    n_paths, d = mats.shape[0], mats.shape[2]
    out = np.empty((n_paths, n + 1, d))
    cur = np.empty(d)
    nxt = np.empty(d)
    for i in range(n_paths):
        for k in range(n + 1):
            for a in range(d):
                cur[a] = x0[a]
            for j in range(k + depth - 1, k - 1, -1):
                r2 = 0.0
                for a in range(d):
                    acc = 0.0
                    for b in range(d):
                        acc += mats[i, j, a, b] * cur[b]
                    nxt[a] = acc
                    r2 += acc * acc
                r = math.sqrt(r2)
                for a in range(d):
                    cur[a] = nxt[a] / r
            for a in range(d):
                out[i, k, a] = cur[a]
    return out


# ---------------------------------------------------------------------------
# ramp sums for the marginal density: sum_i (u - s_i) 1{u >= a_i}, a_i >= s_i


def _np_ramp_sums(a_sorted, c_sorted, grid):
    # grid must be sorted; every added term is >= 0 so the result is
    # non-decreasing in floating point, not only in exact arithmetic
    n_grid = grid.shape[0]
    ramp = np.zeros(n_grid)
    cut = np.zeros(n_grid)
    counts = np.zeros(n_grid, dtype=np.int64)
    idx = np.searchsorted(a_sorted, grid, side="right")
    g = 0.0
    csum = 0.0
    prev_u = grid[0] if n_grid else 0.0
    prev_i = 0
    for j in range(n_grid):
        u = grid[j]
        i = idx[j]
        g = g + prev_i * (u - prev_u)
        if i > prev_i:
            g = g + float(np.sum(u - a_sorted[prev_i:i]))
            csum = csum + float(np.sum(c_sorted[prev_i:i]))
        ramp[j] = g
        cut[j] = csum
        counts[j] = i
        prev_u = u
        prev_i = i
    return ramp, cut, counts


@njit
def _jit_ramp_sums(a_sorted, c_sorted, grid):
    n_grid = grid.shape[0]
    n = a_sorted.shape[0]
    ramp = np.zeros(n_grid)
    cut = np.zeros(n_grid)
    counts = np.zeros(n_grid, dtype=np.int64)
    g = 0.0
    csum = 0.0
    i = 0
    prev_u = grid[0] if n_grid > 0 else 0.0
    for j in range(n_grid):
        u = grid[j]
        g = g + i * (u - prev_u)
        new = 0.0
        newc = 0.0
        while i < n and a_sorted[i] <= u:
            new += u - a_sorted[i]
            newc += c_sorted[i]
            i += 1
        g = g + new
        csum = csum + newc
        ramp[j] = g
        cut[j] = csum
        counts[j] = i
        prev_u = u
    return ramp, cut, counts


if USE_JIT:
    propagate = _jit_propagate
    propagate_points = _jit_propagate_points
    suffix_points = _jit_suffix_points
    window_points = _jit_window_points
    ramp_sums = _jit_ramp_sums
else:
    propagate = _np_propagate
    propagate_points = _np_propagate_points
    suffix_points = _np_suffix_points
    window_points = _np_window_points
    ramp_sums = _np_ramp_sums

__all__ = [
    "USE_JIT",
    "propagate",
    "propagate_points",
    "suffix_points",
    "window_points",
    "ramp_sums",
]
