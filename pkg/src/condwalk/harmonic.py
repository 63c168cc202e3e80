"""Monte Carlo estimates of the killed harmonic functions, the asymptotic
variance and survival probabilities."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateVariance
from .stats import LinearFit, WeightedEstimate, from_samples, weighted_line
from .streams import map_chunks
from .walk import _as_coords, walk_checkpoints


@dataclass(frozen=True)
class VarianceEstimate:
    upsilon_sq: float
    stderr: float
    n_used: int


def _v_values(cp, t):
    return np.where(t >= cp.threshold, t + cp.s, 0.0)


def estimate_V(ensemble, x, t, n, N, direction="plus", seed=0, workers=1) -> WeightedEstimate:
    """``E[(t + S_n); tau_{x,t} > n]`` (``t - S_n`` and the reflected exit time for ``minus``)."""
    if n < 1 or N < 100:
        raise ValueError("need n >= 1 and N >= 100")
    (cp,) = walk_checkpoints(ensemble, x, [n], N, seed, direction, tag="V", workers=workers)
    return from_samples(_v_values(cp, float(t)), seed)


def V_profile(ensemble, x, t_list, n_list, N, direction="plus", seed=0, workers=1):
    """``{(n, t): estimate}`` for every horizon and level, all on the same paths."""
    cps = walk_checkpoints(ensemble, x, n_list, N, seed, direction, tag="V", workers=workers)
    return {(cp.n, float(t)): from_samples(_v_values(cp, float(t)), seed) for cp in cps for t in t_list}


def uniformity_sweep(ensemble, xs, t, n, N, seed=0, workers=1):
    """Estimates of ``V_n(x, t)`` over a grid of start points and their spread."""
    ests = [estimate_V(ensemble, x, t, n, N, seed=seed + i, workers=workers) for i, x in enumerate(xs)]
    vals = np.array([e.value for e in ests])
    return ests, float(vals.max() - vals.min())


def estimate_variance(ensemble, x, n, N, seed=0, workers=1) -> VarianceEstimate:
    """``mean(S_n^2) / n``; warns with :class:`DegenerateVariance` below 1e-8."""
    (cp,) = walk_checkpoints(ensemble, x, [n], N, seed, tag="variance", workers=workers)
    sq = cp.s ** 2 / n
    est = from_samples(sq, seed)
    if est.value < 1e-8:
        warnings.warn(f"asymptotic variance estimate {est.value:.3g} is degenerate",
                      DegenerateVariance, stacklevel=2)
    return VarianceEstimate(max(est.value, 0.0), est.stderr, int(N))


# ---------------------------------------------------------------------------
# survival with compaction


def survival_counts(ensemble, x, t, checkpoints, N, seed=0, direction="plus", workers=1, tag="survival",
                    on_checkpoint=None):
    """Number of the ``N`` paths with ``tau_{x,t} > n`` for each checkpoint ``n``.

    ``on_checkpoint(rng, n, points, sums)`` may collect per-checkpoint data of
    the surviving paths; its results are returned per chunk.
    """
    checkpoints = sorted({int(c) for c in checkpoints})
    sign = 1.0 if direction == "plus" else -1.0
    x = _as_coords(x)

    def work(rng, size, _):
        collected = []

        def hook(n, v, s):
            if on_checkpoint is not None:
                collected.append(on_checkpoint(rng, n, v, s))

        v = np.tile(x, (size, 1))
        s = np.zeros(size)
        counts = []
        done = 0
        for target in checkpoints:
            while done < target and v.shape[0]:
                b = min(64, target - done)
                mats = ensemble.sample(rng, (v.shape[0], b))
                inc, v = kernels.propagate(mats, v)
                sums = s[:, None] + sign * np.cumsum(inc, axis=1)
                alive = np.all(t + sums >= 0, axis=1)
                v, s = v[alive], sums[alive, -1]
                done += b
            done = target
            counts.append(v.shape[0])
            hook(target, v, s)
        return np.array(counts), collected

    parts = map_chunks(work, N, seed, tag, workers)
    counts = np.sum([p[0] for p in parts], axis=0)
    return np.asarray(checkpoints), counts, [p[1] for p in parts]


@dataclass(frozen=True)
class SurvivalCurve:
    n: np.ndarray
    prob: np.ndarray
    stderr: np.ndarray
    N: int

    def loglog_fit(self, n_min=1, n_max=None) -> LinearFit:
        sel = (self.n >= n_min) & (self.prob > 0)
        if n_max is not None:
            sel &= self.n <= n_max
        return weighted_line(np.log(self.n[sel]), np.log(self.prob[sel]), self.stderr[sel] / self.prob[sel])

    @property
    def slope(self) -> float:
        return self.loglog_fit().slope


def survival_curve(ensemble, x, t, n_list, N, seed=0, direction="plus", workers=1) -> SurvivalCurve:
    """``P(tau_{x,t} > n)`` for each ``n`` with binomial standard errors (nested events)."""
    n, counts, _ = survival_counts(ensemble, x, t, n_list, N, seed, direction, workers)
    p = counts / N
    se = np.sqrt(np.maximum(p * (1 - p), 1.0 / N) / N)
    return SurvivalCurve(n, p, se, int(N))


def geometric_grid(lo, hi, per_octave=2):
    """Integers from ``lo`` to ``hi`` spaced geometrically."""
    k = int(round(per_octave * math.log2(hi / lo)))
    return np.unique(np.round(lo * (hi / lo) ** (np.arange(k + 1) / k)).astype(int))
