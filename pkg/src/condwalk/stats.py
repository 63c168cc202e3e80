"""Monte Carlo estimate containers and small regression helpers."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as _sps


@dataclass(frozen=True)
class WeightedEstimate:
    value: float
    stderr: float
    n_samples: int
    seed: int

    def z_to(self, target: float) -> float:
        """Distance to ``target`` in units of stderr (inf if stderr is 0 and they differ)."""
        gap = self.value - target
        if self.stderr == 0.0:
            return 0.0 if gap == 0.0 else math.inf
        return gap / self.stderr

    def within(self, target: float, k: float, atol: float = 0.0) -> bool:
        return abs(self.value - target) <= k * self.stderr + atol

    def to_dict(self):
        return asdict(self)


def from_samples(values, seed: int) -> WeightedEstimate:
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = float(values.mean())
    if n > 1:
        # identical samples give exactly zero spread
        stderr = 0.0 if np.all(values == values[0]) else float(values.std(ddof=1) / math.sqrt(n))
    else:
        stderr = 0.0
    return WeightedEstimate(mean, stderr, int(n), int(seed))


def difference(a: WeightedEstimate, b: WeightedEstimate, seed=None) -> WeightedEstimate:
    """``a - b`` for independent estimates."""
    return WeightedEstimate(a.value - b.value, math.hypot(a.stderr, b.stderr),
                            min(a.n_samples, b.n_samples), a.seed if seed is None else seed)


@dataclass(frozen=True)
class LinearFit:
    slope: float
    slope_stderr: float
    intercept: float
    n_points: int

    def slope_interval(self, level: float = 0.95):
        dof = max(self.n_points - 2, 1)
        q = _sps.t.ppf(0.5 + level / 2, dof)
        return self.slope - q * self.slope_stderr, self.slope + q * self.slope_stderr

    def negative(self, level: float = 0.95) -> bool:
        return self.slope_interval(level)[1] < 0

    def positive(self, level: float = 0.95) -> bool:
        return self.slope_interval(level)[0] > 0


def weighted_line(x, y, se=None) -> LinearFit:
    """Weighted least squares ``y ~ a + b x`` with weights ``1/se^2``.

    The slope stderr is scaled by the residual dispersion when it exceeds one
    (so model misfit widens the interval instead of being ignored).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points for a line fit")
    w = np.ones_like(x) if se is None else 1.0 / np.maximum(np.asarray(se, dtype=float), 1e-300) ** 2
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    sxx = (w * (x - xm) ** 2).sum()
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    resid = y - intercept - slope * x
    dof = x.size - 2
    if se is None:
        s2 = (resid ** 2).sum() / dof if dof > 0 else 0.0
        var = s2 / sxx
    else:
        chi2 = (w * resid ** 2).sum() / dof if dof > 0 else 1.0
        var = max(1.0, chi2) / sxx
    return LinearFit(float(slope), float(math.sqrt(var)), float(intercept), int(x.size))


def ks_distance(a, b) -> float:
    return float(_sps.ks_2samp(a, b).statistic)


def ks_pvalue(a, b) -> float:
    return float(_sps.ks_2samp(a, b).pvalue)
