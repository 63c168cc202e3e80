"""Test functions ``h(x, t) = phi(x) psi(t)`` and their exact ramp integrals.

Every estimator of a measure action reduces, per path, to integrals of the
form ``int_lower^inf t psi(t + shift) dt``.  For piecewise-linear ``psi``
these are evaluated in closed form by :func:`integrate_ramp`.  Test functions
expose :meth:`ramp_terms`, a list of ``(weight, psi, shift, lower)`` terms
whose ramp integrals sum to the per-path contribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .projective import normalize_rows


@dataclass(frozen=True, eq=False)
class PiecewiseLinear:
    """Continuous piecewise-linear function vanishing outside ``[b_0, b_K]``."""

    breaks: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=float)
        y = np.asarray(self.values, dtype=float)
        if b.ndim != 1 or b.size < 2 or b.shape != y.shape:
            raise ValueError("need matching 1-d breaks and values with at least two points")
        if not np.all(np.diff(b) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        if y[0] != 0.0 or y[-1] != 0.0:
            raise ValueError("psi must vanish at both ends of its support")
        if not np.all(np.isfinite(y)):
            raise ValueError("values must be finite")
        b.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "values", y)

    @property
    def support(self):
        return float(self.breaks[0]), float(self.breaks[-1])

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.breaks)

    def __call__(self, u):
        return np.interp(u, self.breaks, self.values, left=0.0, right=0.0)

    def integral(self) -> float:
        """``int psi``."""
        return float(np.sum(0.5 * (self.values[1:] + self.values[:-1]) * np.diff(self.breaks)))

    def first_moment(self) -> float:
        """``int u psi(u) du``."""
        return float(integrate_ramp(self, np.zeros(1), np.full(1, -np.inf))[0])

    def shifted(self, c: float) -> "PiecewiseLinear":
        """``u -> psi(u - c)``."""
        return PiecewiseLinear(self.breaks + c, self.values)

    def scaled(self, c: float) -> "PiecewiseLinear":
        return PiecewiseLinear(self.breaks, self.values * c)

    def nonnegative(self) -> bool:
        return bool(np.all(self.values >= 0))


def hat(a: float, b: float, height: float = 1.0) -> PiecewiseLinear:
    """Tent on ``[a, b]`` peaking at the midpoint."""
    return PiecewiseLinear([a, 0.5 * (a + b), b], [0.0, height, 0.0])


def trapezoid(a: float, b: float, c: float, d: float, height: float = 1.0) -> PiecewiseLinear:
    """Zero outside ``[a, d]``, equal to ``height`` on ``[b, c]``."""
    return PiecewiseLinear([a, b, c, d], [0.0, height, height, 0.0])


def integrate_ramp(psi: PiecewiseLinear, shift, lower) -> np.ndarray:
    """``int_{lower}^{inf} t psi(t + shift) dt`` for arrays of shifts and lower limits.

    Each segment is integrated in the local variable ``w = u - b_j`` with
    ``u = t + shift``, which keeps the cubic terms small.
    """
    shift = np.asarray(shift, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), shift.shape)
    b = psi.breaks
    y = psi.values
    h = np.diff(b)
    m = psi.slopes
    total = np.zeros(np.broadcast(shift, lower).shape)
    start = lower + shift
    for j in range(h.size):
        if y[j] == 0.0 and m[j] == 0.0:
            continue
        e = b[j] - shift
        w_lo = np.clip(start - b[j], 0.0, h[j])
        w_hi = h[j]

        def anti(w):
            return m[j] * w ** 3 / 3.0 + (y[j] + m[j] * e) * w ** 2 / 2.0 + y[j] * e * w

        total += anti(w_hi) - anti(w_lo)
    return total


# ---------------------------------------------------------------------------
# functions on projective space


class PointFunction:
    """Lipschitz function on P(V) evaluated on rows of unit vectors."""

    lipschitz: float = math.inf

    def __call__(self, points) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(PointFunction):
    value: float = 1.0

    @property
    def lipschitz(self) -> float:
        return 0.0

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        return np.full(points.shape[:-1], float(self.value))


@dataclass(frozen=True)
class SquaredCoordinate(PointFunction):
    """``v_i^2`` (sign-invariant, values in [0, 1])."""

    index: int = 0

    @property
    def lipschitz(self) -> float:
        return 2.0 * math.sqrt(2.0)

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        return points[..., self.index] ** 2


@dataclass(frozen=True, eq=False)
class AbsPairing(PointFunction):
    """``|<a, v>|`` for a fixed unit vector ``a``."""

    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "direction", normalize_rows(np.asarray(self.direction, dtype=float)))

    @property
    def lipschitz(self) -> float:
        return math.sqrt(2.0)

    def __call__(self, points):
        return np.abs(np.asarray(points, dtype=float) @ self.direction)


# ---------------------------------------------------------------------------
# test functions on P(V) x R


class TestFunction:
    """Base class; subclasses implement :meth:`ramp_terms`."""

    __test__ = False  # not a pytest class

    def ramp_terms(self, points, shift, lower, rng=None):
        raise NotImplementedError

    def evaluate(self, points, t) -> np.ndarray:
        raise NotImplementedError

    def ramp_action(self, points, shift, lower, rng=None) -> np.ndarray:
        """Per-row ``int_lower^inf t h(point, t + shift) dt``."""
        shift = np.asarray(shift, dtype=float)
        out = np.zeros(shift.shape)
        for weight, psi, s, lo in self.ramp_terms(points, shift, lower, rng):
            out += weight * integrate_ramp(psi, s, lo)
        return out


@dataclass(frozen=True, eq=False)
class ProductTest(TestFunction):
    phi: PointFunction
    psi: PiecewiseLinear

    def ramp_terms(self, points, shift, lower, rng=None):
        return [(self.phi(points), self.psi, shift, lower)]

    def evaluate(self, points, t):
        return self.phi(points) * self.psi(t)

    def shifted(self, c: float) -> "ProductTest":
        """``(x, u) -> h(x, u - c)``."""
        return ProductTest(self.phi, self.psi.shifted(c))


@dataclass(frozen=True, eq=False)
class SumTest(TestFunction):
    """``sum_j c_j h_j``."""

    parts: tuple
    coefs: tuple = None

    def __post_init__(self):
        coefs = self.coefs if self.coefs is not None else (1.0,) * len(self.parts)
        if len(coefs) != len(self.parts):
            raise ValueError("one coefficient per part")
        object.__setattr__(self, "coefs", tuple(float(c) for c in coefs))
        object.__setattr__(self, "parts", tuple(self.parts))

    def ramp_terms(self, points, shift, lower, rng=None):
        terms = []
        for c, part in zip(self.coefs, self.parts):
            for w, psi, s, lo in part.ramp_terms(points, shift, lower, rng):
                terms.append((c * w, psi, s, lo))
        return terms

    def evaluate(self, points, t):
        return sum(c * p.evaluate(points, t) for c, p in zip(self.coefs, self.parts))


@dataclass(frozen=True, eq=False)
class KilledStep(TestFunction):
    """``Rh(x, t) = 1{t >= 0} E h(g x, t + sigma(g, x))`` for ``g`` from the law.

    For a discrete ensemble the expectation is an exact finite sum over the
    atoms; otherwise it is averaged over ``inner_draws`` fresh elements.
    """

    inner: TestFunction
    ensemble: object
    inner_draws: int = 16

    def _moves(self, points, rng):
        points = np.asarray(points, dtype=float)
        if self.ensemble.is_discrete:
            for w, a in zip(self.ensemble.weights, self.ensemble.atoms):
                if w == 0:
                    continue
                img = points @ a.T
                r = np.linalg.norm(img, axis=-1)
                yield w, img / r[..., None], np.log(r)
        else:
            if rng is None:
                raise ValueError("a random generator is needed for a continuous ensemble")
            k = self.inner_draws
            g = self.ensemble.sample(rng, points.shape[:-1] + (k,))
            img = np.einsum("...kij,...j->...ki", g, points)
            r = np.linalg.norm(img, axis=-1)
            for j in range(k):
                yield 1.0 / k, img[..., j, :] / r[..., j, None], np.log(r[..., j])

    def ramp_terms(self, points, shift, lower, rng=None):
        shift = np.asarray(shift, dtype=float)
        new_lower = np.maximum(lower, -shift)
        terms = []
        for w, img, sig in self._moves(points, rng):
            for ww, psi, s, lo in self.inner.ramp_terms(img, shift + sig, new_lower, rng):
                terms.append((w * ww, psi, s, lo))
        return terms

    def evaluate(self, points, t, rng=None):
        t = np.asarray(t, dtype=float)
        out = np.zeros(np.broadcast(t, np.asarray(points)[..., 0]).shape)
        for w, img, sig in self._moves(points, rng):
            out += w * self.inner.evaluate(img, t + sig)
        return np.where(t >= 0, out, 0.0)


def product(phi: PointFunction, psi: PiecewiseLinear) -> ProductTest:
    return ProductTest(phi, psi)
