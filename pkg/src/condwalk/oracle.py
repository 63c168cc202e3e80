"""Exhaustive enumeration over finite-support laws.

Everything here is computed along a separate route from the Monte Carlo
code: products are formed directly without renormalisation, t-integrals use
Gauss-Legendre quadrature on merged breakpoints (exact for the piecewise
quadratic integrands involved), and sums are compensated with ``math.fsum``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InfiniteDelta, TooLarge
from .projective import UNDERFLOW, ProjPoint

MAX_PATHS = 10_000_000

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(3)


@dataclass(frozen=True, eq=False)
class PathAtom:
    letters: tuple
    probability: float
    sums: tuple
    running_min: float
    terminal: np.ndarray

    @property
    def lower_cut(self) -> float:
        return max(0.0, -self.running_min)


def _require_discrete(ensemble):
    if not ensemble.is_discrete:
        raise TypeError("the exact oracle needs a finite-support ensemble")


def _coords(x):
    v = x.coords if isinstance(x, ProjPoint) else np.asarray(x, dtype=float)
    return v / np.linalg.norm(v)


def _guard(k, n):
    if k ** n > MAX_PATHS:
        raise TooLarge(f"{k}^{n} paths exceed the enumeration limit {MAX_PATHS:.0e}")


def _sequences(ensemble, length):
    k = len(ensemble.weights)
    _guard(k, length)
    w = [float(a) for a in ensemble.weights]
    for seq in itertools.product(range(k), repeat=length):
        yield seq, math.prod(w[i] for i in seq)


def enumerate_paths(ensemble, x, n):
    """All ``k^n`` letter sequences with exact probabilities and walk data."""
    _require_discrete(ensemble)
    if n < 1:
        raise ValueError("n must be >= 1")
    atoms = ensemble.atoms
    v = _coords(x)
    out = []
    for seq, prob in _sequences(ensemble, n):
        prod = np.eye(ensemble.dim)
        sums = []
        for i in seq:
            prod = atoms[i] @ prod
            sums.append(math.log(np.linalg.norm(prod @ v)))
        term = prod @ v
        rmin = min(sums[:-1]) if n > 1 else math.inf
        out.append(PathAtom(seq, prob, tuple(sums), rmin, term / np.linalg.norm(term)))
    return out


def total_probability(paths) -> float:
    return math.fsum(p.probability for p in paths)


def exact_V(ensemble, x, t, n, direction="plus") -> float:
    """``sum_paths p (t + S_n) 1{t + S_k >= 0 for k <= n}`` (``S -> -S`` for ``minus``)."""
    sgn = _sign(direction)
    terms = []
    for path in enumerate_paths(ensemble, x, n):
        s = [sgn * v for v in path.sums]
        if all(t + v >= 0 for v in s):
            terms.append(path.probability * (t + s[-1]))
    return math.fsum(terms)


def _sign(direction):
    if direction == "plus":
        return 1.0
    if direction == "minus":
        return -1.0
    raise ValueError("direction must be 'plus' or 'minus'")


def ramp_quadrature(psi, shift: float, lower: float) -> float:
    """``int_lower^inf t psi(t + shift) dt`` by Gauss-Legendre on merged breakpoints."""
    knots = [float(b) - shift for b in psi.breaks]
    a, b = knots[0], knots[-1]
    lo = max(a, lower)
    if lo >= b:
        return 0.0
    pts = sorted({lo, b, *[k for k in knots if lo < k < b]})
    pieces = []
    for left, right in zip(pts[:-1], pts[1:]):
        half = 0.5 * (right - left)
        mid = 0.5 * (right + left)
        t = mid + half * _GL_NODES
        vals = t * np.interp(t + shift, psi.breaks, psi.values)
        pieces.extend((half * _GL_WEIGHTS * vals).tolist())
    return math.fsum(pieces)


def _action_terms(h, point, shift, lower):
    out = []
    for w, psi, s, lo in h.ramp_terms(np.asarray(point)[None], np.array([shift]), np.array([lower]), None):
        out.append(float(np.asarray(w).reshape(-1)[0]) *
                   ramp_quadrature(psi, float(np.asarray(s).reshape(-1)[0]), float(np.asarray(lo).reshape(-1)[0])))
    return out


def exact_rho_action(ensemble, x, n, h, direction="plus") -> float:
    """``sum_paths p int_{c}^inf t h(x_n, t + S_n) dt`` with ``c = max(0, -min_{k<n} S_k)``."""
    sgn = _sign(direction)
    terms = []
    for path in enumerate_paths(ensemble, x, n):
        s = [sgn * v for v in path.sums]
        cut = max(0.0, -min(s[:-1])) if n > 1 else 0.0
        for v in _action_terms(h, path.terminal, s[-1], cut):
            terms.append(path.probability * v)
    return math.fsum(terms)


def _delta(v, phi) -> float:
    pairing = abs(float(v @ phi)) / (np.linalg.norm(v) * np.linalg.norm(phi))
    if pairing <= UNDERFLOW:
        return math.inf
    return max(0.0, -math.log(pairing))


def reversed_walk_direct(mats, x, phi):
    """Reversed walk values for one letter sequence via direct (unnormalised) products."""
    m = len(mats)
    d = len(x)
    x = _coords(x)
    phi = _coords(phi)
    full = np.eye(d)
    for g in mats:
        full = full @ g
    d_outer = _delta(full @ x, phi)
    values = []
    q = np.eye(d)
    for k in range(1, m + 1):
        q = mats[k - 1].T @ q
        suffix = np.eye(d)
        for g in mats[k:]:
            suffix = suffix @ g
        qphi = q @ phi
        values.append(-math.log(np.linalg.norm(qphi)) + _delta(suffix @ x, qphi) - d_outer)
    return values, full @ x


def exact_duality_sides(ensemble, x, y, n, h):
    """Both sides of the reversal identity as exact enumerated sums.

    Left: the target-measure action.  Right: for each letter sequence,
    ``int_T^inf (t + R_n) h(g_1...g_n x, t) dt`` with ``R_k`` the reversed walk
    and ``T = max_k(-R_k)``.
    """
    _require_discrete(ensemble)
    lhs = exact_rho_action(ensemble, x, n, h)
    atoms = ensemble.atoms
    phi = _coords(y)
    terms = []
    for seq, prob in _sequences(ensemble, n):
        values, term = reversed_walk_direct([atoms[i] for i in seq], _coords(x), phi)
        if not all(math.isfinite(v) for v in values):
            raise InfiniteDelta(f"infinite delta along letters {seq}", where=seq)
        thr = max(-v for v in values)
        last = values[-1]
        for v in _action_terms(h, term / np.linalg.norm(term), -last, thr + last):
            terms.append(prob * v)
    return lhs, math.fsum(terms)


# ---------------------------------------------------------------------------
# perturbed functionals


def exact_U(ensemble, f, theta, x, t, n, space=None, lag=None) -> float:
    """``E[(t + S~_n) theta; tau^f > n]`` from the fixed start ``x`` by enumeration.

    Perturbations and twists must be deterministic (no tail resampling).
    """
    from .perturbed import ConstantTwist, Projective, Zero

    _require_discrete(ensemble)
    space = Projective() if space is None else space
    f = Zero() if f is None else f
    theta = ConstantTwist(1.0) if theta is None else theta
    walk_len = n + (lag or 0)
    length = max(walk_len, f.letters_needed(n), theta.lookahead, 1)
    atoms = ensemble.atoms
    v0 = _coords(x)
    terms = []
    for seq, prob in _sequences(ensemble, length):
        letters = np.array([atoms[i] for i in seq])[None]
        acts = space.matrices(letters[0])
        prod = np.eye(ensemble.dim)
        sums, pts = [], [v0]
        for k in range(walk_len):
            prod = acts[k] @ prod
            img = prod @ v0
            sums.append(space.sign * math.log(np.linalg.norm(img)))
            pts.append(img / np.linalg.norm(img))
        fv = [float(f.evaluate(k, letters[:, k:], pts[k][None])[0]) for k in range(n + 1)]
        tilde = [sums[k - 1] + fv[k] - fv[0] for k in range(1, n + 1)]
        if not all(math.isfinite(v) for v in tilde):
            raise InfiniteDelta(f"infinite perturbation along letters {seq}", where=seq)
        if all(t + v >= 0 for v in tilde):
            end = sums[n + lag - 1] if lag else tilde[-1]
            terms.append(prob * (t + end) * float(theta.evaluate(letters)[0]))
    return math.fsum(terms)


def exact_W_chain(ensemble, initial, f, t, n, space=None) -> float:
    """``W_n(a, t)`` by enumerating the ``n + p`` letters appended by the chain."""
    from .perturbed import Projective

    _require_discrete(ensemble)
    space = Projective() if space is None else space
    p = initial.p
    atoms = ensemble.atoms
    terms = []
    for seq, prob in _sequences(ensemble, n + p):
        window = [np.asarray(g) for g in initial.letters]
        point = np.asarray(initial.point, dtype=float)
        q = initial.counter

        def ftilde(win, pt, qq):
            if f is None:
                return 0.0
            return float(f.evaluate(qq, np.array(win[1:])[None], pt[None])[0])

        f0 = ftilde(window, point, q)
        total = 0.0
        alive = True
        for i, idx in enumerate(seq, start=1):
            img = space.matrices(window[1]) @ point
            point = img / np.linalg.norm(img)
            window = window[1:] + [atoms[idx]]
            back = np.linalg.inv(space.matrices(window[0])) @ point
            total += -space.sign * math.log(np.linalg.norm(back))
            if i <= n and t + total + ftilde(window, point, q + i) - f0 < 0:
                alive = False
        if alive:
            terms.append(prob * (t + total))
    return math.fsum(terms)
