"""Perturbed walks on an abstract acted space, twisted killed functionals,
finite-size projections of future-dependent perturbations, the lagged-letter
Markov chain and its martingale, and the quasi-monotonicity scan.

Conventions
-----------
A letter sequence is an array ``(N, L, d, d)``; ``letters[:, k]`` is
``g_{k+1}``.  An :class:`ActedSpace` turns a letter ``g`` into the matrix
``A(g)`` through which it moves points and fixes the sign of the cocycle
``c(g, x) = sign * log ||A(g) x||``.

A perturbation sequence ``f = (f_n)`` is evaluated as
``f.evaluate(n, letters, points)`` where ``letters`` starts at the first
letter *after* the shift; ``f_n`` may read at most ``f.lookahead(n)`` of them.
The perturbed walk is ``S~_n = S_n + f_n(T^n omega, X_n) - f_0(omega, x)``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .ensemble import default_start, run_walk
from .errors import InfinitePerturbation, MomentOverflow
from .projective import ProjPoint, delta_rows, normalize_rows
from .stats import WeightedEstimate, from_samples, weighted_line
from .streams import chunk_rng, map_chunks

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# acted spaces


class ActedSpace:
    sign = 1.0
    name = "abstract"

    def matrices(self, letters: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def start_sampler(self, ensemble, depth=50, x0=None):
        """``starts(rng, size)`` drawing approximately from the stationary law."""
        transpose = self.transpose_walk
        d = ensemble.dim
        base = default_start(d) if x0 is None else normalize_rows(np.asarray(x0, dtype=float))

        def starts(rng, size):
            _, v = run_walk(ensemble, np.tile(base, (size, 1)), depth, rng, transpose=transpose)
            return v

        return starts

    def cocycle(self, letters, points):
        """``sign * log ||A(g) x||`` row-wise, with the moved points."""
        a = self.matrices(letters)
        img = np.einsum("...ij,...j->...i", a, points)
        r = np.linalg.norm(img, axis=-1)
        return self.sign * np.log(r), img / r[..., None]

    def inverse_cocycle(self, letters, points):
        """``sign * log ||A(g)^{-1} x||`` row-wise (a linear solve, no inverse cache)."""
        a = self.matrices(letters)
        img = np.linalg.solve(a, points[..., None])[..., 0]
        return self.sign * np.log(np.linalg.norm(img, axis=-1))


class Projective(ActedSpace):
    """P(V) with ``g`` acting by itself and cocycle ``sigma``."""

    sign = 1.0
    name = "projective"
    transpose_walk = False

    def matrices(self, letters):
        return letters


class DualProjective(ActedSpace):
    """P(V*) with ``g`` acting as ``g^{-1}`` (matrix ``g^T``) and cocycle ``-sigma*(g^{-1}, .)``."""

    sign = -1.0
    name = "dual-projective"
    transpose_walk = True

    def matrices(self, letters):
        return np.swapaxes(letters, -1, -2)


class ScalarLine(Projective):
    """One-dimensional instance: the walk is the sum of ``log |g|``."""

    name = "scalar-line"

    def matrices(self, letters):
        if letters.shape[-1] != 1:
            raise ValueError("the scalar line needs a one-dimensional ensemble")
        return letters


SPACES = {"projective": Projective, "dual-projective": DualProjective, "scalar-line": ScalarLine}


# ---------------------------------------------------------------------------
# perturbations


class Perturbation:
    description = "abstract"

    def lookahead(self, n: int) -> int:
        raise NotImplementedError

    def evaluate(self, n, letters, points, rng=None) -> np.ndarray:
        raise NotImplementedError

    def evaluate_all(self, n, letters, points, rng=None) -> np.ndarray:
        """``F[:, k] = f_k(letters[:, k:], points[:, k])`` for ``k = 0..n``."""
        return np.stack([self.evaluate(k, letters[:, k:], points[:, k], rng) for k in range(n + 1)],
                        axis=1)

    def letters_needed(self, n: int) -> int:
        return max(k + self.lookahead(k) for k in range(n + 1))


class Zero(Perturbation):
    description = "zero"

    def lookahead(self, n):
        return 0

    def evaluate(self, n, letters, points, rng=None):
        return np.zeros(points.shape[0])

    def evaluate_all(self, n, letters, points, rng=None):
        return np.zeros((points.shape[0], n + 1))


@dataclass(frozen=True, eq=False)
class FiniteRangeDelta(Perturbation):
    """``f_n(omega, y) = delta(g_1...g_{m-n} x, y)``; ``delta(x, y)`` once ``n >= m``."""

    x: np.ndarray
    m: int

    def __post_init__(self):
        coords = self.x.coords if isinstance(self.x, ProjPoint) else normalize_rows(np.asarray(self.x, dtype=float))
        object.__setattr__(self, "x", np.asarray(coords, dtype=float))

    @property
    def description(self):
        return f"finite-range delta (m={self.m})"

    def lookahead(self, n):
        return max(self.m - n, 0)

    def evaluate(self, n, letters, points, rng=None):
        k = self.lookahead(n)
        size = points.shape[0]
        if k == 0:
            w = np.tile(self.x, (size, 1))
        else:
            w = kernels.suffix_points(np.ascontiguousarray(letters[:, :k]), np.tile(self.x, (size, 1)))[:, 0]
        return delta_rows(w, points)

    def evaluate_all(self, n, letters, points, rng=None):
        size = points.shape[0]
        out = np.empty((size, n + 1))
        top = min(n, self.m)
        if self.m > 0:
            w = kernels.suffix_points(np.ascontiguousarray(letters[:, :self.m]), np.tile(self.x, (size, 1)))
        else:
            w = np.tile(self.x, (size, 1, 1))
        out[:, :top + 1] = delta_rows(w[:, :top + 1], points[:, :top + 1])
        if n > self.m:
            out[:, self.m + 1:] = delta_rows(self.x, points[:, self.m + 1:])
        return out


@dataclass(frozen=True, eq=False)
class IdealDelta(Perturbation):
    """``f(omega, y) = delta(xi(omega), y)`` with the boundary truncated at ``depth`` letters."""

    depth: int = 30
    x0: np.ndarray = None

    @property
    def description(self):
        return f"ideal delta (depth={self.depth})"

    def lookahead(self, n):
        return self.depth

    def _x0(self, d):
        return default_start(d) if self.x0 is None else normalize_rows(np.asarray(self.x0, dtype=float))

    def evaluate(self, n, letters, points, rng=None):
        d = points.shape[-1]
        w = kernels.suffix_points(np.ascontiguousarray(letters[:, :self.depth]),
                                  np.tile(self._x0(d), (points.shape[0], 1)))[:, 0]
        return delta_rows(w, points)

    def evaluate_all(self, n, letters, points, rng=None):
        d = points.shape[-1]
        bnd = kernels.window_points(np.ascontiguousarray(letters[:, :n + self.depth]), self._x0(d), n, self.depth)
        return delta_rows(bnd, points[:, :n + 1])


@dataclass(frozen=True, eq=False)
class LetterFunction(Perturbation):
    """``f_n(omega, x) = func(g_1..g_k, x)`` for a fixed lookahead ``k`` (same for every n)."""

    func: object
    k: int
    description: str = "letter function"

    def lookahead(self, n):
        return self.k

    def evaluate(self, n, letters, points, rng=None):
        return np.asarray(self.func(letters[:, :self.k], points), dtype=float)


def log_norm_first_letter(letters, points):
    """``log ||g_1||`` (operator norm)."""
    return np.log(np.linalg.norm(letters[:, 0], ord=2, axis=(-2, -1)))


@dataclass(frozen=True, eq=False)
class Projected(Perturbation):
    """Finite-size projection ``f_{n,p} = E(f_n | g_1..g_p)``.

    The conditional expectation is realised by averaging ``f_n`` over
    ``tail_draws`` independent resamplings of the letters after position ``p``.
    When ``f_n`` reads at most ``p`` letters it is returned unchanged.
    """

    base: Perturbation
    p: int
    tail_draws: int
    ensemble: object

    def __post_init__(self):
        if self.tail_draws < 1:
            raise ValueError("tail_draws must be >= 1")

    @property
    def description(self):
        return f"projection of [{self.base.description}] on {self.p} letters"

    def lookahead(self, n):
        return min(self.p, self.base.lookahead(n))

    def evaluate(self, n, letters, points, rng=None):
        k = self.base.lookahead(n)
        if k <= self.p:
            return self.base.evaluate(n, letters, points, rng)
        if rng is None:
            raise ValueError("a random generator is needed to resample the tail")
        size = points.shape[0]
        head = letters[:, :self.p]
        acc = np.zeros(size)
        for _ in range(self.tail_draws):
            tail = self.ensemble.sample(rng, (size, k - self.p))
            full = np.concatenate([head, tail], axis=1) if self.p else tail
            acc += self.base.evaluate(n, full, points, rng)
        return acc / self.tail_draws


def project_finite_size(f: Perturbation, p: int, tail_draws: int, ensemble) -> Projected:
    if tail_draws < 1:
        raise ValueError("tail_draws must be >= 1")
    return Projected(f, int(p), int(tail_draws), ensemble)


# ---------------------------------------------------------------------------
# twist functions


class Twist:
    sup = math.inf

    @property
    def lookahead(self) -> int:
        raise NotImplementedError

    def evaluate(self, letters, rng=None) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantTwist(Twist):
    value: float = 1.0

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("a twist is non-negative")

    @property
    def sup(self):
        return self.value

    @property
    def lookahead(self):
        return 0

    def evaluate(self, letters, rng=None):
        return np.full(letters.shape[0], float(self.value))


@dataclass(frozen=True, eq=False)
class BoundaryTwist(Twist):
    """``phi(g_1...g_depth x0)``, the truncated version of ``phi(xi(omega))``."""

    phi: object
    depth: int = 30
    x0: np.ndarray = None
    bound: float = 1.0

    @property
    def sup(self):
        return self.bound

    @property
    def lookahead(self):
        return self.depth

    def evaluate(self, letters, rng=None):
        d = letters.shape[-1]
        x0 = default_start(d) if self.x0 is None else normalize_rows(np.asarray(self.x0, dtype=float))
        w = kernels.suffix_points(np.ascontiguousarray(letters[:, :self.depth]),
                                  np.tile(x0, (letters.shape[0], 1)))[:, 0]
        return np.asarray(self.phi(w), dtype=float)


@dataclass(frozen=True, eq=False)
class LetterTwist(Twist):
    """``func(g_1..g_k)`` with values in ``[0, bound]``."""

    func: object
    k: int
    bound: float = 1.0

    @property
    def sup(self):
        return self.bound

    @property
    def lookahead(self):
        return self.k

    def evaluate(self, letters, rng=None):
        return np.asarray(self.func(letters[:, :self.k]), dtype=float)


@dataclass(frozen=True, eq=False)
class ProjectedTwist(Twist):
    """``theta_p = E(theta | g_1..g_p)`` by tail resampling."""

    base: Twist
    p: int
    tail_draws: int
    ensemble: object

    @property
    def sup(self):
        return self.base.sup

    @property
    def lookahead(self):
        return min(self.p, self.base.lookahead)

    def evaluate(self, letters, rng=None):
        k = self.base.lookahead
        if k <= self.p:
            return self.base.evaluate(letters, rng)
        size = letters.shape[0]
        head = letters[:, :self.p]
        acc = np.zeros(size)
        for _ in range(self.tail_draws):
            tail = self.ensemble.sample(rng, (size, k - self.p))
            acc += self.base.evaluate(np.concatenate([head, tail], axis=1) if self.p else tail, rng)
        return acc / self.tail_draws


# ---------------------------------------------------------------------------
# direct perturbed walks


def _resolve_starts(space, ensemble, start, depth=50):
    if start is None:
        return space.start_sampler(ensemble, depth)
    if callable(start):
        return start
    x = start.coords if isinstance(start, ProjPoint) else normalize_rows(np.asarray(start, dtype=float))

    def fixed(rng, size):
        return np.tile(x, (size, 1))

    return fixed


def perturbed_chunk(ensemble, space, f, theta, n_list, starts, rng, lag=None):
    """One chunk of perturbed walks.

    Returns ``(ends, thresholds, theta_values, finite)`` where ``ends[j]`` is
    ``S~_n`` (or ``S_{n+lag}`` when ``lag`` is set) and ``thresholds[j]`` is
    ``max_{k<=n} (-S~_k)`` for ``n = n_list[j]``; survival to ``n`` is
    ``t >= threshold``.
    """
    size = starts.shape[0]
    n_max = max(n_list)
    walk_len = n_max + (lag or 0)
    total = max(walk_len, f.letters_needed(n_max), theta.lookahead, 1)
    letters = ensemble.sample(rng, (size, total))
    mats = np.ascontiguousarray(space.matrices(letters[:, :walk_len]))
    inc, pts = kernels.propagate_points(mats, np.ascontiguousarray(starts))
    s = space.sign * np.cumsum(inc, axis=1)
    big_f = f.evaluate_all(n_max, letters, pts[:, :n_max + 1], rng)
    finite = np.isfinite(big_f).all(axis=1)
    with np.errstate(invalid="ignore"):
        tilde = s[:, :n_max] + big_f[:, 1:] - big_f[:, :1]
    run_max = np.maximum.accumulate(-tilde, axis=1)
    th = theta.evaluate(letters, rng)
    ends = [(s[:, n + lag - 1] if lag else tilde[:, n - 1]) for n in n_list]
    thresholds = [run_max[:, n - 1] for n in n_list]
    return ends, thresholds, th, finite


@dataclass(frozen=True, eq=False)
class PerturbedSample:
    """Per-path data for several horizons on shared paths."""

    n_list: tuple
    ends: np.ndarray        # (len(n_list), N)
    thresholds: np.ndarray  # (len(n_list), N)
    theta: np.ndarray       # (N,)
    rejected: int
    seed: int

    def values(self, j: int, t: float) -> np.ndarray:
        return np.where(t >= self.thresholds[j], (t + self.ends[j]) * self.theta, 0.0)

    def estimate(self, n: int, t: float) -> WeightedEstimate:
        return from_samples(self.values(self.n_list.index(n), t), self.seed)


def sample_perturbed(ensemble, f=None, theta=None, n_list=(1,), N=10_000, seed=0, space=None,
                     start=None, lag=None, workers=1, tag="perturbed", depth=50) -> PerturbedSample:
    """Simulate perturbed walks for all horizons in ``n_list`` on shared paths.

    Paths with an infinite perturbation value are rejected and counted; more
    than 1% rejections raise :class:`InfinitePerturbation`.
    """
    space = Projective() if space is None else space
    f = Zero() if f is None else f
    theta = ConstantTwist(1.0) if theta is None else theta
    n_list = tuple(sorted({int(n) for n in n_list}))
    if n_list[0] < 1:
        raise ValueError("horizons must be >= 1")
    starts = _resolve_starts(space, ensemble, start, depth)

    def work(rng, size, _):
        return perturbed_chunk(ensemble, space, f, theta, n_list, starts(rng, size), rng, lag)

    parts = map_chunks(work, N, seed, tag, workers)
    finite = np.concatenate([p[3] for p in parts])
    ends = np.array([np.concatenate([p[0][j] for p in parts]) for j in range(len(n_list))])
    thr = np.array([np.concatenate([p[1][j] for p in parts]) for j in range(len(n_list))])
    th = np.concatenate([p[2] for p in parts])
    rejected = int((~finite).sum())
    if rejected:
        log.info("rejected %d of %d paths with infinite perturbation", rejected, N)
        if rejected > 0.01 * N:
            raise InfinitePerturbation(f"{rejected} of {N} paths had an infinite perturbation")
    return PerturbedSample(n_list, ends[:, finite], thr[:, finite], th[finite], rejected, int(seed))


def estimate_U(ensemble, f=None, theta=None, t=0.0, n=1, N=10_000, seed=0, space=None, start=None,
               lag=None, workers=1) -> WeightedEstimate:
    """``E[(t + S~_n) theta ; tau^f > n]`` with the start drawn from the stationary law.

    With ``lag = p`` the integrand is ``t + S_{n+p}`` instead of ``t + S~_n``
    (the quantity that the lagged-letter chain disintegrates).
    """
    sample = sample_perturbed(ensemble, f, theta, (n,), N, seed, space, start, lag, workers)
    return sample.estimate(n, t)


def U_curve(ensemble, f, theta, t_grid, n, N, seed=0, space=None, start=None, workers=1):
    sample = sample_perturbed(ensemble, f, theta, (n,), N, seed, space, start, None, workers)
    return [sample.estimate(n, float(t)) for t in t_grid]


# ---------------------------------------------------------------------------
# approximation profiles


@dataclass(frozen=True)
class ApproximationProfile:
    alpha: float
    p: np.ndarray
    d_hat: np.ndarray
    d_stderr: np.ndarray
    c_alpha: float
    c_alpha_stderr: float
    theta_gap: np.ndarray = None

    def decay_fit(self):
        ok = self.d_hat > 0
        return weighted_line(self.p[ok], np.log(self.d_hat[ok]),
                             self.d_stderr[ok] / self.d_hat[ok])


def approximation_profile(ensemble, f, alpha, p_list, N=4000, seed=0, space=None, start=None,
                          n_eval=0, tail_draws=32, theta=None, alpha_floor=1e-3):
    """Empirical ``E exp(alpha |f_n - f_{n,p}|) - 1`` per ``p`` and ``E exp(alpha |f_n|)``.

    ``alpha`` is halved while the empirical means overflow; below
    ``alpha_floor`` a :class:`MomentOverflow` is raised.  With ``theta`` the
    profile also reports ``E|theta - theta_p|``.
    """
    space = DualProjective() if space is None else space
    starts = _resolve_starts(space, ensemble, start)
    rng = chunk_rng(seed, "approx")
    k = f.lookahead(n_eval)
    k_theta = theta.lookahead if theta is not None else 0
    letters = ensemble.sample(rng, (N, max(k, k_theta, 1)))
    pts = starts(rng, N)
    base = f.evaluate(n_eval, letters, pts, rng)
    ok = np.isfinite(base)
    proj = []
    gaps = []
    for p in p_list:
        pf = Projected(f, int(p), tail_draws, ensemble)
        proj.append(pf.evaluate(n_eval, letters, pts, rng))
        if theta is not None:
            pt = ProjectedTwist(theta, int(p), tail_draws, ensemble)
            gaps.append(float(np.mean(np.abs(theta.evaluate(letters, rng) - pt.evaluate(letters, rng)))))
    proj = np.array(proj)
    ok &= np.isfinite(proj).all(axis=0)
    base, proj = base[ok], proj[:, ok]
    a = float(alpha)
    while True:
        with np.errstate(over="ignore"):
            moment = np.exp(a * np.abs(base))
            dev = np.expm1(a * np.abs(base[None] - proj))
        if np.all(np.isfinite(moment)) and np.all(np.isfinite(dev)):
            break
        a /= 2
        if a < alpha_floor:
            raise MomentOverflow(f"exponential moments overflow even at alpha={a:.3g}")
    n_ok = base.size
    return ApproximationProfile(
        alpha=a, p=np.asarray(p_list, dtype=float), d_hat=dev.mean(axis=1),
        d_stderr=dev.std(axis=1, ddof=1) / math.sqrt(n_ok),
        c_alpha=float(moment.mean()),
        c_alpha_stderr=0.0 if np.all(moment == moment[0]) else float(moment.std(ddof=1) / math.sqrt(n_ok)),
        theta_gap=np.array(gaps) if theta is not None else None)


# ---------------------------------------------------------------------------
# lagged-letter Markov chain


@dataclass(frozen=True, eq=False)
class ChainState:
    """``(g_0, ..., g_p, x, q)``: a window of ``p + 1`` letters, a point and a counter."""

    letters: np.ndarray
    point: np.ndarray
    counter: int = 0

    def __post_init__(self):
        letters = np.asarray(self.letters, dtype=float)
        if letters.ndim != 3 or letters.shape[1] != letters.shape[2]:
            raise ValueError("letters must have shape (p + 1, d, d)")
        pt = self.point.coords if isinstance(self.point, ProjPoint) else np.asarray(self.point, dtype=float)
        object.__setattr__(self, "letters", letters)
        object.__setattr__(self, "point", normalize_rows(pt))

    @property
    def p(self) -> int:
        return self.letters.shape[0] - 1


def random_state(ensemble, p, seed=0, x=None, space=None) -> ChainState:
    """A state with letters drawn from the law and ``x`` fixed or stationary."""
    space = Projective() if space is None else space
    rng = chunk_rng(seed, "chain-initial")
    letters = ensemble.sample(rng, p + 1)
    pt = space.start_sampler(ensemble)(rng, 1)[0] if x is None else x
    return ChainState(letters, pt, 0)


def chain_step(state: ChainState, g: np.ndarray, space=None) -> ChainState:
    """One transition: shift the window, append ``g``, move the point by ``g_1``."""
    space = Projective() if space is None else space
    a = space.matrices(state.letters[1])
    img = a @ state.point
    letters = np.concatenate([state.letters[1:], np.asarray(g, dtype=float)[None]], axis=0)
    return ChainState(letters, img, state.counter + 1)


def simulate_chain(initial: ChainState, ensemble, steps, rng=None, space=None):
    """``[xi_0, ..., xi_steps]`` under the lagged-letter transition."""
    from .streams import as_generator

    rng = as_generator(rng)
    out = [initial]
    state = initial
    draws = ensemble.sample(rng, steps)
    for k in range(steps):
        state = chain_step(state, draws[k], space)
        out.append(state)
    return out


def sigma_p(letters0, points, space=None):
    """``-c(g_0^{-1}, x)`` row-wise: the cocycle increment carried by a chain state."""
    space = Projective() if space is None else space
    return -space.inverse_cocycle(letters0, points)


def _run_chains(initial_letters, initial_points, q0, ensemble, n, f, space, rng):
    """Vectorised chains from per-row initial states.

    Returns ``(incs (N, n+p), ftilde (N, n+1))`` where ``incs[:, i-1]`` is
    ``sigma_p(xi_i)`` and ``ftilde[:, k] = f~(xi_k)``.
    """
    size, p1 = initial_letters.shape[:2]
    p = p1 - 1
    window = np.array(initial_letters, dtype=float)
    pts = np.array(initial_points, dtype=float)
    steps = n + p
    draws = ensemble.sample(rng, (size, steps))
    incs = np.empty((size, steps))
    ftilde = np.empty((size, n + 1))
    if f is not None:
        ftilde[:, 0] = f.evaluate(q0, window[:, 1:], pts, rng)
    for i in range(1, steps + 1):
        a = space.matrices(window[:, 1]) if p >= 1 else None
        if p >= 1:
            img = np.einsum("nij,nj->ni", a, pts)
        else:
            img = np.einsum("nij,nj->ni", space.matrices(draws[:, i - 1]), pts)
        pts = img / np.linalg.norm(img, axis=1)[:, None]
        window = np.concatenate([window[:, 1:], draws[:, i - 1:i]], axis=1)
        incs[:, i - 1] = sigma_p(window[:, 0], pts, space)
        if f is not None and i <= n:
            ftilde[:, i] = f.evaluate(q0 + i, window[:, 1:], pts, rng)
    return incs, ftilde


def _check_chain_f(f, p, q0, n):
    if f is None:
        return
    worst = max(f.lookahead(q0 + k) for k in range(n + 1))
    if worst > p:
        raise ValueError(f"the perturbation reads {worst} letters but the chain window holds {p}")


def estimate_W_chain(initial: ChainState, ensemble, f=None, t=0.0, n=1, N=10_000, seed=0,
                     space=None, workers=1) -> WeightedEstimate:
    """``E_a[(t + sum_{i<=n+p} sigma_p(xi_i)); tau~ > n]`` for the chain started at ``a``."""
    space = Projective() if space is None else space
    p = initial.p
    _check_chain_f(f, p, initial.counter, n)
    if p == 0:
        raise ValueError("the chain needs p >= 1 (g_0 is a placeholder)")

    def work(rng, size, _):
        letters = np.tile(initial.letters, (size, 1, 1, 1))
        pts = np.tile(initial.point, (size, 1))
        incs, ft = _run_chains(letters, pts, initial.counter, ensemble, n, f, space, rng)
        return _chain_values(incs, ft, t, n, f)

    vals = np.concatenate(map_chunks(work, N, seed, "chain-W", workers))
    return from_samples(vals, seed)


def _chain_values(incs, ft, t, n, f):
    cum = np.cumsum(incs, axis=1)
    if f is None:
        walk = cum[:, :n]
    else:
        walk = cum[:, :n] + ft[:, 1:] - ft[:, :1]
    alive = np.all(t + walk >= 0, axis=1)
    return np.where(alive, t + cum[:, -1], 0.0)


def chain_disintegration(ensemble, f, t, n, p, N=10_000, seed=0, space=None, start=None, workers=1):
    """Average of the chain functional over ``(g_0..g_p) ~ mu^{p+1}``, ``x`` stationary.

    Equals ``estimate_U(..., lag=p)`` for perturbations reading at most ``p``
    letters.
    """
    space = Projective() if space is None else space
    _check_chain_f(f, p, 0, n)
    if p < 1:
        raise ValueError("need p >= 1")
    starts = _resolve_starts(space, ensemble, start)

    def work(rng, size, _):
        pts = starts(rng, size)
        letters = ensemble.sample(rng, (size, p + 1))
        incs, ft = _run_chains(letters, pts, 0, ensemble, n, f, space, rng)
        return _chain_values(incs, ft, t, n, f)

    vals = np.concatenate(map_chunks(work, N, seed, "chain-I1", workers))
    return from_samples(vals, seed)


@dataclass(frozen=True)
class MartingaleRow:
    k: int
    block: str
    mean: float
    stderr: float
    count: int

    @property
    def z(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.mean == 0 else math.inf
        return self.mean / self.stderr


def martingale_residual(initial: ChainState, ensemble, n, N=100_000, seed=0, space=None, workers=1):
    """Conditional means of ``M_{k+1} - M_k`` on the blocks ``{all, M_k >= 0, M_k < 0}``.

    ``M_k = sum_{i<=k} h_p(xi_i)`` with ``h_p(xi_i) = sigma_p(xi_{i+p})``; the
    blocks are measurable at time ``k``.
    """
    space = Projective() if space is None else space
    p = initial.p
    if p < 1:
        raise ValueError("need p >= 1")

    def work(rng, size, _):
        letters = np.tile(initial.letters, (size, 1, 1, 1))
        pts = np.tile(initial.point, (size, 1))
        incs, _ = _run_chains(letters, pts, initial.counter, ensemble, n, None, space, rng)
        return incs[:, p:p + n]

    h = np.concatenate(map_chunks(work, N, seed, "martingale", workers))
    m = np.concatenate([np.zeros((h.shape[0], 1)), np.cumsum(h, axis=1)], axis=1)
    rows = []
    for k in range(n):
        inc = h[:, k]
        for name, mask in (("all", np.ones(inc.shape, bool)), ("M>=0", m[:, k] >= 0), ("M<0", m[:, k] < 0)):
            c = int(mask.sum())
            if c < 2:
                continue
            sel = inc[mask]
            est = from_samples(sel, seed)
            rows.append(MartingaleRow(k, name, est.value, est.stderr, c))
    return rows


# ---------------------------------------------------------------------------
# quasi-monotonicity scan


@dataclass(frozen=True)
class ScanCell:
    n: int
    m: int
    t: float
    direction: str
    lhs: float
    rhs: float
    stderr: float
    passed: bool

    def to_dict(self):
        return {"n": self.n, "m": self.m, "t": self.t, "direction": self.direction,
                "lhs": self.lhs, "rhs": self.rhs, "stderr": self.stderr, "pass": self.passed}


@dataclass(frozen=True)
class ScanReport:
    gamma: float
    b: float
    A: float
    passed: bool
    zero_shift_violations: dict
    cells: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"gamma": self.gamma, "b": self.b, "A": self.A, "pass": self.passed,
                           "zero_shift_violations": self.zero_shift_violations,
                           "cells": [c.to_dict() for c in self.cells]}, sort_keys=True)


def _scan_cells(sample, t_grid, A, b, gamma, directions, k_sigma=3.0):
    cells = []
    idx = {n: j for j, n in enumerate(sample.n_list)}
    for n in sample.n_list:
        for m in sample.n_list:
            if m <= n:
                continue
            shift = A * n ** (-gamma)
            for t in t_grid:
                slack = A * n ** (-b) * (1 + max(t, 0.0))
                for direction in directions:
                    lo, hi = (n, m) if direction == "increasing" else (m, n)
                    left = sample.values(idx[lo], t)
                    right = sample.values(idx[hi], t + shift)
                    diff = left - right
                    lhs = float(left.mean())
                    rhs = float(right.mean()) + slack
                    se = float(diff.std(ddof=1) / math.sqrt(diff.size)) if np.any(diff != diff[0]) else 0.0
                    ok = lhs <= rhs + k_sigma * se + 1e-12 * max(1.0, abs(rhs))
                    cells.append(ScanCell(n, m, float(t), direction, lhs, rhs, se, bool(ok)))
    return cells


def quasi_monotonicity_scan(ensemble, f=None, theta=None, t_grid=(0.0, 1.0, 5.0), n_list=(16, 32, 64, 128),
                            N=20_000, seed=0, space=None, start=None, gamma=0.25, b_grid=(0.25, 0.5, 1.0),
                            directions=("increasing", "decreasing"), A_max=1e3, workers=1) -> ScanReport:
    """Fit the smallest ``A`` (over ``b`` in ``b_grid``) for which every cell passes.

    A cell checks ``U_lo(t) <= U_hi(t + A n^-gamma) + A n^-b (1 + max(t,0)) + 3 se``
    with ``(lo, hi) = (n, m)`` for the increasing and ``(m, n)`` for the
    decreasing direction, on shared paths.  Passing is monotone in ``A``
    because every ``U`` is non-decreasing in ``t``, so ``A`` is found by
    bisection.
    """
    sample = sample_perturbed(ensemble, f, theta, n_list, N, seed, space, start, None, workers, tag="scan")
    zero = {d: sum(not c.passed for c in _scan_cells(sample, t_grid, 0.0, 1.0, gamma, (d,)))
            for d in directions}

    def passes(A, b):
        return all(c.passed for c in _scan_cells(sample, t_grid, A, b, gamma, directions))

    best = None
    for b in b_grid:
        if passes(0.0, b):
            best = (0.0, b)
            break
        hi = 1.0
        while not passes(hi, b):
            hi *= 2
            if hi > A_max:
                break
        if hi > A_max:
            continue
        lo = 0.0
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if passes(mid, b):
                hi = mid
            else:
                lo = mid
        if best is None or hi < best[0]:
            best = (hi, b)
    if best is None:
        return ScanReport(gamma, float(b_grid[-1]), math.inf, False, zero,
                          _scan_cells(sample, t_grid, A_max, b_grid[-1], gamma, directions))
    A, b = best
    return ScanReport(gamma, float(b), float(A), True, zero,
                      _scan_cells(sample, t_grid, A, b, gamma, directions))
