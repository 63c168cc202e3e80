"""Matrix laws on GL(d, R): specification, sampling, Lyapunov exponent and
centering, stationary-measure samplers and proximality diagnostics.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, special

from . import kernels
from .errors import (IllConditioned, NotConverged, ProximalityWarning, SingularAtom,
                     WeightError)
from .projective import (MAX_CONDITION, DualProjPoint, GroupElement, ProjPoint,
                         normalize_rows, sin_distance_rows)
from .stats import weighted_line
from .streams import as_generator, chunk_rng, map_chunks

log = logging.getLogger(__name__)

KINDS = ("discrete", "rotation-diagonal", "gaussian-perturbed", "log-normal")
_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def default_start(d: int) -> np.ndarray:
    """A fixed generic unit vector (square roots of primes, normalised)."""
    if d <= len(_PRIMES):
        v = np.sqrt(np.array(_PRIMES[:d], dtype=float))
    else:
        v = np.sqrt(np.arange(2, d + 2, dtype=float))
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class EnsembleSpec:
    dim: int
    kind: str
    atoms: tuple = ()
    weights: tuple = ()
    log_gains: tuple = ()
    eps: float = 0.0
    scale: float = 1.0

    def validate(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.kind not in KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}; expected one of {KINDS}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError("scale must be a positive finite number")
        if self.kind == "discrete":
            if len(self.atoms) == 0:
                raise ValueError("a discrete ensemble needs at least one atom")
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(self.atoms),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise WeightError(f"weights must be {len(self.atoms)} probabilities summing to 1")
            for i, a in enumerate(self.atoms):
                a = np.asarray(a, dtype=float)
                if a.shape != (self.dim, self.dim):
                    raise ValueError(f"atom {i} has shape {a.shape}, expected {(self.dim, self.dim)}")
                cond = np.linalg.cond(a)
                if not np.isfinite(cond) or cond > MAX_CONDITION:
                    raise SingularAtom(f"atom {i} is not safely invertible (cond={cond:.3g})")
        elif self.kind == "rotation-diagonal":
            if len(self.log_gains) != self.dim:
                raise ValueError("rotation-diagonal needs one log-gain per dimension")
        elif self.eps < 0:
            raise ValueError("eps must be non-negative")


@dataclass(frozen=True)
class LyapunovEstimate:
    lambda_hat: float
    stderr: float
    steps: int
    replicas: int


def _small_det(m: np.ndarray) -> np.ndarray:
    """Determinants of a stack of matrices; closed form up to 3x3."""
    d = m.shape[-1]
    if d == 1:
        return m[..., 0, 0].copy()
    if d == 2:
        return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    if d == 3:
        return (m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
                - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
                + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]))
    return np.linalg.det(m)


def _haar_rotations(rng, shape, d):
    if d == 1:
        return np.ones(shape + (1, 1))
    if d == 2:
        th = rng.uniform(0.0, 2 * np.pi, size=shape)
        c, s = np.cos(th), np.sin(th)
        return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    if d == 3:
        # unit quaternions uniform on S^3 map to Haar-distributed rotations
        qt = rng.standard_normal(shape + (4,))
        qt /= np.linalg.norm(qt, axis=-1, keepdims=True)
        a, b, c, e = np.moveaxis(qt, -1, 0)
        return np.stack([
            np.stack([1 - 2 * (c * c + e * e), 2 * (b * c - a * e), 2 * (b * e + a * c)], -1),
            np.stack([2 * (b * c + a * e), 1 - 2 * (b * b + e * e), 2 * (c * e - a * b)], -1),
            np.stack([2 * (b * e - a * c), 2 * (c * e + a * b), 1 - 2 * (b * b + c * c)], -1),
        ], -2)
    z = rng.standard_normal(shape + (d, d))
    q, r = np.linalg.qr(z)
    q = q * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[..., None, :]
    neg = np.linalg.det(q) < 0
    q[neg, :, 0] *= -1
    return q


@dataclass(frozen=True, eq=False)
class Ensemble:
    """A sampleable law of invertible matrices (immutable).

    ``rotation-diagonal`` samples ``diag(exp(log_gains)) @ R`` with ``R``
    Haar-distributed in SO(d); ``gaussian-perturbed`` samples ``I + eps Z``;
    ``log-normal`` samples ``exp(eps Z) I`` (Gaussian increments of spread
    ``eps``).  Every sample is multiplied by ``spec.scale``.
    """

    spec: EnsembleSpec
    centering: LyapunovEstimate = field(default=None)

    def __post_init__(self):
        self.spec.validate()
        if self.spec.kind == "discrete":
            atoms = np.array([np.asarray(a, dtype=float) for a in self.spec.atoms])
            object.__setattr__(self, "_atoms", atoms)
            object.__setattr__(self, "_weights", np.asarray(self.spec.weights, dtype=float))

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def scale(self) -> float:
        return self.spec.scale

    @property
    def is_discrete(self) -> bool:
        return self.spec.kind == "discrete"

    @property
    def atoms(self) -> np.ndarray:
        """Scaled atoms of a discrete ensemble."""
        if not self.is_discrete:
            raise TypeError("only discrete ensembles have atoms")
        return self._atoms * self.spec.scale

    @property
    def weights(self) -> np.ndarray:
        if not self.is_discrete:
            raise TypeError("only discrete ensembles have weights")
        return self._weights

    def rescaled(self, factor: float) -> "Ensemble":
        return Ensemble(replace(self.spec, scale=self.spec.scale * float(factor)))

    def sample(self, rng, shape=()) -> np.ndarray:
        """Matrices of shape ``shape + (d, d)`` drawn from the (scaled) law."""
        rng = as_generator(rng)
        if isinstance(shape, int):
            shape = (shape,)
        shape = tuple(shape)
        d = self.dim
        kind = self.spec.kind
        if kind == "discrete":
            k = len(self._atoms)
            if k == 1:
                out = np.broadcast_to(self._atoms[0], shape + (d, d)).copy()
            else:
                idx = rng.choice(k, size=shape, p=self._weights)
                out = self._atoms[idx]
        elif kind == "rotation-diagonal":
            gains = np.exp(np.asarray(self.spec.log_gains, dtype=float))
            out = gains[:, None] * _haar_rotations(rng, shape, d)
        elif kind == "log-normal":
            z = np.exp(self.spec.eps * rng.standard_normal(shape))
            out = z[..., None, None] * np.eye(d)
        else:
            out = np.eye(d) + self.spec.eps * rng.standard_normal(shape + (d, d))
            if self.spec.eps > 0:
                out = self._reject_singular(out, rng)
        if self.spec.scale != 1.0:
            out = out * self.spec.scale
        return out

    def _reject_singular(self, out, rng):
        d = self.dim
        flat = out.reshape(-1, d, d)
        for _ in range(100):
            det = np.abs(_small_det(flat))
            fro = np.sqrt(np.einsum("nij,nij->n", flat, flat))
            bad = det < 1e-12 * fro ** d
            if not bad.any():
                return flat.reshape(out.shape)
            flat[bad] = np.eye(d) + self.spec.eps * rng.standard_normal((int(bad.sum()), d, d))
        raise IllConditioned("could not draw well-conditioned perturbations")

    def sample_inverse(self, rng, shape=()) -> np.ndarray:
        """Inverses ``g^{-1}`` of draws ``g`` from the law."""
        return np.linalg.inv(self.sample(rng, shape))

    def draw(self, rng) -> GroupElement:
        return GroupElement(self.sample(rng))

    def __repr__(self):
        s = self.spec
        extra = {"discrete": f"atoms={len(s.atoms)}", "rotation-diagonal": f"log_gains={s.log_gains}",
                 "gaussian-perturbed": f"eps={s.eps}", "log-normal": f"eps={s.eps}"}[s.kind]
        return f"Ensemble({s.kind}, d={s.dim}, {extra}, scale={s.scale:.6g})"


def build_ensemble(spec: EnsembleSpec) -> Ensemble:
    return Ensemble(spec)


def draw(ensemble: Ensemble, rng) -> GroupElement:
    return ensemble.draw(rng)


# ---------------------------------------------------------------------------
# convenience constructors


def discrete(atoms, weights=None, scale=1.0) -> Ensemble:
    atoms = [np.atleast_2d(np.asarray(a, dtype=float)) for a in atoms]
    if weights is None:
        weights = [1.0 / len(atoms)] * len(atoms)
    spec = EnsembleSpec(dim=atoms[0].shape[0], kind="discrete",
                        atoms=tuple(a.tolist() for a in atoms), weights=tuple(float(w) for w in weights),
                        scale=float(scale))
    return Ensemble(spec)


def rotation_diagonal(log_gains, scale=1.0) -> Ensemble:
    log_gains = tuple(float(a) for a in log_gains)
    return Ensemble(EnsembleSpec(dim=len(log_gains), kind="rotation-diagonal",
                                 log_gains=log_gains, scale=float(scale)))


def gaussian_perturbed(dim, eps, scale=1.0) -> Ensemble:
    return Ensemble(EnsembleSpec(dim=int(dim), kind="gaussian-perturbed", eps=float(eps),
                                 scale=float(scale)))


def log_normal(dim, eps, scale=1.0) -> Ensemble:
    return Ensemble(EnsembleSpec(dim=int(dim), kind="log-normal", eps=float(eps), scale=float(scale)))


def identity(dim) -> Ensemble:
    return discrete([np.eye(dim)])


# ---------------------------------------------------------------------------
# walks without bookkeeping


def run_walk(ensemble, starts, steps, rng, transpose=False, block=256):
    """Propagate unit vectors ``starts`` (N, d) for ``steps`` steps.

    Returns the total log-norm growth per path and the final directions.
    With ``transpose`` the letters act through ``g^T`` (the dual action of
    ``g^{-1}``).
    """
    v = np.array(starts, dtype=float)
    total = np.zeros(v.shape[0])
    done = 0
    while done < steps:
        b = min(block, steps - done)
        mats = ensemble.sample(rng, (v.shape[0], b))
        if transpose:
            mats = np.ascontiguousarray(np.swapaxes(mats, -1, -2))
        inc, v = kernels.propagate(mats, v)
        total += inc.sum(axis=1)
        done += b
    return total, v


def estimate_lyapunov(ensemble, steps, replicas, seed=0, x0=None, workers=1) -> LyapunovEstimate:
    """Mean of ``S_steps / steps`` over independent replicas."""
    if steps < 1 or replicas < 2:
        raise ValueError("need steps >= 1 and replicas >= 2")
    x0 = default_start(ensemble.dim) if x0 is None else normalize_rows(np.asarray(x0, dtype=float))

    def work(rng, size, _):
        total, _v = run_walk(ensemble, np.tile(x0, (size, 1)), steps, rng)
        return total / steps

    vals = np.concatenate(map_chunks(work, replicas, seed, "lyapunov", workers, chunk=256))
    return LyapunovEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(replicas)),
                            int(steps), int(replicas))


def _expected_log_quadratic(laplace) -> float:
    """``E log Q`` from the Laplace transform ``s -> E exp(-s Q)`` of a positive variable.

    Uses ``log q = int_0^inf (exp(-s) - exp(-s q)) ds / s``.
    """
    def integrand(s):
        return (math.exp(-s) - laplace(s)) / s

    head, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12, limit=200)
    tail, _ = integrate.quad(integrand, 1.0, math.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
    return head + tail


def one_step_exponent(ensemble):
    """Exact Lyapunov exponent for laws where ``E sigma(g, x)`` does not depend on ``x``.

    Such laws have ``lambda = E log||g x||`` for any unit ``x``.  This covers
    the rotation-diagonal, gaussian-perturbed and log-normal kinds, and
    discrete laws whose atoms are multiples of orthogonal matrices.  Returns
    ``None`` for every other law.
    """
    spec = ensemble.spec
    d = spec.dim
    log_scale = math.log(spec.scale)
    if spec.kind == "log-normal":
        return log_scale
    if spec.kind == "discrete":
        out = 0.0
        for a, w in zip(ensemble._atoms, ensemble._weights):
            gram = a.T @ a
            c2 = gram[0, 0]
            if not np.allclose(gram, c2 * np.eye(d), rtol=1e-13, atol=1e-13 * c2):
                return None
            out += w * 0.5 * math.log(c2)
        return out + log_scale
    if spec.kind == "rotation-diagonal":
        c = np.exp(2 * np.asarray(spec.log_gains, dtype=float))
        # ||D u||^2 with u uniform on the sphere: Q(z) / ||z||^2 for Gaussian z
        num = _expected_log_quadratic(lambda s: float(np.prod((1 + 2 * s * c) ** -0.5)))
        den = math.log(2.0) + float(special.digamma(d / 2))
        return 0.5 * (num - den) + log_scale
    eps2 = spec.eps ** 2
    if eps2 == 0:
        return log_scale
    # ||x + eps Z x||^2 is eps^2 times a noncentral chi-square with d degrees of freedom
    lam = _expected_log_quadratic(lambda s: (1 + 2 * s * eps2) ** (-d / 2) * math.exp(-s / (1 + 2 * s * eps2)))
    return 0.5 * lam + log_scale


def center(ensemble, tolerance=1e-3, seed=0, steps=2000, replicas=64, max_rounds=6, workers=1) -> Ensemble:
    """Rescale so that the Lyapunov exponent vanishes.

    Uses ``sigma(c g, x) = sigma(g, x) + log c``: the scale is multiplied by
    ``exp(-lambda)`` and the exponent re-estimated on a fresh stream until it
    is within ``tolerance + 3 stderr`` of zero.  ``lambda`` is exact when
    :func:`one_step_exponent` applies, otherwise a Monte Carlo estimate.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    current = ensemble
    exact = one_step_exponent(ensemble)
    for rnd in range(max_rounds):
        if exact is not None:
            if rnd == 0 and exact != 0.0:
                current = current.rescaled(math.exp(-exact))
        else:
            est = estimate_lyapunov(current, steps, replicas, seed=seed + 2 * rnd, workers=workers)
            if est.lambda_hat != 0.0:
                current = current.rescaled(math.exp(-est.lambda_hat))
        check = estimate_lyapunov(current, steps, replicas, seed=seed + 2 * rnd + 1, workers=workers)
        log.debug("centering round %d: lambda %.3g (+- %.2g)", rnd, check.lambda_hat, check.stderr)
        if abs(check.lambda_hat) <= tolerance + 3 * check.stderr:
            return Ensemble(current.spec, centering=check)
    raise NotConverged(f"Lyapunov exponent still {check.lambda_hat:.3g} after {max_rounds} rounds")


# ---------------------------------------------------------------------------
# stationary measures and the Furstenberg boundary


def sample_stationary(ensemble, side="primal", depth=50, size=None, seed=0, x0=None):
    """Approximate draws from the stationary measure on P(V) or P(V*).

    Primal: ``g_depth ... g_1 x0`` (same law as ``g_1 ... g_depth x0``).
    Dual: products of inverse draws acting on P(V*), i.e. the transposes.
    Returns one point when ``size`` is None, otherwise an ``(size, d)`` array.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if side not in ("primal", "dual"):
        raise ValueError("side must be 'primal' or 'dual'")
    d = ensemble.dim
    x0 = default_start(d) if x0 is None else normalize_rows(np.asarray(x0, dtype=float))
    n = 1 if size is None else int(size)
    rng = chunk_rng(seed, f"stationary-{side}")
    _, v = run_walk(ensemble, np.tile(x0, (n, 1)), depth, rng, transpose=(side == "dual"))
    if size is None:
        return DualProjPoint(v[0]) if side == "dual" else ProjPoint(v[0])
    return v


def boundary_point(prefix, x0) -> ProjPoint:
    """``g_1 ... g_L x0`` for ``prefix = [g_1, ..., g_L]``."""
    if len(prefix) == 0:
        raise ValueError("prefix must be non-empty")
    v = x0.coords if isinstance(x0, ProjPoint) else np.asarray(x0, dtype=float)
    for g in reversed(prefix):
        m = g.mat if isinstance(g, GroupElement) else np.asarray(g)
        v = m @ v
        v = v / np.linalg.norm(v)
    return ProjPoint(v)


def equivariance_residual(prefix, x0) -> float:
    """``d(xi(omega), g_1 xi(T omega))`` with both truncated at ``len(prefix) - 1`` letters."""
    if len(prefix) < 2:
        raise ValueError("need at least two elements")
    a = boundary_point(prefix[:-1], x0)
    b = boundary_point(prefix, x0)
    return float(sin_distance_rows(a.coords, b.coords))


def equivariance_residuals(ensemble, depth, size, seed=0, x0=None) -> np.ndarray:
    """Batch version of :func:`equivariance_residual` on fresh prefixes."""
    d = ensemble.dim
    x0 = default_start(d) if x0 is None else np.asarray(x0, dtype=float)
    rng = chunk_rng(seed, "equivariance")
    mats = ensemble.sample(rng, (size, depth + 1))
    a = kernels.suffix_points(np.ascontiguousarray(mats[:, :depth]), np.tile(x0, (size, 1)))[:, 0]
    b = kernels.suffix_points(mats, np.tile(x0, (size, 1)))[:, 0]
    return sin_distance_rows(a, b)


@dataclass(frozen=True)
class ContractionProfile:
    n: np.ndarray
    fraction: np.ndarray
    pairs: int
    a: float

    def log_fit(self):
        """Line fit of log(fraction) against n over the positive entries."""
        ok = self.fraction > 0
        f = self.fraction[ok]
        se = np.sqrt(f * (1 - f) / self.pairs + 1.0 / self.pairs ** 2) / f
        return weighted_line(self.n[ok], np.log(f), se)


def contraction_profile(ensemble, n_list, pairs=1000, a=0.05, seed=0) -> ContractionProfile:
    """Fraction of random pairs (x, x') still further apart than ``exp(-a n)``."""
    if pairs < 100 or a <= 0:
        raise ValueError("need pairs >= 100 and a > 0")
    n_list = np.asarray(sorted(int(n) for n in n_list))
    d = ensemble.dim
    rng = chunk_rng(seed, "contraction")
    x = normalize_rows(rng.standard_normal((pairs, d)))
    xp = normalize_rows(rng.standard_normal((pairs, d)))
    fractions = []
    done = 0
    for n in n_list:
        steps = n - done
        if steps > 0:
            mats = ensemble.sample(rng, (pairs, steps))
            _, x = kernels.propagate(mats, x)
            _, xp = kernels.propagate(mats, xp)
            done = n
        dist = sin_distance_rows(x, xp)
        fractions.append(float(np.mean(dist > math.exp(-a * n))))
    return ContractionProfile(n_list, np.array(fractions), int(pairs), float(a))


def singular_gap(ensemble, steps=400, replicas=64, seed=0):
    """Estimate of lambda_1 - lambda_2 from a two-frame QR iteration.

    Returns ``(gap, stderr)``; a clearly positive gap is the runtime signal of
    proximality.  Warns with :class:`ProximalityWarning` otherwise.
    """
    d = ensemble.dim
    if d < 2:
        return math.inf, 0.0
    rng = chunk_rng(seed, "gap")
    q = np.tile(np.eye(d)[:, :2], (replicas, 1, 1))
    acc = np.zeros((replicas, 2))
    for _ in range(steps):
        g = ensemble.sample(rng, replicas)
        q, r = np.linalg.qr(g @ q)
        acc += np.log(np.abs(np.diagonal(r, axis1=1, axis2=2)))
    gaps = (acc[:, 0] - acc[:, 1]) / steps
    gap = float(gaps.mean())
    se = float(gaps.std(ddof=1) / math.sqrt(replicas))
    if not gap > 3 * se + 1e-3:
        warnings.warn(f"top singular gap {gap:.3g} +- {se:.2g} is not clearly positive; "
                      "proximality looks violated", ProximalityWarning, stacklevel=2)
    return gap, se
