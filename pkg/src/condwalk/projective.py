"""Projective points, group elements, the norm cocycles and the delta bracket.

Points of P(V) and P(V*) are stored as unit vectors whose first nonzero
coordinate is positive, so every log-norm formula can drop the ``||v||``
denominators.  The dual action of ``g`` is the inverse transpose ``g^{-T}``;
in particular ``g^{-1}`` acts on V* through ``g^T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import DimensionError, IllConditioned, InfiniteDelta, InvalidPoint

#: pairings below this magnitude are treated as exactly orthogonal
UNDERFLOW = 1e-300
#: largest accepted 2-norm condition number of a group element
MAX_CONDITION = 1e12


def _canonical(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise InvalidPoint("point coordinates must be finite and non-empty")
    r = float(np.linalg.norm(v))
    if r == 0.0:
        raise InvalidPoint("the zero vector does not define a projective point")
    u = v / r
    nz = np.flatnonzero(u)
    if u[nz[0]] < 0:
        u = -u
    u.setflags(write=False)
    return u


@dataclass(frozen=True, eq=False)
class ProjPoint:
    """A point of P(V), kept as a canonical unit representative."""

    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _canonical(self.coords))

    @property
    def dim(self) -> int:
        return self.coords.shape[0]

    def __repr__(self):
        return f"{type(self).__name__}({np.array2string(self.coords, precision=6)})"


class DualProjPoint(ProjPoint):
    """A point of P(V*), i.e. a linear form up to scaling."""


def normalize_point(v) -> ProjPoint:
    return ProjPoint(v)


def normalize_dual(v) -> DualProjPoint:
    return DualProjPoint(v)


@dataclass(frozen=True, eq=False)
class GroupElement:
    """An invertible matrix together with its cached inverse.

    The inverse comes from an LU factorisation with partial pivoting and is
    reused by every dual-side operation.
    """

    mat: np.ndarray
    inv: np.ndarray = field(default=None)

    def __post_init__(self):
        m = np.array(self.mat, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise IllConditioned("matrix has non-finite entries")
        cond = np.linalg.cond(m)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise IllConditioned(f"condition number {cond:.3g} exceeds {MAX_CONDITION:.0e}")
        if self.inv is None:
            lu = scipy.linalg.lu_factor(m)
            inv = scipy.linalg.lu_solve(lu, np.eye(m.shape[0]))
        else:
            inv = np.array(self.inv, dtype=float)
        m.setflags(write=False)
        inv.setflags(write=False)
        object.__setattr__(self, "mat", m)
        object.__setattr__(self, "inv", inv)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    @cached_property
    def dual_mat(self) -> np.ndarray:
        """Matrix of the dual action, ``g^{-T}``."""
        return self.inv.T

    @cached_property
    def log_norm(self) -> float:
        return math.log(np.linalg.norm(self.mat, 2))

    @cached_property
    def log_norm_inv(self) -> float:
        return math.log(np.linalg.norm(self.inv, 2))

    def inverse(self) -> "GroupElement":
        return GroupElement(self.inv, self.mat)

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return GroupElement(self.mat @ other.mat, other.inv @ self.inv)

    @classmethod
    def identity(cls, d: int) -> "GroupElement":
        return cls(np.eye(d), np.eye(d))


def _side_of(p) -> str:
    return "dual" if isinstance(p, DualProjPoint) else "primal"


def _check(g: GroupElement, p: ProjPoint, side):
    if not isinstance(p, ProjPoint):
        raise TypeError(f"expected a projective point, got {type(p).__name__}")
    kind = _side_of(p)
    if side is not None and side != kind:
        raise TypeError(f"side={side!r} does not match a {type(p).__name__}")
    if p.dim != g.dim:
        raise DimensionError(f"point has dimension {p.dim}, group element {g.dim}")
    return kind


def act(g: GroupElement, p: ProjPoint, side=None) -> ProjPoint:
    """Image of ``p`` under ``g``; dual points are moved by ``g^{-T}``."""
    kind = _check(g, p, side)
    if kind == "dual":
        return DualProjPoint(g.dual_mat @ p.coords)
    return ProjPoint(g.mat @ p.coords)


def cocycle(g: GroupElement, p: ProjPoint, side=None) -> float:
    """``log ||g v||`` for the unit representative (``g^{-T}`` on the dual side)."""
    kind = _check(g, p, side)
    m = g.dual_mat if kind == "dual" else g.mat
    return math.log(np.linalg.norm(m @ p.coords))


def delta(x: ProjPoint, y: DualProjPoint) -> float:
    """``-log |<phi, v>|``; ``math.inf`` on (numerically) orthogonal pairs."""
    if x.dim != y.dim:
        raise DimensionError(f"dimensions differ: {x.dim} vs {y.dim}")
    pairing = abs(float(np.dot(x.coords, y.coords)))
    if pairing <= UNDERFLOW:
        return math.inf
    return max(0.0, -math.log(pairing))


def sin_distance(x: ProjPoint, xp: ProjPoint) -> float:
    """Norm of ``v ^ v'`` for unit representatives."""
    if x.dim != xp.dim:
        raise DimensionError(f"dimensions differ: {x.dim} vs {xp.dim}")
    return float(min(1.0, sin_distance_rows(x.coords[None], xp.coords[None])[0]))


def cohomology_residual(g: GroupElement, x: ProjPoint, y: DualProjPoint) -> float:
    """``[sigma(g,x) - delta(gx,y)] - [sigma*(g^-1,y) - delta(x,g^-1 y)]``."""
    if not isinstance(y, DualProjPoint) or isinstance(x, DualProjPoint):
        raise TypeError("expected a primal point x and a dual point y")
    gx = act(g, x)
    ginv_y = act(g.inverse(), y)
    d1 = delta(gx, y)
    d2 = delta(x, ginv_y)
    if math.isinf(d1) or math.isinf(d2):
        raise InfiniteDelta("cohomology residual needs finite brackets")
    left = cocycle(g, x) - d1
    right = cocycle(g.inverse(), y) - d2
    return left - right


# ---------------------------------------------------------------------------
# batched helpers used by the simulation modules


def normalize_rows(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def log_pairing(v: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """``log |<phi, v>|`` row-wise; ``-inf`` where the pairing underflows."""
    p = np.abs(np.einsum("...i,...i->...", v, phi))
    out = np.full(p.shape, -np.inf)
    ok = p > UNDERFLOW
    out[ok] = np.log(p[ok])
    return out


def delta_rows(v: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Row-wise delta for unit rows; ``inf`` on underflow, never negative."""
    return np.maximum(0.0, -log_pairing(v, phi))


def sin_distance_rows(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Row-wise ``||v ^ w||`` for unit rows (exact near zero, unlike 1 - c^2)."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    d = v.shape[-1]
    if d == 1:
        return np.zeros(v.shape[:-1])
    i, j = np.triu_indices(d, k=1)
    wedge = v[..., i] * w[..., j] - v[..., j] * w[..., i]
    return np.sqrt(np.einsum("...k,...k->...", wedge, wedge))


def matvec(mats: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", mats, v)


def cocycle_rows(mats: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row-wise ``log ||g v||`` for unit rows ``v``."""
    return np.log(np.linalg.norm(matvec(mats, v), axis=-1))


def cohomology_residual_rows(mats: np.ndarray, v: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Row-wise :func:`cohomology_residual`; ``inf``/``nan`` where a bracket is infinite.

    ``sigma*(g^-1, y)`` uses the dual matrix of ``g^-1``, which is ``g^T``.
    """
    gv = matvec(mats, v)
    gv_norm = np.linalg.norm(gv, axis=-1)
    dual = matvec(np.swapaxes(mats, -1, -2), phi)     # (g^-1)^{-T} phi = g^T phi
    dual_norm = np.linalg.norm(dual, axis=-1)
    d1 = delta_rows(gv / gv_norm[..., None], phi)
    d2 = delta_rows(v, dual / dual_norm[..., None])
    with np.errstate(invalid="ignore"):
        return (np.log(gv_norm) - d1) - (np.log(dual_norm) - d2)
