"""Online constraint screening via an ellipsoidal minimizer bound.

From any candidate sequence v~ the minimal feasible slacks are
completed, an ellipsoid guaranteed to contain the full-problem
minimizer is formed, and every constraint whose half-space contains the
ellipsoid (with its slack at zero) is removed.  Solving the reduced
problem then yields the minimizer of the full problem.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from campc.condenser import CondensedQP, Provenance
from campc.numqp import (
    OPTIMAL,
    DimensionError,
    SoftQP,
    SolveResult,
)


class EquivalenceViolation(RuntimeError):
    """A removed constraint is violated by the reduced minimizer."""


def _softqp(qp) -> SoftQP:
    return qp.qp if isinstance(qp, CondensedQP) else qp


def _provenance(qp) -> Provenance | None:
    return qp.provenance if isinstance(qp, CondensedQP) else None


@dataclass(frozen=True)
class ScreenerCache:
    """Per-row geometry precomputed offline: zeta_j = |W_j G^-1|_2.

    `zero_rows` marks constraint rows with a zero normal (they need the
    sign of c_j + L_j z instead of the ellipsoid test); it is None when
    no such row exists, which keeps the hot screening path branch-free.
    """

    zeta: np.ndarray
    qp: SoftQP
    zero_rows: np.ndarray = None


@dataclass(frozen=True)
class EllipsoidBound:
    """Ellipsoid {v : |G(v - q)|^2 <= sigma} containing the minimizer."""

    q: np.ndarray
    sigma: float
    G: np.ndarray

    def contains(self, v: np.ndarray, rel_tol: float = 0.0) -> bool:
        lhs = float(np.sum((self.G @ (np.asarray(v, float) - self.q)) ** 2))
        return lhs <= self.sigma * (1.0 + rel_tol) + rel_tol

    def radius_sq(self, v: np.ndarray) -> float:
        return float(np.sum((self.G @ (np.asarray(v, float) - self.q)) ** 2))

    def is_degenerate(self, qp, z: np.ndarray,
                      rel: float = 1e-14) -> bool:
        """Singleton ellipsoid: the candidate already solves the problem."""
        Fz = _softqp(qp).F @ np.asarray(z, float).ravel()
        return self.sigma <= rel * (1.0 + float(Fz @ Fz))


@dataclass(frozen=True)
class KeptSet:
    """Ascending indices of the constraints kept in the reduced problem."""

    indices: np.ndarray
    n_c: int
    counts: dict = None  # rows kept per constraint kind, when known

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int).ravel()
        if len(idx) and (idx.min() < 0 or idx.max() >= self.n_c):
            raise IndexError("kept index out of range")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("kept indices must be strictly ascending")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)


def precompute_row_norms(qp) -> ScreenerCache:
    """zeta_j = |W_j G^-1|_2 via one triangular solve per row."""
    soft = _softqp(qp)
    if soft.n_c:
        Y = sla.solve_triangular(soft.G, soft.W.T, trans="T", lower=False)
        zeta = np.linalg.norm(Y, axis=0)
    else:
        zeta = np.zeros(0)
    zero = zeta <= 0.0
    return ScreenerCache(zeta=zeta, qp=soft,
                         zero_rows=zero if zero.any() else None)


def complete_slacks(v_tilde: np.ndarray, qp, z: np.ndarray,
                    rhs: np.ndarray | None = None) -> np.ndarray:
    """Minimal slacks making (v~, eps~) feasible: max(0, Wv~ - c - Lz).

    `rhs` may carry a precomputed c + Lz.
    """
    soft = _softqp(qp)
    v_tilde = np.asarray(v_tilde, dtype=float).ravel()
    if len(v_tilde) != soft.n_v:
        raise DimensionError(
            f"candidate has length {len(v_tilde)}, expected {soft.n_v}")
    if rhs is None:
        rhs = soft.bound(z)
    return np.maximum(0.0, soft.W @ v_tilde - rhs)


def ellipsoid_bound(v_tilde: np.ndarray, eps_tilde: np.ndarray, qp,
                    z: np.ndarray,
                    v_uc: np.ndarray | None = None) -> EllipsoidBound:
    """Bound on the full-problem minimizer from a feasible pair.

    Center q = (v~ + v_uc)/2 with v_uc = -H^-1 Fz; squared radius
    sigma = rho'eps~ + |G(v~ - v_uc)|^2 / 4.  `v_uc` may carry the
    precomputed unconstrained minimizer.
    """
    soft = _softqp(qp)
    v_tilde = np.asarray(v_tilde, dtype=float).ravel()
    eps_tilde = np.asarray(eps_tilde, dtype=float).ravel()
    if v_uc is None:
        v_uc = soft.unconstrained_minimizer(z)
    q = 0.5 * (v_tilde + v_uc)
    sigma = float(soft.rho @ eps_tilde
                  + 0.25 * np.sum((soft.G @ (v_tilde - v_uc)) ** 2))
    return EllipsoidBound(q=q, sigma=sigma, G=soft.G)


def screen(cache: ScreenerCache, bound: EllipsoidBound, z: np.ndarray,
           eps_tilde: np.ndarray,
           rhs: np.ndarray | None = None,
           Wq: np.ndarray | None = None) -> KeptSet:
    """Keep row j unless its half-space provably contains the ellipsoid.

    Row j is kept when sqrt(sigma)*zeta_j >= |c_j + L_j z - W_j q| with
    a small safety margin (non-strict rule: a tangent constraint is
    kept), or when the candidate violates it (eps~_j > 0).  Rows with a
    zero normal are kept only if always violated.  `rhs` and `Wq` may
    carry precomputed c + Lz and W q.
    """
    soft = cache.qp
    b = soft.bound(z) if rhs is None else rhs
    margin = soft.W @ bound.q if Wq is None else np.array(Wq)
    return _screen_core(cache, bound.sigma, eps_tilde, b, margin)


def _screen_core(cache: ScreenerCache, sigma: float, eps_tilde, b,
                 margin) -> KeptSet:
    """Hot screening path; overwrites `margin` in place."""
    rad = np.sqrt(max(sigma, 0.0))
    # reach of the ellipsoid along W_j plus a small safety margin tau
    tau = 1e-9 * (1.0 + np.abs(b).max(initial=0.0))
    thresh = rad * cache.zeta
    thresh += tau
    gap = np.subtract(b, margin, out=margin)
    np.abs(gap, out=gap)
    keep = thresh >= gap
    keep |= eps_tilde > 0.0
    if cache.zero_rows is not None:
        keep[cache.zero_rows] = b[cache.zero_rows] < 0.0
    idx = np.flatnonzero(keep)
    idx.setflags(write=False)
    kept = object.__new__(KeptSet)
    object.__setattr__(kept, "indices", idx)
    object.__setattr__(kept, "n_c", cache.qp.n_c)
    object.__setattr__(kept, "counts", None)
    return kept


def with_counts(kept: KeptSet, qp: CondensedQP) -> KeptSet:
    """Attach per-kind row counts from the provenance table."""
    prov = _provenance(qp)
    counts = None
    if prov is not None:
        kinds = prov.kind[kept.indices]
        counts = {k: int(np.sum(kinds == k)) for k in np.unique(prov.kind)}
    return KeptSet(indices=kept.indices, n_c=kept.n_c, counts=counts)


def reduce_qp(qp, kept: KeptSet) -> SoftQP:
    """SoftQP with only the kept rows; H, G, F are shared unchanged."""
    soft = _softqp(qp)
    if kept.n_c != soft.n_c:
        raise DimensionError("kept set built for a different problem")
    idx = kept.indices
    return SoftQP(H=soft.H, F=soft.F, W=soft.W[idx], c=soft.c[idx],
                  L=soft.L[idx], rho=soft.rho[idx], G=soft.G)


def expand_solution(red: SolveResult, kept: KeptSet, qp, z: np.ndarray,
                    tol: float = 1e-7,
                    rhs: np.ndarray | None = None) -> SolveResult:
    """Re-embed a reduced solution into the full constraint ordering.

    Slacks for removed rows are recomputed from the minimizer; any of
    them exceeding `tol` signals an unsound screening decision.  `rhs`
    may carry a precomputed c + Lz.
    """
    soft = _softqp(qp)
    v = np.asarray(red.v_star, dtype=float).ravel()
    if rhs is None:
        rhs = soft.bound(z)
    res = soft.W @ v - rhs
    eps = np.maximum(0.0, res)
    removed = np.ones(soft.n_c, dtype=bool)
    removed[kept.indices] = False
    if eps[removed].max(initial=0.0) > tol:
        j = int(np.flatnonzero(removed)[np.argmax(eps[removed])])
        raise EquivalenceViolation(
            f"removed constraint {j} violated by {eps[j]:.3e}")
    eps[kept.indices] = red.eps_star
    return SolveResult(
        v_star=v,
        eps_star=eps,
        objective=soft.objective(v, eps, z),
        status=red.status,
        iterations=red.iterations,
        kkt_residual=red.kkt_residual,
    )


def trivial_solution(bound: EllipsoidBound, v_tilde: np.ndarray, qp,
                     z: np.ndarray) -> SolveResult | None:
    """Degenerate-ellipsoid fast path: the candidate is already optimal."""
    if not bound.is_degenerate(qp, z):
        return None
    soft = _softqp(qp)
    v = np.asarray(v_tilde, dtype=float).ravel()
    eps = np.maximum(0.0, soft.W @ v - soft.bound(z))
    return SolveResult(v_star=v, eps_star=eps,
                       objective=soft.objective(v, eps, z),
                       status=OPTIMAL, iterations=0,
                       kkt_residual=float(bound.sigma))
