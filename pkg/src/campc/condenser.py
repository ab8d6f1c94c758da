"""Condense an offset-free output-tracking MPC problem into a SoftQP.

The tracking problem penalizes output error and input increments over a
horizon N, with soft state/input/rate constraints.  States are
eliminated through the dynamics and inputs through the incremental
parameterization u_i = u_{i-1} + du_i, leaving the stacked increment
sequence v = [du_0, ..., du_{N-1}] as the only decision variable.  The
parameter vector is z = [x; u_prev; y_ref_1; ...; y_ref_N].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from campc.numqp import DimensionError, SoftQP, SolveResult, _as_matrix, _as_vector

KIND_STATE = "state"
KIND_INPUT = "input"
KIND_RATE = "rate"


@dataclass(frozen=True)
class StateSpaceModel:
    """Discrete-time LTI model x+ = Ax + Bu, y = Cx (D must be zero)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray = None

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = np.asarray(self.B, dtype=float).reshape(A.shape[0], -1)
        C = np.asarray(self.C, dtype=float).reshape(-1, A.shape[0])
        D = self.D
        if D is None:
            D = np.zeros((C.shape[0], B.shape[1]))
        D = np.asarray(D, dtype=float).reshape(C.shape[0], B.shape[1])
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if np.any(D != 0.0):
            raise ValueError("direct feedthrough D must be zero")
        for name, val in (("A", A), ("B", B), ("C", C), ("D", D)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class ConstraintBlock:
    """One soft constraint family M w <= g with per-row penalties."""

    M: np.ndarray
    g: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        M = _as_matrix(self.M, "M")
        g = _as_vector(self.g, "g")
        rho = np.asarray(self.rho, dtype=float)
        if rho.ndim == 0:
            rho = np.full(len(g), float(rho))
        if M.shape[0] != len(g) or len(rho) != len(g):
            raise DimensionError("constraint block rows inconsistent")
        if len(rho) and rho.min() <= 0.0:
            raise ValueError("slack penalties must be positive")
        for name, val in (("M", M), ("g", g), ("rho", rho)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def rows(self) -> int:
        return self.M.shape[0]


_EMPTY = None


def _empty_block(dim):
    return ConstraintBlock(np.zeros((0, dim)), np.zeros(0), np.zeros(0))


@dataclass(frozen=True)
class TrackingProblem:
    """Output-tracking cost and soft constraints over a horizon.

    Q weighs the output error (PSD), R the input increment (PD).  State
    constraints apply at prediction steps 1..N, input and rate
    constraints at steps 0..N-1; any block may have zero rows.
    """

    Q: np.ndarray
    R: np.ndarray
    N: int
    state_constraints: ConstraintBlock = None
    input_constraints: ConstraintBlock = None
    rate_constraints: ConstraintBlock = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon N must be >= 1")
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        for name, val in (("Q", Q), ("R", R)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)


@dataclass(frozen=True)
class ZLayout:
    """Offsets of the blocks inside z = [x; u_prev; y_ref_1..N]."""

    n_x: int
    n_u: int
    n_y: int
    N: int

    @property
    def x_offset(self) -> int:
        return 0

    @property
    def u_prev_offset(self) -> int:
        return self.n_x

    @property
    def y_ref_offset(self) -> int:
        return self.n_x + self.n_u

    @property
    def n_z(self) -> int:
        return self.n_x + self.n_u + self.N * self.n_y


@dataclass(frozen=True)
class Provenance:
    """Per-row origin of the condensed constraints."""

    kind: np.ndarray   # one of KIND_STATE / KIND_INPUT / KIND_RATE
    step: np.ndarray   # prediction step the row belongs to
    row: np.ndarray    # row index within the original block

    def __len__(self):
        return len(self.kind)


@dataclass(frozen=True)
class CondensedQP:
    """SoftQP produced by condensing, plus structural metadata."""

    qp: SoftQP
    model: StateSpaceModel
    layout: ZLayout
    provenance: Provenance
    # z-only cost constant: const(z) = z' K2 z (dropped from the QP)
    _const_quad: np.ndarray = None

    @property
    def n_v(self) -> int:
        return self.qp.n_v

    @property
    def n_c(self) -> int:
        return self.qp.n_c

    @property
    def n_z(self) -> int:
        return self.qp.n_z

    @property
    def n_u(self) -> int:
        return self.layout.n_u

    @property
    def N(self) -> int:
        return self.layout.N

    def cost_constant(self, z: np.ndarray) -> float:
        """z-dependent constant dropped from the condensed objective."""
        z = np.asarray(z, dtype=float).ravel()
        return float(z @ self._const_quad @ z)


def condense(model: StateSpaceModel, prob: TrackingProblem) -> CondensedQP:
    """Eliminate states and inputs, returning the condensed SoftQP.

    Constraint rows are ordered per prediction step: state rows at step
    i, then input rows at step i-1, then rate rows at i-1, for
    i = 1..N.
    """
    A, B, C = model.A, model.B, model.C
    n_x, n_u, n_y = model.n_x, model.n_u, model.n_y
    N = prob.N
    Q, R = prob.Q, prob.R
    if Q.shape != (n_y, n_y):
        raise DimensionError(f"Q must be {n_y}x{n_y}, got {Q.shape}")
    if R.shape != (n_u, n_u):
        raise DimensionError(f"R must be {n_u}x{n_u}, got {R.shape}")
    sc = prob.state_constraints or _empty_block(n_x)
    ic = prob.input_constraints or _empty_block(n_u)
    rc = prob.rate_constraints or _empty_block(n_u)
    if sc.M.shape[1] != n_x or ic.M.shape[1] != n_u or rc.M.shape[1] != n_u:
        raise DimensionError("constraint block column counts inconsistent")

    layout = ZLayout(n_x, n_u, n_y, N)
    n_v = N * n_u
    n_z = layout.n_z

    # x_i = A^i x + Gam[i] u_prev + Theta[i] v, where the coefficient of
    # du_l in x_i is Gam[i-l]; Gam[i] = sum_{j<i} A^j B.
    powA = [np.eye(n_x)]
    for _ in range(N):
        powA.append(A @ powA[-1])
    Gam = [np.zeros((n_x, n_u))]
    for i in range(N):
        Gam.append(Gam[-1] + powA[i] @ B)
    Theta = []
    for i in range(1, N + 1):
        Ti = np.zeros((n_x, n_v))
        for l in range(i):
            Ti[:, l * n_u:(l + 1) * n_u] = Gam[i - l]
        Theta.append(Ti)

    # cost: sum_i |C x_i - y_ref_i|_Q^2 + |du_{i-1}|_R^2
    H = 2.0 * np.kron(np.eye(N), R)
    F = np.zeros((n_v, n_z))
    const_quad = np.zeros((n_z, n_z))
    yo = layout.y_ref_offset
    for i in range(1, N + 1):
        CT = C @ Theta[i - 1]
        # z-coefficient of the output error C x_i - y_ref_i
        Ez = np.zeros((n_y, n_z))
        Ez[:, :n_x] = C @ powA[i]
        Ez[:, n_x:n_x + n_u] = C @ Gam[i]
        Ez[:, yo + (i - 1) * n_y:yo + i * n_y] = -np.eye(n_y)
        H += 2.0 * CT.T @ Q @ CT
        F += 2.0 * CT.T @ Q @ Ez
        const_quad += Ez.T @ Q @ Ez

    # constraints, per-step ordering: state(i), input(i-1), rate(i-1)
    n_c = N * (sc.rows + ic.rows + rc.rows)
    W = np.zeros((n_c, n_v))
    c = np.zeros(n_c)
    Lmat = np.zeros((n_c, n_z))
    rho = np.zeros(n_c)
    kinds, steps, rows = [], [], []
    r = 0
    for i in range(1, N + 1):
        if sc.rows:
            sl = slice(r, r + sc.rows)
            W[sl] = sc.M @ Theta[i - 1]
            c[sl] = sc.g
            Lmat[sl, :n_x] = -sc.M @ powA[i]
            Lmat[sl, n_x:n_x + n_u] = -sc.M @ Gam[i]
            rho[sl] = sc.rho
            kinds += [KIND_STATE] * sc.rows
            steps += [i] * sc.rows
            rows += list(range(sc.rows))
            r += sc.rows
        if ic.rows:
            sl = slice(r, r + ic.rows)
            # u_{i-1} = u_prev + du_0 + ... + du_{i-1}
            Su = np.zeros((n_u, n_v))
            for l in range(i):
                Su[:, l * n_u:(l + 1) * n_u] = np.eye(n_u)
            W[sl] = ic.M @ Su
            c[sl] = ic.g
            Lmat[sl, n_x:n_x + n_u] = -ic.M
            rho[sl] = ic.rho
            kinds += [KIND_INPUT] * ic.rows
            steps += [i - 1] * ic.rows
            rows += list(range(ic.rows))
            r += ic.rows
        if rc.rows:
            sl = slice(r, r + rc.rows)
            Sd = np.zeros((n_u, n_v))
            Sd[:, (i - 1) * n_u:i * n_u] = np.eye(n_u)
            W[sl] = rc.M @ Sd
            c[sl] = rc.g
            rho[sl] = rc.rho
            kinds += [KIND_RATE] * rc.rows
            steps += [i - 1] * rc.rows
            rows += list(range(rc.rows))
            r += rc.rows

    qp = SoftQP(H=H, F=F, W=W, c=c, L=Lmat, rho=rho)
    prov = Provenance(np.array(kinds), np.array(steps, dtype=int),
                      np.array(rows, dtype=int))
    return CondensedQP(qp=qp, model=model, layout=layout, provenance=prov,
                       _const_quad=const_quad)


def assemble_z(x: np.ndarray, u_prev: np.ndarray, y_refs,
               layout: ZLayout | None = None) -> np.ndarray:
    """Stack [x; u_prev; y_ref_1; ...; y_ref_N]."""
    x = np.asarray(x, dtype=float).ravel()
    u_prev = np.asarray(u_prev, dtype=float).ravel()
    refs = [np.asarray(yr, dtype=float).ravel() for yr in y_refs]
    if layout is not None:
        if len(x) != layout.n_x or len(u_prev) != layout.n_u:
            raise DimensionError("x/u_prev lengths do not match layout")
        if len(refs) != layout.N or any(len(yr) != layout.n_y for yr in refs):
            raise DimensionError("reference window does not match layout")
    return np.concatenate([x, u_prev] + refs)


def shift_warm_start(prev: SolveResult | None, qp: CondensedQP,
                     z: np.ndarray) -> np.ndarray:
    """Candidate input sequence for the next step.

    With a previous solution: drop its first increment block and pad
    with zeros (steady-state continuation).  Without one, fall back to
    the unconstrained minimizer.
    """
    if prev is None:
        return qp.qp.unconstrained_minimizer(z)
    n_u = qp.n_u
    v_prev = np.asarray(prev.v_star, dtype=float).ravel()
    if len(v_prev) != qp.n_v:
        raise DimensionError(
            f"previous solution has length {len(v_prev)}, expected {qp.n_v}")
    return np.concatenate([v_prev[n_u:], np.zeros(n_u)])


def extract_input(v_star: np.ndarray, u_prev: np.ndarray) -> np.ndarray:
    """Applied input u = u_prev + first increment block."""
    u_prev = np.asarray(u_prev, dtype=float).ravel()
    v_star = np.asarray(v_star, dtype=float).ravel()
    n_u = len(u_prev)
    if len(v_star) < n_u or len(v_star) % n_u:
        raise DimensionError(
            f"solution length {len(v_star)} incompatible with n_u={n_u}")
    return u_prev + v_star[:n_u]
