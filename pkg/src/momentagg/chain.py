"""Markov reward processes: sparse stochastic matrices, exact values,
local transition moments, maximal jumps, and m-step utilities.

A process is the tuple ``<lattice, P, c, alpha>`` whose value function
solves ``(I - alpha P) V = c``.  Full-size systems are solved iteratively
(Krylov with a guaranteed-convergent Richardson fallback) and every solve
is backed by an explicit infinity-norm residual check.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .lattice import StateLattice

__all__ = [
    "NumericalError",
    "ResourceLimitError",
    "RowStochasticMatrix",
    "MarkovRewardProcess",
    "LocalMoments",
    "DeltaReport",
    "solve_discounted",
    "exact_value",
    "local_moments",
    "max_jump",
    "scaled_value",
    "m_step_chain",
    "verify_mstep_identity",
    "delta_at",
    "sup_delta",
    "delta_f",
]

#: probabilities below this are dropped at construction, rows renormalized
PROB_DROP = 1e-15
#: absolute tolerance on row sums at validation time
ROWSUM_TOL = 1e-12


class NumericalError(RuntimeError):
    """A linear solve failed to reach its required residual.

    Attributes
    ----------
    residual : float or None
        The infinity-norm residual actually achieved.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ResourceLimitError(RuntimeError):
    """A materialization exceeded its configured nnz budget."""


class RowStochasticMatrix:
    """Sparse row-major matrix whose rows are probability distributions.

    Entries below ``PROB_DROP`` are dropped and rows renormalized; rows
    must sum to one within ``ROWSUM_TOL`` before renormalization and
    contain no negative mass.  Column indices are kept sorted.

    Parameters
    ----------
    matrix : scipy sparse / dense array_like
    """

    __slots__ = ("csr",)

    def __init__(self, matrix):
        M = sparse.csr_matrix(matrix, dtype=np.float64, copy=True)
        M.sum_duplicates()
        if M.nnz and float(M.data.min()) < 0.0:
            raise ValueError("negative transition probability")
        sums = np.asarray(M.sum(axis=1)).ravel()
        if np.any(np.abs(sums - 1.0) > ROWSUM_TOL):
            worst = float(np.max(np.abs(sums - 1.0)))
            raise ValueError(f"rows must sum to 1 (worst deviation {worst:.3e})")
        if M.nnz and float(M.data.min()) < PROB_DROP:
            keep = M.data >= PROB_DROP
            M.data = np.where(keep, M.data, 0.0)
            M.eliminate_zeros()
            sums = np.asarray(M.sum(axis=1)).ravel()
        # renormalize exactly (post-drop sums are within n*1e-15 of one)
        scale = 1.0 / sums
        M = sparse.csr_matrix(
            (M.data * np.repeat(scale, np.diff(M.indptr)), M.indices, M.indptr),
            shape=M.shape,
        )
        M.sort_indices()
        self.csr = M

    # -- constructors --------------------------------------------------------

    @classmethod
    def from_coo(cls, rows, cols, data, shape):
        """Build from triplets; duplicate entries are summed (this is how
        boundary-clamped mass is accumulated)."""
        M = sparse.coo_matrix((data, (rows, cols)), shape=shape)
        return cls(M)

    @classmethod
    def from_rows(cls, row_entries, n_cols):
        """Build from a list of (column_indices, probabilities) pairs."""
        rows = np.concatenate(
            [np.full(len(c), i, dtype=np.int64) for i, (c, _) in enumerate(row_entries)]
        )
        cols = np.concatenate([np.asarray(c, dtype=np.int64) for c, _ in row_entries])
        data = np.concatenate([np.asarray(p, dtype=np.float64) for _, p in row_entries])
        return cls.from_coo(rows, cols, data, (len(row_entries), n_cols))

    @classmethod
    def identity(cls, n):
        return cls(sparse.identity(n, format="csr"))

    # -- basic queries --------------------------------------------------------

    @property
    def shape(self):
        return self.csr.shape

    @property
    def n_rows(self):
        return self.csr.shape[0]

    @property
    def n_cols(self):
        return self.csr.shape[1]

    @property
    def nnz(self):
        return self.csr.nnz

    def row(self, i):
        """(columns, probabilities) of row i."""
        lo, hi = self.csr.indptr[i], self.csr.indptr[i + 1]
        return self.csr.indices[lo:hi], self.csr.data[lo:hi]

    def take_rows(self, indices):
        """Row slice as a new RowStochasticMatrix (e.g. the L x N P-bar)."""
        return RowStochasticMatrix(self.csr[np.asarray(indices)])

    def toarray(self):
        return self.csr.toarray()

    # -- algebra ---------------------------------------------------------------

    def apply(self, f):
        """(P f)(x) = sum_y p_xy f(y);  f of shape (n_cols,) or (n_cols, k)."""
        f = np.asarray(f, dtype=np.float64)
        if f.shape[0] != self.n_cols:
            raise ValueError(
                f"operand of length {f.shape[0]} against {self.n_cols} columns"
            )
        return self.csr @ f

    def matmul(self, other):
        """Stochastic product with another row-stochastic matrix."""
        M = self.csr @ other.csr
        return RowStochasticMatrix(M)

    def power(self, m, *, nnz_budget=80_000_000):
        """Exact sparse m-step matrix, guarded by an nnz budget."""
        if m < 1 or m != int(m):
            raise ValueError("power requires integer m >= 1")
        if self.n_rows != self.n_cols:
            raise ValueError("power of a non-square matrix")
        out = self.csr.copy()
        for _ in range(int(m) - 1):
            out = out @ self.csr
            if out.nnz > nnz_budget:
                raise ResourceLimitError(
                    f"matrix power exceeded nnz budget ({out.nnz} > {nnz_budget})"
                )
        return RowStochasticMatrix(out)

    def __repr__(self):
        return f"RowStochasticMatrix(shape={self.shape}, nnz={self.nnz})"


@dataclass(frozen=True)
class MarkovRewardProcess:
    """Discounted Markov reward process ``<lattice, P, cost, discount>``."""

    lattice: StateLattice
    P: RowStochasticMatrix
    cost: np.ndarray
    discount: float

    def __post_init__(self):
        n = self.lattice.size
        if self.P.shape != (n, n):
            raise ValueError(f"P must be {n}x{n}, got {self.P.shape}")
        cost = np.asarray(self.cost, dtype=np.float64).copy()
        if cost.shape != (n,):
            raise ValueError("cost must be a length-N vector")
        if not np.all(np.isfinite(cost)):
            raise ValueError("cost entries must be finite")
        if np.any(cost < 0):
            raise ValueError("cost entries must be nonnegative")
        cost.setflags(write=False)
        object.__setattr__(self, "cost", cost)
        if not (0.0 < self.discount < 1.0):
            raise ValueError("discount must lie in (0, 1)")


@dataclass(frozen=True)
class LocalMoments:
    """Per-state drift ``mu`` (N, d) and second moment ``sigma2`` (N, d, d)."""

    mu: np.ndarray
    sigma2: np.ndarray


@dataclass(frozen=True)
class DeltaReport:
    """Per-state and sup one-step deviation |P~f - Pf|."""

    per_state: np.ndarray
    sup: float


# ---------------------------------------------------------------------------
# linear solves
# ---------------------------------------------------------------------------

def _apply_of(P):
    """Matrix-vector product for the accepted operator forms."""
    if isinstance(P, RowStochasticMatrix):
        m = P.csr
        return (lambda v: m @ v), m.shape[0]
    if sparse.issparse(P):
        m = P.tocsr()
        return (lambda v: m @ v), m.shape[0]
    if callable(P):
        return P, None
    m = np.asarray(P, dtype=np.float64)
    return (lambda v: m @ v), m.shape[0]


_KRYLOV_TOL_KW = (
    "rtol" if "rtol" in inspect.signature(spla.bicgstab).parameters else "tol"
)


def _krylov(method, A, b, x0, atol, maxiter):
    kwargs = {_KRYLOV_TOL_KW: 1e-14, "atol": atol, "maxiter": maxiter}
    try:
        x, info = method(A, b, x0=x0, **kwargs)
    except Exception:
        return None
    return x if info == 0 else x


def solve_discounted(P, c, alpha, *, tol=1e-10, maxiter=20000):
    """Solve ``(I - alpha P) V = c`` with a certified residual.

    Parameters
    ----------
    P : RowStochasticMatrix, scipy sparse matrix, dense array, or callable
        In callable form, ``P(v)`` must return the matrix-vector product.
    c : (n,) cost vector
    alpha : discount in (0, 1)
    tol : relative residual target; the certified promise is
        ``||(I - alpha P) V - c||_inf <= max(tol, 1e-9) * (1 + ||c||_inf)``.

    Raises
    ------
    NumericalError
        If no stage of the solver ladder reaches the required residual.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError("discount must lie in (0, 1)")
    c = np.asarray(c, dtype=np.float64)
    apply_P, n = _apply_of(P)
    n = c.shape[0] if n is None else n
    if c.shape != (n,):
        raise ValueError("cost vector length mismatch")

    scale = 1.0 + float(np.max(np.abs(c))) if c.size else 1.0
    target = tol * scale          # internal goal
    promise = max(tol, 1e-9) * scale  # certified bound

    def residual(V):
        return float(np.max(np.abs(c + alpha * apply_P(V) - V)))

    op = spla.LinearOperator((n, n), matvec=lambda v: v - alpha * apply_P(v))

    best = None
    best_res = np.inf

    def consider(V):
        nonlocal best, best_res
        if V is None:
            return False
        r = residual(V)
        if r < best_res:
            best, best_res = V, r
        return r <= target

    x0 = c / (1.0 - alpha)  # exact for constant cost, decent otherwise
    for method in (spla.bicgstab, spla.lgmres):
        if consider(_krylov(method, op, c, x0, 0.25 * target, maxiter)):
            return best

    # Richardson / value iteration: contraction with modulus alpha, so it
    # converges unconditionally (if slowly for alpha near 1).
    V = best if best is not None else x0.copy()
    r0 = max(residual(V), target)
    cap = int(np.ceil(np.log(target / r0) / np.log(alpha))) + 50
    cap = min(max(cap, 50), 2_000_000)
    for _ in range(cap):
        W = c + alpha * apply_P(V)
        r = float(np.max(np.abs(W - V)))
        V = W
        if r <= 0.5 * target:
            break
    consider(V)

    if best_res <= promise:
        return best
    raise NumericalError(
        f"discounted solve stalled at residual {best_res:.3e} "
        f"(required {promise:.3e})",
        residual=best_res,
    )


def exact_value(mrp, *, tol=1e-10):
    """Value function V = (I - alpha P)^-1 c of a Markov reward process."""
    return solve_discounted(mrp.P, mrp.cost, mrp.discount, tol=tol)


# ---------------------------------------------------------------------------
# moments and jumps
# ---------------------------------------------------------------------------

def local_moments(mrp):
    """First and second local transition moments of every state."""
    states = mrp.lattice.all_states().astype(np.float64)
    n, d = states.shape
    m1 = mrp.P.apply(states)                      # E_x[X_1]
    mu = m1 - states
    # E_x[X_1 X_1^T] via the d^2 pairwise coordinate products
    prods = (states[:, :, None] * states[:, None, :]).reshape(n, d * d)
    m2 = mrp.P.apply(prods).reshape(n, d, d)
    sigma2 = (
        m2
        - states[:, :, None] * m1[:, None, :]
        - m1[:, :, None] * states[:, None, :]
        + states[:, :, None] * states[:, None, :]
    )
    return LocalMoments(mu=mu, sigma2=sigma2)


def max_jump(mrp, x=None, *, _block_nnz=4_000_000):
    """Maximal supported jump distance Delta_x = max_y ||y - x||_2.

    With ``x`` given (flat index or coordinate vector) returns a scalar;
    otherwise the full per-state vector.
    """
    lattice = mrp.lattice
    states = lattice.all_states().astype(np.float64)
    csr = mrp.P.csr
    if x is not None:
        ix = x if np.isscalar(x) or np.asarray(x).ndim == 0 else lattice.to_index(x)
        cols, _ = mrp.P.row(int(ix))
        return float(np.max(np.linalg.norm(states[cols] - states[int(ix)], axis=1)))
    out = np.zeros(lattice.size)
    indptr = csr.indptr
    row = 0
    while row < lattice.size:
        stop = row
        while stop < lattice.size and indptr[stop + 1] - indptr[row] <= _block_nnz:
            stop += 1
        stop = max(stop, row + 1)
        lo, hi = indptr[row], indptr[stop]
        owners = np.repeat(np.arange(row, stop), np.diff(indptr[row:stop + 1]))
        norms = np.linalg.norm(states[csr.indices[lo:hi]] - states[owners], axis=1)
        seg_starts = indptr[row:stop] - lo
        out[row:stop] = np.maximum.reduceat(norms, seg_starts)
        row = stop
    return out


def scaled_value(mrp, eps, *, tol=1e-10):
    """Value of the norm-scaled cost c(x) / (1 + ||x||)^eps."""
    if not (0.0 <= eps <= 1.0):
        raise ValueError("eps must lie in [0, 1]")
    norms = np.linalg.norm(mrp.lattice.all_states().astype(np.float64), axis=1)
    c_eps = mrp.cost / (1.0 + norms) ** eps
    return solve_discounted(mrp.P, c_eps, mrp.discount, tol=tol)


# ---------------------------------------------------------------------------
# m-step utilities
# ---------------------------------------------------------------------------

def m_step_chain(mrp, m, *, nnz_budget=80_000_000):
    """Process watched every m steps: transition P^m, discount alpha^m."""
    if m < 1 or m != int(m):
        raise ValueError("m must be an integer >= 1")
    m = int(m)
    if m == 1:
        return mrp
    Pm = mrp.P.power(m, nnz_budget=nnz_budget)
    return MarkovRewardProcess(mrp.lattice, Pm, mrp.cost, mrp.discount**m)


def verify_mstep_identity(mrp, m, *, tol=1e-11):
    """Max violation of the m-step subsampling identity.

    Computes V and V^m by independent solves and returns
    ``max_x |V^m(x) - [V(x) - sum_k alpha^k (P^k V^m - V^m)(x)] / (1 + sum_k alpha^k)|``
    with k running over 1..m-1.
    """
    if m < 1 or m != int(m):
        raise ValueError("m must be an integer >= 1")
    m = int(m)
    V = exact_value(mrp, tol=tol)
    if m == 1:
        return 0.0
    sub = m_step_chain(mrp, m)
    Vm = solve_discounted(sub.P, sub.cost, sub.discount, tol=tol)
    alpha = mrp.discount
    correction = np.zeros_like(Vm)
    denom = 1.0
    PkVm = Vm
    for k in range(1, m):
        PkVm = mrp.P.apply(PkVm)
        correction += alpha**k * (PkVm - Vm)
        denom += alpha**k
    rhs = (V - correction) / denom
    return float(np.max(np.abs(Vm - rhs)))


# ---------------------------------------------------------------------------
# one-step deviations
# ---------------------------------------------------------------------------

def _operand_apply(P):
    if hasattr(P, "apply"):
        return P.apply
    apply_P, _ = _apply_of(P)
    return apply_P


def delta_at(P, P_tilde, f):
    """Per-state deviation |P~f(x) - Pf(x)| for a scalar function f."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1:
        raise ValueError("delta is defined for scalar functions of the state")
    a = _operand_apply(P)(f)
    b = _operand_apply(P_tilde)(f)
    if a.shape != b.shape:
        raise ValueError("operand shapes disagree")
    return np.abs(b - a)


def sup_delta(P, P_tilde, f):
    """Sup over states of |P~f(x) - Pf(x)|."""
    return float(np.max(delta_at(P, P_tilde, f)))


def delta_f(P, P_tilde, f):
    """Both forms of the one-step deviation, bundled."""
    per_state = delta_at(P, P_tilde, f)
    return DeltaReport(per_state=per_state, sup=float(np.max(per_state)))
