"""Sparse SPD solve machinery, restricted Poisson solves, and discrete norms.

A restricted solve takes a load f and a node set O, solves the principal
submatrix system A_OO d_O = f_O and extends by zero, which is exactly the
action of the set-valued derivative operator used by the semismooth Newton
method.  Factorizations are cached per (matrix, node set) because the
Newton inner loop replays the same restricted solve many times.
"""

import threading
from collections import OrderedDict

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, NotSPDError

_SYMMETRY_RTOL = 1e-12


def normalize_node_set(ids, n_dof):
    """Return a node set as a sorted unique int64 array, validated against n_dof."""
    ids = np.asarray(ids, dtype=np.int64).ravel()
    if ids.size == 0:
        return ids
    if ids.min() < 0 or ids.max() >= n_dof:
        raise ValueError(
            f"node set entries must lie in [0, {n_dof}), got range "
            f"[{ids.min()}, {ids.max()}]"
        )
    out = np.unique(ids)
    return out


def complement_node_set(ids, n_dof):
    """All indices in [0, n_dof) not contained in ids."""
    mask = np.ones(n_dof, dtype=bool)
    mask[normalize_node_set(ids, n_dof)] = False
    return np.flatnonzero(mask).astype(np.int64)


def _spd_factor(matrix):
    """LU factorization specialized to SPD matrices.

    Pivoting is disabled (diag_pivot_thresh=0 with symmetric mode), so the
    factorization is a Cholesky in disguise and a nonpositive pivot on the
    diagonal of U certifies that the matrix is not positive definite.
    """
    try:
        lu = spla.splu(
            matrix.tocsc(),
            diag_pivot_thresh=0.0,
            permc_spec="MMD_AT_PLUS_A",
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:  # singular matrix
        raise NotSPDError(f"factorization failed: {exc}") from exc
    diag = lu.U.diagonal()
    if not np.all(diag > 0):
        raise NotSPDError(
            f"matrix is not positive definite (min pivot {diag.min():.3e})"
        )
    return lu


class SparseSPD:
    """Symmetric positive definite sparse matrix with cached factorizations.

    Symmetry is checked on construction; positive definiteness is checked
    by the first factorization.  Restricted factorizations (principal
    submatrices on a node set) are cached in an LRU of bounded size, since
    each one can be as expensive as the full factorization.
    """

    def __init__(self, matrix, cache_size=8):
        matrix = sp.csr_matrix(matrix)
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"matrix must be square, got shape {matrix.shape}")
        gap = abs(matrix - matrix.T)
        scale = max(abs(matrix).max(), 1.0)
        if gap.nnz and gap.max() > _SYMMETRY_RTOL * scale:
            raise NotSPDError(
                f"matrix is not symmetric (max asymmetry {gap.max():.3e})"
            )
        self.mat = matrix
        self.n = matrix.shape[0]
        self._factor = None
        self._restricted = OrderedDict()
        self._cache_size = int(cache_size)
        self._lock = threading.Lock()

    @property
    def factor(self):
        with self._lock:
            if self._factor is None:
                self._factor = _spd_factor(self.mat)
            return self._factor

    def matvec(self, x):
        return self.mat @ x

    def solve(self, b):
        """Solve A x = b for a vector or a stack of column vectors."""
        return self.factor.solve(np.asarray(b, dtype=float))

    def restricted_factor(self, node_set):
        """Factorization of the principal submatrix A_OO, cached by node set."""
        node_set = normalize_node_set(node_set, self.n)
        key = node_set.tobytes()
        with self._lock:
            if key in self._restricted:
                self._restricted.move_to_end(key)
                return self._restricted[key]
        sub = self.mat[node_set][:, node_set].tocsc()
        factor = _spd_factor(sub)
        with self._lock:
            self._restricted[key] = factor
            self._restricted.move_to_end(key)
            while len(self._restricted) > self._cache_size:
                self._restricted.popitem(last=False)
        return factor

    def submatrix(self, rows, cols):
        return self.mat[rows][:, cols]


def solve_spd(A, b, method="direct", tol=1e-12):
    """Solve A x = b with a cached direct factorization or CG.

    CG uses a Jacobi preconditioner and the relative tolerance `tol`;
    non-convergence raises ConvergenceError instead of returning silently.
    """
    b = np.asarray(b, dtype=float)
    if method == "direct":
        return A.solve(b)
    if method != "cg":
        raise ValueError(f"unknown method {method!r}")
    diag = A.mat.diagonal()
    precond = spla.LinearOperator((A.n, A.n), matvec=lambda r: r / diag)
    x, info = _cg_compat(A.mat, b, rtol=tol, M=precond)
    if info != 0:
        raise ConvergenceError(
            f"cg did not converge (info={info})", iterate=x,
            residual=float(np.linalg.norm(A.mat @ x - b)),
        )
    return x


def _cg_compat(op, b, rtol, M=None, x0=None, maxiter=None):
    """scipy.cg wrapper tolerating both the rtol and legacy tol keyword."""
    try:
        return spla.cg(op, b, rtol=rtol, atol=0.0, M=M, x0=x0, maxiter=maxiter)
    except TypeError:
        return spla.cg(op, b, tol=rtol, atol=0.0, M=M, x0=x0, maxiter=maxiter)


def restricted_poisson(A, node_set, f):
    """Solve A_OO d_O = f_O and extend by zero off the node set.

    This is the action of the restricted inverse attached to an inactive
    set O.  It satisfies the energy identity d^T A d = f^T d, and for an
    entrywise nonnegative f it is monotone in O (enlarging O can only
    increase the solution pointwise).
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (A.n,):
        raise ValueError(f"load must have shape ({A.n},), got {f.shape}")
    node_set = normalize_node_set(node_set, A.n)
    out = np.zeros(A.n)
    if node_set.size == 0:
        return out
    out[node_set] = A.restricted_factor(node_set).solve(f[node_set])
    return out


def energy_norm(A, v):
    """sqrt(v^T A v); the H0^1-type norm carried by the stiffness matrix."""
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ (A.mat @ v), 0.0)))


def dual_norm(A, f):
    """sqrt(f^T A^{-1} f); the dual norm induced by the stiffness matrix."""
    f = np.asarray(f, dtype=float)
    return float(np.sqrt(max(f @ A.solve(f), 0.0)))


def l2_norm(M, v):
    """sqrt(v^T M v) with the mass matrix M; the discrete L^2 norm."""
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ (M @ v), 0.0)))
