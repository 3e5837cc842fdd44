"""Minimal angles between subspaces and projections onto their sum.

All computations happen in an n-dimensional real space equipped with an SPD
Gram matrix G.  The minimal-angle cosine of two subspaces is the supremum of
inner products over their unit balls; it stays strictly below one exactly
when the subspaces meet only at the origin and their sum is closed, and in
that regime the block operator

    R1 = [[Id, P1], [P2, Id]]

is invertible with an explicit triangular factorization, which in turn gives
a closed formula for the orthogonal projection onto W1 + W2.  The same
algebra, run over the dual space of a stiffness matrix (Gram = A^{-1},
applied through solves), identifies the complement of the sum with a
restricted Poisson solve; fem_angle_bridge checks that identity.
"""

import numpy as np

from .errors import DegenerateAngleError, NotSPDError
from .operators import normalize_node_set

_DEGENERATE_COS = 1.0 - 1e-12


class InnerProductSpace:
    """R^n with an inner product <x, y> = x^T G y.

    G can be a dense SPD matrix, or an arbitrary callable applying it
    (used when G is the inverse of a sparse matrix and is never formed).
    With neither, the inner product is Euclidean.
    """

    def __init__(self, dim, gram=None, gram_apply=None):
        self.dim = int(dim)
        if gram is not None and gram_apply is not None:
            raise ValueError("give either a dense gram matrix or an apply callable")
        if gram is not None:
            gram = np.asarray(gram, dtype=float)
            if gram.shape != (self.dim, self.dim):
                raise ValueError(f"gram must be {self.dim}x{self.dim}, got {gram.shape}")
            if np.max(np.abs(gram - gram.T)) > 1e-12 * max(np.max(np.abs(gram)), 1.0):
                raise NotSPDError("gram matrix is not symmetric")
        self.gram = gram
        self._gram_apply = gram_apply
        self._chol = None

    def apply_gram(self, x):
        x = np.asarray(x, dtype=float)
        if self._gram_apply is not None:
            return np.asarray(self._gram_apply(x), dtype=float)
        if self.gram is not None:
            return self.gram @ x
        return x.copy()

    def inner(self, x, y):
        return float(np.asarray(x) @ self.apply_gram(y))

    def norm(self, x):
        return float(np.sqrt(max(self.inner(x, x), 0.0)))

    def cholesky(self):
        """Lower Cholesky factor of the dense Gram matrix (identity if none)."""
        if self._chol is None:
            if self._gram_apply is not None:
                raise ValueError("gram is apply-only; no dense factor available")
            g = self.gram if self.gram is not None else np.eye(self.dim)
            try:
                self._chol = np.linalg.cholesky(g)
            except np.linalg.LinAlgError as exc:
                raise NotSPDError(f"gram matrix is not positive definite: {exc}") from exc
        return self._chol


class Subspace:
    """A subspace held as a Gram-orthonormal basis matrix of shape (n, k)."""

    def __init__(self, space, basis):
        self.space = space
        self.basis = np.asarray(basis, dtype=float).reshape(space.dim, -1)
        self._proj = None
        self._gram_basis = None

    @property
    def dim(self):
        return self.basis.shape[1]

    def gram_basis(self):
        """The Gram matrix applied to the basis columns, cached."""
        if self._gram_basis is None:
            self._gram_basis = self.space.apply_gram(self.basis)
        return self._gram_basis

    def projector(self):
        """Dense matrix of the orthogonal projection onto this subspace."""
        if self._proj is None:
            self._proj = self.basis @ self.gram_basis().T
        return self._proj

    def project(self, x):
        return self.basis @ (self.gram_basis().T @ np.asarray(x, dtype=float))


def orthonormal_basis(space, generators, rank_tol=1e-10):
    """Gram-orthonormalize a generating set into a Subspace.

    Twice-iterated modified Gram-Schmidt in the space's inner product;
    columns whose remainder drops below rank_tol times their original
    length are discarded as dependent.
    """
    V = np.asarray(generators, dtype=float).reshape(space.dim, -1)
    cols = []
    gcols = []
    for j in range(V.shape[1]):
        v = V[:, j].copy()
        orig = space.norm(v)
        if orig == 0.0:
            continue
        for _ in range(2):
            for q, gq in zip(cols, gcols):
                v -= (gq @ v) * q
        nrm = space.norm(v)
        if nrm <= rank_tol * orig:
            continue
        v /= nrm
        cols.append(v)
        gcols.append(space.apply_gram(v))
    basis = np.column_stack(cols) if cols else np.zeros((space.dim, 0))
    return Subspace(space, basis)


def orthogonal_complement(space, generators, rank_tol=1e-10):
    """Subspace of all vectors Gram-orthogonal to the given generators."""
    V = np.asarray(generators, dtype=float).reshape(space.dim, -1)
    if V.shape[1] == 0:
        return orthonormal_basis(space, np.eye(space.dim), rank_tol)
    # f is orthogonal to span(V) iff (G V)^T f = 0
    GV = space.apply_gram(V)
    _, svals, vt = np.linalg.svd(GV.T, full_matrices=True)
    rank = int(np.sum(svals > rank_tol * max(svals[0], 1.0))) if svals.size else 0
    kernel = vt[rank:].T
    return orthonormal_basis(space, kernel, rank_tol)


def min_angle_cosine(sub1, sub2):
    """Largest inner product between unit vectors of the two subspaces."""
    if sub1.dim == 0 or sub2.dim == 0:
        return 0.0
    corr = sub1.basis.T @ sub2.gram_basis()
    return float(np.linalg.svd(corr, compute_uv=False)[0])


def min_angle_sine(sub1, sub2, method="derived"):
    """Minimal-angle sine, either via the cosine or by direct distance.

    "derived" returns sqrt(1 - c0^2).  "direct" measures the smallest
    Gram-norm of (Id - P2) applied to unit vectors of W1, which is the
    distance from the unit sphere of W1 to W2; the two must agree.
    """
    if method == "derived":
        c0 = min_angle_cosine(sub1, sub2)
        return float(np.sqrt(max(1.0 - c0 * c0, 0.0)))
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    if sub1.dim == 0 or sub2.dim == 0:
        return 1.0
    D = sub1.basis - sub2.project(sub1.basis)
    quad = D.T @ sub1.space.apply_gram(D)
    quad = 0.5 * (quad + quad.T)
    smallest = float(np.min(np.linalg.eigvalsh(quad)))
    return float(np.sqrt(max(smallest, 0.0)))


def _check_not_touching(sub1, sub2):
    c0 = min_angle_cosine(sub1, sub2)
    if c0 >= _DEGENERATE_COS:
        raise DegenerateAngleError(
            f"subspaces touch: minimal-angle cosine {c0:.17g}", c0=c0
        )
    return c0


def r1_apply(sub1, sub2, x, y):
    """Apply the block operator R1: (x, y) -> (x + P1 y, P2 x + y)."""
    return x + sub1.project(y), sub2.project(x) + y


def r1_apply_inverse(sub1, sub2, a, b, method="factorized", neumann_tol=1e-15):
    """Solve R1 (x, y) = (a, b) through the triangular factorization.

    Eliminating the first block row gives (Id - P2 P1) y = b - P2 a and then
    x = a - P1 y.  The middle system is solved densely, or by summing the
    Neumann series sum_k (P2 P1)^k when method="neumann" (the series
    converges since the minimal-angle cosine stays below one).
    """
    c0 = _check_not_touching(sub1, sub2)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w = b - sub2.project(a)
    if method == "factorized":
        T = np.eye(sub1.space.dim) - sub2.projector() @ sub1.projector()
        y = np.linalg.solve(T, w)
    elif method == "neumann":
        # geometric decay with ratio c0^2 per term
        max_terms = 64 + int(np.ceil(np.log(neumann_tol) / np.log(max(c0 * c0, 1e-16))))
        y = w.copy()
        term = w.copy()
        for _ in range(max_terms):
            term = sub2.project(sub1.project(term))
            y += term
            if np.linalg.norm(term) <= neumann_tol * max(np.linalg.norm(w), 1.0):
                break
        else:
            raise DegenerateAngleError(
                f"Neumann series for (Id - P2 P1)^(-1) stalled at cosine {c0:.6g}",
                c0=c0,
            )
    else:
        raise ValueError(f"unknown method {method!r}")
    x = a - sub1.project(y)
    return x, y


def project_onto_sum(sub1, sub2):
    """Dense matrix of the orthogonal projection onto W1 + W2.

    Uses the closed formula P = P1 + (Id - P1)(Id - P2 P1)^{-1} P2 (Id - P1),
    valid whenever the subspaces do not touch.
    """
    _check_not_touching(sub1, sub2)
    n = sub1.space.dim
    P1 = sub1.projector()
    P2 = sub2.projector()
    Q1 = np.eye(n) - P1
    T = np.eye(n) - P2 @ P1
    middle = np.linalg.solve(T, P2 @ Q1)
    return P1 + Q1 @ middle


def project_onto_sum_series(sub1, sub2, terms):
    """Partial sum of the alternating-product series for the sum projection.

    The series is (P1 + P2) - (P1 P2 + P2 P1) + (P1 P2 P1 + P2 P1 P2) - ...;
    `terms` counts the bracketed groups.  The truncation error decays like
    the group count power of the minimal-angle cosine.
    """
    if terms < 1:
        raise ValueError(f"need at least one term, got {terms}")
    P1 = sub1.projector()
    P2 = sub2.projector()
    a, b = P1.copy(), P2.copy()
    total = a + b
    sign = 1.0
    for j in range(2, terms + 1):
        a = a @ (P2 if j % 2 == 0 else P1)
        b = b @ (P1 if j % 2 == 0 else P2)
        sign = -sign
        total += sign * (a + b)
    return total


def gram_operator_norm(space, T):
    """Operator norm of a dense matrix in the space's Gram metric."""
    L = space.cholesky()
    mid = L.T @ np.linalg.solve(L, T.T).T  # L^T T L^{-T}
    return float(np.linalg.svd(mid, compute_uv=False)[0])


def fem_angle_bridge(A, set1, set2, dense_limit=400):
    """Check the subspace identity behind the restricted-solve derivative.

    Works in the dual space of the SPD matrix A (Gram A^{-1}, applied via
    solves).  For a node set O, the relevant subspace is the orthogonal
    complement of the range of A restricted to columns in O; its sum over
    the two given sets relates to the restricted solve on the intersection
    through

        Id - P_{W1+W2} = A S(O1 cap O2).

    Returns (max deviation between the two sides, minimal-angle cosine).
    Dense-mode only; refuses systems above dense_limit unknowns.
    """
    n = A.n
    if n > dense_limit:
        raise ValueError(f"bridge check is dense-mode only (n={n} > {dense_limit})")
    set1 = normalize_node_set(set1, n)
    set2 = normalize_node_set(set2, n)
    space = InnerProductSpace(n, gram_apply=A.solve)

    def complement_subspace(node_set):
        if node_set.size == 0:
            return orthonormal_basis(space, np.eye(n))
        gens = A.mat[:, node_set].toarray()
        return orthogonal_complement(space, gens)

    W1 = complement_subspace(set1)
    W2 = complement_subspace(set2)
    c0 = min_angle_cosine(W1, W2)
    P = project_onto_sum(W1, W2)

    both = np.intersect1d(set1, set2)
    S = np.zeros((n, n))
    if both.size:
        S[np.ix_(both, both)] = A.restricted_factor(both).solve(np.eye(both.size))
    lhs = np.eye(n) - P
    rhs = A.mat.toarray() @ S
    deviation = float(np.max(np.abs(lhs - rhs)))
    return deviation, c0
