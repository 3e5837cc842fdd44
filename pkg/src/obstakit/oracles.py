"""Brute-force reference computations used to cross-check the fast solvers.

Everything in this module is deliberately slow, dense and obvious: exhaustive
enumeration over active-set assignments, dense projector algebra, first-order
finite differences, and a projected gradient loop.  None of it shares code
with the production solvers, so agreement between the two routes is evidence,
not tautology.
"""

from collections import namedtuple

import numpy as np

from .operators import normalize_node_set

ENUMERATION_DIM_LIMIT = 15

EnumerationResult = namedtuple(
    "EnumerationResult",
    ["y", "lam", "active_lower", "active_upper", "inactive", "n_candidates"],
)


def _full_bounds(bound, n, default):
    if bound is None:
        return np.full(n, default, dtype=float)
    arr = np.broadcast_to(np.asarray(bound, dtype=float), (n,)).copy()
    return arr


def enumerate_obstacle(A, f, lower=None, upper=None, feas_tol=1e-11, sign_tol=1e-12):
    """Solve a box-constrained SPD complementarity system by full enumeration.

    Every assignment of each node to {lower-active, upper-active, inactive}
    is tried; an assignment passes if the resulting state is feasible and the
    multiplier lam = f - A y has the right sign on each contact node.  All
    passing assignments must describe the same state (the solution of the
    variational inequality is unique), and the returned active sets are the
    canonical ones read off the multiplier signs: a contact node with
    |lam| <= sign_tol counts as inactive.

    Only sensible for very small systems; refuses dimensions above 15.
    """
    A = np.asarray(A, dtype=float)
    f = np.asarray(f, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or f.shape != (n,):
        raise ValueError(f"shape mismatch: A {A.shape}, f {f.shape}")
    if n > ENUMERATION_DIM_LIMIT:
        raise ValueError(f"enumeration limited to {ENUMERATION_DIM_LIMIT} nodes, got {n}")
    lower = _full_bounds(lower, n, -np.inf)
    upper = _full_bounds(upper, n, np.inf)
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")

    idx = np.arange(n)
    states = []  # columns (y, lam) of passing assignments
    for mask in range(1 << n):
        inact = (mask >> idx) & 1 == 1
        act_idx = idx[~inact]
        in_idx = idx[inact]
        k = act_idx.size
        # all lower/upper assignments of the active nodes at once
        bits = (np.arange(1 << k)[:, None] >> np.arange(k)) & 1
        vals = np.where(bits == 1, upper[act_idx], lower[act_idx])
        usable = np.all(np.isfinite(vals), axis=1)
        if not np.any(usable):
            continue
        YB = vals[usable].T  # (k, m)
        m = YB.shape[1]
        Y = np.zeros((n, m))
        Y[act_idx] = YB
        if in_idx.size:
            rhs = f[in_idx][:, None] - A[np.ix_(in_idx, act_idx)] @ YB
            Y[in_idx] = np.linalg.solve(A[np.ix_(in_idx, in_idx)], rhs)
        lam = f[:, None] - A @ Y
        feas = np.all(Y >= lower[:, None] - feas_tol, axis=0) & np.all(
            Y <= upper[:, None] + feas_tol, axis=0
        )
        on_upper = bits[usable].T.astype(bool)  # (k, m)
        lam_act = lam[act_idx]
        sign_ok = np.all(
            np.where(on_upper, lam_act >= -sign_tol, lam_act <= sign_tol), axis=0
        )
        good = feas & sign_ok
        for col in np.flatnonzero(good):
            states.append((Y[:, col], lam[:, col]))

    if not states:
        raise RuntimeError("no assignment satisfies the optimality system")
    y_ref, lam_ref = states[0]
    for y_c, _ in states[1:]:
        if np.max(np.abs(y_c - y_ref)) > 1e-9:
            raise RuntimeError("enumeration found two distinct states; system is degenerate")
    active_lower = normalize_node_set(np.flatnonzero(lam_ref < -sign_tol), n)
    active_upper = normalize_node_set(np.flatnonzero(lam_ref > sign_tol), n)
    mask = np.ones(n, dtype=bool)
    mask[active_lower] = False
    mask[active_upper] = False
    inactive = idx[mask].astype(np.int64)
    return EnumerationResult(
        y=y_ref,
        lam=lam_ref,
        active_lower=active_lower,
        active_upper=active_upper,
        inactive=inactive,
        n_candidates=len(states),
    )


def chain_matrix(n):
    """Dense 1d second-difference matrix diag(2) with -1 off-diagonals."""
    A = 2.0 * np.eye(n)
    A -= np.diag(np.ones(n - 1), 1)
    A -= np.diag(np.ones(n - 1), -1)
    return A


def dense_sum_projector(gram, gens1, gens2, rank_tol=1e-12):
    """Projector onto span(gens1) + span(gens2), by dense orthonormalization.

    gram is the SPD matrix of the ambient inner product.  The generators are
    stacked, orthonormalized through an eigendecomposition of their Gramian,
    and the projector B B^T gram is returned as a dense matrix.
    """
    gram = np.asarray(gram, dtype=float)
    S = np.hstack([np.atleast_2d(np.asarray(g, float).reshape(gram.shape[0], -1))
                   for g in (gens1, gens2)])
    C = S.T @ gram @ S
    C = 0.5 * (C + C.T)
    w, V = np.linalg.eigh(C)
    keep = w > rank_tol * max(w.max(), 1.0)
    if not np.any(keep):
        return np.zeros_like(gram)
    B = S @ V[:, keep] / np.sqrt(w[keep])
    return B @ (B.T @ gram)


def fd_directional_derivative(func, u, h, t=1e-7):
    """One-sided difference quotient (func(u + t h) - func(u)) / t."""
    u = np.asarray(u, dtype=float)
    h = np.asarray(h, dtype=float)
    f0 = np.asarray(func(u), dtype=float)
    f1 = np.asarray(func(u + t * h), dtype=float)
    return (f1 - f0) / t


def projected_gradient_control(A, M, y_d, nu, lower, upper,
                               max_steps=200_000, min_decrease=1e-14):
    """Minimize the reduced tracking objective over the box by projected gradient.

    The objective is 0.5 |A^{-1} M u - y_d|_M^2 + 0.5 nu |u|_A^2.  Plain
    gradient steps, sized by the exact line search for the quadratic, are
    projected onto the box nodewise; a halving guard keeps every accepted
    step a descent step.  Nodewise clipping pairs correctly with the
    Euclidean gradient: the fixed point satisfies exactly the sign system
    of the box variational inequality.  Runs until the objective decrease
    per step falls below min_decrease.

    Slow and simple on purpose; A and M are dense here.
    """
    A = np.asarray(A, dtype=float)
    M = np.asarray(M, dtype=float)
    y_d = np.asarray(y_d, dtype=float)
    n = A.shape[0]
    lower = _full_bounds(lower, n, -np.inf)
    upper = _full_bounds(upper, n, np.inf)

    def objective(u):
        y = np.linalg.solve(A, M @ u)
        d = y - y_d
        return 0.5 * d @ (M @ d) + 0.5 * nu * u @ (A @ u)

    def euclidean_gradient(u):
        y = np.linalg.solve(A, M @ u)
        return M @ np.linalg.solve(A, M @ (y - y_d)) + nu * (A @ u)

    def hessian_apply(v):
        return nu * (A @ v) + M @ np.linalg.solve(A, M @ np.linalg.solve(A, M @ v))

    u = np.clip(np.zeros(n), lower, upper)
    j_prev = objective(u)
    for _ in range(max_steps):
        g = euclidean_gradient(u)
        curv = g @ hessian_apply(g)
        if curv <= 0:
            break
        rate = (g @ g) / curv  # exact minimizer along -g for the quadratic
        u_new = np.clip(u - rate * g, lower, upper)
        j_new = objective(u_new)
        while j_new > j_prev and rate > 1e-30:
            rate *= 0.5
            u_new = np.clip(u - rate * g, lower, upper)
            j_new = objective(u_new)
        u = u_new
        decrease = j_prev - j_new
        j_prev = j_new
        if decrease < min_decrease:
            break
    return u


def save_fixture(path, values, seed=None, meta=None):
    """Write a plain-text fixture: '#' header lines, then one value per line."""
    values = np.asarray(values, dtype=float).ravel()
    lines = ["# generator=obstakit-oracles v1"]
    if seed is not None:
        lines.append(f"# seed={seed}")
    for key, val in (meta or {}).items():
        lines.append(f"# {key}={val}")
    lines.extend(format(v, ".17g") for v in values)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_fixture(path):
    """Read a fixture written by save_fixture; returns (values, header dict)."""
    header = {}
    values = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, val = body.split("=", 1)
                    header[key.strip()] = val.strip()
                continue
            values.append(float(line))
    return np.asarray(values), header
