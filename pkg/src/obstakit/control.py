"""Semismooth Newton solver for box-constrained elliptic optimal control.

The problem minimizes 1/2 ||y - y_d||_{L2}^2 + nu/2 ||u||_{H01}^2 over
controls u confined to a nodal box, with the state y = (-Laplace)^{-1} u.
Its optimality system collapses to a single fixed-point equation in the
state,

    Q(y) = y - (-Laplace)^{-1} S(nu^{-1} (-Laplace)^{-1} (y_d - y)) = 0,

where S is the bilateral obstacle solve enforcing the control box.  The
residual map Q is Newton-differentiable; each outer step solves a linear
system whose operator is the identity plus a restricted-Poisson composition
on the current inactive set.

Discrete convention, used uniformly: inverse Laplacians applied to an
L2-represented vector v act as A^{-1}(M v), and the obstacle solve receives
its dual-space argument as the load vector M z.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import ConvergenceError
from .obstacle import (
    ObstacleProblem,
    ObstacleSolution,
    newton_inactive_set,
    solve_bilateral,
)
from .operators import SparseSPD, l2_norm, normalize_node_set, restricted_poisson


def _full_bound(bound, n, default):
    if bound is None:
        return np.full(n, default, dtype=float)
    bound = np.asarray(bound, dtype=float)
    if bound.ndim == 0:
        return np.full(n, float(bound))
    return bound.copy()


@dataclass
class ControlProblem:
    """Data of the box-constrained control problem on one mesh.

    A and M are the interior stiffness and consistent mass operators, nu
    the H01 regularization weight, y_d the tracking target as interior
    nodal values, and lower/upper the nodal control bounds.
    """

    mesh: object
    A: SparseSPD
    M: SparseSPD
    nu: float
    y_d: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        if not np.isfinite(self.nu) or self.nu <= 0.0:
            raise ValueError(f"regularization weight must be positive, got {self.nu}")
        self.nu = float(self.nu)
        self.y_d = np.asarray(self.y_d, dtype=float)
        if self.y_d.shape != (self.A.n,):
            raise ValueError(
                f"target must have shape ({self.A.n},), got {self.y_d.shape}"
            )
        if not np.all(np.isfinite(self.y_d)):
            raise ValueError("target must be finite")
        n = self.A.n
        self.lower = _full_bound(self.lower, n, -np.inf)
        self.upper = _full_bound(self.upper, n, np.inf)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must broadcast to one value per node")
        if np.any(self.lower > self.upper):
            raise ValueError("lower control bound exceeds upper bound")

    def solve_state(self, u):
        """State y = A^{-1} M u reached by the control u."""
        return self.A.solve(self.M.mat @ np.asarray(u, dtype=float))


@dataclass
class ControlIterate:
    """One outer iterate: state guess, adjoint-scaled target, control, smoothed state."""

    y: np.ndarray
    z: np.ndarray
    u: np.ndarray
    y_tilde: np.ndarray
    residual: float
    inactive: np.ndarray
    obstacle: ObstacleSolution = field(repr=False)


@dataclass
class ControlRun:
    """History of a semismooth Newton run.

    `iterations` follows the convention that a run passing the residual
    check at index i has performed i iterations; the initial guess is
    checked at index 0.
    """

    iterates: list
    converged: bool
    tol: float
    y_bar: np.ndarray = None
    u_bar: np.ndarray = None
    final_state_residual: float = np.nan
    final_control_gap: float = np.nan

    @property
    def iterations(self):
        return len(self.iterates) - 1

    @property
    def residuals(self):
        return [it.residual for it in self.iterates]

    @property
    def ratios(self):
        """Consecutive residual quotients; superlinear runs drive these to zero."""
        r = self.residuals
        return [r[i + 1] / r[i] for i in range(len(r) - 1) if r[i] > 0.0]


def residual_map(prob, y, **solve_kwargs):
    """Evaluate Q(y) together with its byproducts (z, u, y_tilde, obstacle solve).

    z is the scaled smoothed mismatch nu^{-1} A^{-1} M (y_d - y); the control
    u solves the bilateral obstacle problem with load M z and the control
    box as obstacles; y_tilde = A^{-1} M u is the state u would produce.
    """
    y = np.asarray(y, dtype=float)
    z = prob.A.solve(prob.M.mat @ (prob.y_d - y)) / prob.nu
    vi = ObstacleProblem(A=prob.A, f=prob.M.mat @ z, lower=prob.lower, upper=prob.upper)
    sol = solve_bilateral(vi, **solve_kwargs)
    u = sol.y
    y_tilde = prob.A.solve(prob.M.mat @ u)
    return y - y_tilde, z, u, y_tilde, sol


def _mass_newton_apply(prob, inactive):
    """Matvec h -> (M + nu^{-1} M A^{-1} M S(O) M A^{-1} M) h.

    This is M composed with the Newton operator G; multiplying through by
    M symmetrizes the system, and G being a positive compact perturbation
    of the identity makes the product positive definite.
    """
    Mm = prob.M.mat

    def apply(h):
        w = Mm @ prob.A.solve(Mm @ h)
        s = restricted_poisson(prob.A, inactive, w)
        return Mm @ h + (Mm @ prob.A.solve(Mm @ s)) / prob.nu

    return apply


def newton_step(prob, y, y_tilde, inactive, tol_inner=1e-13, max_inner=2000):
    """One semismooth Newton update of the state iterate.

    Solves (M G) y_next = M y_tilde + nu^{-1} M A^{-1} M S(O) M A^{-1} M y
    by conjugate gradients, matrix-free, preconditioned with the factored
    mass matrix.  The operator differs from M by a positive semidefinite
    term whose eigenvalues decay like the inverse fourth power of the
    frequency, so the preconditioned spectrum clusters at one and the
    iteration count is essentially mesh-independent.
    """
    y = np.asarray(y, dtype=float)
    inactive = normalize_node_set(inactive, prob.A.n)
    apply_mg = _mass_newton_apply(prob, inactive)
    rhs = prob.M.mat @ y_tilde + (apply_mg(y) - prob.M.mat @ y)

    n = prob.A.n
    op = spla.LinearOperator((n, n), matvec=apply_mg)
    precond = spla.LinearOperator((n, n), matvec=prob.M.solve)
    try:
        y_next, info = spla.cg(op, rhs, rtol=tol_inner, atol=0.0, M=precond,
                               maxiter=max_inner)
    except TypeError:  # older scipy spells the relative tolerance "tol"
        y_next, info = spla.cg(op, rhs, tol=tol_inner, atol=0.0, M=precond,
                               maxiter=max_inner)
    if info != 0:
        raise ConvergenceError(
            f"inner cg for the Newton system did not converge (info={info})",
            iterate=y_next,
        )
    return y_next


def solve(prob, y0=None, tol=1e-12, max_iter=25, tol_inner=1e-13,
          inactive_strategy="maximal", **obstacle_kwargs):
    """Run the semismooth Newton method on the state fixed-point equation.

    Starting from y0 (zero by default), alternates residual evaluation and
    Newton steps until the discrete L2 residual ||y - y_tilde||_M drops to
    tol.  After convergence the final smoothed state is re-checked with one
    extra residual evaluation; the run fails loudly if that verification
    misses 10 * tol.
    """
    if tol < 0.0:
        raise ValueError(f"tolerance must be nonnegative, got {tol}")
    n = prob.A.n
    y = np.zeros(n) if y0 is None else np.asarray(y0, dtype=float).copy()
    if y.shape != (n,):
        raise ValueError(f"initial state must have shape ({n},), got {y.shape}")

    iterates = []
    for _ in range(max_iter + 1):
        q, z, u, y_tilde, sol = residual_map(prob, y, **obstacle_kwargs)
        residual = l2_norm(prob.M.mat, q)
        vi = ObstacleProblem(A=prob.A, f=prob.M.mat @ z,
                             lower=prob.lower, upper=prob.upper)
        inactive = newton_inactive_set(vi, sol, strategy=inactive_strategy)
        iterates.append(ControlIterate(y=y, z=z, u=u, y_tilde=y_tilde,
                                       residual=residual, inactive=inactive,
                                       obstacle=sol))
        if residual <= tol:
            run = ControlRun(iterates=iterates, converged=True, tol=tol,
                             y_bar=y_tilde, u_bar=u)
            _verify_fixed_point(prob, run, **obstacle_kwargs)
            return run
        y = newton_step(prob, y, y_tilde, inactive, tol_inner=tol_inner)

    run = ControlRun(iterates=iterates, converged=False, tol=tol)
    raise ConvergenceError(
        f"no convergence to {tol} within {max_iter} Newton iterations "
        f"(last residual {iterates[-1].residual:.3e})",
        residual=iterates[-1].residual,
        history=run,
    )


def _verify_fixed_point(prob, run, **obstacle_kwargs):
    """Re-evaluate the residual map at the converged pair and record the gaps."""
    q, _, u_check, _, _ = residual_map(prob, run.y_bar, **obstacle_kwargs)
    run.final_state_residual = l2_norm(prob.M.mat, q)
    run.final_control_gap = float(np.max(np.abs(u_check - run.u_bar)))
    if run.final_state_residual > 10.0 * run.tol:
        raise ConvergenceError(
            "converged iterate failed post-hoc verification: "
            f"residual at the smoothed state is {run.final_state_residual:.3e} "
            f"> 10 * tol = {10.0 * run.tol:.3e}",
            residual=run.final_state_residual,
            history=run,
        )


def objective(prob, u):
    """Tracking functional 1/2 ||y(u) - y_d||_M^2 + nu/2 ||u||_A^2."""
    u = np.asarray(u, dtype=float)
    y = prob.solve_state(u)
    mismatch = y - prob.y_d
    tracking = 0.5 * float(mismatch @ (prob.M.mat @ mismatch))
    penalty = 0.5 * prob.nu * float(u @ (prob.A.mat @ u))
    return tracking + penalty
