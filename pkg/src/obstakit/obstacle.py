"""Primal-dual active set solver for unilateral and bilateral obstacle problems.

The discrete problem is the variational inequality over the box
{lower <= y <= upper}: find a feasible y with multiplier lam = f - A y
such that lam <= 0 where y sits on the lower bound, lam >= 0 on the upper
bound, and lam = 0 in between.  Infinite bound entries mean "no constraint
at this node".

The solver iterates on guessed active sets: given (y, lam), a node joins
the lower active set when lam + c (y - lower) < 0 and the upper one when
lam + c (y - upper) > 0; the reduced linear system pins active nodes to
their bound and solves the principal submatrix on the rest.  Reaching the
same pair of sets twice in a row is a fixed point, i.e. the solution.
Revisiting an older pair means the iteration cycles; stagnating KKT
residuals mean it wanders.  Both restart the iteration with a heavier
weight c (the fixed point does not depend on c), and persistent trouble is
reported as a hard failure rather than papered over.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError
from .operators import (
    SparseSPD,
    energy_norm,
    l2_norm,
    normalize_node_set,
    restricted_poisson,
)

# A contact node whose multiplier vanishes to this tolerance is treated as
# touching but not pressing, and is classified with the inactive nodes.
EPS_ACTIVE = 1e-12


def _full_bound(bound, n, default):
    if bound is None:
        return np.full(n, default, dtype=float)
    return np.broadcast_to(np.asarray(bound, dtype=float), (n,)).astype(float).copy()


@dataclass
class ObstacleProblem:
    """Box-constrained variational inequality data.

    A is the SPD system matrix, f the load (a dual vector: mass-weighted if
    it represents an L2 function), lower/upper the nodal bounds with -inf
    and +inf marking unconstrained nodes.
    """

    A: SparseSPD
    f: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        if self.f.shape != (self.A.n,):
            raise ValueError(f"load must have shape ({self.A.n},), got {self.f.shape}")
        self.lower = _full_bound(self.lower, self.A.n, -np.inf)
        self.upper = _full_bound(self.upper, self.A.n, np.inf)
        if self.lower.shape != (self.A.n,) or self.upper.shape != (self.A.n,):
            raise ValueError("bounds must broadcast to one value per node")
        if np.any(self.lower > self.upper):
            bad = int(np.argmax(self.lower > self.upper))
            raise ValueError(f"lower bound exceeds upper bound at node {bad}")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise ValueError("bounds must not contain NaN")


@dataclass
class ObstacleSolution:
    """Solver output: state, multiplier, canonical active sets, diagnostics."""

    y: np.ndarray
    lam: np.ndarray
    active_lower: np.ndarray
    active_upper: np.ndarray
    inactive: np.ndarray
    iterations: int
    kkt_residual: float
    kkt_blocks: dict = field(repr=False)

    @property
    def lam_lower(self):
        """Nonpositive part of the multiplier (lower-contact force)."""
        return np.minimum(self.lam, 0.0)

    @property
    def lam_upper(self):
        """Nonnegative part of the multiplier (upper-contact force)."""
        return np.maximum(self.lam, 0.0)


def kkt_report(prob, y, lam):
    """The four optimality blocks plus their maximum.

    feas_lower / feas_upper are sup-norm bound violations; comp_lower /
    comp_upper are sup-norms of multiplier-times-gap, with the plain
    multiplier magnitude substituted where the bound is infinite (there the
    only admissible contact force is zero).
    """
    lam_lo = np.minimum(lam, 0.0)
    lam_up = np.maximum(lam, 0.0)
    fin_lo = np.isfinite(prob.lower)
    fin_up = np.isfinite(prob.upper)
    feas_lower = float(np.max(np.maximum(prob.lower - y, 0.0), initial=0.0, where=fin_lo))
    feas_upper = float(np.max(np.maximum(y - prob.upper, 0.0), initial=0.0, where=fin_up))
    gap_lo = np.where(fin_lo, y - prob.lower, 1.0)
    gap_up = np.where(fin_up, y - prob.upper, 1.0)
    comp_lower = float(np.max(np.abs(lam_lo * gap_lo), initial=0.0))
    comp_upper = float(np.max(np.abs(lam_up * gap_up), initial=0.0))
    blocks = {
        "feas_lower": feas_lower,
        "feas_upper": feas_upper,
        "comp_lower": comp_lower,
        "comp_upper": comp_upper,
    }
    blocks["kkt_residual"] = max(blocks.values())
    return blocks


def solve_bilateral(prob, c=1.0, tol=1e-10, max_iter=100, stall_window=20):
    """Run the primal-dual active set iteration to a fixed point.

    Starts from the unconstrained solve clamped to the box.  Terminates when
    the active sets repeat (exact fixed point) or the KKT residual drops
    below tol.  Fixed points do not depend on the weight c, but the path
    does: with a narrow box a node can be thrown from one bound straight to
    the other and back, and a weight far below the multiplier scale lets
    the sets churn for many steps.  The iteration therefore restarts with c
    increased tenfold whenever an active-set pair is revisited or the KKT
    residual goes stall_window solves without halving; if trouble survives
    several escalations, the solver raises ConvergenceError instead of
    returning the current iterate.
    """
    if c <= 0:
        raise ValueError(f"active set weight c must be positive, got {c}")
    A, f = prob.A, prob.f
    n = A.n
    y = np.clip(A.solve(f), prob.lower, prob.upper)
    lam = f - A.mat @ y
    fin_lo = np.isfinite(prob.lower)
    fin_up = np.isfinite(prob.upper)

    seen = {}
    prev_sig = None
    escalations_left = 3
    best_residual = np.inf
    since_improved = 0
    low_mask = np.zeros(n, dtype=bool)
    up_mask = np.zeros(n, dtype=bool)
    solves = 0
    blocks = kkt_report(prob, y, lam)

    def escalate():
        nonlocal c, prev_sig, best_residual, since_improved, escalations_left
        escalations_left -= 1
        c *= 10.0
        seen.clear()
        prev_sig = None
        best_residual = np.inf
        since_improved = 0

    for k in range(1, max_iter + 1):
        ind_lo = np.where(fin_lo, lam + c * (y - prob.lower), np.inf)
        ind_up = np.where(fin_up, lam + c * (y - prob.upper), -np.inf)
        low_mask = ind_lo < 0
        up_mask = ind_up > 0
        clash = low_mask & up_mask  # possible only when lower == upper
        if np.any(clash):
            prefer_low = -ind_lo >= ind_up
            low_mask[clash] = prefer_low[clash]
            up_mask[clash] = ~prefer_low[clash]

        sig = low_mask.tobytes() + up_mask.tobytes()
        if sig == prev_sig:
            break  # same sets as the last solve: fixed point reached
        if sig in seen:
            if escalations_left == 0:
                raise ConvergenceError(
                    f"active set iteration cycles (sets of step {seen[sig]} "
                    f"revisited at step {k}, weight escalated to c={c:g})",
                    iterate=y,
                    residual=blocks["kkt_residual"],
                    history=seen,
                )
            escalate()
            continue
        seen[sig] = k
        prev_sig = sig

        y = np.zeros(n)
        y[low_mask] = prob.lower[low_mask]
        y[up_mask] = prob.upper[up_mask]
        inact_idx = np.flatnonzero(~(low_mask | up_mask))
        if inact_idx.size:
            rhs = f[inact_idx] - (A.mat @ y)[inact_idx]
            y[inact_idx] = A.restricted_factor(inact_idx).solve(rhs)
        lam = f - A.mat @ y
        solves += 1
        blocks = kkt_report(prob, y, lam)
        if blocks["kkt_residual"] <= tol:
            break
        if blocks["kkt_residual"] < 0.5 * best_residual:
            best_residual = blocks["kkt_residual"]
            since_improved = 0
        else:
            since_improved += 1
            if since_improved >= stall_window and escalations_left > 0:
                escalate()
    else:
        raise ConvergenceError(
            f"active set iteration did not settle in {max_iter} steps "
            f"(kkt residual {blocks['kkt_residual']:.3e})",
            iterate=y,
            residual=blocks["kkt_residual"],
        )

    # Canonical classification: contact nodes with a vanishing multiplier
    # (touching, not pressing) are reported inactive.
    act_lo = low_mask & (lam < -EPS_ACTIVE)
    act_up = up_mask & (lam > EPS_ACTIVE)
    idx = np.arange(n)
    return ObstacleSolution(
        y=y,
        lam=lam,
        active_lower=idx[act_lo].astype(np.int64),
        active_upper=idx[act_up].astype(np.int64),
        inactive=idx[~(act_lo | act_up)].astype(np.int64),
        iterations=solves,
        kkt_residual=blocks["kkt_residual"],
        kkt_blocks=blocks,
    )


def solve_unilateral_lower(A, f, lower, **kwargs):
    """Obstacle problem with only a lower bound."""
    return solve_bilateral(ObstacleProblem(A, f, lower=lower, upper=None), **kwargs)


def solve_unilateral_upper(A, f, upper, **kwargs):
    """Obstacle problem with only an upper bound."""
    return solve_bilateral(ObstacleProblem(A, f, lower=None, upper=upper), **kwargs)


def cross_check_decomposition(prob, sol, **kwargs):
    """Re-derive the bilateral state through both one-sided problems.

    Splitting lam into its nonpositive and nonnegative parts, the bilateral
    state must solve the lower-only problem with load f - lam_upper and the
    upper-only problem with load f - lam_lower.  Returns the larger of the
    two sup-norm deviations; anything beyond solver tolerance indicates an
    inconsistent multiplier decomposition.
    """
    from_lower = solve_unilateral_lower(prob.A, prob.f - sol.lam_upper, prob.lower, **kwargs)
    from_upper = solve_unilateral_upper(prob.A, prob.f - sol.lam_lower, prob.upper, **kwargs)
    dev_lo = float(np.max(np.abs(from_lower.y - sol.y)))
    dev_up = float(np.max(np.abs(from_upper.y - sol.y)))
    return max(dev_lo, dev_up)


def newton_inactive_set(prob, sol, strategy="maximal", eps_active=EPS_ACTIVE):
    """Select the node set carrying the derivative of the solution map.

    Any admissible choice lies between the strictly inactive nodes and the
    complement of the multiplier support.  "maximal" (default) returns the
    canonical inactive set of the solution, which already counts
    zero-multiplier contact nodes as inactive; "strict" keeps only nodes
    strictly between the bounds.  An explicit array of node indices is
    validated against the sandwich and returned normalized.
    """
    n = prob.A.n
    strict_mask = np.ones(n, dtype=bool)
    fin_lo = np.isfinite(prob.lower)
    fin_up = np.isfinite(prob.upper)
    strict_mask[fin_lo & (sol.y <= prob.lower + eps_active)] = False
    strict_mask[fin_up & (sol.y >= prob.upper - eps_active)] = False

    if isinstance(strategy, str):
        if strategy == "maximal":
            return normalize_node_set(sol.inactive, n)
        if strategy == "strict":
            return normalize_node_set(np.flatnonzero(strict_mask), n)
        raise ValueError(f"unknown strategy {strategy!r}")

    custom = normalize_node_set(strategy, n)
    custom_mask = np.zeros(n, dtype=bool)
    custom_mask[custom] = True
    missing = np.flatnonzero(strict_mask & ~custom_mask)
    if missing.size:
        raise ValueError(
            f"candidate set omits strictly inactive node {int(missing[0])}"
        )
    maximal_mask = np.zeros(n, dtype=bool)
    maximal_mask[sol.inactive] = True
    excess = np.flatnonzero(custom_mask & ~maximal_mask)
    if excess.size:
        raise ValueError(
            f"candidate set contains node {int(excess[0])} with nonzero multiplier"
        )
    return custom


def semismoothness_probe(prob, M, h, t_list, **solve_kwargs):
    """Remainder decay of the restricted-solve linearization.

    For each step size t, solves the problem with load f + t M h, applies
    the restricted solve on the perturbed solution's inactive set to the
    load increment, and reports

        r(t) = |y_t - y_0 - S_O(t M h)|_A / (t |h|_M).

    Returns a list of (t, r) pairs in the order given.  The decay of r as
    t shrinks is exactly the Newton-differentiability the control solver
    relies on; assessing the trend is left to the caller.
    """
    sol0 = solve_bilateral(prob, **solve_kwargs)
    Mh = np.asarray(M @ np.asarray(h, dtype=float))
    denom = l2_norm(M, h)
    if denom == 0:
        raise ValueError("direction h must be nonzero")
    out = []
    for t in t_list:
        if t <= 0:
            raise ValueError(f"step sizes must be positive, got {t}")
        pert = ObstacleProblem(prob.A, prob.f + t * Mh, prob.lower, prob.upper)
        sol_t = solve_bilateral(pert, **solve_kwargs)
        O_t = newton_inactive_set(pert, sol_t)
        delta = restricted_poisson(prob.A, O_t, t * Mh)
        r = energy_norm(prob.A, sol_t.y - sol0.y - delta) / (t * denom)
        out.append((float(t), float(r)))
    return out
