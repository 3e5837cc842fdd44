"""Tests for the semismooth Newton control solver."""

import numpy as np
import pytest

from obstakit import control
from obstakit.errors import ConvergenceError
from obstakit.mesh import assemble_mass, assemble_stiffness, friedrichs_keller, interpolate
from obstakit.operators import SparseSPD, l2_norm
from obstakit.oracles import projected_gradient_control


def make_problem(n, nu, y_d_func, lower=-5.0, upper=5.0):
    mesh = friedrichs_keller(n)
    A = SparseSPD(assemble_stiffness(mesh))
    M = SparseSPD(assemble_mass(mesh))
    y_d = interpolate(mesh, y_d_func)
    return control.ControlProblem(mesh=mesh, A=A, M=M, nu=nu, y_d=y_d,
                                  lower=lower, upper=upper)


def tilted_target(x1, x2):
    return 10.0 * (-x1 - x2 + 1.0)


def test_zero_target_is_immediate_fixed_point():
    prob = make_problem(8, 1e-3, lambda x1, x2: 0.0, lower=-1.0, upper=1.0)
    run = control.solve(prob, tol=1e-12)
    assert run.converged
    assert run.iterations == 0
    assert np.max(np.abs(run.u_bar)) == 0.0
    assert np.max(np.abs(run.y_bar)) == 0.0


def test_residual_map_byproducts():
    prob = make_problem(8, 1e-3, tilted_target)
    y = np.zeros(prob.A.n)
    q, z, u, y_tilde, sol = control.residual_map(prob, y)
    # z is the scaled smoothed target when y = 0
    z_expected = prob.A.solve(prob.M.mat @ prob.y_d) / prob.nu
    assert np.max(np.abs(z - z_expected)) < 1e-12
    assert np.max(np.abs(q - (y - y_tilde))) == 0.0
    assert np.all(u >= prob.lower - 1e-14)
    assert np.all(u <= prob.upper + 1e-14)
    assert np.max(np.abs(y_tilde - prob.solve_state(u))) < 1e-14


def test_huge_regularization_shrinks_the_control():
    prob = make_problem(8, 1e6, tilted_target, lower=-50.0, upper=50.0)
    y = np.zeros(prob.A.n)
    q, _, u, y_tilde, _ = control.residual_map(prob, y)
    assert np.max(np.abs(u)) < 1e-4
    assert np.max(np.abs(y_tilde)) < 1e-5
    assert np.max(np.abs(q - y + y_tilde)) == 0.0


def dense_unconstrained_solution(prob):
    """Dense normal-equation solve of the linear-quadratic problem."""
    n = prob.A.n
    A = prob.A.mat.toarray()
    M = prob.M.mat.toarray()
    Ainv = np.linalg.inv(A)
    H = prob.nu * A + M @ Ainv @ M @ Ainv @ M
    rhs = M @ Ainv @ (M @ prob.y_d)
    return np.linalg.solve(H, rhs)


def test_unconstrained_regime_matches_dense_normal_equations():
    prob = make_problem(8, 1e-2, tilted_target, lower=-1e6, upper=1e6)
    u_dense = dense_unconstrained_solution(prob)
    y_dense = prob.solve_state(u_dense)

    # with every node inactive the residual equation is linear, so the
    # very first Newton step lands on the solution
    y0 = np.zeros(prob.A.n)
    _, _, _, y_tilde, _ = control.residual_map(prob, y0)
    y1 = control.newton_step(prob, y0, y_tilde, np.arange(prob.A.n))
    assert np.max(np.abs(y1 - y_dense)) < 1e-9

    run = control.solve(prob, tol=1e-12)
    assert run.iterations <= 2
    assert np.max(np.abs(run.u_bar - u_dense)) < 1e-9
    assert np.max(np.abs(run.y_bar - y_dense)) < 1e-9


def test_solver_matches_projected_gradient_oracle():
    prob = make_problem(8, 1e-2, lambda x1, x2: np.sin(np.pi * x1) * x2,
                        lower=-0.02, upper=0.02)
    run = control.solve(prob, tol=1e-13)
    assert np.any(run.u_bar >= 0.02 - 1e-10) or np.any(run.u_bar <= -0.02 + 1e-10)
    u_pg = projected_gradient_control(
        prob.A.mat.toarray(), prob.M.mat.toarray(), prob.y_d, prob.nu,
        prob.lower, prob.upper, min_decrease=1e-16,
    )
    assert np.max(np.abs(run.u_bar - u_pg)) < 1e-6


def test_newton_step_with_empty_inactive_set_returns_smoothed_state():
    prob = make_problem(8, 1e-3, tilted_target)
    rng = np.random.default_rng(3)
    y = rng.normal(size=prob.A.n)
    _, _, _, y_tilde, _ = control.residual_map(prob, y)
    y_next = control.newton_step(prob, y, y_tilde, np.array([], dtype=int))
    assert np.max(np.abs(y_next - y_tilde)) < 1e-12


def test_newton_operator_dominates_mass():
    prob = make_problem(16, 1e-5, tilted_target)
    _, _, _, _, sol = control.residual_map(prob, np.zeros(prob.A.n))
    apply_mg = control._mass_newton_apply(prob, sol.inactive)
    rng = np.random.default_rng(4)
    for _ in range(20):
        z = rng.normal(size=prob.A.n)
        lhs = z @ apply_mg(z)
        rhs = z @ (prob.M.mat @ z)
        assert lhs >= rhs - 1e-12 * (z @ z)


def test_mesh_independent_iteration_count():
    counts = []
    for n in (32, 64):
        prob = make_problem(n, 1e-5, tilted_target)
        run = control.solve(prob, tol=1e-12)
        counts.append(run.iterations)
        assert run.converged
        assert run.final_state_residual <= 10.0 * 1e-12
    assert counts[0] == counts[1] == 2


def test_superlinear_tail_on_longer_runs():
    mesh = friedrichs_keller(16)
    A = SparseSPD(assemble_stiffness(mesh))
    M = SparseSPD(assemble_mass(mesh))
    n = A.n
    seen_long = 0
    for seed in (0, 2, 3, 6):
        rng = np.random.default_rng(seed)
        y_d = interpolate(mesh, lambda x1, x2: 10.0 * np.sin(3 * np.pi * x1) * x2) \
            + rng.normal(scale=2.0, size=n)
        nu = 10.0 ** rng.uniform(-4.5, -3.0)
        bound = rng.uniform(1.0, 4.0)
        prob = control.ControlProblem(mesh=mesh, A=A, M=M, nu=nu, y_d=y_d,
                                      lower=-bound, upper=bound)
        run = control.solve(prob, y0=rng.normal(scale=5.0, size=n), tol=1e-12)
        assert run.converged
        if run.iterations >= 3:
            seen_long += 1
            ratios = run.ratios
            assert ratios[-1] < ratios[-2]
            assert ratios[-1] < 1e-6
    assert seen_long >= 3


def test_fixed_point_consistency_of_converged_run():
    prob = make_problem(16, 1e-5, tilted_target)
    run = control.solve(prob, tol=1e-12)
    assert np.all(run.u_bar >= prob.lower - 1e-14)
    assert np.all(run.u_bar <= prob.upper + 1e-14)
    assert np.max(np.abs(run.y_bar - prob.solve_state(run.u_bar))) < 1e-14
    assert run.final_control_gap < 1e-9
    # the converged control is the box clamp of the scaled smoothed mismatch
    # wherever it saturates, and matches it on the free set
    z_bar = prob.A.solve(prob.M.mat @ (prob.y_d - run.y_bar)) / prob.nu
    q, _, u_check, _, _ = control.residual_map(prob, run.y_bar)
    assert l2_norm(prob.M.mat, q) <= 10.0 * 1e-12
    assert np.max(np.abs(u_check - run.u_bar)) < 1e-9
    free = (run.u_bar > prob.lower + 1e-9) & (run.u_bar < prob.upper - 1e-9)
    assert np.any(free)


def test_objective_values():
    prob = make_problem(8, 1e-3, tilted_target)
    base = control.objective(prob, np.zeros(prob.A.n))
    expected = 0.5 * float(prob.y_d @ (prob.M.mat @ prob.y_d))
    assert abs(base - expected) < 1e-14

    run = control.solve(prob, tol=1e-12)
    best = control.objective(prob, run.u_bar)
    rng = np.random.default_rng(7)
    for _ in range(50):
        step = rng.normal(scale=rng.uniform(1e-3, 1.0), size=prob.A.n)
        trial = np.clip(run.u_bar + step, prob.lower, prob.upper)
        assert control.objective(prob, trial) >= best - 1e-12


def test_nonconvergence_raises_with_history():
    prob = make_problem(8, 1e-5, tilted_target)
    with pytest.raises(ConvergenceError) as exc:
        control.solve(prob, tol=1e-12, max_iter=0)
    assert exc.value.history is not None
    assert len(exc.value.history.iterates) == 1
    assert not exc.value.history.converged


def test_problem_validation():
    mesh = friedrichs_keller(4)
    A = SparseSPD(assemble_stiffness(mesh))
    M = SparseSPD(assemble_mass(mesh))
    good = np.zeros(A.n)
    with pytest.raises(ValueError):
        control.ControlProblem(mesh=mesh, A=A, M=M, nu=0.0, y_d=good)
    with pytest.raises(ValueError):
        control.ControlProblem(mesh=mesh, A=A, M=M, nu=1.0, y_d=np.zeros(3))
    with pytest.raises(ValueError):
        control.ControlProblem(mesh=mesh, A=A, M=M, nu=1.0, y_d=good,
                               lower=1.0, upper=-1.0)
    prob = control.ControlProblem(mesh=mesh, A=A, M=M, nu=1.0, y_d=good)
    with pytest.raises(ValueError):
        control.solve(prob, y0=np.zeros(4))
    with pytest.raises(ValueError):
        control.solve(prob, tol=-1.0)
