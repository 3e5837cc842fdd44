import numpy as np
import pytest
from numpy.testing import assert_allclose

from obstakit.errors import ConvergenceError
from obstakit.mesh import assemble_mass, assemble_stiffness, friedrichs_keller
from obstakit.obstacle import (
    ObstacleProblem,
    cross_check_decomposition,
    kkt_report,
    newton_inactive_set,
    semismoothness_probe,
    solve_bilateral,
    solve_unilateral_lower,
    solve_unilateral_upper,
)
from obstakit.operators import SparseSPD, dual_norm, energy_norm, l2_norm
from obstakit.oracles import chain_matrix, enumerate_obstacle, load_fixture

from vi_instances import random_chain_instance


def _chain_problem(n=6, load=None, lower=None, upper=None):
    A = SparseSPD(chain_matrix(n))
    f = load if load is not None else np.ones(n)
    return ObstacleProblem(A, f, lower=lower, upper=upper)


def test_matches_frozen_fixture():
    n, h = 6, 1.0 / 7.0
    prob = _chain_problem(n, load=10 * h * h * np.ones(n), upper=1.2)
    sol = solve_bilateral(prob)
    frozen, _ = load_fixture("tests/fixtures/chain6_upper.txt")
    assert_allclose(sol.y, frozen[:6], atol=1e-12)
    assert_allclose(sol.lam, frozen[6:], atol=1e-12)
    assert sol.active_upper.tolist() == [2, 3]
    assert sol.active_lower.size == 0
    assert sol.inactive.tolist() == [0, 1, 4, 5]


def test_agrees_with_enumeration_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(40):
        A, f, lo, up = random_chain_instance(rng)
        sol = solve_bilateral(ObstacleProblem(SparseSPD(A), f, lo, up))
        ref = enumerate_obstacle(A, f, lower=lo, upper=up)
        assert np.max(np.abs(sol.y - ref.y)) <= 1e-10
        assert sol.active_lower.tolist() == ref.active_lower.tolist()
        assert sol.active_upper.tolist() == ref.active_upper.tolist()


def test_unconstrained_box_reduces_to_linear_solve():
    prob = _chain_problem(5)
    sol = solve_bilateral(prob)
    assert_allclose(sol.y, prob.A.solve(prob.f), atol=1e-13)
    assert sol.inactive.size == 5
    assert sol.kkt_residual <= 1e-12


def test_biactive_contact_classified_inactive():
    A = chain_matrix(4)
    y_star = np.array([0.3, 1.0, 0.5, 0.2])
    prob = ObstacleProblem(SparseSPD(A), A @ y_star, upper=1.0)
    sol = solve_bilateral(prob)
    assert_allclose(sol.y, y_star, atol=1e-12)
    assert sol.active_upper.size == 0
    assert 1 in sol.inactive.tolist()


def test_kkt_blocks_and_multiplier_signs():
    rng = np.random.default_rng(7)
    for _ in range(20):
        A, f, lo, up = random_chain_instance(rng)
        prob = ObstacleProblem(SparseSPD(A), f, lo, up)
        sol = solve_bilateral(prob)
        blocks = sol.kkt_blocks
        for key in ("feas_lower", "feas_upper", "comp_lower", "comp_upper"):
            assert blocks[key] <= 1e-10, key
        assert np.all(sol.lam_lower <= 0) and np.all(sol.lam_upper >= 0)
        # disjoint supports of the two contact forces
        assert not np.any((sol.lam_lower < -1e-12) & (sol.lam_upper > 1e-12))
        # state solves the reduced equation on the inactive set
        res = (prob.f - prob.A.mat @ sol.y)[sol.inactive]
        assert np.max(np.abs(res), initial=0.0) <= 1e-10


def test_pinned_node_equal_bounds():
    A = chain_matrix(3)
    lo = np.array([-1.0, 0.25, -1.0])
    up = np.array([1.0, 0.25, 1.0])
    sol = solve_bilateral(ObstacleProblem(SparseSPD(A), np.zeros(3), lo, up))
    assert_allclose(sol.y[1], 0.25, atol=1e-13)
    ref = enumerate_obstacle(A, np.zeros(3), lower=lo, upper=up)
    assert_allclose(sol.y, ref.y, atol=1e-12)


def test_unilateral_wrappers():
    n, h = 6, 1.0 / 7.0
    A = SparseSPD(chain_matrix(n))
    f = 10 * h * h * np.ones(n)
    up = solve_unilateral_upper(A, f, 1.2)
    assert up.active_upper.tolist() == [2, 3]
    lo = solve_unilateral_lower(A, -f, -1.2)
    assert lo.active_lower.tolist() == [2, 3]
    assert_allclose(lo.y, -up.y, atol=1e-13)


def test_solution_lipschitz_in_dual_norm():
    mesh = friedrichs_keller(8)
    A = SparseSPD(assemble_stiffness(mesh))
    rng = np.random.default_rng(31)
    lo, up = -0.02, 0.03
    for _ in range(10):
        f1 = rng.normal(size=A.n)
        f2 = rng.normal(size=A.n)
        s1 = solve_bilateral(ObstacleProblem(A, f1, lo, up))
        s2 = solve_bilateral(ObstacleProblem(A, f2, lo, up))
        assert energy_norm(A, s1.y - s2.y) <= dual_norm(A, f1 - f2) + 1e-12


def test_cross_check_decomposition_small():
    rng = np.random.default_rng(17)
    for _ in range(10):
        A, f, lo, up = random_chain_instance(rng)
        prob = ObstacleProblem(SparseSPD(A), f, lo, up)
        sol = solve_bilateral(prob)
        assert cross_check_decomposition(prob, sol) <= 1e-10


def test_stagnating_iteration_recovers_by_weight_escalation():
    # A load whose multiplier scale dwarfs the box lets the c=1 set update
    # churn for dozens of steps; stall detection must bail it out.
    mesh = friedrichs_keller(32)
    A = SparseSPD(assemble_stiffness(mesh))
    M = assemble_mass(mesh)
    X = mesh.interior_coords()
    z = A.solve(M @ (10.0 * (1.0 - X[:, 0] - X[:, 1]))) / 1e-5
    rng = np.random.default_rng(77)
    h = np.zeros(A.n)
    for _ in range(2):  # the second smooth draw is the troublemaker
        h = np.zeros(A.n)
        for i in range(1, 4):
            for j in range(1, 4):
                h += rng.normal() * np.sin(i * np.pi * X[:, 0]) * np.sin(j * np.pi * X[:, 1])
    h *= l2_norm(M, z) / l2_norm(M, h)
    prob = ObstacleProblem(A, M @ (z + 0.01 * h), lower=-5.0, upper=5.0)
    with pytest.raises(ConvergenceError):
        solve_bilateral(prob, stall_window=10**9)
    sol = solve_bilateral(prob)
    assert sol.kkt_residual <= 1e-10


def test_newton_inactive_set_strategies():
    A = chain_matrix(4)
    y_star = np.array([0.3, 1.0, 1.0, 0.2])
    lam_star = np.array([0.0, 0.0, 0.4, 0.0])  # node 2 pressing, node 1 touching
    prob = ObstacleProblem(SparseSPD(A), A @ y_star + lam_star, upper=1.0)
    sol = solve_bilateral(prob)
    assert_allclose(sol.y, y_star, atol=1e-12)
    assert newton_inactive_set(prob, sol).tolist() == [0, 1, 3]
    assert newton_inactive_set(prob, sol, strategy="strict").tolist() == [0, 3]
    # anything sandwiched between the two is admissible
    assert newton_inactive_set(prob, sol, strategy=[0, 1, 3]).tolist() == [0, 1, 3]
    with pytest.raises(ValueError, match="strictly inactive node 0"):
        newton_inactive_set(prob, sol, strategy=[1, 3])
    with pytest.raises(ValueError, match="node 2"):
        newton_inactive_set(prob, sol, strategy=[0, 1, 2, 3])
    with pytest.raises(ValueError, match="unknown strategy"):
        newton_inactive_set(prob, sol, strategy="everything")


def test_semismoothness_probe_remainder_vanishes_for_small_steps():
    mesh = friedrichs_keller(8)
    A = SparseSPD(assemble_stiffness(mesh))
    M = assemble_mass(mesh)
    rng = np.random.default_rng(3)
    prob = ObstacleProblem(A, np.asarray(M @ rng.normal(size=A.n)) * 5, lower=-0.01, upper=0.01)
    h = rng.normal(size=A.n)
    table = semismoothness_probe(prob, M, h, [1e-1, 1e-3, 1e-6])
    assert [t for t, _ in table] == [1e-1, 1e-3, 1e-6]
    assert table[-1][1] <= 1e-6  # linearization exact once the contact freezes


def test_probe_rejects_bad_input():
    prob = _chain_problem(4)
    M = np.eye(4)
    with pytest.raises(ValueError, match="nonzero"):
        semismoothness_probe(prob, M, np.zeros(4), [0.1])
    with pytest.raises(ValueError, match="positive"):
        semismoothness_probe(prob, M, np.ones(4), [-0.1])


def test_failure_is_loud():
    prob = _chain_problem(6, upper=0.1)
    with pytest.raises(ConvergenceError):
        solve_bilateral(prob, max_iter=0)
    with pytest.raises(ValueError, match="positive"):
        solve_bilateral(prob, c=-1.0)


def test_problem_validation():
    A = SparseSPD(chain_matrix(3))
    with pytest.raises(ValueError, match="exceeds"):
        ObstacleProblem(A, np.zeros(3), lower=1.0, upper=-1.0)
    with pytest.raises(ValueError, match="shape"):
        ObstacleProblem(A, np.zeros(4))
    with pytest.raises(ValueError, match="NaN"):
        ObstacleProblem(A, np.zeros(3), lower=np.nan)


def test_kkt_report_flags_violations():
    A = SparseSPD(chain_matrix(3))
    prob = ObstacleProblem(A, np.zeros(3), lower=0.0, upper=1.0)
    bad_y = np.array([-0.5, 0.5, 2.0])
    blocks = kkt_report(prob, bad_y, prob.f - A.mat @ bad_y)
    assert blocks["feas_lower"] == pytest.approx(0.5)
    assert blocks["feas_upper"] == pytest.approx(1.0)
    assert blocks["kkt_residual"] >= 1.0
