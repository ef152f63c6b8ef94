"""
Tests of the optimizer oracle
"""
import numpy as np
import pytest

from .context import controller, costs, oracle, plant


@pytest.fixture
def lti():
    eye = np.eye(2)
    return plant.make_lti_plant(-eye, eye, eye, 2 * eye)


@pytest.fixture
def wide_box():
    return controller.ConstraintSet.box([-5, -5], [5, 5])


def test_quadratic_optimum_is_analytic(lti, wide_box):
    """
    phi = 1/2 ||u - u_ref||^2, psi = 1/2 ||u + w - x_ref||^2 gives u* = (u_ref + x_ref - w) / 2
    """
    u_ref, x_ref = np.array([0.2, -0.4]), np.array([1.0, 0.5])
    cost = costs.make_quadratic_cost(np.eye(2), np.eye(2), u_ref, x_ref, H=np.eye(2))
    w = np.array([0.3, -0.1])
    solution = oracle.solve_oracle(lti, cost, w, 0.0, np.zeros(2), wide_box)
    expected = (u_ref + x_ref - w) / 2
    assert np.allclose(solution.u_star, expected, rtol=0, atol=1e-8)
    assert np.allclose(solution.x_star, expected + w, rtol=0, atol=1e-8)
    assert solution.residual <= 1e-9
    assert oracle.fixed_point_residual(lti, cost, wide_box, solution.u_star, w, 0.0) <= 1e-9


def test_optimum_on_constraint_boundary(lti):
    cost = costs.make_quadratic_cost(np.eye(2), np.eye(2), [0.0, 0.0], [1.0, -1.0], H=np.eye(2))
    box = controller.ConstraintSet.box([-0.1, -0.1], [0.1, 0.1])
    solution = oracle.solve_oracle(lti, cost, np.zeros(2), 0.0, np.zeros(2), box)
    # unconstrained optimum (0.5, -0.5) clipped to the box
    assert np.allclose(solution.u_star, [0.1, -0.1], atol=1e-9)


def test_oracle_not_converged(lti, wide_box):
    cost = costs.make_quadratic_cost(np.diag([1.0, 10.0]), np.eye(2), [0.0, 0.0], [1.0, 1.0], H=np.eye(2))
    with pytest.raises(oracle.OracleNotConverged) as info:
        oracle.solve_oracle(lti, cost, np.zeros(2), 0.0, np.array([4.0, -4.0]), wide_box, max_iterations=2)
    assert info.value.iterations == 2
    assert info.value.residual > 1e-9


def test_fallback_start_outside_barrier_domain(lti):
    obstacles = [costs.Obstacle([0.0, 0.0], 0.45)]
    tracking = costs.make_tracking_cost(costs.WaypointSchedule([[1.0, -1.0]]), obstacles)
    snapshot = tracking.at_sample(0, 0.0, np.array([0.0, -1.2]))
    box = controller.ConstraintSet.box([-2, -2], [2, 2])

    # steady state of the warm start lies inside the obstacle
    with pytest.raises(costs.BarrierDomainError):
        oracle.solve_oracle(lti, snapshot, np.zeros(2), 0.0, np.zeros(2), box)

    solution = oracle.solve_oracle(lti, snapshot, np.zeros(2), 0.0, np.zeros(2), box, fallback=np.array([0.0, -1.2]))
    assert solution.residual <= 1e-9
    assert np.all(snapshot.workspace.margins(solution.x_star) > 0)
    # the barrier pushes the optimum off the checkpoint, away from the obstacle
    assert solution.u_star[0] == pytest.approx(1.0, abs=1e-6)
    assert solution.u_star[1] < -1.0
