"""
Tests of quadratic costs, workspaces, the barrier cost and waypoint tracking
"""
import math

import numpy as np
import pytest

from .context import costs, SampleFlag
from .test_constants import FD_REL_TOL


def numeric_gradient(f, x, step=1e-6):
    gradient = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        gradient[i] = (f(x + e) - f(x - e)) / (2 * step)
    return gradient


def relative_error(analytic, numeric):
    return np.linalg.norm(analytic - numeric) / max(1e-12, np.linalg.norm(analytic))


@pytest.fixture
def obstacles():
    return [costs.Obstacle([0.0, 0.0], 0.45), costs.Obstacle([1.0, 1.4], 0.2)]


def test_quadratic_constants():
    cost = costs.make_quadratic_cost(np.diag([1.0, 2.0]), np.eye(2), [0.0, 0.0], [1.0, 0.0], H=np.eye(2))
    assert cost.mu == pytest.approx(2.0)
    assert cost.ell_u == pytest.approx(2.0)
    assert cost.ell_x == pytest.approx(1.0)
    assert cost.composite_lipschitz(1.0) == pytest.approx(3.0)
    # without H only Ru contributes curvature
    bare = costs.make_quadratic_cost(np.diag([1.0, 2.0]), np.eye(2), [0.0, 0.0], [1.0, 0.0])
    assert bare.mu == pytest.approx(1.0)


def test_quadratic_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    Ru = np.array([[2.0, 0.5], [0.5, 1.0]])
    Rx = np.array([[1.0, -0.2], [-0.2, 3.0]])
    x_ref = costs.circular_reference([0.5, 0.5], 0.5, 0.3)
    cost = costs.make_quadratic_cost(Ru, Rx, [0.1, -0.1], x_ref)
    for _ in range(20):
        u, x, t = rng.normal(size=2), rng.normal(size=2), rng.uniform(0, 10)
        assert relative_error(cost.grad_phi(u, t), numeric_gradient(lambda v: cost.phi(v, t), u)) <= FD_REL_TOL
        assert relative_error(cost.grad_psi(x, t), numeric_gradient(lambda v: cost.psi(v, t), x)) <= FD_REL_TOL


def test_invalid_quadratic_cost():
    with pytest.raises(costs.InvalidCost):
        costs.make_quadratic_cost(np.diag([1.0, -1.0]), np.eye(2), [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(costs.InvalidCost):
        costs.make_quadratic_cost(np.array([[1.0, 2.0], [0.0, 1.0]]), np.eye(2), [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(costs.InvalidCost):
        costs.make_quadratic_cost(np.eye(2), np.eye(3), [0.0, 0.0], [0.0, 0.0, 0.0], H=np.eye(2))


def test_circular_reference():
    reference = costs.circular_reference([1.0, 2.0, 3.0], 0.5, math.pi, phase=0.0)
    assert np.allclose(reference(0.0), [1.5, 2.0, 3.0])
    assert np.allclose(reference(0.5), [1.0, 2.5, 3.0])
    assert np.allclose(reference(1.0), [0.5, 2.0, 3.0])


def test_workspace_separates_vehicle_from_obstacles(obstacles):
    position = np.array([0.0, -1.2])
    workspace = costs.build_workspace(position, obstacles, snapshot_id=3)
    assert workspace.snapshot_id == 3
    assert np.array_equal(workspace.built_at, position)
    assert np.all(workspace.margins(position) > 0)
    for index, obstacle in enumerate(obstacles):
        # every point of the obstacle is outside its half-plane
        for angle in np.linspace(0, 2 * math.pi, 24, endpoint=False):
            point = obstacle.center + obstacle.radius * np.array([math.cos(angle), math.sin(angle)])
            assert workspace.margins(point)[index] < 0


def test_mirrored_obstacles_give_mirrored_halfplanes():
    mirrored = [costs.Obstacle([2.0, 0.0], 0.5), costs.Obstacle([-2.0, 0.0], 0.5)]
    workspace = costs.build_workspace([0.0, 0.0], mirrored)
    # midpoints at (+-0.75, 0): direction -a_i, offset -a_i' m_i
    assert np.allclose(workspace.directions, [[-2.0, 0.0], [2.0, 0.0]])
    assert np.allclose(workspace.offsets, [-1.5, -1.5])
    assert np.allclose(workspace.margins(np.zeros(2)), [1.5, 1.5])

    for b in (-0.7, 0.3, 1.1):
        workspace = costs.build_workspace([0.0, b], mirrored)
        assert np.allclose(workspace.directions[1], workspace.directions[0] * [-1.0, 1.0])
        assert workspace.offsets[0] == pytest.approx(workspace.offsets[1])
        x = np.array([0.4, b + 0.2])
        assert np.allclose(workspace.margins(x), workspace.margins(x * [-1.0, 1.0])[::-1])


def test_workspace_inside_obstacle_is_infeasible(obstacles):
    with pytest.raises(costs.InfeasibleWorkspace) as info:
        costs.build_workspace([0.1, 0.1], obstacles)
    assert info.value.obstacle_id == 0


def test_barrier_gradient_matches_finite_differences(obstacles):
    workspace = costs.build_workspace([0.0, -1.2], obstacles)
    target = np.array([0.7, -0.97])
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 20:
        x = np.array([0.0, -1.2]) + rng.uniform(-0.2, 0.2, size=2)
        if np.min(workspace.margins(x)) < 0.05:
            continue
        for k in (0, 10):
            analytic = costs.barrier_gradient(x, k, workspace, target)
            numeric = numeric_gradient(lambda v: costs.barrier_cost(v, k, workspace, target), x)
            assert relative_error(analytic, numeric) <= FD_REL_TOL
        checked += 1


def test_barrier_outside_workspace(obstacles):
    workspace = costs.build_workspace([0.0, -1.2], obstacles)
    with pytest.raises(costs.BarrierDomainError):
        costs.barrier_cost([0.0, 0.0], 0, workspace, np.zeros(2))
    with pytest.raises(costs.BarrierDomainError):
        costs.barrier_gradient([0.0, 0.0], 0, workspace, np.zeros(2))
    clamped = costs.barrier_gradient([0.0, 0.0], 0, workspace, np.zeros(2), clamp_floor=0.005)
    assert np.all(np.isfinite(clamped))


def test_barrier_decreases_in_each_margin():
    # axis aligned half-planes: moving along axis i changes margin i only
    workspace = costs.Workspace(
        directions=np.eye(2), offsets=np.zeros(2), built_at=np.ones(2), obstacle_ids=(0, 1)
    )
    target = np.array([0.3, 0.8])
    base = np.array([0.5, 0.5])
    for index in range(2):
        for k in (0, 5):
            values = []
            for step in np.linspace(0.0, 2.0, 21):
                x = base + step * np.eye(2)[index]
                quadratic = 0.5 * float(np.sum((x - target) ** 2))
                values.append(costs.barrier_cost(x, k, workspace, target) - quadratic)
            assert np.all(np.diff(values) < 0)


def test_reduced_gradients_are_strongly_monotone(obstacles):
    rng = np.random.default_rng(12)
    Ru = np.array([[2.0, 0.5], [0.5, 1.0]])
    Rx = np.array([[1.0, -0.2], [-0.2, 3.0]])
    H = np.array([[1.0, 0.3], [-0.4, 0.8]])
    quadratic = costs.make_quadratic_cost(Ru, Rx, [0.1, -0.1], [0.5, 0.2], H=H)

    def quadratic_gradient(u):
        return quadratic.grad_phi(u, 0.0) + H.T @ quadratic.grad_psi(H @ u, 0.0)

    schedule = costs.WaypointSchedule([[0.7, -0.97]])
    tracking = costs.make_tracking_cost(schedule, obstacles).at_sample(0, 0.0, np.array([0.0, -1.2]))

    def tracking_gradient(u):
        return tracking.grad_phi(u, 0.0) + tracking.grad_psi(u, 0.0)

    for spec, gradient, sample in (
        (quadratic, quadratic_gradient, lambda: rng.normal(size=2)),
        (tracking, tracking_gradient, lambda: np.array([0.0, -1.2]) + rng.uniform(-0.3, 0.3, size=2)),
    ):
        segments = 0
        while segments < 100:
            u, v = sample(), sample()
            if spec.workspace is not None and min(np.min(spec.workspace.margins(u)), np.min(spec.workspace.margins(v))) <= 0:
                continue
            d = u - v
            assert float((gradient(u) - gradient(v)) @ d) >= spec.mu * float(d @ d) * (1 - 1e-9)
            segments += 1


def test_barrier_weight_decays():
    weights = [costs.barrier_weight(k, 1.0, 0.1) for k in range(50)]
    assert weights[0] == 1.0
    assert all(b < a for a, b in zip(weights, weights[1:]))
    assert weights[10] == pytest.approx(math.exp(-1.0))


def test_tracking_captures_checkpoints_in_order(obstacles):
    schedule = costs.WaypointSchedule([[1.0, -1.0], [1.2, 0.0], [0.0, 1.2]], capture_radius=0.1)
    tracking = costs.make_tracking_cost(schedule, obstacles[:1], state_dim=3)

    first = tracking.at_sample(0, 0.0, np.array([0.0, -1.2, 0.0]))
    assert np.array_equal(first.target, [1.0, -1.0])
    assert first.flags == ()
    # near the second checkpoint before the first: no capture
    tracking.at_sample(1, 1.0, np.array([1.2, 0.05, 0.0]))
    assert tracking.captures == []

    snapshot = tracking.at_sample(2, 2.0, np.array([1.05, -1.0, 0.0]))
    assert SampleFlag.TargetCaptured in snapshot.flags
    assert np.array_equal(snapshot.target, [1.2, 0.0])
    tracking.at_sample(3, 3.0, np.array([1.2, 0.05, 0.0]))
    tracking.at_sample(4, 4.0, np.array([0.0, 1.15, 0.0]))
    assert tracking.captures == [(0, 2), (1, 3), (2, 4)]
    assert tracking.finished
    # the last checkpoint stays the target
    assert np.array_equal(tracking.at_sample(5, 5.0, np.array([0.0, 1.2, 0.0])).target, [0.0, 1.2])

    tracking.reset()
    assert tracking.captures == [] and tracking.target_index == 0


def test_tracking_snapshot_constants(obstacles):
    schedule = costs.WaypointSchedule([[1.0, -1.0]])
    tracking = costs.make_tracking_cost(schedule, obstacles, lambda0=1.0, decay=0.1, margin_floor=0.05, state_dim=3)
    snapshot = tracking.at_sample(0, 0.0, np.array([0.0, -1.2, 0.3]))
    directions = snapshot.workspace.directions
    assert snapshot.mu == 1.0
    assert snapshot.ell_u == 0.0
    assert snapshot.ell_x == pytest.approx(1.0 + np.sum(directions**2) / 0.05**2)
    gradient = snapshot.grad_psi(np.array([0.0, -1.2, 0.3]), 0.0)
    # heading receives no gradient
    assert gradient.shape == (3,) and gradient[2] == 0.0


def test_tracking_reuses_workspace_for_infeasible_estimate(obstacles):
    schedule = costs.WaypointSchedule([[1.0, -1.0]])
    tracking = costs.make_tracking_cost(schedule, obstacles)
    with pytest.raises(costs.InfeasibleWorkspace):
        tracking.at_sample(0, 0.0, np.array([0.0, 0.1]))

    tracking.reset()
    first = tracking.at_sample(0, 0.0, np.array([0.0, -1.2]))
    second = tracking.at_sample(1, 1.0, np.array([0.0, 0.1]))
    assert SampleFlag.WorkspaceReused in second.flags
    assert second.workspace is first.workspace


def test_invalid_tracking_settings():
    with pytest.raises(costs.InvalidCost):
        costs.WaypointSchedule(np.zeros((0, 2)))
    with pytest.raises(costs.InvalidCost):
        costs.WaypointSchedule([[0.0, 0.0]], capture_radius=0.0)
    with pytest.raises(costs.InvalidCost):
        costs.Obstacle([0.0, 0.0], -1.0)
    with pytest.raises(costs.InvalidCost):
        costs.make_tracking_cost(costs.WaypointSchedule([[0.0, 0.0]]), [], decay=0.0)
