import numpy as np
import pytest

from tiltmpc import so3
from tiltmpc.allocation import Allocation
from tiltmpc.controllers import (
    ActuatorMpc,
    ControllerConfig,
    WrenchMpc,
    pose_residual,
    post_mpc_correct,
)
from tiltmpc.dynamics import InertialParams, RigidState, gravity_compensation_wrench

PARAMS = InertialParams()
ALLOC = Allocation()


def hover_refs(n_nodes, pos=(0.0, 0.0, 0.0)):
    row = np.concatenate([np.asarray(pos, float), np.zeros(3), so3.IDENTITY_QUAT, np.zeros(3)])
    return np.tile(row, (n_nodes, 1))


class TestPoseResidual:
    def test_zero_at_reference(self):
        rigid = RigidState.hover((0.2, -0.1, 1.0)).as_vector()
        ref = np.concatenate([[0.2, -0.1, 1.0], np.zeros(3), so3.IDENTITY_QUAT, np.zeros(3)])
        np.testing.assert_allclose(pose_residual(rigid, ref), np.zeros(12), atol=1e-12)

    def test_pure_position_offset(self):
        rigid = RigidState.hover((1.0, 0.0, 0.0)).as_vector()
        ref = np.concatenate([np.zeros(3), np.zeros(3), so3.IDENTITY_QUAT, np.zeros(3)])
        res = pose_residual(rigid, ref)
        np.testing.assert_allclose(res, np.concatenate([[1.0, 0, 0], np.zeros(9)]), atol=1e-12)

    def test_rotating_reference_aligned_frames(self):
        q = so3.quat_from_euler(0.1, -0.2, 0.3)
        omega = np.array([0.2, -0.1, 0.4])
        omega_ref = np.array([0.0, 0.0, 1.0])
        rigid = np.concatenate([np.zeros(3), q, np.zeros(3), omega])
        ref = np.concatenate([np.zeros(3), np.zeros(3), q, omega_ref])
        res = pose_residual(rigid, ref)
        np.testing.assert_allclose(res[9:12], omega - omega_ref, atol=1e-12)


class TestHoverReference:
    def test_identity_attitude(self):
        ampc = ActuatorMpc(ControllerConfig(kind="ampc", horizon=10), PARAMS, ALLOC)
        alpha, thrust = ampc.hover_reference(so3.IDENTITY_QUAT)
        np.testing.assert_allclose(alpha, np.zeros(6), atol=1e-12)
        np.testing.assert_allclose(thrust, np.full(12, PARAMS.mass * 9.81 / 12.0), atol=1e-10)

    def test_pitched_attitude_round_trips(self):
        ampc = ActuatorMpc(ControllerConfig(kind="ampc", horizon=10), PARAMS, ALLOC)
        q = so3.quat_from_euler(0.0, np.deg2rad(30.0), 0.0)
        alpha, thrust = ampc.hover_reference(q)
        wrench = ALLOC.forward_wrench(alpha, thrust)
        np.testing.assert_allclose(wrench, gravity_compensation_wrench(q, PARAMS), atol=1e-9)

    def test_zero_gravity(self):
        params = InertialParams(gravity=np.zeros(3))
        ampc = ActuatorMpc(ControllerConfig(kind="ampc", horizon=10), params, ALLOC)
        alpha, thrust = ampc.hover_reference(so3.IDENTITY_QUAT)
        np.testing.assert_allclose(alpha, np.zeros(6))
        np.testing.assert_allclose(thrust, np.zeros(12), atol=1e-12)

    def test_unwrap_continuity(self):
        ampc = ActuatorMpc(ControllerConfig(kind="ampc", horizon=10), PARAMS, ALLOC)
        ampc._last_alpha_ref = np.full(6, 3.0)  # near the +pi branch
        alpha, _ = ampc.hover_reference(so3.quat_from_euler(0.0, 0.0, 0.0))
        assert np.all(np.abs(alpha - 3.0) <= np.pi + 1e-9)


class TestWmpcStep:
    def test_stationary_at_reference(self):
        cfg = ControllerConfig()
        wmpc = WrenchMpc(cfg, PARAMS)
        rigid = RigidState.hover().as_vector()
        wrench = gravity_compensation_wrench(so3.IDENTITY_QUAT, PARAMS)
        res = wmpc.step(rigid, wrench, hover_refs(cfg.horizon + 1), iterations=10)
        assert not res.fallback
        assert np.linalg.norm(res.rates) < 1e-6

    def test_position_offset_commands_force(self):
        cfg = ControllerConfig()
        wmpc = WrenchMpc(cfg, PARAMS)
        rigid = RigidState.hover().as_vector()
        wrench = gravity_compensation_wrench(so3.IDENTITY_QUAT, PARAMS)
        refs = hover_refs(cfg.horizon + 1, pos=(0.5, 0.0, 0.0))
        res = wmpc.step(rigid, wrench, refs, iterations=5)
        predicted = wmpc.predicted_wrenches(res.solution)
        assert predicted[1:, 0].max() > 0.1  # develops +x force
        hover = gravity_compensation_wrench(so3.IDENTITY_QUAT, PARAMS)
        assert np.all(np.abs(predicted - hover) <= cfg.force_max + 1e-6)
        assert np.all(np.abs(res.solution.inputs) <= cfg.force_rate_max + 1e-6)

    def test_in_mpc_residual_force_balance(self):
        # Constant -2 N body-z model residual: the planned steady wrench
        # settles 2 N above the nominal weight compensation.
        cfg = ControllerConfig()
        wmpc = WrenchMpc(cfg, PARAMS)
        rigid = RigidState.hover().as_vector()
        wrench = gravity_compensation_wrench(so3.IDENTITY_QUAT, PARAMS)
        residual = np.array([0.0, 0.0, -2.0, 0.0, 0.0, 0.0])
        res = wmpc.step(rigid, wrench, hover_refs(cfg.horizon + 1), residual=residual, mode="in_mpc", iterations=20)
        tail_wrench = wmpc.predicted_wrenches(res.solution)[-1]
        assert tail_wrench[2] == pytest.approx(PARAMS.mass * 9.81 + 2.0, abs=0.3)

    def test_mode_none_equals_in_mpc_with_zero_residual(self):
        cfg = ControllerConfig()
        a = WrenchMpc(cfg, PARAMS)
        b = WrenchMpc(cfg, PARAMS)
        rigid = RigidState.hover((0.3, 0.1, -0.2)).as_vector()
        wrench = gravity_compensation_wrench(so3.IDENTITY_QUAT, PARAMS)
        refs = hover_refs(cfg.horizon + 1)
        ra = a.step(rigid, wrench, refs, mode="none")
        rb = b.step(rigid, wrench, refs, residual=np.zeros(6), mode="in_mpc")
        assert np.array_equal(ra.rates, rb.rates)
        assert np.array_equal(ra.solution.states, rb.solution.states)

    def test_jacobians_match_central_differences(self):
        cfg = ControllerConfig(horizon=3)
        wmpc = WrenchMpc(cfg, PARAMS)
        rng = np.random.default_rng(5)
        states = np.stack(
            [
                np.concatenate([rng.normal(size=6) * 5, rng.normal(size=3), so3.quat_normalize(rng.normal(size=4)), rng.normal(size=6) * 0.4])
                for _ in range(4)
            ]
        )
        inputs = rng.normal(size=(3, 6)) * 10
        a_mats, b_mats, _ = wmpc.solver._jacobians(states, inputs)
        g = wmpc.solver.problem.dynamics_fn
        eps = 1e-5
        for k in range(3):
            for j in range(19):
                dx = np.zeros(19)
                dx[j] = eps
                col = (g(states[k] + dx, inputs[k]) - g(states[k] - dx, inputs[k])) / (2 * eps)
                np.testing.assert_allclose(a_mats[k][:, j], col, rtol=2e-5, atol=2e-5)


class TestAugmentedDynamics:
    def test_matches_rigid_step_under_held_wrench(self):
        # zero wrench rate: the rigid sub-state advances exactly like the
        # plain rigid-body integrator under the held wrench
        cfg = ControllerConfig()
        wmpc = WrenchMpc(cfg, PARAMS)
        rng = np.random.default_rng(3)
        rigid = np.concatenate([rng.normal(size=3), so3.quat_normalize(rng.normal(size=4)), 0.3 * rng.normal(size=6)])
        wrench = rng.normal(size=6) * 5 + np.array([0, 0, 40.0, 0, 0, 0])
        x_aug = np.concatenate([wrench, rigid])
        nxt = wmpc.solver.problem.dynamics_fn(x_aug, np.zeros(6))
        from tiltmpc.dynamics import rk4_step

        np.testing.assert_allclose(nxt[6:], rk4_step(rigid, wrench, np.zeros(6), PARAMS, cfg.dt), atol=1e-12)
        np.testing.assert_allclose(nxt[0:6], wrench, atol=1e-15)

    def test_wrench_substate_integrates_rate(self):
        cfg = ControllerConfig()
        wmpc = WrenchMpc(cfg, PARAMS)
        rigid = RigidState.hover().as_vector()
        wrench = gravity_compensation_wrench(so3.IDENTITY_QUAT, PARAMS)
        rate = np.array([2.0, -1.0, 0.5, 0.1, -0.2, 0.05])
        nxt = wmpc.solver.problem.dynamics_fn(np.concatenate([wrench, rigid]), rate)
        np.testing.assert_allclose(nxt[0:6], wrench + rate * cfg.dt, atol=1e-12)


class TestFallback:
    def test_wmpc_holds_wrench_on_solver_failure(self, caplog):
        from tiltmpc.errors import QpMaxIterations

        cfg = ControllerConfig()
        wmpc = WrenchMpc(cfg, PARAMS)

        def boom(*args, **kwargs):
            raise QpMaxIterations("forced failure")

        wmpc.solver.solve = boom
        res = wmpc.step(RigidState.hover().as_vector(), gravity_compensation_wrench(so3.IDENTITY_QUAT, PARAMS), hover_refs(cfg.horizon + 1))
        assert res.fallback
        np.testing.assert_array_equal(res.rates, np.zeros(6))
        assert any("holding current wrench" in r.message for r in caplog.records)

    def test_ampc_zero_rates_on_solver_failure(self):
        from tiltmpc.errors import QpInfeasible

        cfg = ControllerConfig(kind="ampc", horizon=10)
        ampc = ActuatorMpc(cfg, PARAMS, ALLOC)

        def boom(*args, **kwargs):
            raise QpInfeasible("forced failure")

        ampc.solver.solve = boom
        alpha, thrust = ALLOC.hover_command(so3.IDENTITY_QUAT, PARAMS)
        refs = ampc.build_refs(hover_refs(cfg.horizon + 1), alpha, thrust)
        res = ampc.step(RigidState.hover().as_vector(), alpha, thrust, refs)
        assert res.fallback
        np.testing.assert_array_equal(res.rates, np.zeros(18))


class TestPostMpcCorrect:
    def test_zero_residual_identity(self):
        cfg = ControllerConfig()
        hover = gravity_compensation_wrench(so3.IDENTITY_QUAT, PARAMS)
        w = hover + np.array([1.0, 2, 3, 0.1, 0.2, 0.3])
        out, clamped = post_mpc_correct(w, np.zeros(6), cfg, hover)
        np.testing.assert_array_equal(out, w)
        assert not clamped

    def test_clamping_at_bound(self):
        cfg = ControllerConfig()
        hover = gravity_compensation_wrench(so3.IDENTITY_QUAT, PARAMS)
        w = hover + np.array([18.5, 0, 0, 0, 0, 0.0])
        out, clamped = post_mpc_correct(w, np.array([-1.0, 0, 0, 0, 0, 0]), cfg, hover)
        assert out[0] == pytest.approx(hover[0] + cfg.force_max - cfg.wrench_box_margin)
        assert clamped


class TestAmpcStep:
    def test_stationary_at_reference(self):
        cfg = ControllerConfig(kind="ampc", horizon=10)
        ampc = ActuatorMpc(cfg, PARAMS, ALLOC)
        rigid = RigidState.hover().as_vector()
        alpha, thrust = ampc.hover_reference(so3.IDENTITY_QUAT)
        refs = ampc.build_refs(hover_refs(cfg.horizon + 1), alpha, thrust)
        res = ampc.step(rigid, alpha, thrust, refs, iterations=10)
        assert not res.fallback
        assert np.linalg.norm(res.rates) < 1e-6

    def test_residual_structure_matches_wmpc(self):
        cfg = ControllerConfig(kind="ampc", horizon=10)
        ampc = ActuatorMpc(cfg, PARAMS, ALLOC)
        rng = np.random.default_rng(7)
        rigid = np.concatenate([rng.normal(size=3), so3.quat_normalize(rng.normal(size=4)), rng.normal(size=6) * 0.3])
        alpha = rng.normal(size=6) * 0.2
        thrust = rng.uniform(1, 5, size=12)
        ref_row = np.concatenate([rng.normal(size=3), rng.normal(size=3) * 0.2, so3.quat_normalize(rng.normal(size=4)), rng.normal(size=3) * 0.1])
        full_ref = np.concatenate([ref_row, alpha + 0.1, thrust - 0.2])
        x = np.concatenate([alpha, thrust, rigid])
        res = ampc.solver.problem.residual_fn(x, full_ref)
        np.testing.assert_allclose(res[0:12], pose_residual(rigid, ref_row), atol=1e-14)
        np.testing.assert_allclose(res[12:18], np.full(6, -0.1), atol=1e-12)
        np.testing.assert_allclose(res[18:30], np.full(12, 0.2), atol=1e-12)

    def test_rate_and_thrust_bounds_respected(self):
        cfg = ControllerConfig(kind="ampc", horizon=10)
        ampc = ActuatorMpc(cfg, PARAMS, ALLOC)
        rigid = RigidState.hover().as_vector()
        alpha, thrust = ampc.hover_reference(so3.IDENTITY_QUAT)
        refs = ampc.build_refs(hover_refs(cfg.horizon + 1, pos=(1.0, 0.0, 0.0)), alpha, thrust)
        res = ampc.step(rigid, alpha, thrust, refs, iterations=3)
        sol = res.solution
        assert np.all(np.abs(sol.inputs[:, 0:6]) <= cfg.tilt_rate_max + 1e-6)
        assert np.all(np.abs(sol.inputs[:, 6:18]) <= cfg.thrust_rate_max + 1e-6)
        assert np.all(sol.states[:, 6:18] >= cfg.thrust_min - 1e-6)
        assert np.all(sol.states[:, 6:18] <= cfg.thrust_max + 1e-6)

    def test_thrust_floor_complementarity(self):
        # All thrusts at the floor with a downward force request: planned
        # thrusts stay at or above the floor.
        cfg = ControllerConfig(kind="ampc", horizon=10)
        ampc = ActuatorMpc(cfg, PARAMS, ALLOC)
        rigid = RigidState.hover().as_vector()
        alpha = np.zeros(6)
        thrust = np.full(12, cfg.thrust_min)
        refs = ampc.build_refs(hover_refs(cfg.horizon + 1, pos=(0.0, 0.0, -2.0)), alpha, thrust)
        res = ampc.step(rigid, alpha, thrust, refs, iterations=3)
        assert np.all(res.solution.states[:, 6:18] >= cfg.thrust_min - 1e-6)
        at_floor = res.solution.states[0, 6:18] <= cfg.thrust_min + 1e-9
        assert np.all(res.rates[6:18][at_floor] >= -1e-9)
