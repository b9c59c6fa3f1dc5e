"""Inverse kinematics solvers against analytic and behavioral oracles."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from cfik.chain import forward_kinematics
from cfik.geometry import Pose, quat_from_matrix
from cfik.ik import (
    ORI_FREE,
    IkError,
    IkParams,
    IkRequest,
    Infeasible,
    NoConvergence,
    RacingFailure,
    UnreachableTarget,
    pose_error,
    solve_jacobian_ik,
    solve_racing_ik,
    solve_sqp_ik,
)
from conftest import random_chain


def two_link_branches(x, y):
    """Closed-form elbow-up and elbow-down solutions for two unit links."""
    d2 = x * x + y * y
    c2 = (d2 - 2.0) / 2.0
    assert abs(c2) <= 1.0, "target outside annulus"
    out = []
    for sign in (1.0, -1.0):
        q2 = sign * np.arccos(np.clip(c2, -1.0, 1.0))
        q1 = np.arctan2(y, x) - np.arctan2(np.sin(q2), 1.0 + np.cos(q2))
        out.append(np.array([q1, q2]))
    return out


def position_request(chain, pos, seed, **kw):
    return IkRequest(
        target=Pose(np.asarray(pos, float)),
        seed=np.asarray(seed, float),
        ori_tol=ORI_FREE,
        **kw,
    )


def wrap(q):
    return np.arctan2(np.sin(q), np.cos(q))


class TestPoseError:
    def test_position_part_is_plain_difference(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            t = Pose(rng.normal(size=3))
            c = Pose(rng.normal(size=3))
            assert np.allclose(pose_error(t, c)[:3], t.position - c.position)

    def test_orientation_part_matches_relative_rotvec(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            Rt = Rotation.random(random_state=np.random.RandomState(rng.integers(2**31)))
            Rc = Rotation.random(random_state=np.random.RandomState(rng.integers(2**31)))
            t = Pose(np.zeros(3), quat_from_matrix(Rt.as_matrix()))
            c = Pose(np.zeros(3), quat_from_matrix(Rc.as_matrix()))
            w_ref = (Rt * Rc.inv()).as_rotvec()
            assert np.allclose(pose_error(t, c)[3:], w_ref, atol=1e-9)

    def test_zero_at_coincident_poses(self):
        p = Pose([1.0, 2.0, 3.0], quat_from_matrix(Rotation.from_euler("xyz", [0.3, -0.2, 0.9]).as_matrix()))
        assert np.allclose(pose_error(p, p), 0.0, atol=1e-12)


class TestJacobianSolver:
    def test_two_link_matches_an_analytic_branch(self, planar2):
        # every converged answer must be one of the two closed-form elbow
        # branches; convergence itself is not global (targets across the
        # joint-limit wrap from the seed can stall), so only a floor is
        # asserted on the success rate
        rng = np.random.default_rng(22)
        solved = 0
        for _ in range(50):
            r = rng.uniform(0.3, 1.9)
            ang = rng.uniform(-np.pi, np.pi)
            x, y = r * np.cos(ang), r * np.sin(ang)
            seed = rng.uniform(-np.pi, np.pi, size=2)
            try:
                sol = solve_jacobian_ik(
                    planar2, position_request(planar2, [x, y, 0.0], seed, max_iterations=300)
                )
            except IkError:
                continue
            solved += 1
            branches = two_link_branches(x, y)
            best = min(np.abs(wrap(sol.config - b)).max() for b in branches)
            assert best < 1e-3
            p = forward_kinematics(planar2, sol.config).position
            assert np.linalg.norm(p - [x, y, 0.0]) <= 1e-4
        assert solved >= 30

    def test_converged_seed_returns_immediately(self, arm7):
        q = arm7.mid_config()
        target = forward_kinematics(arm7, q)
        sol = solve_jacobian_ik(arm7, IkRequest(target=target, seed=q))
        assert sol.iterations == 0
        assert np.allclose(sol.config, q)
        assert sol.solver_tag == "jacobian"

    def test_unreachable_target_raises(self, planar2):
        # symmetric stretch stalls cleanly and trips the stagnation rule
        req = position_request(planar2, [5.0, 0.0, 0.0], [0.0, 0.0], max_iterations=300)
        with pytest.raises(UnreachableTarget):
            solve_jacobian_ik(planar2, req)
        # off-axis seeds creep asymptotically toward full stretch instead;
        # either failure mode is acceptable but success is not
        for seed in ([0.3, 0.2], [0.5, -0.5]):
            req = position_request(planar2, [5.0, 0.0, 0.0], seed, max_iterations=300)
            with pytest.raises((UnreachableTarget, NoConvergence)):
                solve_jacobian_ik(planar2, req)

    def test_budget_exhaustion_raises_no_convergence(self, arm7):
        rng = np.random.default_rng(23)
        target = forward_kinematics(arm7, arm7.random_config(rng))
        req = IkRequest(target=target, seed=arm7.mid_config(), max_iterations=1)
        with pytest.raises((NoConvergence, UnreachableTarget)):
            solve_jacobian_ik(arm7, req)

    def test_solution_respects_joint_limits(self, arm7):
        rng = np.random.default_rng(24)
        for _ in range(30):
            target = forward_kinematics(arm7, arm7.random_config(rng))
            try:
                sol = solve_jacobian_ik(
                    arm7, IkRequest(target=target, seed=arm7.mid_config(), max_iterations=300)
                )
            except IkError:
                continue
            assert arm7.within_limits(sol.config)

    def test_residual_reported_matches_fk(self, arm7):
        rng = np.random.default_rng(25)
        target = forward_kinematics(arm7, arm7.random_config(rng))
        sol = solve_jacobian_ik(arm7, IkRequest(target=target, seed=arm7.mid_config(), max_iterations=300))
        pe = np.linalg.norm(target.position - forward_kinematics(arm7, sol.config).position)
        assert abs(pe - sol.residual[0]) < 1e-12
        assert sol.residual[0] <= 1e-4
        assert sol.residual[1] <= 1e-3

    def test_orientation_free_mode_ignores_orientation(self, planar2):
        # target orientation deliberately inconsistent with a planar arm
        target = Pose([1.2, 0.4, 0.0], quat_from_matrix(Rotation.from_euler("x", 2.0).as_matrix()))
        req = IkRequest(target=target, seed=np.array([0.1, 0.1]), ori_tol=ORI_FREE, max_iterations=300)
        sol = solve_jacobian_ik(planar2, req)
        assert sol.residual[0] <= 1e-4


class TestSqpSolver:
    def test_two_link_matches_an_analytic_branch(self, planar2):
        rng = np.random.default_rng(26)
        solved = 0
        for _ in range(30):
            r = rng.uniform(0.3, 1.9)
            ang = rng.uniform(-np.pi, np.pi)
            x, y = r * np.cos(ang), r * np.sin(ang)
            seed = rng.uniform(-np.pi, np.pi, size=2)
            try:
                sol = solve_sqp_ik(
                    planar2, position_request(planar2, [x, y, 0.0], seed, max_iterations=300)
                )
            except IkError:
                continue
            solved += 1
            branches = two_link_branches(x, y)
            assert min(np.abs(wrap(sol.config - b)).max() for b in branches) < 1e-3
        assert solved >= 18

    def test_infeasible_when_limits_exclude_target(self, planar2):
        import dataclasses

        from cfik.chain import Joint, KinematicChain

        tight = KinematicChain(
            name="tight",
            joints=[
                dataclasses.replace(planar2.joints[0], lower=-0.1, upper=0.1),
                dataclasses.replace(planar2.joints[1], lower=-0.1, upper=0.1),
            ],
            link_radii=planar2.link_radii,
            tip_offset=planar2.tip_offset,
        )
        req = position_request(tight, [-2.0, 0.0, 0.0], [0.0, 0.0], max_iterations=300)
        with pytest.raises((Infeasible, UnreachableTarget, NoConvergence)):
            solve_sqp_ik(tight, req)

    def test_idempotent_at_own_solution(self):
        # re-solving from a returned solution must not move it
        rng = np.random.default_rng(27)
        done = 0
        for s in range(200):
            if done >= 20:
                break
            case = np.random.default_rng(30000 + s)
            chain = random_chain(case)
            target = forward_kinematics(chain, chain.random_config(case))
            seed = chain.random_config(case)
            try:
                first = solve_sqp_ik(chain, IkRequest(target=target, seed=seed, max_iterations=200))
            except IkError:
                continue
            again = solve_sqp_ik(chain, IkRequest(target=target, seed=first.config, max_iterations=50))
            assert np.linalg.norm(again.config - first.config) < 1e-12
            assert again.iterations <= 1
            done += 1
        assert done >= 20

    def test_stays_near_seed_more_often_than_newton(self):
        # seed proximality: the solver explicitly minimizes distance to the
        # seed, so across paired successes it should win the majority and
        # never lose badly
        d_jac, d_sqp = [], []
        for s in range(1000):
            if len(d_jac) >= 60:
                break
            case = np.random.default_rng(10000 + s)
            chain = random_chain(case)
            target = forward_kinematics(chain, chain.random_config(case))
            seed = chain.random_config(case)
            req = IkRequest(target=target, seed=seed, max_iterations=200)
            try:
                qj = solve_jacobian_ik(chain, req).config
                qs = solve_sqp_ik(chain, req).config
            except IkError:
                continue
            d_jac.append(np.linalg.norm(qj - seed))
            d_sqp.append(np.linalg.norm(qs - seed))
        d_jac, d_sqp = np.array(d_jac), np.array(d_sqp)
        assert len(d_jac) >= 60
        assert np.mean(d_sqp <= d_jac + 1e-9) >= 0.8
        assert np.max(d_sqp - d_jac) < 1e-2
        assert np.median(d_sqp - d_jac) <= 1e-12

    def test_solution_respects_joint_limits(self, arm7):
        rng = np.random.default_rng(28)
        for _ in range(20):
            target = forward_kinematics(arm7, arm7.random_config(rng))
            try:
                sol = solve_sqp_ik(arm7, IkRequest(target=target, seed=arm7.mid_config(), max_iterations=300))
            except IkError:
                continue
            assert arm7.within_limits(sol.config)


class TestRacingSolver:
    def test_newton_stall_is_rescued_by_sqp(self):
        # frozen case: the Newton iteration stalls on a residual fold while
        # the seed-proximal solver converges, so the race returns its answer
        case = np.random.default_rng(44)
        chain = random_chain(case)
        target = forward_kinematics(chain, chain.random_config(case))
        seed = chain.random_config(case)
        req = IkRequest(target=target, seed=seed, max_iterations=200)
        with pytest.raises(IkError):
            solve_jacobian_ik(chain, req)
        sol = solve_racing_ik(chain, req, deterministic=True)
        assert sol.solver_tag == "sqp"
        pe = np.linalg.norm(target.position - forward_kinematics(chain, sol.config).position)
        assert pe <= req.pos_tol

    def test_deterministic_runs_are_bit_identical(self, arm7):
        rng = np.random.default_rng(29)
        target = forward_kinematics(arm7, arm7.random_config(rng))
        req = IkRequest(target=target, seed=arm7.mid_config(), max_iterations=400, rng_seed=5)
        a = solve_racing_ik(arm7, req, deterministic=True, restarts=3)
        b = solve_racing_ik(arm7, req, deterministic=True, restarts=3)
        assert a.solver_tag == b.solver_tag
        assert a.iterations == b.iterations
        assert (a.config == b.config).all()

    def test_zero_time_budget_is_ignored_when_deterministic(self, arm7):
        rng = np.random.default_rng(30)
        target = forward_kinematics(arm7, arm7.random_config(rng))
        req = IkRequest(
            target=target, seed=arm7.mid_config(), max_iterations=400, time_budget=0.0
        )
        sol = solve_racing_ik(arm7, req, deterministic=True, restarts=2)
        assert sol.residual[0] <= req.pos_tol

    def test_parallel_mode_solves(self, arm7):
        rng = np.random.default_rng(31)
        target = forward_kinematics(arm7, arm7.random_config(rng))
        req = IkRequest(target=target, seed=arm7.mid_config(), max_iterations=400)
        sol = solve_racing_ik(arm7, req, deterministic=False, restarts=2)
        assert sol.residual[0] <= req.pos_tol
        assert sol.solver_tag in ("jacobian", "sqp")

    def test_failure_carries_named_causes(self, planar2):
        req = position_request(planar2, [5.0, 0.0, 0.0], [0.0, 0.0], max_iterations=100)
        with pytest.raises(RacingFailure) as exc:
            solve_racing_ik(planar2, req, deterministic=True, restarts=1)
        causes = exc.value.causes
        assert causes
        assert all(k.startswith(("jacobian[", "sqp[")) for k in causes)
        assert any(isinstance(v, UnreachableTarget) for v in causes.values())
        assert "UnreachableTarget" in str(exc.value)

    def test_restart_budget_is_shared_not_multiplied(self, planar2):
        # the attempt budgets must sum to at most max_iterations
        req = position_request(planar2, [5.0, 0.0, 0.0], [0.0, 0.0], max_iterations=40)
        with pytest.raises(RacingFailure) as exc:
            solve_racing_ik(planar2, req, deterministic=True, restarts=3)
        # 4 attempts, 2 solvers each, at most
        assert len(exc.value.causes) <= 8

    def test_negative_restarts_rejected(self, planar2):
        req = position_request(planar2, [1.0, 0.5, 0.0], [0.0, 0.0])
        with pytest.raises(ValueError):
            solve_racing_ik(planar2, req, restarts=-1)

    def test_restarts_recover_hard_targets(self, arm7):
        # a seed chosen to stall must still be solvable through re-seeding
        rng = np.random.default_rng(32)
        solved = 0
        for _ in range(20):
            target = forward_kinematics(arm7, arm7.random_config(rng))
            req = IkRequest(
                target=target,
                seed=arm7.mid_config(),
                max_iterations=500,
                rng_seed=int(rng.integers(2**31)),
            )
            try:
                solve_racing_ik(arm7, req, deterministic=True, restarts=16)
                solved += 1
            except IkError:
                pass
        assert solved >= 19


class TestDefaults:
    def test_request_and_params_defaults(self):
        req = IkRequest(target=Pose(), seed=np.zeros(2))
        assert req.pos_tol == 1e-4
        assert req.ori_tol == 1e-3
        assert req.max_iterations == 200
        params = IkParams()
        assert params.restarts == 0
        assert params.deterministic is True
