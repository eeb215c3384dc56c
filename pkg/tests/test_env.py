import numpy as np
import pytest

from locnav.env import EnvParams, NavEnv
from locnav.observation import Variant
from locnav.reward import StepOutcome
from locnav.world import Pose2D


def test_reset_is_seeded(room):
    a, b = NavEnv(room), NavEnv(room)
    oa, ob = a.reset(seed=5), b.reset(seed=5)
    assert np.array_equal(oa.scan, ob.scan) and np.array_equal(oa.goal, ob.goal)
    for k in range(5):
        ra = a.step(k + 7)
        rb = b.step(k + 7)
        assert ra[1] == rb[1] and ra[3].gt == rb[3].gt
    c = NavEnv(room)
    assert not np.array_equal(c.reset(seed=6).scan, oa.scan)


def test_params_validation():
    with pytest.raises(ValueError):
        EnvParams(arrival_from="oracle")
    with pytest.raises(ValueError):
        EnvParams(baseline_goal_from="x")
    with pytest.raises(ValueError):
        EnvParams(dt=0)


def test_step_after_done_raises(room):
    env = NavEnv(room)
    env.reset(seed=0)
    env.inject_pose_error(3.0, 0.0)
    _, _, done, info = env.step(0)
    assert done
    with pytest.raises(RuntimeError):
        env.step(0)


def test_lost_injection(room):
    env = NavEnv(room)
    env.reset(seed=1)
    env.inject_pose_error(2.5, 0.0)
    _, total, done, info = env.step(0)
    assert done and info.outcome is StepOutcome.LOST
    assert info.reward.lost == -500.0


def test_spawn_at_goal_arrives_in_one_step(room):
    for arrival in ("estimate", "ground_truth"):
        env = NavEnv(room, params=EnvParams(arrival_from=arrival))
        env.reset(seed=2, start=Pose2D(3.0, 2.0, 0.0), goal_xy=(3.05, 2.0))
        _, _, done, info = env.step((0.0, 0.0))
        assert done and info.outcome is StepOutcome.ARRIVED
        assert info.reward.arr == 500.0


def test_variant_reward_switches(room):
    full = NavEnv(room, Variant.LNDRL).reward_params
    assert full.use_pose_reward and full.use_lost_reward
    npr = NavEnv(room, Variant.NO_POSE_REWARD).reward_params
    assert not npr.use_pose_reward and npr.use_lost_reward
    for v in (Variant.DRL_LASER, Variant.DRL_LASER_PED):
        rp = NavEnv(room, v).reward_params
        assert not rp.use_pose_reward and not rp.use_lost_reward


def test_baseline_goal_source(room):
    est = NavEnv(room, Variant.DRL_LASER)
    est.reset(seed=3)
    est.inject_pose_error(0.4, 0.0)
    gt = NavEnv(room, Variant.DRL_LASER, EnvParams(baseline_goal_from="ground_truth"))
    gt.reset(seed=3)
    gt.inject_pose_error(0.4, 0.0)
    a, b = est.observe().goal, gt.observe().goal
    assert abs(np.hypot(*a[:2]) - np.hypot(*b[:2])) > 0.01
    rel = gt.goal.relative_to(gt.gt)
    assert b[:2] == pytest.approx([rel.x, rel.y], abs=1e-9)


def test_scan_history_grows_to_three(room):
    env = NavEnv(room, Variant.DRL_LASER)
    obs = env.reset(seed=4)
    assert obs.scan.shape == (3, 720) and np.array_equal(obs.scan[0], obs.scan[2])
    for _ in range(3):
        obs, *_ = env.step(3)
    assert not np.array_equal(obs.scan[0], obs.scan[2])


def test_odometry_reports_commanded_motion(room):
    env = NavEnv(room, params=EnvParams(amcl=EnvParams().amcl))
    env.reset(seed=5, start=Pose2D(1.5, 2.0, 0.0), goal_xy=(5.0, 2.0))
    _, _, _, info = env.step((0.6, 0.0))
    # executed speed is noisy, so ground truth moved roughly, not exactly, 6 cm
    assert 0.03 < info.gt.x - 1.5 < 0.09
