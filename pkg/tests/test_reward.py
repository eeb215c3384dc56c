import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from locnav.localization import BeliefSummary
from locnav.reward import (RewardBreakdown, RewardParams, StepOutcome, classify_outcome,
                           compute_reward, is_lost, pose_error)
from locnav.world import Pose2D

GOAL = Pose2D(10.0, 0.0)
P = RewardParams()


def flat(v=(0.0, 0.0, 0.0)):
    return BeliefSummary(Pose2D(0, 0), *v)


def r(prev_gt, cur_gt, prev_est=None, cur_est=None, v=(0, 0, 0), collided=False, k=1, params=P,
      arrived=None):
    prev_est = prev_est or prev_gt
    cur_est = cur_est or cur_gt
    return compute_reward(prev_gt, cur_gt, prev_est, cur_est, GOAL, flat(v), collided, k, params, arrived)


def test_params_validation():
    for bad in (dict(eps_a=0), dict(r_arr=-1), dict(r_col=1), dict(r_step=0), dict(sigma_mode="x")):
        with pytest.raises(ValueError):
            RewardParams(**bad)


def test_approach_example():
    b = r(Pose2D(0, 0), Pose2D(0.5, 0))
    assert b.app == pytest.approx(100.0, abs=1e-12)
    assert b.terminal is StepOutcome.RUNNING
    assert b.total == pytest.approx(100.0 - 6.0)


def test_approach_variance_denominator():
    b = r(Pose2D(0, 0), Pose2D(0.5, 0), v=(0.1, 0.2, 0.2))
    assert b.app == pytest.approx(100.0 / 1.5)
    std = RewardParams(sigma_mode="std")
    b = r(Pose2D(0, 0), Pose2D(0.5, 0), v=(0.04, 0.09, 0.16), params=std)
    assert b.app == pytest.approx(100.0 / 1.9)


def test_lost_example():
    gt = Pose2D(3, 0)
    b = r(gt, gt, prev_est=Pose2D(3, 1.9), cur_est=Pose2D(3, 2.1))
    assert b.lost == -500.0 and b.terminal is StepOutcome.LOST
    assert b.pose == pytest.approx(400 * (1.9 - 2.1))


def test_yaw_lost():
    gt = Pose2D(3, 0, 0.0)
    assert not is_lost(Pose2D(3, 0, 0.25 * math.pi - 1e-6), gt, P)
    assert is_lost(Pose2D(3, 0, 0.25 * math.pi + 1e-6), gt, P)


def test_arrival_uses_estimate():
    b = r(Pose2D(9, 0), Pose2D(9.7, 0), cur_est=Pose2D(9.7, 0.0))
    assert b.arr == 500.0 and b.terminal is StepOutcome.ARRIVED
    # estimate within eps_a while ground truth is not
    b = r(Pose2D(8, 0), Pose2D(8.4, 0), cur_est=Pose2D(9.6, 0))
    assert b.arrived and b.terminal is StepOutcome.ARRIVED
    b = r(Pose2D(8, 0), Pose2D(9.7, 0), arrived=False)
    assert not b.arrived and b.arr == 0.0


def test_precedence():
    both = r(Pose2D(9, 0), Pose2D(9.7, 0), collided=True)
    assert both.terminal is StepOutcome.COLLIDED and both.col == -800 and both.arr == 500
    lost_and_arrived = r(Pose2D(9, 2.2), Pose2D(9.7, 2.2), cur_est=Pose2D(9.7, 0.0))
    assert lost_and_arrived.terminal is StepOutcome.LOST
    timeout = r(Pose2D(0, 0), Pose2D(0.1, 0), k=400)
    assert timeout.terminal is StepOutcome.TIMEOUT
    assert r(Pose2D(0, 0), Pose2D(0.1, 0), k=399).terminal is StepOutcome.RUNNING


def test_classify_outcome_direct():
    base = RewardBreakdown(0, 0, 0, 0, 0, -6)
    assert classify_outcome(base, 3, 400) is StepOutcome.RUNNING
    assert classify_outcome(base, 400, 400) is StepOutcome.TIMEOUT
    assert not StepOutcome.RUNNING.terminal and StepOutcome.LOST.terminal


def test_ablation_switches():
    gt = Pose2D(3, 0)
    off = RewardParams(use_pose_reward=False, use_lost_reward=False)
    b = r(gt, gt, prev_est=Pose2D(3, 1.9), cur_est=Pose2D(3, 2.1), params=off)
    assert b.pose == 0.0 and b.lost == 0.0
    assert b.terminal is StepOutcome.LOST  # the episode still ends


pos = st.floats(-20, 20, allow_nan=False)
var = st.floats(0, 5)


@given(pos, pos, pos, pos, var, var, var)
def test_approach_antisymmetric(x0, y0, x1, y1, vx, vy, va):
    a = r(Pose2D(x0, y0), Pose2D(x1, y1), v=(vx, vy, va))
    b = r(Pose2D(x1, y1), Pose2D(x0, y0), v=(vx, vy, va))
    assert a.app == pytest.approx(-b.app, abs=1e-9)


@given(st.lists(st.tuples(pos, pos), min_size=2, max_size=10))
def test_approach_telescopes(path):
    poses = [Pose2D(x, y) for x, y in path]
    total = sum(r(a, b).app for a, b in zip(poses, poses[1:]))
    want = 200 * (poses[0].distance_to(GOAL) - poses[-1].distance_to(GOAL))
    assert total == pytest.approx(want, abs=1e-6)


@given(pos, pos, st.floats(-4, 4), pos, pos, st.floats(-4, 4), st.booleans())
def test_total_is_sum(x0, y0, a0, x1, y1, a1, col):
    b = r(Pose2D(0, 0), Pose2D(x0, y0, a0), cur_est=Pose2D(x1, y1, a1), collided=col)
    assert b.total == pytest.approx(b.app + b.pose + b.arr + b.col + b.lost + b.step, abs=1e-12)
    assert sum(b.as_dict()[k] for k in ("r_app", "r_pose", "r_arr", "r_col", "r_lost", "r_step")) \
        == pytest.approx(b.as_dict()["r_total"], abs=1e-9)


def test_pose_error_wraps_yaw():
    assert pose_error(Pose2D(0, 0, 3.1), Pose2D(0, 0, -3.1)) == pytest.approx(2 * math.pi - 6.2)
