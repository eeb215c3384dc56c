"""Six-term navigation reward and episode outcome classification."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .localization import BeliefSummary
from .world import Pose2D, wrap_angle


class StepOutcome(str, Enum):
    RUNNING = "running"
    ARRIVED = "arrived"
    COLLIDED = "collided"
    LOST = "lost"
    TIMEOUT = "timeout"

    @property
    def terminal(self) -> bool:
        return self is not StepOutcome.RUNNING


@dataclass(frozen=True)
class RewardParams:
    k_a: float = 200.0
    k_p: float = 400.0
    r_arr: float = 500.0
    r_col: float = -800.0
    r_lost: float = -500.0
    r_step: float = -6.0
    eps_a: float = 0.5
    eps_l: float = 2.0
    eps_yaw: float = 0.25 * math.pi
    yaw_weight: float = 1.0          # meters per radian in the pose-error norm
    sigma_mode: str = "variance"     # "variance" or "std" for the approach denominator
    use_pose_reward: bool = True
    use_lost_reward: bool = True
    max_episode_len: int = 400

    def __post_init__(self):
        if min(self.eps_a, self.eps_l, self.eps_yaw) <= 0:
            raise ValueError("eps_a, eps_l, eps_yaw must be > 0")
        if self.r_arr <= 0:
            raise ValueError("r_arr must be > 0")
        if max(self.r_col, self.r_lost, self.r_step) >= 0:
            raise ValueError("r_col, r_lost, r_step must be < 0")
        if self.sigma_mode not in ("variance", "std"):
            raise ValueError("sigma_mode must be 'variance' or 'std'")


@dataclass(frozen=True)
class RewardBreakdown:
    app: float
    pose: float
    arr: float
    col: float
    lost: float
    step: float
    arrived: bool = False
    collided: bool = False
    is_lost: bool = False
    terminal: StepOutcome = StepOutcome.RUNNING

    @property
    def total(self) -> float:
        return self.app + self.pose + self.arr + self.col + self.lost + self.step

    def as_dict(self) -> dict:
        return {"r_app": self.app, "r_pose": self.pose, "r_arr": self.arr, "r_col": self.col,
                "r_lost": self.lost, "r_step": self.step, "r_total": self.total}


def pose_error(est: Pose2D, gt: Pose2D, yaw_weight: float = 1.0) -> float:
    dyaw = wrap_angle(est.yaw - gt.yaw)
    return math.sqrt((est.x - gt.x) ** 2 + (est.y - gt.y) ** 2 + (yaw_weight * dyaw) ** 2)


def is_lost(est: Pose2D, gt: Pose2D, params: RewardParams) -> bool:
    return (est.distance_to(gt) > params.eps_l
            or abs(wrap_angle(est.yaw - gt.yaw)) > params.eps_yaw)


def classify_outcome(breakdown: RewardBreakdown, step_index: int, max_len: int) -> StepOutcome:
    if breakdown.collided:
        return StepOutcome.COLLIDED
    if breakdown.is_lost:
        return StepOutcome.LOST
    if breakdown.arrived:
        return StepOutcome.ARRIVED
    if step_index >= max_len:
        return StepOutcome.TIMEOUT
    return StepOutcome.RUNNING


def compute_reward(prev_gt: Pose2D, cur_gt: Pose2D, prev_est: Pose2D, cur_est: Pose2D,
                   goal: Pose2D, belief: BeliefSummary, collided: bool, step_index: int,
                   params: RewardParams = RewardParams(), arrived: bool | None = None) -> RewardBreakdown:
    """Reward for the transition prev -> cur.

    `step_index` counts actions taken including this one. `arrived` overrides the
    arrival test (estimate within eps_a of the goal) when given.
    """
    sig = (belief.var_x, belief.var_y, belief.var_yaw)
    if params.sigma_mode == "std":
        sig = tuple(math.sqrt(v) for v in sig)
    progress = prev_gt.distance_to(goal) - cur_gt.distance_to(goal)
    app = params.k_a * progress / (1.0 + sum(sig))

    pose = 0.0
    if params.use_pose_reward:
        pose = params.k_p * (pose_error(prev_est, prev_gt, params.yaw_weight)
                             - pose_error(cur_est, cur_gt, params.yaw_weight))

    if arrived is None:
        arrived = cur_est.distance_to(goal) < params.eps_a
    lost = is_lost(cur_est, cur_gt, params)
    b = RewardBreakdown(
        app=app,
        pose=pose,
        arr=params.r_arr if arrived else 0.0,
        col=params.r_col if collided else 0.0,
        lost=params.r_lost if (lost and params.use_lost_reward) else 0.0,
        step=params.r_step,
        arrived=arrived,
        collided=collided,
        is_lost=lost,
    )
    outcome = classify_outcome(b, step_index, params.max_episode_len)
    return RewardBreakdown(**{**b.__dict__, "terminal": outcome})
