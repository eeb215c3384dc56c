"""Policy inputs: goal belief, scan frames and the robot-centered pedestrian map."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .localization import BeliefSummary
from .sensors import ScanObservation
from .world import Pose2D, wrap_angle

PED_MAP_CELLS = 48
PED_MAP_EXTENT = 6.0
PED_MAP_RESOLUTION = PED_MAP_EXTENT / PED_MAP_CELLS  # 0.125 m
GOAL_POS_SCALE = 20.0
VARIANCE_CLIP = 10.0


class Variant(str, Enum):
    LNDRL = "lndrl"
    NO_VARIANCE = "no_variance"
    NO_POSE_REWARD = "no_pose_reward"
    DRL_LASER = "drl_laser"
    DRL_LASER_PED = "drl_laser_ped"

    @property
    def scan_frames(self) -> int:
        return 3 if self in (Variant.DRL_LASER, Variant.DRL_LASER_PED) else 1

    @property
    def uses_ped_map(self) -> bool:
        return self is not Variant.DRL_LASER

    @property
    def uses_variance(self) -> bool:
        return self in (Variant.LNDRL, Variant.NO_POSE_REWARD)

    @property
    def goal_dim(self) -> int:
        return 6 if self.uses_variance else 3


class InsufficientHistory(ValueError):
    pass


@dataclass(frozen=True)
class GoalBelief:
    x: float
    y: float
    alpha: float
    var_x: float = 0.0
    var_y: float = 0.0
    var_alpha: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", wrap_angle(self.alpha))
        if min(self.var_x, self.var_y, self.var_alpha) < 0:
            raise ValueError("variances must be >= 0")

    def as_tuple(self):
        return (self.x, self.y, self.alpha, self.var_x, self.var_y, self.var_alpha)


@dataclass
class ObservationBundle:
    goal: np.ndarray               # (3,) or (6,), physical units
    scan: np.ndarray               # (frames, 720) meters
    ped_map: np.ndarray | None     # (3, 48, 48)
    variant: Variant
    max_range: float = 12.0

    def encode(self) -> dict[str, np.ndarray]:
        """Network-ready arrays: scans scaled to [0, 1], goal position / 20 m, variances clipped."""
        g = np.array(self.goal, dtype=float)
        g[:2] /= GOAL_POS_SCALE
        if len(g) > 3:
            g[3:] = np.minimum(g[3:], VARIANCE_CLIP)
        out = {"goal": g, "scan": np.asarray(self.scan, float) / self.max_range}
        if self.ped_map is not None:
            out["ped"] = self.ped_map
        return out


def goal_bearing_pose(goal_xy, from_pose: Pose2D) -> Pose2D:
    """Goal as a pose whose yaw is the bearing from `from_pose` to it."""
    gx, gy = goal_xy
    return Pose2D(gx, gy, math.atan2(gy - from_pose.y, gx - from_pose.x))


def build_goal_belief(belief: BeliefSummary, goal: Pose2D) -> GoalBelief:
    m = belief.mean
    c, s = math.cos(m.yaw), math.sin(m.yaw)
    dx, dy = goal.x - m.x, goal.y - m.y
    x = c * dx + s * dy
    y = -s * dx + c * dy
    d2 = dx * dx + dy * dy
    var_x = c * c * belief.var_x + s * s * belief.var_y
    var_y = s * s * belief.var_x + c * c * belief.var_y + belief.var_yaw * d2
    return GoalBelief(x, y, goal.yaw - m.yaw, var_x, var_y, belief.var_yaw)


def build_pedestrian_map(peds, robot_gt: Pose2D) -> np.ndarray:
    """(3, 48, 48) robot-frame grid; axis 1 runs along robot x (forward), axis 2 along y (left)."""
    out = np.zeros((3, PED_MAP_CELLS, PED_MAP_CELLS))
    if not peds:
        return out
    c, s = math.cos(robot_gt.yaw), math.sin(robot_gt.yaw)
    half = PED_MAP_EXTENT / 2
    centers = -half + (np.arange(PED_MAP_CELLS) + 0.5) * PED_MAP_RESOLUTION
    for p in peds:
        dx, dy = p.position[0] - robot_gt.x, p.position[1] - robot_gt.y
        px, py = c * dx + s * dy, -s * dx + c * dy
        if abs(px) > half + p.radius or abs(py) > half + p.radius:
            continue
        vx = c * p.velocity[0] + s * p.velocity[1]
        vy = -s * p.velocity[0] + c * p.velocity[1]
        ix = np.nonzero(np.abs(centers - px) <= p.radius)[0]
        iy = np.nonzero(np.abs(centers - py) <= p.radius)[0]
        if not len(ix) or not len(iy):
            continue
        sub = (centers[ix, None] - px) ** 2 + (centers[None, iy] - py) ** 2 <= p.radius ** 2
        block = np.ix_(ix, iy)
        occ = out[0][block]
        occ[sub] = 1.0
        out[0][block] = occ
        for ch, val in ((1, vx), (2, vy)):
            cur = out[ch][block]
            cur[sub] = val
            out[ch][block] = cur
    return out


def assemble_observation(variant: Variant | str, belief: BeliefSummary, goal_xy,
                         scan_history: Sequence[ScanObservation], peds, robot_gt: Pose2D,
                         pad: bool = True) -> ObservationBundle:
    """Bundle the inputs a variant's network consumes.

    The goal is always taken relative to the estimated pose; ground truth is
    only used to read pedestrian motion from the simulator.
    """
    variant = Variant(variant)
    frames = variant.scan_frames
    hist = list(scan_history)
    if not hist:
        raise InsufficientHistory("no scan recorded yet")
    if len(hist) < frames:
        if not pad:
            raise InsufficientHistory(f"{variant.value} needs {frames} scans, have {len(hist)}")
        hist = [hist[0]] * (frames - len(hist)) + hist
    scans = np.stack([h.ranges for h in hist[-frames:]])
    gb = build_goal_belief(belief, goal_bearing_pose(goal_xy, belief.mean))
    goal = np.array(gb.as_tuple()[: variant.goal_dim])
    ped = build_pedestrian_map(peds, robot_gt) if variant.uses_ped_map else None
    return ObservationBundle(goal, scans, ped, variant, hist[-1].max_range)
