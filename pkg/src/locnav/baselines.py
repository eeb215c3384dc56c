"""Dynamic Window Approach over the discrete action catalog, driven by the raw scan."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .actions import CATALOG, ActionCatalog
from .sensors import ScanObservation
from .world import BEAM_OFFSETS, Pose2D, wrap_angle

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DwaParams:
    max_v: float = 0.6
    max_w: float = 0.9
    acc_v: float = 6.0           # m/s^2; wide enough that the whole catalog is reachable in 0.1 s
    acc_w: float = 18.0          # rad/s^2
    dt: float = 0.1              # control period the acceleration window refers to
    horizon: float = 1.5         # forward simulation, s
    sim_dt: float = 0.1
    w_heading: float = 0.8
    w_clearance: float = 0.1
    w_velocity: float = 0.1
    robot_radius: float = 0.17
    clearance_cap: float = 3.0   # free distance that counts as fully clear, m

    def __post_init__(self):
        if min(self.w_heading, self.w_clearance, self.w_velocity) < 0:
            raise ValueError("objective weights must be >= 0")
        if self.horizon <= 0 or self.sim_dt <= 0:
            raise ValueError("horizon and sim_dt must be > 0")


@dataclass
class DwaResult:
    action: tuple[float, float]
    recovery: bool
    scores: np.ndarray        # per candidate, -inf where pruned
    candidates: np.ndarray    # (K, 2)


def scan_points(scan: ScanObservation, stride: int = 1) -> np.ndarray:
    """Robot-frame obstacle points from every returned (non max-range) beam."""
    r = scan.ranges[::stride]
    a = BEAM_OFFSETS[::stride]
    keep = r < scan.max_range - 1e-6
    return np.stack([r[keep] * np.cos(a[keep]), r[keep] * np.sin(a[keep])], axis=1)


def rollout_arcs(cands: np.ndarray, horizon: float, sim_dt: float) -> np.ndarray:
    """Robot-frame poses (K, S, 3) along constant-velocity arcs from the origin."""
    t = sim_dt * np.arange(1, int(round(horizon / sim_dt)) + 1)
    v, w = cands[:, 0:1], cands[:, 1:2]
    th = w * t
    straight = np.abs(w) < 1e-9
    ws = np.where(straight, 1.0, w)
    x = np.where(straight, v * t, v / ws * np.sin(th))
    y = np.where(straight, 0.0, v / ws * (1.0 - np.cos(th)))
    return np.stack([x, y, th], axis=-1)


def dwa_evaluate(scan: ScanObservation, est_pose: Pose2D, goal: Pose2D, current=(0.0, 0.0),
                 params: DwaParams = DwaParams(), catalog: ActionCatalog = CATALOG) -> DwaResult:
    p = params
    cands = catalog.pairs
    win = (np.abs(cands[:, 0] - current[0]) <= p.acc_v * p.dt + 1e-9) \
        & (np.abs(cands[:, 1] - current[1]) <= p.acc_w * p.dt + 1e-9) \
        & (cands[:, 0] <= p.max_v + 1e-9) & (np.abs(cands[:, 1]) <= p.max_w + 1e-9)
    cands = cands[win]
    arcs = rollout_arcs(cands, p.horizon, p.sim_dt)
    pts = scan_points(scan)

    # goal bearing seen from the current estimated pose
    rel = goal.relative_to(est_pose)
    bearing = math.atan2(rel.y, rel.x)

    if len(pts):
        d = np.hypot(arcs[..., 0:1] - pts[:, 0], arcs[..., 1:2] - pts[:, 1])   # (K, S, P)
        min_clear = d.min(axis=(1, 2))
        # free distance straight ahead of the final pose inside a robot-wide corridor
        fx, fy, fth = arcs[:, -1, 0:1], arcs[:, -1, 1:2], arcs[:, -1, 2:3]
        dx, dy = pts[:, 0] - fx, pts[:, 1] - fy
        ahead = np.cos(fth) * dx + np.sin(fth) * dy
        side = -np.sin(fth) * dx + np.cos(fth) * dy
        blocking = (ahead > 0) & (np.abs(side) < p.robot_radius)
        free = np.where(blocking, ahead - p.robot_radius, np.inf).min(axis=1)
    else:
        min_clear = np.full(len(cands), np.inf)
        free = np.full(len(cands), np.inf)

    heading = 1.0 - np.abs(wrap_angle(bearing - arcs[:, -1, 2])) / math.pi
    clearance = np.clip(free, 0.0, p.clearance_cap) / p.clearance_cap
    velocity = cands[:, 0] / p.max_v * math.cos(bearing)
    score = p.w_heading * heading + p.w_clearance * clearance + p.w_velocity * velocity
    # standing still is only a fallback; it never makes progress
    idle = (cands[:, 0] == 0) & (cands[:, 1] == 0)
    score = np.where((min_clear < p.robot_radius) | idle, -np.inf, score)

    if np.all(np.isneginf(score)):
        w = p.max_w if bearing >= 0 else -p.max_w
        log.debug("dwa: every candidate pruned, rotating in place toward the goal")
        return DwaResult((0.0, w), True, score, cands)
    k = int(np.argmax(score))
    return DwaResult((float(cands[k, 0]), float(cands[k, 1])), False, score, cands)


def dwa_plan(scan: ScanObservation, est_pose: Pose2D, goal: Pose2D, current=(0.0, 0.0),
             params: DwaParams = DwaParams(), catalog: ActionCatalog = CATALOG) -> tuple[float, float]:
    """Best catalog (v, w) for the current scan; rotates toward the goal if nothing is admissible."""
    return dwa_evaluate(scan, est_pose, goal, current, params, catalog).action
