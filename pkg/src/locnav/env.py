"""Closed-loop navigation episode: crowd, sensors, particle filter, reward."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .actions import CATALOG, ActionCatalog
from .crowd import OrcaParams, PedestrianState, RobotDisc, SfmParams, spawn_pedestrians, step_crowd
from .localization import (AmclParams, BeliefSummary, DegenerateBelief, ParticleSet, init_belief,
                           localize_step, measurement_update, resample, summarize)
from .observation import ObservationBundle, Variant, assemble_observation
from .reward import RewardBreakdown, RewardParams, StepOutcome, compute_reward
from .sensors import (BeamModelParams, OdomNoiseParams, ScanObservation, apply_beam_noise,
                      apply_odom_noise, integrate_unicycle, odometry_increment)
from .world import (Pose2D, wrap_angle, ScenarioSpec, check_collision, rasterize, sample_pose_in_region,
                    scan_ground_truth)

CONTROL_PERIOD = 0.1


@dataclass(frozen=True)
class EnvParams:
    dt: float = CONTROL_PERIOD
    beam: BeamModelParams = field(default_factory=BeamModelParams)
    odom: OdomNoiseParams = field(default_factory=OdomNoiseParams)
    amcl: AmclParams = field(default_factory=AmclParams)
    reward: RewardParams = field(default_factory=RewardParams)
    orca: OrcaParams = field(default_factory=OrcaParams)
    sfm: SfmParams = field(default_factory=SfmParams)
    # which pose decides arrival termination: "estimate" (training) or "ground_truth" (benchmark)
    arrival_from: str = "estimate"
    # pose the DRL_laser baselines read their goal vector from: "estimate" or "ground_truth"
    baseline_goal_from: str = "estimate"
    # particle cloud width used when the filter has to restart
    reinit_spread: tuple[float, float, float] = (0.5, 0.5, 0.3)

    def __post_init__(self):
        if self.arrival_from not in ("estimate", "ground_truth"):
            raise ValueError("arrival_from must be 'estimate' or 'ground_truth'")
        if self.baseline_goal_from not in ("estimate", "ground_truth"):
            raise ValueError("baseline_goal_from must be 'estimate' or 'ground_truth'")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")


@dataclass
class StepInfo:
    gt: Pose2D
    belief: BeliefSummary
    action: tuple[float, float]
    reward: RewardBreakdown
    outcome: StepOutcome
    est_arrived: bool
    gt_arrived: bool
    peds: list[PedestrianState]
    reinitialized: bool = False


class NavEnv:
    """One robot navigating one scenario. The policy only ever sees `ObservationBundle`s."""

    def __init__(self, scenario: ScenarioSpec, variant: Variant | str = Variant.LNDRL,
                 params: EnvParams = EnvParams(), catalog: ActionCatalog = CATALOG):
        self.scenario = scenario
        self.variant = Variant(variant)
        self.params = params
        self.catalog = catalog
        self.grid = rasterize(scenario.world)
        self.rng = np.random.default_rng(0)
        self.gt: Pose2D | None = None
        self.goal: Pose2D | None = None
        self.peds: list[PedestrianState] = []
        self.pset: ParticleSet | None = None
        self.belief: BeliefSummary | None = None
        self.scans: deque[ScanObservation] = deque(maxlen=3)
        self.t = 0
        self.done = True
        self.last_cmd = (0.0, 0.0)

    @property
    def reward_params(self) -> RewardParams:
        rp = self.params.reward
        if self.variant in (Variant.DRL_LASER, Variant.DRL_LASER_PED, Variant.NO_POSE_REWARD):
            # these variants are trained without the localization-aware reward terms
            lost = self.variant is Variant.NO_POSE_REWARD
            rp = replace(rp, use_pose_reward=False, use_lost_reward=lost and rp.use_lost_reward)
        return rp

    # ------------------------------------------------------------------
    def reset(self, seed=None, start: Pose2D | None = None, goal_xy=None) -> ObservationBundle:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        sc = self.scenario
        r = sc.robot_radius
        self.gt = start or sample_pose_in_region(sc.robot_start_region, self.rng, sc.world, r)
        if goal_xy is None:
            g = sample_pose_in_region(sc.robot_goal_region, self.rng, sc.world, r)
            goal_xy = (g.x, g.y)
        self.goal = Pose2D(float(goal_xy[0]), float(goal_xy[1]), 0.0)
        self.peds = spawn_pedestrians(sc, self.rng, keep_clear=[(self.gt.x, self.gt.y, r + 0.5)])
        amcl = self.params.amcl
        self.pset = init_belief(self.gt, amcl.init_spread, amcl.min_particles, self.rng)
        scan = self._sense()
        self.scans.clear()
        self.scans.append(scan)
        try:
            self.pset = resample(measurement_update(self.pset, scan, self.grid, amcl.likelihood,
                                                    amcl.beam_stride), self.rng, amcl)
        except DegenerateBelief:
            pass
        self.belief = summarize(self.pset)
        self.t = 0
        self.done = False
        self.last_cmd = (0.0, 0.0)
        return self.observe()

    def inject_pose_error(self, dx: float, dy: float, dyaw: float = 0.0):
        """Shift every particle by a world-frame offset (fault injection for tests)."""
        self.pset.poses[:, 0] += dx
        self.pset.poses[:, 1] += dy
        self.pset.poses[:, 2] = wrap_angle(self.pset.poses[:, 2] + dyaw)
        self.belief = summarize(self.pset)

    def _sense(self) -> ScanObservation:
        p = self.params
        return apply_beam_noise(scan_ground_truth(self.scenario.world, self.peds, self.gt,
                                                  p.beam.max_range), p.beam, self.rng)

    def observe(self) -> ObservationBundle:
        belief = self.belief
        if self.params.baseline_goal_from == "ground_truth" and not self.variant.uses_variance \
                and self.variant is not Variant.NO_VARIANCE:
            belief = BeliefSummary(self.gt, 0.0, 0.0, 0.0)
        return assemble_observation(self.variant, belief, self.goal.xy, list(self.scans),
                                    self.peds, self.gt)

    def step(self, action) -> tuple[ObservationBundle, float, bool, StepInfo]:
        """Advance one control period. `action` is a catalog index or a (v, w) pair."""
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        p = self.params
        v, w = self.catalog[int(action)] if np.isscalar(action) else (float(action[0]), float(action[1]))
        prev_gt, prev_est = self.gt, self.belief.mean

        ve, we = apply_odom_noise(v, w, p.odom, self.rng)
        self.gt = integrate_unicycle(self.gt, ve, we, p.dt)
        robot = RobotDisc((self.gt.x, self.gt.y),
                          (ve * math.cos(self.gt.yaw), ve * math.sin(self.gt.yaw)),
                          self.scenario.robot_radius)
        self.peds = step_crowd(self.peds, robot, self.scenario, self.rng, p.dt, p.orca, p.sfm)
        collided = check_collision(self.scenario.world, self.peds, self.gt, self.scenario.robot_radius)

        scan = self._sense()
        self.scans.append(scan)
        reinit = False
        try:
            self.pset, self.belief = localize_step(self.pset, odometry_increment(v, w, p.dt), scan,
                                                   self.grid, p.amcl, self.rng)
        except DegenerateBelief:
            # restart the filter around the last estimate with a wide cloud
            reinit = True
            self.pset = init_belief(prev_est.compose(odometry_increment(v, w, p.dt)),
                                    p.reinit_spread, p.amcl.max_particles, self.rng)
            self.belief = summarize(self.pset)

        self.t += 1
        rp = self.reward_params
        est_arr = self.belief.mean.distance_to(self.goal) < rp.eps_a
        gt_arr = self.gt.distance_to(self.goal) < rp.eps_a
        arrived = gt_arr if p.arrival_from == "ground_truth" else est_arr
        rb = compute_reward(prev_gt, self.gt, prev_est, self.belief.mean, self.goal, self.belief,
                            collided, self.t, rp, arrived=arrived)
        if arrived != est_arr:
            # the logged arrival bonus always follows the estimate
            rb = replace(rb, arr=rp.r_arr if est_arr else 0.0)
        self.done = rb.terminal.terminal
        self.last_cmd = (v, w)
        info = StepInfo(self.gt, self.belief, (v, w), rb, rb.terminal, est_arr, gt_arr,
                        list(self.peds), reinit)
        return self.observe(), rb.total, self.done, info
