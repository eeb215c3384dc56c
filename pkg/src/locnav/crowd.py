"""Pedestrian dynamics: ORCA and social-force drivers with goal cycling."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .world import (Rect, ScenarioSpec, WorldModel, closest_point_on_segments,
                    point_segment_distance, sample_pose_in_region)

RVO_EPSILON = 1e-5
GOAL_TOLERANCE = 0.3


@dataclass(frozen=True)
class PedestrianState:
    position: tuple[float, float]
    velocity: tuple[float, float]
    radius: float
    goal: tuple[float, float]
    preferred_speed: float
    driver: str = "orca"
    spec_index: int = -1
    toward_goal: bool = True  # heading to goal_region (else back to start_region)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("pedestrian radius must be > 0")

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


@dataclass(frozen=True)
class RobotDisc:
    position: tuple[float, float]
    velocity: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class OrcaParams:
    time_horizon: float = 5.0
    time_horizon_obst: float = 2.0
    neighbor_dist: float = 10.0
    max_speed: float = 1.2
    time_step: float = 0.1
    safety_margin: float = 0.01  # added to every combined radius; absorbs LP round-off

    def __post_init__(self):
        if min(self.time_horizon, self.time_horizon_obst, self.neighbor_dist,
               self.max_speed, self.time_step) <= 0:
            raise ValueError("ORCA parameters must all be positive")
        if self.safety_margin < 0:
            raise ValueError("safety_margin must be >= 0")


@dataclass(frozen=True)
class SfmParams:
    relaxation_time: float = 0.5
    repulsion_strength: float = 2.0
    repulsion_range: float = 0.35
    obstacle_strength: float = 10.0
    obstacle_range: float = 0.2
    max_speed: float = 1.2

    def __post_init__(self):
        if min(self.relaxation_time, self.repulsion_strength, self.repulsion_range,
               self.obstacle_strength, self.obstacle_range, self.max_speed) <= 0:
            raise ValueError("SFM parameters must all be positive")


def _speed_limit(agent: PedestrianState, max_speed: float) -> float:
    return min(max_speed, 1.5 * agent.preferred_speed)


def preferred_velocity(agent: PedestrianState, dt: float) -> np.ndarray:
    to_goal = np.subtract(agent.goal, agent.position)
    dist = float(np.hypot(*to_goal))
    if dist < 1e-9:
        return np.zeros(2)
    speed = min(agent.preferred_speed, dist / dt)
    return to_goal / dist * speed


# ---------------------------------------------------------------------------
# ORCA

def _det(a, b) -> float:
    return a[0] * b[1] - a[1] * b[0]


@dataclass
class Line:
    point: np.ndarray
    direction: np.ndarray

    def violated_by(self, v, tol=1e-6) -> bool:
        return _det(self.direction, self.point - v) > tol


def _lp1(lines, no, radius, opt, direction_opt):
    line = lines[no]
    dot = float(line.point @ line.direction)
    disc = dot * dot + radius * radius - float(line.point @ line.point)
    if disc < 0:
        return None
    sq = math.sqrt(disc)
    t_left, t_right = -dot - sq, -dot + sq
    for i in range(no):
        denom = _det(line.direction, lines[i].direction)
        numer = _det(lines[i].direction, line.point - lines[i].point)
        if abs(denom) <= RVO_EPSILON:
            if numer < 0:
                return None
            continue
        t = numer / denom
        if denom >= 0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None
    if direction_opt:
        t = t_right if float(opt @ line.direction) > 0 else t_left
    else:
        t = float(line.direction @ (opt - line.point))
        t = min(max(t, t_left), t_right)
    return line.point + t * line.direction


def _lp2(lines, radius, opt, direction_opt):
    if direction_opt:
        result = opt * radius
    elif float(opt @ opt) > radius * radius:
        result = opt / np.linalg.norm(opt) * radius
    else:
        result = opt.copy()
    for i, line in enumerate(lines):
        if _det(line.direction, line.point - result) > 0:
            r = _lp1(lines, i, radius, opt, direction_opt)
            if r is None:
                return i, result
            result = r
    return len(lines), result


def _lp3(lines, n_obst, begin, radius, result):
    distance = 0.0
    for i in range(begin, len(lines)):
        li = lines[i]
        if _det(li.direction, li.point - result) <= distance:
            continue
        proj = list(lines[:n_obst])
        for j in range(n_obst, i):
            lj = lines[j]
            determinant = _det(li.direction, lj.direction)
            if abs(determinant) <= RVO_EPSILON:
                if float(li.direction @ lj.direction) > 0:
                    continue
                point = 0.5 * (li.point + lj.point)
            else:
                point = li.point + (_det(lj.direction, li.point - lj.point) / determinant) * li.direction
            d = lj.direction - li.direction
            proj.append(Line(point, d / np.linalg.norm(d)))
        fail, r = _lp2(proj, radius, np.array([-li.direction[1], li.direction[0]]), True)
        if fail >= len(proj):
            result = r
        distance = _det(li.direction, li.point - result)
    return result


def _orca_line(rel_pos, rel_vel, combined_radius, tau, dt, responsibility, velocity) -> Line:
    dist_sq = float(rel_pos @ rel_pos)
    r_sq = combined_radius * combined_radius
    if dist_sq > r_sq:
        w = rel_vel - rel_pos / tau
        w_len_sq = float(w @ w)
        dot1 = float(w @ rel_pos)
        if dot1 < 0 and dot1 * dot1 > r_sq * w_len_sq:
            w_len = math.sqrt(w_len_sq)
            unit_w = w / w_len
            direction = np.array([unit_w[1], -unit_w[0]])
            u = (combined_radius / tau - w_len) * unit_w
        else:
            leg = math.sqrt(dist_sq - r_sq)
            if _det(rel_pos, w) > 0:
                direction = np.array([rel_pos[0] * leg - rel_pos[1] * combined_radius,
                                      rel_pos[0] * combined_radius + rel_pos[1] * leg]) / dist_sq
            else:
                direction = -np.array([rel_pos[0] * leg + rel_pos[1] * combined_radius,
                                       -rel_pos[0] * combined_radius + rel_pos[1] * leg]) / dist_sq
            u = float(rel_vel @ direction) * direction - rel_vel
    else:
        # already overlapping: resolve within one time step
        w = rel_vel - rel_pos / dt
        w_len = float(np.linalg.norm(w))
        unit_w = w / w_len if w_len > 0 else np.array([1.0, 0.0])
        direction = np.array([unit_w[1], -unit_w[0]])
        u = (combined_radius / dt - w_len) * unit_w
    return Line(velocity + responsibility * u, direction)


def orca_lines(i: int, agents: list[PedestrianState], robot: RobotDisc | None,
               world: WorldModel | None, params: OrcaParams, dt: float) -> tuple[list[Line], int]:
    """Half-plane constraints for agent i; obstacle lines come first."""
    a = agents[i]
    pos = np.asarray(a.position, dtype=float)
    vel = np.asarray(a.velocity, dtype=float)
    m = params.safety_margin
    lines: list[Line] = []
    if world is not None and len(world.segments):
        reach = params.time_horizon_obst * params.max_speed + a.radius
        d = point_segment_distance(pos[0], pos[1], world.segments)
        near = np.nonzero(d < reach)[0]
        if len(near):
            cps = closest_point_on_segments(pos[0], pos[1], world.segments[near])
            for q in cps[np.argsort(d[near])]:
                # segments act as static, non-reciprocating point obstacles at
                # their closest point
                lines.append(_orca_line(q - pos, vel, a.radius + m, params.time_horizon_obst, dt, 1.0, vel))
    n_obst = len(lines)
    others = []
    for j, b in enumerate(agents):
        if j == i:
            continue
        rel = np.subtract(b.position, pos)
        dsq = float(rel @ rel)
        if dsq < params.neighbor_dist ** 2:
            share = 0.5 if b.driver == "orca" else 1.0
            others.append((dsq, rel, np.asarray(b.velocity, float), a.radius + b.radius + m, share))
    if robot is not None:
        rel = np.subtract(robot.position, pos)
        dsq = float(rel @ rel)
        if dsq < params.neighbor_dist ** 2:
            others.append((dsq, rel, np.asarray(robot.velocity, float), a.radius + robot.radius + m, 1.0))
    others.sort(key=lambda o: o[0])
    for _, rel, ov, rad, share in others:
        lines.append(_orca_line(rel, vel - ov, rad, params.time_horizon, dt, share, vel))
    return lines, n_obst


def orca_velocity(i, agents, robot, world, params: OrcaParams, dt: float):
    """New velocity for agent i plus the constraints used and whether the 2D LP was feasible."""
    a = agents[i]
    lines, n_obst = orca_lines(i, agents, robot, world, params, dt)
    vmax = _speed_limit(a, params.max_speed)
    opt = preferred_velocity(a, dt)
    fail, v = _lp2(lines, vmax, opt, False)
    feasible = fail >= len(lines)
    if not feasible:
        v = _lp3(lines, n_obst, fail, vmax, v)
    n = float(np.hypot(*v))
    if n > vmax:
        v = v / n * vmax
    return v, lines, feasible


def orca_step(agents: list[PedestrianState], robot: RobotDisc | None, world: WorldModel | None,
              params: OrcaParams = OrcaParams(), dt: float = 0.1) -> list[np.ndarray]:
    if dt <= 0:
        raise ValueError("dt must be > 0")
    return [orca_velocity(i, agents, robot, world, params, dt)[0] for i in range(len(agents))]


# ---------------------------------------------------------------------------
# social force model

def pair_force(xi, xj, ri, rj, params: SfmParams) -> np.ndarray:
    """Repulsion on an agent at xi from a disc at xj (exponential in surface gap)."""
    rel = np.subtract(xi, xj)
    d = float(np.hypot(*rel))
    if d < 1e-12:
        return np.zeros(2)
    mag = params.repulsion_strength * math.exp((ri + rj - d) / params.repulsion_range)
    return mag * rel / d


def pair_potential(xi, xj, ri, rj, params: SfmParams) -> float:
    d = float(np.hypot(*np.subtract(xi, xj)))
    return params.repulsion_strength * params.repulsion_range * math.exp((ri + rj - d) / params.repulsion_range)


def obstacle_force(x, r, world: WorldModel, params: SfmParams) -> np.ndarray:
    if world is None or not len(world.segments):
        return np.zeros(2)
    cps = closest_point_on_segments(x[0], x[1], world.segments)
    rel = np.asarray(x, float)[None, :] - cps
    d = np.hypot(rel[:, 0], rel[:, 1])
    ok = d > 1e-12
    mag = params.obstacle_strength * np.exp((r - d[ok]) / params.obstacle_range)
    return (mag[:, None] * rel[ok] / d[ok, None]).sum(axis=0)


def obstacle_potential(x, r, world: WorldModel, params: SfmParams) -> float:
    d = point_segment_distance(x[0], x[1], world.segments)
    return float((params.obstacle_strength * params.obstacle_range
                  * np.exp((r - d) / params.obstacle_range)).sum())


def _sfm_velocity(i, agents, robot, world, params: SfmParams, dt: float) -> np.ndarray:
    a = agents[i]
    f = (preferred_velocity(a, dt) - np.asarray(a.velocity, float)) / params.relaxation_time
    for j, b in enumerate(agents):
        if j != i:
            f = f + pair_force(a.position, b.position, a.radius, b.radius, params)
    if robot is not None:
        f = f + pair_force(a.position, robot.position, a.radius, robot.radius, params)
    f = f + obstacle_force(a.position, a.radius, world, params)
    v = np.asarray(a.velocity, float) + f * dt
    vmax = _speed_limit(a, params.max_speed)
    n = float(np.hypot(*v))
    if n > vmax:
        v = v / n * vmax
    return v


def sfm_step(agents: list[PedestrianState], robot: RobotDisc | None, world: WorldModel | None,
             params: SfmParams = SfmParams(), dt: float = 0.1) -> list[np.ndarray]:
    if dt <= 0:
        raise ValueError("dt must be > 0")
    return [_sfm_velocity(i, agents, robot, world, params, dt) for i in range(len(agents))]


# ---------------------------------------------------------------------------
# crowd bookkeeping

def _regions(scenario: ScenarioSpec, agent: PedestrianState) -> tuple[Rect, Rect]:
    spec = scenario.pedestrian_specs[agent.spec_index]
    return spec.start_region, spec.goal_region


def spawn_pedestrians(scenario: ScenarioSpec, rng: np.random.Generator,
                      keep_clear: list[tuple[float, float, float]] = ()) -> list[PedestrianState]:
    """Place one pedestrian per spec in its start region, mutually non-overlapping."""
    agents = []
    taken = [tuple(c) for c in keep_clear]
    for k, spec in enumerate(scenario.pedestrian_specs):
        p = sample_pose_in_region(spec.start_region, rng, scenario.world, spec.radius,
                                  avoid=np.array(taken) if taken else None)
        g = sample_pose_in_region(spec.goal_region, rng, scenario.world, spec.radius)
        taken.append((p.x, p.y, spec.radius))
        agents.append(PedestrianState((p.x, p.y), (0.0, 0.0), spec.radius, (g.x, g.y),
                                      spec.preferred_speed, spec.driver, k, True))
    return agents


def update_pedestrians(agents: list[PedestrianState], dt: float, scenario: ScenarioSpec,
                       rng: np.random.Generator) -> list[PedestrianState]:
    """Integrate positions; agents within GOAL_TOLERANCE of their goal turn back."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    out = []
    for a in agents:
        pos = (a.position[0] + a.velocity[0] * dt, a.position[1] + a.velocity[1] * dt)
        a = replace(a, position=pos)
        if math.hypot(a.goal[0] - pos[0], a.goal[1] - pos[1]) < GOAL_TOLERANCE and a.spec_index >= 0:
            start, goal = _regions(scenario, a)
            region = start if a.toward_goal else goal
            g = sample_pose_in_region(region, rng, scenario.world, a.radius)
            a = replace(a, goal=(g.x, g.y), toward_goal=not a.toward_goal)
        out.append(a)
    return out


def _with_overrides(params, overrides: dict):
    if not overrides:
        return params
    names = params.__dataclass_fields__.keys()
    picked = {k: float(v) for k, v in overrides.items() if k in names}
    return replace(params, **picked) if picked else params


def step_crowd(agents: list[PedestrianState], robot: RobotDisc | None, scenario: ScenarioSpec,
               rng: np.random.Generator, dt: float = 0.1, orca: OrcaParams = OrcaParams(),
               sfm: SfmParams = SfmParams()) -> list[PedestrianState]:
    """Compute each pedestrian's velocity with its own driver, then integrate."""
    if not agents:
        return []
    world = scenario.world
    moved = []
    for i, a in enumerate(agents):
        extra = scenario.pedestrian_specs[a.spec_index].overrides if a.spec_index >= 0 else {}
        if a.driver == "orca":
            v = orca_velocity(i, agents, robot, world, _with_overrides(orca, extra), dt)[0]
        else:
            v = _sfm_velocity(i, agents, robot, world, _with_overrides(sfm, extra), dt)
        moved.append(replace(a, velocity=(float(v[0]), float(v[1]))))
    return update_pedestrians(moved, dt, scenario, rng)
