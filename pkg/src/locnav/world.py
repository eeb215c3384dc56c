"""Ground-truth geometry: scenarios, static segments, raycasting, collisions."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

N_BEAMS = 720
SCAN_MAX_RANGE = 12.0
MAP_RESOLUTION = 0.05
DEFAULT_PED_RADIUS = 0.3
DEFAULT_ROBOT_RADIUS = 0.17

# beam i sits at yaw - pi/2 + i * pi / 719, both ends inclusive
BEAM_OFFSETS = -math.pi / 2 + np.arange(N_BEAMS) * (math.pi / (N_BEAMS - 1))


class ScenarioError(ValueError):
    """Scenario file failed to parse or violates an invariant."""


class SamplingExhausted(RuntimeError):
    pass


def wrap_angle(a):
    """Normalize an angle (scalar or array) into (-pi, pi]."""
    if isinstance(a, np.ndarray):
        r = np.remainder(a + math.pi, 2 * math.pi) - math.pi
        r[r <= -math.pi] += 2 * math.pi
        return r
    r = math.remainder(float(a), 2 * math.pi)
    if r <= -math.pi:
        r += 2 * math.pi
    return r


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw])

    def compose(self, delta: "Pose2D") -> "Pose2D":
        """Apply a robot-frame increment."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose2D(self.x + c * delta.x - s * delta.y,
                      self.y + s * delta.x + c * delta.y,
                      self.yaw + delta.yaw)

    def relative_to(self, origin: "Pose2D") -> "Pose2D":
        """Express this pose in the frame of `origin` (inverse of compose)."""
        c, s = math.cos(origin.yaw), math.sin(origin.yaw)
        dx, dy = self.x - origin.x, self.y - origin.y
        return Pose2D(c * dx + s * dy, -s * dx + c * dy, self.yaw - origin.yaw)

    def distance_to(self, other: "Pose2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax >= self.xmin and self.ymax >= self.ymin):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def contains(self, x, y, tol=1e-9) -> bool:
        return (self.xmin - tol <= x <= self.xmax + tol
                and self.ymin - tol <= y <= self.ymax + tol)

    def contains_rect(self, other: "Rect", tol=1e-9) -> bool:
        return (self.contains(other.xmin, other.ymin, tol)
                and self.contains(other.xmax, other.ymax, tol))

    def as_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]


@dataclass
class WorldModel:
    segments: np.ndarray  # (N, 4): x1, y1, x2, y2
    bounds: Rect
    name: str = ""

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=float).reshape(-1, 4)
        if not np.all(np.isfinite(self.segments)):
            raise ScenarioError("world.segments: endpoints must be finite")
        b = self.bounds
        xs, ys = self.segments[:, [0, 2]], self.segments[:, [1, 3]]
        if np.any(xs < b.xmin - 1e-9) or np.any(xs > b.xmax + 1e-9) \
                or np.any(ys < b.ymin - 1e-9) or np.any(ys > b.ymax + 1e-9):
            raise ScenarioError("world.segments: all segments must lie within world.bounds")


@dataclass(frozen=True)
class PedestrianSpec:
    start_region: Rect
    goal_region: Rect
    radius: float = DEFAULT_PED_RADIUS
    preferred_speed: float = 1.0
    driver: str = "orca"
    overrides: dict = field(default_factory=dict, hash=False, compare=False)


@dataclass
class ScenarioSpec:
    world: WorldModel
    robot_start_region: Rect
    robot_goal_region: Rect
    pedestrian_specs: list[PedestrianSpec]
    robot_radius: float = DEFAULT_ROBOT_RADIUS
    name: str = ""
    source: str | None = None

    def validate(self) -> None:
        b = self.world.bounds
        if self.robot_radius <= 0:
            raise ScenarioError("robot.radius: must be > 0")
        for label, r in (("robot.start_region", self.robot_start_region),
                         ("robot.goal_region", self.robot_goal_region)):
            if not b.contains_rect(r):
                raise ScenarioError(f"{label}: region must lie inside world.bounds")
        for i, p in enumerate(self.pedestrian_specs):
            if p.radius <= 0:
                raise ScenarioError(f"pedestrian[{i}].radius: must be > 0")
            if p.preferred_speed <= 0:
                raise ScenarioError(f"pedestrian[{i}].speed: must be > 0")
            if p.driver not in ("orca", "sfm"):
                raise ScenarioError(f"pedestrian[{i}].driver: must be 'orca' or 'sfm', got {p.driver!r}")
            for label, r in (("start_region", p.start_region), ("goal_region", p.goal_region)):
                if not b.contains_rect(r):
                    raise ScenarioError(f"pedestrian[{i}].{label}: region must lie inside world.bounds")


@dataclass
class OccupancyGrid:
    resolution: float
    origin: Pose2D
    width: int
    height: int
    cells: np.ndarray  # (height, width) uint8, row = y index

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be > 0")
        if self.cells.shape != (self.height, self.width):
            raise ValueError("cell count must equal width x height")


# ---------------------------------------------------------------------------
# scenario files

def _rect(value, where: str) -> Rect:
    try:
        vals = [float(v) for v in value]
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: expected [xmin, ymin, xmax, ymax]") from None
    if len(vals) != 4:
        raise ScenarioError(f"{where}: expected [xmin, ymin, xmax, ymax]")
    if vals[2] < vals[0] or vals[3] < vals[1]:
        raise ScenarioError(f"{where}: requires xmax >= xmin and ymax >= ymin")
    return Rect(*vals)


def _polyline_segments(pts, closed, where):
    pts = [float(v) for v in pts]
    if len(pts) % 2 or len(pts) < 4:
        raise ScenarioError(f"{where}: expected flat [x0, y0, x1, y1, ...] with >= 2 points")
    xy = list(zip(pts[0::2], pts[1::2]))
    if closed:
        xy.append(xy[0])
    return [(a[0], a[1], b[0], b[1]) for a, b in zip(xy[:-1], xy[1:])]


def parse_scenario(data: dict, name: str = "", source: str | None = None) -> ScenarioSpec:
    try:
        w = data["world"]
        bounds = _rect(w["bounds"], "world.bounds")
    except KeyError as e:
        raise ScenarioError(f"missing required field {e.args[0]!r}") from None

    segs: list[tuple] = []
    for i, s in enumerate(w.get("segments", [])):
        if len(s) != 4:
            raise ScenarioError(f"world.segments[{i}]: expected [x1, y1, x2, y2]")
        segs.append(tuple(float(v) for v in s))
    for i, b in enumerate(w.get("boxes", [])):
        r = _rect(b, f"world.boxes[{i}]")
        segs += _polyline_segments([r.xmin, r.ymin, r.xmax, r.ymin, r.xmax, r.ymax, r.xmin, r.ymax],
                                   True, f"world.boxes[{i}]")
    for i, p in enumerate(w.get("polylines", [])):
        segs += _polyline_segments(p, False, f"world.polylines[{i}]")
    for i, p in enumerate(w.get("polygons", [])):
        segs += _polyline_segments(p, True, f"world.polygons[{i}]")
    if w.get("enclose", False):
        b = bounds
        segs += _polyline_segments([b.xmin, b.ymin, b.xmax, b.ymin, b.xmax, b.ymax, b.xmin, b.ymax],
                                   True, "world.enclose")
    world = WorldModel(np.array(segs, dtype=float).reshape(-1, 4), bounds,
                       name=str(data.get("name", name)))

    robot = data.get("robot")
    if robot is None:
        raise ScenarioError("missing required section 'robot'")
    for key in ("start_region", "goal_region"):
        if key not in robot:
            raise ScenarioError(f"robot.{key}: missing")
    peds = []
    for i, p in enumerate(data.get("pedestrian", [])):
        for key in ("start_region", "goal_region"):
            if key not in p:
                raise ScenarioError(f"pedestrian[{i}].{key}: missing")
        extra = {k: v for k, v in p.items()
                 if k not in ("start_region", "goal_region", "radius", "speed", "driver", "count")}
        spec = PedestrianSpec(
            start_region=_rect(p["start_region"], f"pedestrian[{i}].start_region"),
            goal_region=_rect(p["goal_region"], f"pedestrian[{i}].goal_region"),
            radius=float(p.get("radius", DEFAULT_PED_RADIUS)),
            preferred_speed=float(p.get("speed", 1.0)),
            driver=str(p.get("driver", "orca")).lower(),
            overrides=extra,
        )
        peds += [spec] * int(p.get("count", 1))

    spec = ScenarioSpec(
        world=world,
        robot_start_region=_rect(robot["start_region"], "robot.start_region"),
        robot_goal_region=_rect(robot["goal_region"], "robot.goal_region"),
        pedestrian_specs=peds,
        robot_radius=float(robot.get("radius", DEFAULT_ROBOT_RADIUS)),
        name=world.name or name,
        source=source,
    )
    spec.validate()
    return spec


def shipped_scenarios() -> list[str]:
    root = resources.files("locnav") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def resolve_scenario_path(name_or_path: str | Path) -> Path:
    """Accept a file path or the name of a shipped scenario (``hybrid``, ``sparse``...)."""
    p = Path(name_or_path)
    if p.exists():
        return p
    if p.suffix == "" and str(name_or_path) in shipped_scenarios():
        return Path(str(resources.files("locnav") / "scenarios" / f"{name_or_path}.toml"))
    raise FileNotFoundError(f"scenario not found: {name_or_path}")


def load_scenario(path: str | Path) -> ScenarioSpec:
    path = resolve_scenario_path(path)
    text = path.read_text()
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(f"{path}: parse error: {e}") from None
    try:
        return parse_scenario(data, name=path.stem, source=str(path))
    except ScenarioError as e:
        raise ScenarioError(f"{path}: {e}") from None


# ---------------------------------------------------------------------------
# raycasting

def _circles_array(peds) -> np.ndarray:
    if peds is None or len(peds) == 0:
        return np.zeros((0, 3))
    if isinstance(peds, np.ndarray):
        return peds.reshape(-1, 3)
    return np.array([[p.position[0], p.position[1], p.radius] for p in peds], dtype=float)


def raycast_many(segments: np.ndarray, circles: np.ndarray, ox: float, oy: float,
                 angles: np.ndarray, max_range: float) -> np.ndarray:
    """Vectorized exact ray casting against segments and circles from one origin."""
    angles = np.asarray(angles, dtype=float)
    dx, dy = np.cos(angles), np.sin(angles)
    out = np.full(angles.shape, float(max_range))
    if len(segments):
        px = segments[:, 0] - ox
        py = segments[:, 1] - oy
        ex = segments[:, 2] - segments[:, 0]
        ey = segments[:, 3] - segments[:, 1]
        denom = dx[:, None] * ey[None, :] - dy[:, None] * ex[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (px * ey - py * ex)[None, :] / denom
            s = (px[None, :] * dy[:, None] - py[None, :] * dx[:, None]) / denom
        ok = (np.abs(denom) > 1e-12) & (t >= 0) & (s >= -1e-12) & (s <= 1 + 1e-12)
        t = np.where(ok, t, np.inf)
        out = np.minimum(out, t.min(axis=1))
    if len(circles):
        fx = ox - circles[:, 0]
        fy = oy - circles[:, 1]
        cc = fx * fx + fy * fy - circles[:, 2] ** 2
        b = dx[:, None] * fx[None, :] + dy[:, None] * fy[None, :]
        disc = b * b - cc[None, :]
        with np.errstate(invalid="ignore"):
            t1 = -b - np.sqrt(disc)
        hit = (disc >= 0) & (t1 >= 0)
        t = np.where(hit, t1, np.inf)
        t = np.where(cc[None, :] <= 0, 0.0, t)  # origin inside a disc
        out = np.minimum(out, t.min(axis=1))
    return np.clip(out, 0.0, max_range)


def raycast(world: WorldModel, peds, origin: Pose2D, angle: float, max_range: float) -> float:
    """Distance along a world-frame ray to the first segment or pedestrian disc."""
    if max_range <= 0:
        raise ValueError("max_range must be > 0")
    return float(raycast_many(world.segments, _circles_array(peds), origin.x, origin.y,
                              np.array([angle]), max_range)[0])


def scan_ground_truth(world: WorldModel, peds, pose: Pose2D, max_range: float = SCAN_MAX_RANGE):
    from .sensors import ScanObservation
    ranges = raycast_many(world.segments, _circles_array(peds), pose.x, pose.y,
                          pose.yaw + BEAM_OFFSETS, max_range)
    return ScanObservation(ranges, max_range)


# ---------------------------------------------------------------------------
# occupancy grid

def _segment_hits_boxes(seg, x0, y0, x1, y1) -> np.ndarray:
    """Closed-box / segment intersection test (separating axis), boxes vectorized."""
    ax, ay, bx, by = seg
    sxmin, sxmax = min(ax, bx), max(ax, bx)
    symin, symax = min(ay, by), max(ay, by)
    overlap = (x1 >= sxmin) & (x0 <= sxmax) & (y1 >= symin) & (y0 <= symax)
    nx, ny = -(by - ay), bx - ax
    c = nx * ax + ny * ay
    d = np.stack([nx * x0 + ny * y0, nx * x1 + ny * y0, nx * x0 + ny * y1, nx * x1 + ny * y1]) - c
    straddle = ~((d > 0).all(axis=0) | (d < 0).all(axis=0))
    return overlap & straddle


def rasterize(world: WorldModel, resolution: float = MAP_RESOLUTION) -> OccupancyGrid:
    """Grid whose cell centers sit on multiples of `resolution` from the lower-left bound.

    Walls placed on round coordinates then run through cell centers instead of
    along cell borders, which keeps the map symmetric about them.
    """
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    b = world.bounds
    ox, oy = b.xmin - resolution / 2, b.ymin - resolution / 2
    width = int(math.floor(b.width / resolution + 1e-9)) + 1
    height = int(math.floor(b.height / resolution + 1e-9)) + 1
    cells = np.zeros((height, width), dtype=np.uint8)
    for seg in world.segments:
        i0 = max(int(math.floor((min(seg[0], seg[2]) - ox) / resolution)) - 1, 0)
        i1 = min(int(math.floor((max(seg[0], seg[2]) - ox) / resolution)) + 1, width - 1)
        j0 = max(int(math.floor((min(seg[1], seg[3]) - oy) / resolution)) - 1, 0)
        j1 = min(int(math.floor((max(seg[1], seg[3]) - oy) / resolution)) + 1, height - 1)
        ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1))
        x0 = ox + ii * resolution
        y0 = oy + jj * resolution
        hit = _segment_hits_boxes(seg, x0, y0, x0 + resolution, y0 + resolution)
        cells[jj[hit], ii[hit]] = 1
    return OccupancyGrid(resolution, Pose2D(ox, oy, 0.0), width, height, cells)


# ---------------------------------------------------------------------------
# collisions and sampling

def point_segment_distance(px, py, segments: np.ndarray) -> np.ndarray:
    ax, ay = segments[:, 0], segments[:, 1]
    ex, ey = segments[:, 2] - ax, segments[:, 3] - ay
    ll = ex * ex + ey * ey
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(ll > 0, ((px - ax) * ex + (py - ay) * ey) / ll, 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(ax + t * ex - px, ay + t * ey - py)


def closest_point_on_segments(px, py, segments: np.ndarray) -> np.ndarray:
    ax, ay = segments[:, 0], segments[:, 1]
    ex, ey = segments[:, 2] - ax, segments[:, 3] - ay
    ll = ex * ex + ey * ey
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(ll > 0, ((px - ax) * ex + (py - ay) * ey) / ll, 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.stack([ax + t * ex, ay + t * ey], axis=1)


def check_collision(world: WorldModel, peds, pose: Pose2D, robot_radius: float) -> bool:
    if robot_radius <= 0:
        raise ValueError("robot_radius must be > 0")
    if len(world.segments) and point_segment_distance(pose.x, pose.y, world.segments).min() < robot_radius:
        return True
    circles = _circles_array(peds)
    if len(circles):
        d = np.hypot(circles[:, 0] - pose.x, circles[:, 1] - pose.y)
        if np.any(d < robot_radius + circles[:, 2]):
            return True
    return False


def sample_pose_in_region(region: Rect, rng: np.random.Generator, world: WorldModel | None = None,
                          radius: float = DEFAULT_ROBOT_RADIUS, attempts: int = 1000,
                          avoid: Sequence | None = None) -> Pose2D:
    """Uniform pose in `region`, rejection-sampled to be clear of static obstacles.

    `avoid` optionally lists (x, y, r) discs that must also be kept clear.
    """
    for _ in range(attempts):
        x = rng.uniform(region.xmin, region.xmax)
        y = rng.uniform(region.ymin, region.ymax)
        pose = Pose2D(x, y, rng.uniform(-math.pi, math.pi))
        if world is not None and len(world.segments) \
                and point_segment_distance(x, y, world.segments).min() < radius:
            continue
        if avoid is not None and len(avoid):
            a = np.asarray(avoid, dtype=float).reshape(-1, 3)
            if np.any(np.hypot(a[:, 0] - x, a[:, 1] - y) < radius + a[:, 2]):
                continue
        return pose
    raise SamplingExhausted(f"no collision-free pose found in {region} after {attempts} attempts")
