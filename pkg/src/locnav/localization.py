"""Adaptive Monte Carlo localization over an occupancy grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.ndimage import distance_transform_cdt
from scipy.stats import norm

from .sensors import BeamModelParams, OdomNoiseParams, ScanObservation, beam_density
from .world import BEAM_OFFSETS, SCAN_MAX_RANGE, OccupancyGrid, Pose2D, wrap_angle


class DegenerateBelief(RuntimeError):
    """Every particle weight vanished; the caller should reinitialize."""


@dataclass(frozen=True)
class AmclParams:
    min_particles: int = 500
    max_particles: int = 2000
    kld_err: float = 0.05
    kld_delta: float = 0.99
    bin_size: tuple[float, float, float] = (0.5, 0.5, math.radians(10.0))
    jitter: tuple[float, float, float] = (0.02, 0.02, 0.01)
    odom: OdomNoiseParams = field(default_factory=OdomNoiseParams)
    # the filter's own measurement model; broader than the simulated sensor because
    # expected scans come from a 5 cm grid rather than the exact geometry
    likelihood: BeamModelParams = field(
        default_factory=lambda: BeamModelParams(z_hit=0.95, z_short=0.0, z_max=0.025,
                                                z_rand=0.025, sigma_hit=0.1))
    beam_stride: int = 12
    init_spread: tuple[float, float, float] = (0.1, 0.1, 0.05)

    def __post_init__(self):
        if not 1 <= self.min_particles <= self.max_particles:
            raise ValueError("need 1 <= min_particles <= max_particles")
        if self.beam_stride < 1:
            raise ValueError("beam_stride must be >= 1")


@dataclass
class Particle:
    pose: Pose2D
    weight: float


@dataclass
class ParticleSet:
    poses: np.ndarray    # (N, 3) x, y, yaw
    weights: np.ndarray  # (N,)
    expected_scan_cache: np.ndarray | None = None

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=float).reshape(-1, 3)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.poses) == 0:
            raise ValueError("particle set must be nonempty")
        if len(self.weights) != len(self.poses):
            raise ValueError("one weight per particle required")
        if np.any(self.weights < 0):
            raise ValueError("weights must be >= 0")

    def __len__(self):
        return len(self.poses)

    @property
    def particles(self) -> list[Particle]:
        return [Particle(Pose2D(*p), float(w)) for p, w in zip(self.poses, self.weights)]

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.poses.copy(), self.weights.copy())


@dataclass(frozen=True)
class BeliefSummary:
    mean: Pose2D
    var_x: float
    var_y: float
    var_yaw: float

    @property
    def variance_sum(self) -> float:
        return self.var_x + self.var_y + self.var_yaw


# ---------------------------------------------------------------------------
# expected scans

@numba.njit(cache=True)
def _grid_raycast(cells, free, res, ox, oy, poses, offsets, max_range, out):
    """Cell-walking raycast. `free[y, x]` is the Chebyshev distance (in cells) to
    the nearest occupied cell; where it is large the walk jumps ahead, since
    every cell within that many steps is known to be empty."""
    h, w = cells.shape
    maxc = max_range / res
    for p in range(poses.shape[0]):
        gx = (poses[p, 0] - ox) / res
        gy = (poses[p, 1] - oy) / res
        cx0 = int(math.floor(gx))
        cy0 = int(math.floor(gy))
        inside = 0 <= cx0 < w and 0 <= cy0 < h
        for k in range(offsets.shape[0]):
            if not inside or cells[cy0, cx0]:
                out[p, k] = 0.0
                continue
            th = poses[p, 2] + offsets[k]
            dx = math.cos(th)
            dy = math.sin(th)
            sx = 1 if dx > 0 else (-1 if dx < 0 else 0)
            sy = 1 if dy > 0 else (-1 if dy < 0 else 0)
            tdx = 1.0 / abs(dx) if sx != 0 else 1e30
            tdy = 1.0 / abs(dy) if sy != 0 else 1e30
            cx, cy = cx0, cy0
            t = 0.0
            r = max_range
            while True:
                d = free[cy, cx]
                if d >= 3:
                    # leap (d - 1) cell widths: the cell index moves by at most d - 1
                    t += d - 1
                    if t >= maxc:
                        break
                    cx = int(math.floor(gx + t * dx))
                    cy = int(math.floor(gy + t * dy))
                    if cx < 0 or cy < 0 or cx >= w or cy >= h:
                        break
                # boundary crossings from the current cell, measured from the ray start
                if sx > 0:
                    tmx = (cx + 1 - gx) / dx
                elif sx < 0:
                    tmx = (cx - gx) / dx
                else:
                    tmx = 1e30
                if sy > 0:
                    tmy = (cy + 1 - gy) / dy
                elif sy < 0:
                    tmy = (cy - gy) / dy
                else:
                    tmy = 1e30
                hit = False
                while True:
                    if tmx < tmy:
                        t = tmx
                        tmx += tdx
                        cx += sx
                    else:
                        t = tmy
                        tmy += tdy
                        cy += sy
                    if t >= maxc or cx < 0 or cy < 0 or cx >= w or cy >= h:
                        hit = True
                        break
                    if cells[cy, cx]:
                        r = t * res
                        hit = True
                        break
                    if free[cy, cx] >= 3:
                        break
                if hit:
                    break
            out[p, k] = r


def free_distance(grid: OccupancyGrid) -> np.ndarray:
    """Chebyshev cell distance to the nearest occupied cell (cached on the grid)."""
    d = getattr(grid, "_free_distance", None)
    if d is None:
        if grid.cells.any():
            d = distance_transform_cdt(grid.cells == 0, metric="chessboard").astype(np.int32)
        else:
            d = np.full(grid.cells.shape, max(grid.cells.shape), np.int32)
        grid._free_distance = d
    return d


def expected_scans(grid: OccupancyGrid, poses: np.ndarray, beam_index: np.ndarray,
                   max_range: float = SCAN_MAX_RANGE) -> np.ndarray:
    """Ranges each pose would observe in the static map, shape (P, len(beam_index))."""
    poses = np.ascontiguousarray(np.asarray(poses, dtype=float).reshape(-1, 3))
    offsets = np.ascontiguousarray(BEAM_OFFSETS[beam_index])
    out = np.empty((len(poses), len(offsets)))
    _grid_raycast(grid.cells, free_distance(grid), grid.resolution, grid.origin.x, grid.origin.y,
                  poses, offsets, float(max_range), out)
    return out


# ---------------------------------------------------------------------------
# filter operations

def init_belief(pose: Pose2D, spread, n: int, rng: np.random.Generator) -> ParticleSet:
    sx, sy, sa = spread
    poses = np.empty((n, 3))
    poses[:, 0] = pose.x + rng.normal(0.0, 1.0, n) * sx
    poses[:, 1] = pose.y + rng.normal(0.0, 1.0, n) * sy
    poses[:, 2] = wrap_angle(pose.yaw + rng.normal(0.0, 1.0, n) * sa)
    return ParticleSet(poses, np.full(n, 1.0 / n))


def motion_update(pset: ParticleSet, odom_delta: Pose2D, rng: np.random.Generator,
                  params: AmclParams = AmclParams()) -> ParticleSet:
    """Advance every particle by the odometry increment expressed in its own frame."""
    n = len(pset)
    std = params.odom.gain_std
    gt = params.odom.gain_mean + std * rng.normal(0.0, 1.0, n)
    gr = params.odom.gain_mean + std * rng.normal(0.0, 1.0, n)
    dx, dy, dth = odom_delta.x * gt, odom_delta.y * gt, odom_delta.yaw * gr
    th = pset.poses[:, 2]
    c, s = np.cos(th), np.sin(th)
    poses = np.empty_like(pset.poses)
    jx, jy, ja = params.jitter
    poses[:, 0] = pset.poses[:, 0] + c * dx - s * dy + jx * rng.normal(0.0, 1.0, n)
    poses[:, 1] = pset.poses[:, 1] + s * dx + c * dy + jy * rng.normal(0.0, 1.0, n)
    poses[:, 2] = wrap_angle(th + dth + ja * rng.normal(0.0, 1.0, n))
    return ParticleSet(poses, pset.weights.copy())


def measurement_update(pset: ParticleSet, scan: ScanObservation, grid: OccupancyGrid,
                       params: BeamModelParams | None = None, stride: int = 12) -> ParticleSet:
    """Reweight particles by the beam model likelihood of `scan` at each pose."""
    params = params or AmclParams().likelihood
    idx = np.arange(0, len(scan.ranges), stride)
    exp = expected_scans(grid, pset.poses, idx, params.max_range)
    dens = beam_density(scan.ranges[idx][None, :], exp, params)
    ll = np.log(np.maximum(dens, 1e-300)).sum(axis=1)
    with np.errstate(divide="ignore"):
        logw = np.log(pset.weights) + ll
    if not np.any(np.isfinite(logw)):
        raise DegenerateBelief("all particle weights are zero")
    w = np.exp(logw - logw[np.isfinite(logw)].max())
    w[~np.isfinite(w)] = 0.0
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise DegenerateBelief("all particle weights are zero")
    out = ParticleSet(pset.poses.copy(), w / total)
    out.expected_scan_cache = exp
    return out


def effective_sample_size(weights: np.ndarray) -> float:
    return 1.0 / float(np.sum(weights ** 2))


def kld_sample_count(k: int, err: float, delta: float) -> float:
    """Particles needed so the KL error to the binned posterior stays below `err`
    with probability `delta`, given `k` occupied histogram bins."""
    if k <= 1:
        return 1.0
    z = norm.ppf(delta)
    a = 2.0 / (9.0 * (k - 1))
    return (k - 1) / (2.0 * err) * (1.0 - a + math.sqrt(a) * z) ** 3


def _systematic_indices(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    u = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cdf, u, side="right").clip(0, len(weights) - 1)


def _kld_target(poses, weights, params: AmclParams, rng) -> int:
    # walk i.i.d. draws until the sample count covers the KLD bound for the
    # bins seen so far (Fox's adaptive criterion)
    draws = _systematic_indices(weights, params.max_particles, rng)
    draws = rng.permutation(draws)
    bx, by, ba = params.bin_size
    keys = np.stack([np.floor(poses[draws, 0] / bx), np.floor(poses[draws, 1] / by),
                     np.floor(poses[draws, 2] / ba)], axis=1).astype(np.int64)
    seen = set()
    for m, key in enumerate(map(tuple, keys), start=1):
        seen.add(key)
        if m >= params.min_particles and m >= kld_sample_count(len(seen), params.kld_err, params.kld_delta):
            return m
    return params.max_particles


def resample(pset: ParticleSet, rng: np.random.Generator, params: AmclParams = AmclParams(),
             force: bool = False) -> ParticleSet:
    """Low-variance resampling, triggered when the effective sample size drops below N/2."""
    n = len(pset)
    if not force and effective_sample_size(pset.weights) >= n / 2 \
            and params.min_particles <= n <= params.max_particles:
        return pset
    target = _kld_target(pset.poses, pset.weights, params, rng)
    idx = _systematic_indices(pset.weights, target, rng)
    return ParticleSet(pset.poses[idx].copy(), np.full(target, 1.0 / target))


def summarize(pset: ParticleSet) -> BeliefSummary:
    w = pset.weights / pset.weights.sum()
    x, y, th = pset.poses[:, 0], pset.poses[:, 1], pset.poses[:, 2]
    mx, my = float(w @ x), float(w @ y)
    mth = math.atan2(float(w @ np.sin(th)), float(w @ np.cos(th)))
    dth = wrap_angle(th - mth)
    return BeliefSummary(Pose2D(mx, my, mth),
                         float(w @ (x - mx) ** 2), float(w @ (y - my) ** 2), float(w @ dth ** 2))


def localize_step(pset: ParticleSet, odom_delta: Pose2D, scan: ScanObservation, grid: OccupancyGrid,
                  params: AmclParams, rng: np.random.Generator) -> tuple[ParticleSet, BeliefSummary]:
    pset = motion_update(pset, odom_delta, rng, params)
    pset = measurement_update(pset, scan, grid, params.likelihood, params.beam_stride)
    pset = resample(pset, rng, params)
    return pset, summarize(pset)
