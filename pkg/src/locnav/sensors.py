"""Beam range finder noise and likelihood, odometry noise, unicycle kinematics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .world import N_BEAMS, SCAN_MAX_RANGE, Pose2D

MAX_RANGE_BIN = 0.01  # width of the max-range point mass when mixed with densities
_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class BeamModelParams:
    z_hit: float = 0.98
    z_short: float = 0.0
    z_max: float = 0.01
    z_rand: float = 0.01
    sigma_hit: float = 0.02
    max_range: float = SCAN_MAX_RANGE
    lambda_short: float = 1.0

    def __post_init__(self):
        total = self.z_hit + self.z_short + self.z_max + self.z_rand
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1, got {total}")
        if min(self.z_hit, self.z_short, self.z_max, self.z_rand) < 0:
            raise ValueError("mixture weights must be non-negative")
        if self.sigma_hit <= 0 or self.max_range <= 0:
            raise ValueError("sigma_hit and max_range must be > 0")


@dataclass(frozen=True)
class OdomNoiseParams:
    gain_mean: float = 1.0
    gain_std: float = 0.1

    def __post_init__(self):
        if self.gain_std < 0:
            raise ValueError("gain_std must be >= 0")

    @classmethod
    def from_spread(cls, spread: float, interpret: str = "variance") -> "OdomNoiseParams":
        """Build from the second argument of N(1, spread).

        ``interpret="variance"`` reads it as a variance (std = sqrt(spread)),
        ``"std"`` as a standard deviation.
        """
        if interpret == "variance":
            return cls(1.0, math.sqrt(spread))
        if interpret == "std":
            return cls(1.0, spread)
        raise ValueError(f"interpret must be 'variance' or 'std', got {interpret!r}")


class ScanObservation:
    """720 range readings in meters, clamped to [0, max_range]."""

    __slots__ = ("ranges", "max_range")

    def __init__(self, ranges, max_range: float = SCAN_MAX_RANGE):
        r = np.asarray(ranges, dtype=float)
        if r.shape != (N_BEAMS,):
            raise ValueError(f"scan must hold exactly {N_BEAMS} ranges, got shape {r.shape}")
        self.ranges = np.clip(r, 0.0, max_range)
        self.max_range = float(max_range)

    def __len__(self):
        return N_BEAMS

    def __repr__(self):
        return f"ScanObservation(min={self.ranges.min():.3f}, max_range={self.max_range})"


def apply_beam_noise(true_ranges: ScanObservation, params: BeamModelParams,
                     rng: np.random.Generator) -> ScanObservation:
    z = true_ranges.ranges
    n = len(z)
    zmax = params.max_range
    cat = rng.choice(4, size=n, p=[params.z_hit, params.z_short, params.z_max, params.z_rand])
    hit = np.clip(z + rng.normal(0.0, params.sigma_hit, n), 0.0, zmax)
    # unexpected-object readings: exponential truncated to [0, true range]
    u = rng.random(n)
    lam = params.lambda_short
    short = -np.log1p(-u * (1.0 - np.exp(-lam * z))) / lam
    rand = rng.uniform(0.0, zmax, n)
    out = np.choose(cat, [hit, short, np.full(n, zmax), rand])
    return ScanObservation(out, zmax)


def beam_density(observed: np.ndarray, expected: np.ndarray, params: BeamModelParams) -> np.ndarray:
    """Per-beam measurement density, broadcasting over observed/expected."""
    obs = np.asarray(observed, dtype=float)
    exp = np.asarray(expected, dtype=float)
    sig, zmax = params.sigma_hit, params.max_range
    eta = ndtr((zmax - exp) / sig) - ndtr(-exp / sig)
    gauss = np.exp(-0.5 * ((obs - exp) / sig) ** 2) / (sig * math.sqrt(2 * math.pi))
    p = params.z_hit * gauss / np.maximum(eta, 1e-300)
    p = p + params.z_rand / zmax
    p = p + np.where(obs >= zmax - MAX_RANGE_BIN, params.z_max / MAX_RANGE_BIN, 0.0)
    if params.z_short > 0:
        lam = params.lambda_short
        norm = 1.0 - np.exp(-lam * exp)
        with np.errstate(divide="ignore", invalid="ignore"):
            ps = np.where((obs <= exp) & (norm > 0), lam * np.exp(-lam * obs) / norm, 0.0)
        p = p + params.z_short * ps
    return p


def beam_log_likelihood(observed, expected, params: BeamModelParams, subsample_stride: int = 12) -> float:
    """Sum of log densities over every `subsample_stride`-th beam."""
    if subsample_stride < 1:
        raise ValueError("subsample_stride must be >= 1")
    obs = observed.ranges if isinstance(observed, ScanObservation) else np.asarray(observed, float)
    exp = expected.ranges if isinstance(expected, ScanObservation) else np.asarray(expected, float)
    if obs.shape != exp.shape:
        raise ValueError(f"observed/expected length mismatch: {obs.shape} vs {exp.shape}")
    p = beam_density(obs[::subsample_stride], exp[::subsample_stride], params)
    return float(np.log(np.maximum(p, _LOG_FLOOR)).sum())


def apply_odom_noise(v: float, w: float, params: OdomNoiseParams,
                     rng: np.random.Generator) -> tuple[float, float]:
    """Executed velocities: each command multiplied by an independent gain ~ N(mean, std^2)."""
    g = rng.normal(params.gain_mean, params.gain_std, 2)
    return float(v * g[0]), float(w * g[1])


def integrate_unicycle(pose: Pose2D, v: float, w: float, dt: float) -> Pose2D:
    """Exact constant-velocity arc for a differential drive."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    th = pose.yaw
    if abs(w) < 1e-6:
        return Pose2D(pose.x + v * dt * math.cos(th), pose.y + v * dt * math.sin(th), th + w * dt)
    r = v / w
    th2 = th + w * dt
    return Pose2D(pose.x + r * (math.sin(th2) - math.sin(th)),
                  pose.y - r * (math.cos(th2) - math.cos(th)), th2)


def odometry_increment(v: float, w: float, dt: float) -> Pose2D:
    """Robot-frame pose increment produced by (v, w) over dt."""
    return integrate_unicycle(Pose2D(0.0, 0.0, 0.0), v, w, dt)
