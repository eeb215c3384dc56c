"""Discrete (v, w) action catalog for the differential-drive robot."""

from __future__ import annotations

import numpy as np

LINEAR_VELOCITIES = (0.0, 0.2, 0.4, 0.6)
ANGULAR_VELOCITIES = (-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9)
N_ACTIONS = len(LINEAR_VELOCITIES) * len(ANGULAR_VELOCITIES)


class ActionCatalog:
    """28 (v, w) pairs indexed as i_v * 7 + i_w, both ascending."""

    def __init__(self, linear=LINEAR_VELOCITIES, angular=ANGULAR_VELOCITIES):
        self.linear = tuple(float(v) for v in linear)
        self.angular = tuple(float(w) for w in angular)
        self.pairs = np.array([(v, w) for v in self.linear for w in self.angular])
        if len({tuple(p) for p in self.pairs}) != len(self.pairs):
            raise ValueError("action pairs must be unique")

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i) -> tuple[float, float]:
        v, w = self.pairs[i]
        return float(v), float(w)

    def index(self, v: float, w: float) -> int:
        d = np.abs(self.pairs[:, 0] - v) + np.abs(self.pairs[:, 1] - w)
        i = int(np.argmin(d))
        if d[i] > 1e-9:
            raise KeyError(f"({v}, {w}) is not in the catalog")
        return i

    @property
    def max_linear(self) -> float:
        return max(self.linear)

    @property
    def max_angular(self) -> float:
        return max(abs(w) for w in self.angular)


CATALOG = ActionCatalog()
