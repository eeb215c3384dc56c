"""Policy / value network: pedestrian-map, scan and target encoders feeding a joint head."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..actions import N_ACTIONS
from ..observation import ObservationBundle, Variant
from . import autograd as ag
from .autograd import Tensor

N_SCAN = 720
PED_CELLS = 48
POOL_HW = (4, 4)


@dataclass(frozen=True)
class Architecture:
    variant: str = "lndrl"
    head: str = "policy"          # "policy": 28 logits, "value": one linear unit
    n_actions: int = N_ACTIONS
    ped_channels: tuple = (64, 128, 256)
    scan_channels: tuple = (32, 32)
    scan_kernels: tuple = ((5, 3), (3, 2))   # (kernel, stride)
    ped_fc: int = 512
    scan_fc: int = 512
    goal_fc: int = 64
    joint_fc: int = 512

    @property
    def v(self) -> Variant:
        return Variant(self.variant)

    def scan_length(self) -> int:
        n = N_SCAN
        for k, s in self.scan_kernels:
            n = (n - k) // s + 1
        return n

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        d = dict(d)
        for k in ("ped_channels", "scan_channels"):
            d[k] = tuple(d[k])
        d["scan_kernels"] = tuple(tuple(x) for x in d["scan_kernels"])
        return cls(**d)

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        v = self.v
        if v.uses_ped_map:
            c = 3
            for i, f in enumerate(self.ped_channels, 1):
                shapes[f"ped.conv{i}.w"] = (f, c, 3, 3)
                shapes[f"ped.conv{i}.b"] = (f,)
                c = f
            shapes["ped.fc.w"] = (c * POOL_HW[0] * POOL_HW[1], self.ped_fc)
            shapes["ped.fc.b"] = (self.ped_fc,)
        c = v.scan_frames
        for i, (f, (k, _)) in enumerate(zip(self.scan_channels, self.scan_kernels), 1):
            shapes[f"scan.conv{i}.w"] = (f, c, k)
            shapes[f"scan.conv{i}.b"] = (f,)
            c = f
        shapes["scan.fc.w"] = (c * self.scan_length(), self.scan_fc)
        shapes["scan.fc.b"] = (self.scan_fc,)
        shapes["goal.fc.w"] = (v.goal_dim, self.goal_fc)
        shapes["goal.fc.b"] = (self.goal_fc,)
        joint_in = self.scan_fc + self.goal_fc + (self.ped_fc if v.uses_ped_map else 0)
        shapes["joint.fc.w"] = (joint_in, self.joint_fc)
        shapes["joint.fc.b"] = (self.joint_fc,)
        out = self.n_actions if self.head == "policy" else 1
        shapes["head.w"] = (self.joint_fc, out)
        shapes["head.b"] = (out,)
        return shapes


def _fan_in(name: str, shape: tuple) -> int:
    if len(shape) == 2:
        return shape[0]
    return int(np.prod(shape[1:]))


class NavNet:
    """One network of the actor-critic pair; parameters live in `self.params`."""

    def __init__(self, arch: Architecture, rng: np.random.Generator | None = None,
                 dtype=np.float64, zero: bool = False, head_gain: float | None = None):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        if head_gain is None:
            head_gain = 0.01 if arch.head == "policy" else 1.0
        for name, shape in arch.param_shapes().items():
            if zero or name.endswith(".b"):
                data = np.zeros(shape, dtype=self.dtype)
            else:
                bound = np.sqrt(6.0 / _fan_in(name, shape))
                if name == "head.w":
                    bound *= head_gain
                data = rng.uniform(-bound, bound, shape).astype(self.dtype)
            self.params[name] = Tensor(data, requires_grad=True, name=name)
        self._zero_ped = None  # (param arrays, features) for the empty-map shortcut

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for k, p in self.params.items():
            if state[k].shape != p.data.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.data.shape}")
            p.data = np.array(state[k], dtype=self.dtype)

    # -- encoders ----------------------------------------------------------
    def encode_ped(self, ped: np.ndarray, grad: bool = True) -> Tensor:
        P = self.params
        n = ped.shape[0]
        # an all-empty map encodes to the same features for every sample, so
        # the convolution stack runs once and the result is broadcast
        shared = not np.any(ped)
        if shared and not grad:
            keys = [p.data for k, p in P.items() if k.startswith("ped.")]
            c = self._zero_ped
            if c is None or len(c[0]) != len(keys) or any(a is not b for a, b in zip(c[0], keys)):
                feats = self.encode_ped(np.zeros((1,) + ped.shape[1:]), grad=True).data
                self._zero_ped = c = (keys, feats)
            return Tensor(np.repeat(c[1], n, axis=0))
        h = Tensor(np.zeros((1,) + ped.shape[1:], self.dtype) if shared else ped.astype(self.dtype))
        for i in range(1, len(self.arch.ped_channels) + 1):
            h = ag.relu(ag.conv2d(h, P[f"ped.conv{i}.w"], P[f"ped.conv{i}.b"], stride=1, padding=1))
        h = ag.flatten(ag.avg_pool2d(h, POOL_HW))
        h = ag.relu(ag.linear(h, P["ped.fc.w"], P["ped.fc.b"]))
        return ag.broadcast_batch(h, n) if shared else h

    def encode_scan(self, scan: np.ndarray) -> Tensor:
        P = self.params
        h = Tensor(scan.astype(self.dtype))
        for i, (_, (_, s)) in enumerate(zip(self.arch.scan_channels, self.arch.scan_kernels), 1):
            h = ag.relu(ag.conv1d(h, P[f"scan.conv{i}.w"], P[f"scan.conv{i}.b"], stride=s))
        return ag.relu(ag.linear(ag.flatten(h), P["scan.fc.w"], P["scan.fc.b"]))

    def scan_first_layer(self, scan: np.ndarray) -> np.ndarray:
        """Post-ReLU activations of the first scan convolution, (N, 32, 239)."""
        P = self.params
        k, s = self.arch.scan_kernels[0]
        h = ag.conv1d(Tensor(scan.astype(self.dtype)), P["scan.conv1.w"], P["scan.conv1.b"], stride=s)
        return ag.relu(h).data

    def forward(self, batch: dict[str, np.ndarray], grad: bool = True) -> Tensor:
        """Logits (N, 28) for a policy net, values (N, 1) for a value net.

        With `grad=False` the result may reuse cached features and must not be
        differentiated.
        """
        P = self.params
        parts = []
        if self.arch.v.uses_ped_map:
            parts.append(self.encode_ped(batch["ped"], grad))
        parts.append(self.encode_scan(batch["scan"]))
        parts.append(ag.relu(ag.linear(Tensor(batch["goal"].astype(self.dtype)),
                                       P["goal.fc.w"], P["goal.fc.b"])))
        h = ag.relu(ag.linear(ag.concat(parts, axis=1), P["joint.fc.w"], P["joint.fc.b"]))
        return ag.linear(h, P["head.w"], P["head.b"])


def stack_observations(obs: Sequence[ObservationBundle] | ObservationBundle) -> dict[str, np.ndarray]:
    if isinstance(obs, ObservationBundle):
        obs = [obs]
    enc = [o.encode() for o in obs]
    out = {"goal": np.stack([e["goal"] for e in enc]), "scan": np.stack([e["scan"] for e in enc])}
    if "ped" in enc[0]:
        out["ped"] = np.stack([e["ped"] for e in enc])
    return out


def _as_batch(obs) -> dict[str, np.ndarray]:
    return obs if isinstance(obs, dict) else stack_observations(obs)


def forward_policy(net: NavNet, obs) -> np.ndarray:
    """Action probabilities, shape (N, 28) (or (28,) for a single bundle)."""
    single = isinstance(obs, ObservationBundle)
    probs = ag.softmax(net.forward(_as_batch(obs), grad=False)).data
    return probs[0] if single else probs


def forward_value(net: NavNet, obs):
    single = isinstance(obs, ObservationBundle)
    v = net.forward(_as_batch(obs), grad=False).data[:, 0]
    return float(v[0]) if single else v
