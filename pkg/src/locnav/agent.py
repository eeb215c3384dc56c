"""PPO training: rollouts over an env pool, GAE, clipped-surrogate updates, checkpoints."""

from __future__ import annotations

import csv
import logging
import math
import pickle
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .actions import CATALOG, N_ACTIONS, ActionCatalog
from .env import EnvParams, NavEnv
from .nn import autograd as ag
from .nn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .nn.network import Architecture, NavNet, stack_observations
from .nn.optim import Adam
from .observation import ObservationBundle, Variant
from .reward import StepOutcome
from .world import ScenarioSpec

__all__ = ["ActionCatalog", "CATALOG", "PPOConfig", "Transition", "RolloutBatch", "ActorCritic",
           "collect_rollouts", "compute_gae", "ppo_update", "Trainer", "train", "resume",
           "load_actor_critic", "save_actor_critic"]

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.lnck"
STATE_NAME = "trainer_state.pkl"
CURVE_NAME = "curve.csv"
EPISODES_NAME = "episodes.csv"


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epochs: int = 4
    minibatch_size: int = 512
    learning_rate: float = 3e-4
    lr_decay: bool = True
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    horizon: int = 256
    n_envs: int = 8
    total_steps: int = 1_200_000
    max_grad_norm: float = 0.5
    reward_scale: float = 0.01       # rewards are multiplied by this before GAE
    window: int = 100                # trailing episodes for the curve statistics
    checkpoint_every: int = 10       # iterations
    stop_arrival_rate: float | None = None   # stop early once the trailing AR reaches this

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        if self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be > 0")
        if min(self.epochs, self.minibatch_size, self.horizon, self.n_envs) < 1:
            raise ValueError("epochs, minibatch_size, horizon and n_envs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class Transition:
    observation: ObservationBundle
    action: int
    log_prob: float
    reward: float
    value: float
    done: bool
    outcome: StepOutcome

    def __post_init__(self):
        if not 0 <= self.action < N_ACTIONS:
            raise ValueError(f"action index {self.action} outside [0, {N_ACTIONS})")
        if self.log_prob > 0:
            raise ValueError("log_prob must be <= 0")


@dataclass
class ActorCritic:
    policy: NavNet
    value: NavNet
    seed: int = 0

    @classmethod
    def create(cls, variant, seed: int, dtype=np.float64) -> "ActorCritic":
        rng = np.random.default_rng(seed)
        v = Variant(variant).value
        return cls(NavNet(Architecture(variant=v, head="policy"), rng, dtype),
                   NavNet(Architecture(variant=v, head="value"), rng, dtype), seed)

    @property
    def variant(self) -> Variant:
        return self.policy.arch.v


def save_actor_critic(path, ac: ActorCritic, meta: dict | None = None) -> Path:
    tensors = {f"policy/{k}": v for k, v in ac.policy.state_dict().items()}
    tensors.update({f"value/{k}": v for k, v in ac.value.state_dict().items()})
    arch = {"policy": ac.policy.arch.to_dict(), "value": ac.value.arch.to_dict()}
    return save_checkpoint(path, Checkpoint(tensors, arch, ac.seed, meta or {}))


def load_actor_critic(path) -> ActorCritic:
    ck = load_checkpoint(path)
    nets = {}
    for head in ("policy", "value"):
        arch = Architecture.from_dict(ck.architecture[head])
        state = {k.split("/", 1)[1]: v for k, v in ck.tensors.items() if k.startswith(head + "/")}
        dtype = next(iter(state.values())).dtype
        net = NavNet(arch, dtype=dtype, zero=True)
        net.load_state_dict(state)
        nets[head] = net
    return ActorCritic(nets["policy"], nets["value"], ck.seed)


# ---------------------------------------------------------------------------
# rollouts

@dataclass
class RolloutBatch:
    obs: dict[str, np.ndarray]   # leading axes (T, N)
    actions: np.ndarray          # (T, N) int
    log_probs: np.ndarray        # (T, N)
    rewards: np.ndarray          # (T, N) raw reward totals
    values: np.ndarray           # (T, N)
    dones: np.ndarray            # (T, N) bool
    outcomes: np.ndarray         # (T, N) StepOutcome values
    last_values: np.ndarray      # (N,) bootstrap values after the final step
    bundles: list = field(default_factory=list, repr=False)  # [T][N] ObservationBundle

    def __len__(self):
        return self.actions.size

    def transitions(self) -> list[Transition]:
        T, N = self.actions.shape
        return [Transition(self.bundles[t][i], int(self.actions[t, i]), float(self.log_probs[t, i]),
                           float(self.rewards[t, i]), float(self.values[t, i]), bool(self.dones[t, i]),
                           StepOutcome(self.outcomes[t, i]))
                for t in range(T) for i in range(N)]


def policy_step(ac: ActorCritic, obs: list[ObservationBundle], rng: np.random.Generator | None,
                deterministic: bool = False):
    """Sample (or argmax) actions for a list of observations. Returns actions, log-probs, values."""
    batch = stack_observations(obs)
    logp = ag.log_softmax(ac.policy.forward(batch, grad=False)).data
    values = ac.value.forward(batch, grad=False).data[:, 0]
    if deterministic:
        actions = logp.argmax(axis=1)
    else:
        # inverse-CDF draw, one uniform per row
        cdf = np.cumsum(np.exp(logp), axis=1)
        u = rng.random(len(obs)) * cdf[:, -1]
        actions = np.minimum((cdf < u[:, None]).sum(axis=1), logp.shape[1] - 1)
    return actions, logp[np.arange(len(obs)), actions], values


@dataclass
class EpisodeStats:
    index: int
    env: int
    steps_total: int
    length: int
    reward: float
    outcome: str


def collect_rollouts(envs: list[NavEnv], ac: ActorCritic, horizon: int, rng: np.random.Generator,
                     current_obs: list[ObservationBundle] | None = None,
                     ep_returns: list[float] | None = None, deterministic: bool = False,
                     on_episode=None) -> tuple[RolloutBatch, list[ObservationBundle]]:
    """Step every env `horizon` times; finished episodes reset automatically.

    Environments must already be reset (their current observations passed in or
    taken from `env.observe()`). `on_episode(env_index, length, reward, outcome)`
    is called for every finished episode.
    """
    n = len(envs)
    obs = list(current_obs) if current_obs is not None else [e.observe() for e in envs]
    if ep_returns is None:
        ep_returns = [0.0] * n
    bundles, acts, lps, rews, vals, dones, outs = [], [], [], [], [], [], []
    for _ in range(horizon):
        a, lp, v = policy_step(ac, obs, rng, deterministic)
        row_r, row_d, row_o = np.zeros(n), np.zeros(n, bool), []
        nxt = []
        for i, env in enumerate(envs):
            try:
                o, r, d, info = env.step(int(a[i]))
            except Exception as exc:
                raise RuntimeError(f"env {i} failed at step {env.t} (gt={env.gt}, goal={env.goal})") from exc
            ep_returns[i] += r
            row_r[i], row_d[i] = r, d
            row_o.append(info.outcome.value)
            if d:
                if on_episode is not None:
                    on_episode(i, env.t, ep_returns[i], info.outcome.value)
                ep_returns[i] = 0.0
                o = env.reset(seed=env.rng.integers(2 ** 63))
            nxt.append(o)
        bundles.append(obs)
        acts.append(a)
        lps.append(lp)
        rews.append(row_r)
        vals.append(v)
        dones.append(row_d)
        outs.append(row_o)
        obs = nxt
    last_v = policy_step(ac, obs, None, True)[2]
    stacked = [stack_observations(b) for b in bundles]
    batch = RolloutBatch({k: np.stack([s[k] for s in stacked]) for k in stacked[0]},
                         np.array(acts, dtype=np.int64), np.array(lps), np.array(rews),
                         np.array(vals), np.array(dones), np.array(outs, dtype=object), last_v, bundles)
    return batch, obs


def compute_gae(rewards, values, dones, last_values, gamma: float, lam: float,
                normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates over (T, N) arrays; returns (advantages, returns).

    Returns are the unnormalized advantages plus values; advantages are
    normalized to zero mean, unit std over the whole batch when `normalize`.
    """
    rewards = np.asarray(rewards, float)
    values = np.asarray(values, float)
    notdone = 1.0 - np.asarray(dones, float)
    if rewards.ndim == 1:
        rewards, values, notdone = rewards[:, None], values[:, None], notdone[:, None]
        last_values = np.atleast_1d(last_values)
        squeeze = True
    else:
        squeeze = False
    T = len(rewards)
    adv = np.zeros_like(rewards)
    nxt_v = np.asarray(last_values, float)
    nxt_a = np.zeros(rewards.shape[1])
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * nxt_v * notdone[t] - values[t]
        nxt_a = delta + gamma * lam * notdone[t] * nxt_a
        adv[t] = nxt_a
        nxt_v = values[t]
    ret = adv + values
    if normalize:
        std = adv.std()
        adv = (adv - adv.mean()) / (std if std > 1e-12 else 1.0)
    if squeeze:
        return adv[:, 0], ret[:, 0]
    return adv, ret


# ---------------------------------------------------------------------------
# update

@dataclass
class LossReport:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float
    grad_norm: float

    def __post_init__(self):
        if self.approx_kl < -1e-3:
            log.warning("approx KL %.3g below the estimator noise bound", self.approx_kl)


def ppo_losses(ac: ActorCritic, mb: dict, actions, old_logp, adv, ret, cfg: PPOConfig):
    """Build the minibatch loss graphs. Returns (policy objective to minimize, value loss, stats)."""
    logp_all = ag.log_softmax(ac.policy.forward(mb))
    logp = ag.take(logp_all, actions)
    ratio = ag.exp(ag.add(logp, -old_logp))
    eps = cfg.clip_epsilon
    surr = ag.minimum(ag.mul(ratio, adv), ag.mul(ag.clip(ratio, 1 - eps, 1 + eps), adv))
    probs = np.exp(logp_all.data)
    entropy = ag.neg(ag.mean(ag.sum(ag.mul(ag.exp(logp_all), logp_all), axis=1)))
    pi_loss = ag.add(ag.neg(ag.mean(surr)), ag.mul(entropy, -cfg.entropy_coef))
    v = ag.reshape(ac.value.forward(mb), (-1,))
    v_loss = ag.mul(ag.mean(ag.square(ag.add(v, -ret))), cfg.value_coef)
    r = ratio.data
    stats = {
        "policy_loss": float(-surr.data.mean()),
        "value_loss": float(((v.data - ret) ** 2).mean()),
        "entropy": float(entropy.data),
        "clip_fraction": float(np.mean(np.abs(r - 1) > eps)),
        "approx_kl": float(np.mean((r - 1) - np.log(r))),
        "max_prob": float(probs.max(axis=1).mean()),
    }
    return pi_loss, v_loss, stats


def ppo_update(ac: ActorCritic, batch: dict, cfg: PPOConfig, opt_pi: Adam, opt_v: Adam,
               rng: np.random.Generator) -> LossReport:
    """Several epochs of minibatch Adam steps on the clipped surrogate and value loss.

    `batch` holds flat arrays: obs (dict), actions, log_probs, advantages, returns.
    """
    n = len(batch["actions"])
    if n == 0:
        raise ValueError("empty batch")
    acc = {k: [] for k in ("policy_loss", "value_loss", "entropy", "clip_fraction", "approx_kl")}
    norms = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch_size):
            idx = perm[lo:lo + cfg.minibatch_size]
            mb = {k: v[idx] for k, v in batch["obs"].items()}
            ac.policy.zero_grad()
            ac.value.zero_grad()
            pi_loss, v_loss, st = ppo_losses(ac, mb, batch["actions"][idx], batch["log_probs"][idx],
                                             batch["advantages"][idx], batch["returns"][idx], cfg)
            if not (np.isfinite(pi_loss.data) and np.isfinite(v_loss.data)):
                raise NonFiniteLoss(f"non-finite loss: policy={pi_loss.data} value={v_loss.data} "
                                    f"stats={st}")
            pi_loss.backward()
            v_loss.backward()
            norms.append(opt_pi.step())
            opt_v.step()
            for k in acc:
                acc[k].append(st[k])
    return LossReport(**{k: float(np.mean(v)) for k, v in acc.items()},
                      grad_norm=float(np.mean(norms)))


def flatten_batch(rb: RolloutBatch, adv: np.ndarray, ret: np.ndarray) -> dict:
    return {
        "obs": {k: v.reshape((-1,) + v.shape[2:]) for k, v in rb.obs.items()},
        "actions": rb.actions.reshape(-1),
        "log_probs": rb.log_probs.reshape(-1),
        "advantages": adv.reshape(-1),
        "returns": ret.reshape(-1),
    }


# ---------------------------------------------------------------------------
# training driver

CURVE_FIELDS = ["iteration", "steps", "episodes", "mean_reward", "AR", "CR", "LR", "SR",
                "policy_loss", "value_loss", "entropy", "clip_fraction", "approx_kl", "lr", "seconds"]


class Trainer:
    """Holds the whole mutable training state so it can be pickled for resumption."""

    def __init__(self, scenario: ScenarioSpec, cfg: PPOConfig, variant, out_dir, seed: int,
                 env_params: EnvParams = EnvParams(), dtype=np.float64):
        self.scenario = scenario
        self.cfg = cfg
        self.variant = Variant(variant)
        self.out_dir = Path(out_dir)
        self.seed = int(seed)
        ss = np.random.SeedSequence(self.seed)
        s_net, s_agent, s_envs = ss.spawn(3)
        self.ac = ActorCritic.create(self.variant, int(s_net.generate_state(1)[0]), dtype)
        self.opt_pi = Adam(self.ac.policy.params, cfg.learning_rate, max_grad_norm=cfg.max_grad_norm)
        self.opt_v = Adam(self.ac.value.params, cfg.learning_rate, max_grad_norm=cfg.max_grad_norm)
        self.rng = np.random.default_rng(s_agent)
        self.envs = [NavEnv(scenario, self.variant, env_params) for _ in range(cfg.n_envs)]
        self.obs = [e.reset(seed=s) for e, s in zip(self.envs, s_envs.spawn(cfg.n_envs))]
        self.ep_returns = [0.0] * cfg.n_envs
        self.steps = 0
        self.iteration = 0
        self.episodes: list[EpisodeStats] = []
        self.elapsed = 0.0

    # -- bookkeeping -------------------------------------------------------
    def _record(self, env_i, length, reward, outcome):
        self.episodes.append(EpisodeStats(len(self.episodes), env_i, self.steps, length, reward, outcome))

    def trailing(self) -> dict:
        w = self.episodes[-self.cfg.window:]
        if not w:
            return {"mean_reward": float("nan"), "AR": float("nan"), "CR": float("nan"),
                    "LR": float("nan"), "SR": float("nan")}
        outs = [e.outcome for e in w]
        return {"mean_reward": float(np.mean([e.reward for e in w])),
                "AR": outs.count("arrived") / len(w), "CR": outs.count("collided") / len(w),
                "LR": outs.count("lost") / len(w), "SR": outs.count("timeout") / len(w)}

    def current_lr(self) -> float:
        c = self.cfg
        if not c.lr_decay:
            return c.learning_rate
        return c.learning_rate * max(1.0 - self.steps / c.total_steps, 0.05)

    # -- one iteration -----------------------------------------------------
    def iterate(self) -> dict:
        c = self.cfg
        t0 = time.perf_counter()
        lr = self.current_lr()
        self.opt_pi.lr = self.opt_v.lr = lr

        def on_ep(i, length, reward, outcome):
            self._record(i, length, reward, outcome)

        rb, self.obs = collect_rollouts(self.envs, self.ac, c.horizon, self.rng, self.obs,
                                        self.ep_returns, on_episode=on_ep)
        self.steps += len(rb)
        adv, ret = compute_gae(rb.rewards * c.reward_scale, rb.values, rb.dones, rb.last_values,
                               c.gamma, c.gae_lambda)
        report = ppo_update(self.ac, flatten_batch(rb, adv, ret), c, self.opt_pi, self.opt_v, self.rng)
        self.iteration += 1
        self.elapsed += time.perf_counter() - t0
        row = {"iteration": self.iteration, "steps": self.steps, "episodes": len(self.episodes),
               **self.trailing(), **{k: v for k, v in asdict(report).items() if k != "grad_norm"},
               "lr": lr, "seconds": self.elapsed}
        return row

    # -- persistence -------------------------------------------------------
    def save(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        save_actor_critic(self.out_dir / CHECKPOINT_NAME, self.ac,
                          {"variant": self.variant.value, "steps": self.steps,
                           "iteration": self.iteration, "scenario": self.scenario.name})
        tmp = self.out_dir / (STATE_NAME + ".tmp")
        with open(tmp, "wb") as f:
            pickle.dump(self, f, protocol=pickle.HIGHEST_PROTOCOL)
        tmp.replace(self.out_dir / STATE_NAME)
        with open(self.out_dir / EPISODES_NAME, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["episode", "env", "steps", "length", "reward", "outcome"])
            for e in self.episodes:
                w.writerow([e.index, e.env, e.steps_total, e.length, f"{e.reward:.6f}", e.outcome])

    def run(self, max_iterations: int | None = None) -> ActorCritic:
        c = self.cfg
        self.out_dir.mkdir(parents=True, exist_ok=True)
        curve = self.out_dir / CURVE_NAME
        if self.iteration == 0 or not curve.exists():
            with open(curve, "w", newline="") as f:
                csv.writer(f).writerow(CURVE_FIELDS)
        done_iters = 0
        while self.steps < c.total_steps:
            if max_iterations is not None and done_iters >= max_iterations:
                break
            row = self.iterate()
            done_iters += 1
            with open(curve, "a", newline="") as f:
                csv.writer(f).writerow([_fmt(row[k]) for k in CURVE_FIELDS])
            log.info("iter %d steps %d episodes %d reward %.1f AR %.2f CR %.2f LR %.2f SR %.2f "
                     "ent %.3f kl %.4f", row["iteration"], row["steps"], row["episodes"],
                     row["mean_reward"], row["AR"], row["CR"], row["LR"], row["SR"],
                     row["entropy"], row["approx_kl"])
            # the trailing window must not overlap the first one, so the learning
            # gain over the opening episodes stays measurable
            stop = (c.stop_arrival_rate is not None and len(self.episodes) >= 2 * c.window
                    and row["AR"] >= c.stop_arrival_rate)
            if self.iteration % c.checkpoint_every == 0 or stop:
                self.save()
            if stop:
                log.info("trailing arrival rate %.2f reached; stopping", row["AR"])
                break
        self.save()
        return self.ac


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.6g}"
    return str(x)


def train(scenario: ScenarioSpec, cfg: PPOConfig, variant, out_dir, seed: int,
          env_params: EnvParams = EnvParams(), max_iterations: int | None = None) -> Trainer:
    """Train from scratch; checkpoint, curve CSV and episode log land in `out_dir`."""
    tr = Trainer(scenario, cfg, variant, out_dir, seed, env_params)
    tr.run(max_iterations)
    return tr


def _truncate_curve(path: Path, iteration: int):
    # rows written after the last saved state are replayed by the resumed run
    if not path.exists():
        return
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    keep = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= iteration]
    with open(path, "w", newline="") as f:
        csv.writer(f).writerows(keep)


def resume(out_dir, max_iterations: int | None = None, total_steps: int | None = None) -> Trainer:
    """Continue a run from the state saved next to its checkpoint."""
    path = Path(out_dir) / STATE_NAME
    if not path.is_file():
        raise FileNotFoundError(f"no trainer state at {path}")
    with open(path, "rb") as f:
        tr: Trainer = pickle.load(f)
    tr.out_dir = Path(out_dir)
    _truncate_curve(tr.out_dir / CURVE_NAME, tr.iteration)
    if total_steps is not None:
        tr.cfg = replace(tr.cfg, total_steps=total_steps)
    tr.run(max_iterations)
    return tr
