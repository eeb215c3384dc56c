"""The fourteen acceptance criteria, one test each (`test_cNN_*`).

A summary line per criterion is printed at the end of the pytest run.
"""

import math
import time
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from locnav.actions import CATALOG, N_ACTIONS
from locnav.agent import ActorCritic, Trainer
from locnav.cli import main as cli_main
from locnav.config import config_from_dict, load_config
from locnav.crowd import OrcaParams, PedestrianState, orca_velocity
from locnav.env import NavEnv
from locnav.eval import DwaPolicy, compute_metrics, render_activations, run_episodes
from locnav.localization import init_belief, localize_step
from locnav.nn import autograd as ag
from locnav.reward import RewardParams, StepOutcome, compute_reward
from locnav.localization import BeliefSummary
from locnav.sensors import (BeamModelParams, ScanObservation, apply_beam_noise, apply_odom_noise,
                            beam_density, integrate_unicycle, odometry_increment)
from locnav.world import N_BEAMS, Pose2D, rasterize, raycast_many, scan_ground_truth, wrap_angle

import conftest
from nn_helpers import directional_errors, random_batch, small_net
from oracles import naive_conv1d, random_world, ray_march

pytestmark = pytest.mark.acceptance


def note(n, text):
    conftest.ACCEPTANCE[n] = text
    print(f"criterion {n}: {text}")


# 1 -----------------------------------------------------------------------------------------

def test_c01_raycast_oracle():
    rng = np.random.default_rng(2024)
    worst, spent = 0.0, 0.0
    ray_march(np.zeros((1, 4)), np.zeros((0, 3)), 0.0, 0.0, np.zeros(1), 1.0, 0.1)   # jit warm-up
    for _ in range(10):
        segs, circ = random_world(rng)
        o = rng.uniform(0.5, 9.5, 2)
        ang = rng.uniform(-math.pi, math.pi, 1000)
        t0 = time.perf_counter()
        fast = raycast_many(segs, circ, o[0], o[1], ang, 12.0)
        spent += time.perf_counter() - t0
        slow = ray_march(segs, circ, o[0], o[1], ang, 12.0, 1e-3)
        worst = max(worst, float(np.max(np.abs(fast - slow))))
    note(1, f"10000 rays, max |err| {worst:.2e} m, {spent:.3f} s")
    assert worst < 1e-3 and spent < 5.0


# 2 -----------------------------------------------------------------------------------------

def test_c02_beam_density_normalization():
    p = BeamModelParams()
    rng = np.random.default_rng(3)
    z = np.linspace(0.0, p.max_range, 1_200_001)
    totals = []
    for e in rng.uniform(0.05, p.max_range, 20):
        totals.append(np.trapezoid(beam_density(z, np.full_like(z, e), p), z))
    dev = float(np.max(np.abs(np.array(totals) - 1.0)))
    note(2, f"20 expected ranges, max |integral - 1| {dev:.2e}")
    assert dev < 1e-2


# 3 -----------------------------------------------------------------------------------------

def test_c03_beam_noise_mixture():
    p = BeamModelParams()
    rng = np.random.default_rng(5)
    truth = ScanObservation(np.full(N_BEAMS, 6.0))
    z = np.concatenate([apply_beam_noise(truth, p, rng).ranges for _ in range(1389)])
    n = len(z)
    # a beam is "hit" if it lands within 5 sigma of the truth, "max" if it reads max range;
    # random readings landing in the hit window are accounted for
    win = 5 * p.sigma_hit
    p_hit_window = 2 * win / p.max_range
    from scipy.stats import norm
    in_win = 2 * norm.cdf(5) - 1
    expect = {"hit": p.z_hit * in_win + p.z_rand * p_hit_window, "max": p.z_max}
    expect["rand"] = 1 - expect["hit"] - expect["max"]
    got = {"max": float(np.mean(z == p.max_range)), "hit": float(np.mean(np.abs(z - 6.0) < win))}
    got["rand"] = 1 - got["hit"] - got["max"]
    ok = all(abs(got[k] - expect[k]) < 3 * math.sqrt(expect[k] * (1 - expect[k]) / n) for k in expect)
    note(3, f"{n} samples, fractions hit/max/rand "
            f"{got['hit']:.5f}/{got['max']:.5f}/{got['rand']:.5f}")
    assert n >= 1_000_000 and ok


# 4 -----------------------------------------------------------------------------------------

LOOP = [(12.5, 7.5), (12.5, 12.5), (8.0, 12.5), (8.0, 7.5)]


def test_c04_localization_tracking(hybrid):
    t0 = time.perf_counter()
    cfg = config_from_dict({"seed": 0})
    ep = cfg.env_params()
    grid = rasterize(hybrid.world)
    rng = np.random.default_rng(11)
    gt = Pose2D(8.0, 7.5, 0.0)
    pset = init_belief(gt, ep.amcl.init_spread, ep.amcl.min_particles, rng)
    wp, pos_err, yaw_err = 0, [], []
    for k in range(600):
        tx, ty = LOOP[wp]
        if math.hypot(tx - gt.x, ty - gt.y) < 0.3:
            wp = (wp + 1) % len(LOOP)
            tx, ty = LOOP[wp]
        err = wrap_angle(math.atan2(ty - gt.y, tx - gt.x) - gt.yaw)
        w = float(np.clip(2.0 * err, -0.9, 0.9))
        v = 0.4 if abs(err) < 0.3 else 0.05
        ve, we = apply_odom_noise(v, w, ep.odom, rng)
        gt = integrate_unicycle(gt, ve, we, 0.1)
        scan = apply_beam_noise(scan_ground_truth(hybrid.world, [], gt), ep.beam, rng)
        pset, b = localize_step(pset, odometry_increment(v, w, 0.1), scan, grid, ep.amcl, rng)
        if k >= 20:
            pos_err.append(b.mean.distance_to(gt))
            yaw_err.append(abs(wrap_angle(b.mean.yaw - gt.yaw)))
    spent = time.perf_counter() - t0
    ep_mean, ea_mean = float(np.mean(pos_err)), float(np.mean(yaw_err))
    note(4, f"60 s loop, mean position error {ep_mean:.3f} m, mean yaw error {ea_mean:.3f} rad, "
            f"{spent:.1f} s")
    assert ep_mean < 0.5 and ea_mean < 0.15 and spent < 120


# 5 -----------------------------------------------------------------------------------------

G = Pose2D(10.0, 0.0)
PI = math.pi


def _case(prev_gt, cur_gt, prev_est=None, cur_est=None, var=(0.0, 0.0, 0.0), collided=False, k=1,
          params=RewardParams()):
    prev_gt, cur_gt = Pose2D(*prev_gt), Pose2D(*cur_gt)
    prev_est = Pose2D(*prev_est) if prev_est else prev_gt
    cur_est = Pose2D(*cur_est) if cur_est else cur_gt
    return compute_reward(prev_gt, cur_gt, prev_est, cur_est, G, BeliefSummary(cur_est, *var),
                          collided, k, params)


STD = RewardParams(sigma_mode="std")
# (transition kwargs, expected (app, pose, arr, col, lost, step), expected outcome)
REWARD_CASES = [
    (dict(prev_gt=(0, 0, 0), cur_gt=(1, 0, 0)), (200, 0, 0, 0, 0, -6), "running"),
    (dict(prev_gt=(0, 0, 0), cur_gt=(1, 0, 0), var=(0.5, 0.25, 0.25)), (100, 0, 0, 0, 0, -6), "running"),
    (dict(prev_gt=(0, 0, 0), cur_gt=(1, 0, 0), var=(0.25, 0.25, 0.25), params=STD), (80, 0, 0, 0, 0, -6), "running"),
    (dict(prev_gt=(1, 0, 0), cur_gt=(0, 0, 0)), (-200, 0, 0, 0, 0, -6), "running"),
    (dict(prev_gt=(7, 4, 0), cur_gt=(6, 3, 0)), (0, 0, 0, 0, 0, -6), "running"),
    (dict(prev_gt=(10, 5, 0), cur_gt=(10, 3, 0), var=(1.0, 1.0, 2.0)), (80, 0, 0, 0, 0, -6), "running"),
    (dict(prev_gt=(0, 0, 0), cur_gt=(0, 0, 0), prev_est=(0.3, 0.4, 0)), (0, 200, 0, 0, 0, -6), "running"),
    (dict(prev_gt=(0, 0, 0), cur_gt=(0, 0, 0), cur_est=(0.6, 0.8, 0)), (0, -400, 0, 0, 0, -6), "running"),
    (dict(prev_gt=(0, 0, 0), cur_gt=(0, 0, 0), prev_est=(0, 0, 0.1)), (0, 40, 0, 0, 0, -6), "running"),
    (dict(prev_gt=(0, 0, -PI + 0.05), cur_gt=(0, 0, 0), prev_est=(0, 0, PI - 0.05)), (0, 40, 0, 0, 0, -6), "running"),
    (dict(prev_gt=(9, 0, 0), cur_gt=(9.6, 0, 0)), (120, 0, 500, 0, 0, -6), "arrived"),
    (dict(prev_gt=(9, 0, 0), cur_gt=(9.5, 0, 0)), (100, 0, 0, 0, 0, -6), "running"),
    (dict(prev_gt=(9, 0, 0), cur_gt=(9.6, 0, 0), cur_est=(9, 0, 0)), (120, -240, 0, 0, 0, -6), "running"),
    (dict(prev_gt=(0, 0, 0), cur_gt=(1, 0, 0), collided=True), (200, 0, 0, -800, 0, -6), "collided"),
    (dict(prev_gt=(0, 0, 0), cur_gt=(0, 0, 0), cur_est=(0, 2.5, 0)), (0, -1000, 0, 0, -500, -6), "lost"),
    (dict(prev_gt=(0, 0, 0), cur_gt=(0, 0, 0), cur_est=(0, 2.0, 0)), (0, -800, 0, 0, 0, -6), "running"),
    (dict(prev_gt=(0, 0, 0), cur_gt=(0, 0, 0), cur_est=(0, 0, 0.26 * PI)), (0, -400 * 0.26 * PI, 0, 0, -500, -6), "lost"),
    (dict(prev_gt=(0, 0, 0), cur_gt=(0, 0, 0), cur_est=(0, 0, 0.25 * PI)), (0, -100 * PI, 0, 0, 0, -6), "running"),
    (dict(prev_gt=(9.7, 3, 0), cur_gt=(9.7, 0.3, 0), prev_est=(9.7, 3, 0), cur_est=(9.7, 0.3, 0.8 * PI),
          collided=True), (200 * (math.hypot(0.3, 3) - math.hypot(0.3, 0.3)), -320 * PI, 500, -800, -500, -6),
     "collided"),
    (dict(prev_gt=(0, 0, 0), cur_gt=(0, 0, 0), k=400), (0, 0, 0, 0, 0, -6), "timeout"),
]


def test_c05_reward_oracle():
    assert len(REWARD_CASES) == 20
    worst, outcomes_ok = 0.0, True
    for kw, want, outcome in REWARD_CASES:
        b = _case(**kw)
        got = (b.app, b.pose, b.arr, b.col, b.lost, b.step)
        worst = max(worst, max(abs(g - w) for g, w in zip(got, want)), abs(b.total - sum(want)))
        outcomes_ok &= b.terminal.value == outcome
    note(5, f"20 transitions, max |delta| {worst:.1e}, outcomes {'match' if outcomes_ok else 'DIFFER'}")
    assert worst < 1e-9 and outcomes_ok


# 6 -----------------------------------------------------------------------------------------

def test_c06_gradient_checks():
    from test_nn import layer_cases
    worst = {}
    for name, (params, fn) in layer_cases(np.random.default_rng(1)).items():
        worst[name] = directional_errors(fn, params, n_dirs=50).max()
    for variant in ("lndrl", "drl_laser"):
        for head in ("policy", "value"):
            net = small_net(variant, head, seed=2)
            brng = np.random.default_rng(5)
            for k, p in net.params.items():
                if k.endswith(".b"):
                    p.data = brng.normal(0, 0.1, p.data.shape)
            batch = random_batch(variant, n=2, seed=3)
            R = np.random.default_rng(4).normal(size=(2, N_ACTIONS if head == "policy" else 1))
            if head == "policy":
                fn = lambda: ag.sum(ag.mul(ag.log_softmax(net.forward(batch)), R))  # noqa: E731
            else:
                fn = lambda: ag.sum(ag.mul(net.forward(batch), R))  # noqa: E731
            worst[f"{variant}-{head}"] = directional_errors(fn, net.parameters(), n_dirs=50).max()
    top = max(worst, key=worst.get)
    note(6, f"{len(worst)} checks x 50 directions, worst relative error {worst[top]:.1e} ({top})")
    assert worst[top] < 1e-3


# 7 -----------------------------------------------------------------------------------------

def test_c07_action_catalog(room):
    want = {(v, w) for v in (0.0, 0.2, 0.4, 0.6) for w in (-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9)}
    got = {(round(v, 9), round(w, 9)) for v, w in CATALOG.pairs}
    ac = ActorCritic.create("lndrl", 0)
    env = NavEnv(room)
    obs = [env.reset(seed=s) for s in range(4)]
    from locnav.nn.network import stack_observations
    probs = ag.softmax(ac.policy.forward(stack_observations(obs), grad=False)).data
    dev = float(np.max(np.abs(probs.sum(axis=1) - 1.0)))
    note(7, f"{len(CATALOG)} actions, catalog {'matches' if got == want else 'DIFFERS'}, "
            f"max |sum p - 1| {dev:.1e}")
    assert len(CATALOG) == 28 and got == want and dev < 1e-6


# 8 -----------------------------------------------------------------------------------------

def _head_on(rng):
    r1, r2 = rng.uniform(0.2, 0.4, 2)
    off = rng.uniform(-0.2, 0.2)
    gap = rng.uniform(5.0, 9.0)
    s1, s2 = rng.uniform(0.8, 1.4, 2)
    agents = [PedestrianState((0.0, 0.0), (0.0, 0.0), r1, (gap, 0.0), s1, "orca", -1),
              PedestrianState((gap, off), (0.0, 0.0), r2, (0.0, off), s2, "orca", -1)]
    margin = math.inf
    for _ in range(int(gap / min(s1, s2) / 0.1) + 40):
        vels = [orca_velocity(i, agents, None, None, OrcaParams(), 0.1)[0] for i in range(2)]
        agents = [PedestrianState((a.position[0] + v[0] * 0.1, a.position[1] + v[1] * 0.1),
                                  (float(v[0]), float(v[1])), a.radius, a.goal, a.preferred_speed,
                                  a.driver, -1) for a, v in zip(agents, vels)]
        margin = min(margin, math.dist(agents[0].position, agents[1].position) - r1 - r2)
    return margin


def test_c08_orca_head_on():
    rng = np.random.default_rng(8)
    margins = [_head_on(rng) for _ in range(100)]
    note(8, f"100 trials, smallest separation minus r1+r2 {min(margins):.4f} m")
    assert min(margins) > 0


# 9 -----------------------------------------------------------------------------------------

def test_c09_dwa_sanity(empty20):
    recs = run_episodes(empty20, DwaPolicy(), 50, 9)
    ratios = [r.duration / (math.dist(r.start[:2], r.goal) / 0.6) for r in recs]
    arrived = sum(r.outcome is StepOutcome.ARRIVED for r in recs)
    from locnav.baselines import dwa_plan
    straight = dwa_plan(ScanObservation(np.full(N_BEAMS, 12.0)), Pose2D(0, 0, 0), Pose2D(5, 0))
    note(9, f"{arrived}/50 arrived, worst time ratio {max(ratios):.2f}, straight-ahead {straight}")
    assert arrived == 50 and max(ratios) < 2.0 and straight == (0.6, 0.0)


# 10 ----------------------------------------------------------------------------------------

def test_c10_desk_scale_ppo(room, tmp_path):
    cfg = load_config("room_desk")
    t0 = time.perf_counter()
    tr = Trainer(room, cfg.ppo, cfg.variant, tmp_path / "desk", cfg.seed, cfg.env_params("estimate"))
    tr.run()
    hours = (time.perf_counter() - t0) / 3600
    eps = tr.episodes
    first = float(np.mean([e.reward for e in eps[:100]]))
    last = eps[-100:]
    ar = sum(e.outcome == "arrived" for e in last) / len(last)
    trail = float(np.mean([e.reward for e in last]))
    note(10, f"{tr.steps} steps, {len(eps)} episodes, trailing AR {ar:.2f}, reward first/trailing "
             f"{first:.1f}/{trail:.1f}, {hours * 60:.1f} min")
    assert len(eps) >= 200 and tr.steps <= 200_000
    assert ar >= 0.8 and trail > first and hours <= 4


# 11 ----------------------------------------------------------------------------------------

def test_c11_lost_semantics(room):
    env = NavEnv(room)
    env.reset(seed=11)
    env.inject_pose_error(2.1, 0.0)
    _, total, done, info = env.step(CATALOG.index(0.0, 0.0))
    note(11, f"outcome {info.outcome.value}, r_lost {info.reward.lost}")
    assert done and info.outcome is StepOutcome.LOST and info.reward.lost == -500.0


# 12 ----------------------------------------------------------------------------------------

def test_c12_eval_determinism(tmp_path):
    outs = []
    for run in ("a", "b"):
        code = cli_main(["eval", "--seed", "12", "--policy", "dwa", "--scenario", "room",
                         "--episodes", "20", "--out", str(tmp_path / run)])
        assert code == 0
        outs.append((tmp_path / run / "metrics.csv").read_bytes())
    note(12, f"two 20-episode evals, metrics CSV {'identical' if outs[0] == outs[1] else 'DIFFER'} "
             f"({len(outs[0])} bytes)")
    assert outs[0] == outs[1]


# 13 ----------------------------------------------------------------------------------------

def test_c13_metric_partition(room):
    from test_eval import synthetic_set
    real = compute_metrics(run_episodes(room, DwaPolicy(), 10, 13))
    synth = compute_metrics(synthetic_set())
    sums = [m.AR + m.CR + m.LR + m.SR for m in (real, synth)]
    exact = (synth.n, synth.AR, synth.CR, synth.LR, synth.SR) == (5, 0.4, 0.2, 0.2, 0.2) \
        and abs(synth.t[0] - 0.15) < 1e-12 and abs(synth.d[0] - 2.5) < 1e-12
    note(13, f"partition sums {sums[0]:.12f} / {sums[1]:.12f}, synthetic set "
             f"{'reproduced' if exact else 'MISMATCH'}")
    assert all(abs(s - 1) < 1e-9 for s in sums) and exact


# 14 ----------------------------------------------------------------------------------------

def test_c14_activation_panels(tmp_path):
    ac = ActorCritic.create("lndrl", 14)
    scan = ScanObservation(np.random.default_rng(14).uniform(0.3, 12.0, N_BEAMS))
    root = ET.parse(render_activations(ac, scan, tmp_path / "act.svg")).getroot()
    ns = "{http://www.w3.org/2000/svg}"
    panels = root.findall(f"{ns}g[@class='panel']")
    P = ac.policy.params
    x = (scan.ranges / scan.max_range)[None, None, :]
    ref = np.maximum(naive_conv1d(x, P["scan.conv1.w"].data, P["scan.conv1.b"].data, 3), 0.0)[0]
    rng = np.random.default_rng(0)
    worst = 0.0
    for c in rng.choice(len(panels), 8, replace=False):
        vals = np.array([float(e.get("data-value")) for e in panels[c].findall(f"{ns}circle")])
        worst = max(worst, float(np.max(np.abs(vals - ref[c]))))
    note(14, f"{len(panels)} panels, 8 sampled vs independent forward pass, max |delta| {worst:.1e}")
    assert len(panels) == 32 and worst < 1e-9
