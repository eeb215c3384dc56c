"""Benchmark runner, outcome metrics and SVG/PPM renderers."""

from __future__ import annotations

import csv
import io
import logging
import math
import xml.etree.ElementTree as ET
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .agent import ActorCritic, load_actor_critic, policy_step
from .baselines import DwaParams, dwa_plan
from .env import EnvParams, NavEnv
from .observation import Variant
from .reward import StepOutcome
from .sensors import ScanObservation
from .world import BEAM_OFFSETS, ScenarioSpec, wrap_angle

log = logging.getLogger(__name__)

METRIC_FIELDS = ["policy", "scenario", "n", "AR", "CR", "LR", "SR", "t_mean", "t_std", "d_mean",
                 "d_std", "ep_mean", "ep_std", "ea_mean", "ea_std", "sv_mean", "sv_std", "seed"]
TRAJ_FIELDS = ["t", "gt_x", "gt_y", "gt_yaw", "est_x", "est_y", "est_yaw", "var_x", "var_y",
               "var_yaw", "v", "w", "r_app", "r_pose", "r_arr", "r_col", "r_lost", "r_step",
               "r_total", "outcome", "peds"]


# ---------------------------------------------------------------------------
# policies

class DwaPolicy:
    name = "dwa"
    variant = Variant.LNDRL   # observation builder is unused; the planner reads the raw scan

    def __init__(self, params: DwaParams = DwaParams()):
        self.params = params

    def act(self, env: NavEnv):
        return dwa_plan(env.scans[-1], env.belief.mean, env.goal, env.last_cmd, self.params)


class NetworkPolicy:
    """Greedy (argmax) action from a trained actor."""

    def __init__(self, ac: ActorCritic, name: str | None = None):
        self.ac = ac
        self.variant = ac.variant
        self.name = name or ac.variant.value

    @classmethod
    def from_checkpoint(cls, path) -> "NetworkPolicy":
        return cls(load_actor_critic(path))

    def act(self, env: NavEnv):
        return int(policy_step(self.ac, [env.observe()], None, deterministic=True)[0][0])


# ---------------------------------------------------------------------------
# records

@dataclass
class StepRow:
    t: float
    gt: tuple[float, float, float]
    est: tuple[float, float, float]
    var: tuple[float, float, float]
    action: tuple[float, float]
    reward: dict
    outcome: str
    peds: list[tuple[float, float]]


@dataclass
class EpisodeRecord:
    scenario: str
    policy: str
    seed: str
    start: tuple[float, float, float]
    goal: tuple[float, float]
    rows: list[StepRow]
    outcome: StepOutcome
    duration: float
    path_length: float
    first_scan: np.ndarray | None = field(default=None, repr=False)
    fault: str | None = None

    def pos_errors(self) -> np.ndarray:
        return np.array([math.hypot(r.est[0] - r.gt[0], r.est[1] - r.gt[1]) for r in self.rows])

    def yaw_errors(self) -> np.ndarray:
        return np.array([abs(wrap_angle(r.est[2] - r.gt[2])) for r in self.rows])

    def variance_sums(self) -> np.ndarray:
        return np.array([sum(r.var) for r in self.rows])


def _path_length(start, rows) -> float:
    pts = np.array([start[:2]] + [r.gt[:2] for r in rows])
    return float(np.hypot(*np.diff(pts, axis=0).T).sum())


def _seed_label(seed) -> str:
    if isinstance(seed, np.random.SeedSequence):
        return f"{seed.entropy}/" + "/".join(map(str, seed.spawn_key))
    return str(seed)


def run_episode(scenario: ScenarioSpec, policy, seed, env_params: EnvParams | None = None) -> EpisodeRecord:
    """Roll out one closed-loop episode. `seed` may be an int or a SeedSequence."""
    params = env_params or EnvParams(arrival_from="ground_truth")
    env = NavEnv(scenario, policy.variant, params)
    env.reset(seed=seed)
    start = tuple(env.gt.as_array())
    first_scan = env.scans[-1].ranges.copy()
    rows = []
    outcome = StepOutcome.RUNNING
    fault = None
    seed_label = _seed_label(seed)
    try:
        while True:
            _, _, done, info = env.step(policy.act(env))
            b = info.belief
            rows.append(StepRow(env.t * params.dt, tuple(info.gt.as_array()),
                                tuple(b.mean.as_array()), (b.var_x, b.var_y, b.var_yaw),
                                info.action, info.reward.as_dict(), info.outcome.value,
                                [tuple(p.position) for p in info.peds]))
            if done:
                outcome = info.outcome
                break
    except Exception as exc:  # recorded, excluded from metrics
        fault = f"{type(exc).__name__}: {exc}"
        log.warning("episode fault (%s, seed %s): %s", scenario.name, seed_label, fault)
    return EpisodeRecord(scenario.name, policy.name, seed_label, start,
                         (env.goal.x, env.goal.y), rows, outcome, len(rows) * params.dt,
                         _path_length(start, rows), first_scan, fault)


# ---------------------------------------------------------------------------
# metrics

@dataclass
class MetricsReport:
    policy: str
    scenario: str
    n: int
    AR: float
    CR: float
    LR: float
    SR: float
    t: tuple[float, float]
    d: tuple[float, float]
    e_p: tuple[float, float]
    e_a: tuple[float, float]
    sv: tuple[float, float]
    seed: int | str = ""

    def row(self) -> list[str]:
        f = _fmt
        return [self.policy, self.scenario, str(self.n), f(self.AR), f(self.CR), f(self.LR),
                f(self.SR), f(self.t[0]), f(self.t[1]), f(self.d[0]), f(self.d[1]), f(self.e_p[0]),
                f(self.e_p[1]), f(self.e_a[0]), f(self.e_a[1]), f(self.sv[0]), f(self.sv[1]),
                str(self.seed)]


def _fmt(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


def _mean_std(a) -> tuple[float, float]:
    a = np.asarray(a, float)
    if a.size == 0:
        return (float("nan"), float("nan"))
    return (float(a.mean()), float(a.std()))


def compute_metrics(records: Sequence[EpisodeRecord], policy: str = "", scenario: str = "",
                    seed="") -> MetricsReport:
    """Outcome rates over valid episodes; time and distance over arrivals; errors over all steps."""
    valid = [r for r in records if r.fault is None]
    if len(valid) < len(records):
        log.warning("%d faulty episode(s) excluded from metrics", len(records) - len(valid))
    n = len(valid)
    if n == 0:
        raise ValueError("no valid episodes")
    outs = [r.outcome for r in valid]
    rate = {o: sum(x is o for x in outs) / n for o in StepOutcome}
    arrived = [r for r in valid if r.outcome is StepOutcome.ARRIVED]
    steps = [r for r in valid if r.rows]
    cat = (lambda f: np.concatenate([f(r) for r in steps]) if steps else np.array([]))
    return MetricsReport(
        policy or (valid[0].policy), scenario or valid[0].scenario, n,
        rate[StepOutcome.ARRIVED], rate[StepOutcome.COLLIDED], rate[StepOutcome.LOST],
        rate[StepOutcome.TIMEOUT],
        _mean_std([r.duration for r in arrived]), _mean_std([r.path_length for r in arrived]),
        _mean_std(cat(EpisodeRecord.pos_errors)), _mean_std(cat(EpisodeRecord.yaw_errors)),
        _mean_std(cat(EpisodeRecord.variance_sums)), seed)


def episode_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def _run_indexed(args):
    scenario, policy, ss, env_params = args
    return run_episode(scenario, policy, ss, env_params)


def run_episodes(scenario: ScenarioSpec, policy, n_episodes: int, seed: int,
                 env_params: EnvParams | None = None, workers: int = 1) -> list[EpisodeRecord]:
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    jobs = [(scenario, policy, ss, env_params) for ss in episode_seeds(seed, n_episodes)]
    if workers <= 1:
        return [_run_indexed(j) for j in jobs]
    with ProcessPoolExecutor(workers) as ex:
        return list(ex.map(_run_indexed, jobs))   # map preserves episode order


def run_benchmark(scenario: ScenarioSpec, policy, n_episodes: int, seed: int,
                  env_params: EnvParams | None = None, workers: int = 1) -> MetricsReport:
    recs = run_episodes(scenario, policy, n_episodes, seed, env_params, workers)
    return compute_metrics(recs, policy.name, scenario.name, seed)


def metrics_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def write_metrics_csv(path, reports: Sequence[MetricsReport]) -> Path:
    path = Path(path)
    path.write_text(metrics_csv(reports))
    return path


def write_trajectory_csv(path, record: EpisodeRecord) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRAJ_FIELDS)
        blank = [""] * 15
        w.writerow(["", f"{record.goal[0]:.6f}", f"{record.goal[1]:.6f}", "", *blank, "goal", ""])
        w.writerow(["0.000000", *(f"{x:.6f}" for x in record.start), *blank, "start", ""])
        for r in record.rows:
            peds = ";".join(f"{x:.3f}:{y:.3f}" for x, y in r.peds)
            w.writerow([f"{r.t:.6f}", *(f"{x:.6f}" for x in r.gt), *(f"{x:.6f}" for x in r.est),
                        *(f"{x:.6g}" for x in r.var), f"{r.action[0]:.1f}", f"{r.action[1]:.1f}",
                        *(f"{r.reward[k]:.6f}" for k in ("r_app", "r_pose", "r_arr", "r_col",
                                                         "r_lost", "r_step", "r_total")),
                        r.outcome, peds])
    return path


def read_trajectory_csv(path, scenario: str = "", policy: str = "") -> EpisodeRecord:
    """Inverse of `write_trajectory_csv`."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if len(rows) < 3 or rows[0]["outcome"] != "goal" or rows[1]["outcome"] != "start":
        raise ValueError(f"{path}: not a trajectory file with recorded steps")
    goal = (float(rows[0]["gt_x"]), float(rows[0]["gt_y"]))
    start = tuple(float(rows[1][k]) for k in ("gt_x", "gt_y", "gt_yaw"))
    out = []
    for r in rows[2:]:
        peds = [tuple(map(float, p.split(":"))) for p in r["peds"].split(";") if p]
        out.append(StepRow(float(r["t"]), tuple(float(r[k]) for k in ("gt_x", "gt_y", "gt_yaw")),
                           tuple(float(r[k]) for k in ("est_x", "est_y", "est_yaw")),
                           tuple(float(r[k]) for k in ("var_x", "var_y", "var_yaw")),
                           (float(r["v"]), float(r["w"])),
                           {k: float(r[k]) for k in ("r_app", "r_pose", "r_arr", "r_col", "r_lost",
                                                     "r_step", "r_total")},
                           r["outcome"], peds))
    return EpisodeRecord(scenario, policy, "", start, goal, out,
                         StepOutcome(out[-1].outcome), out[-1].t, _path_length(start, out))


# ---------------------------------------------------------------------------
# rendering

_RAMP = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]], float)


def color_ramp(x) -> np.ndarray:
    """Map values in [0, 1] to RGB (uint8) along a dark-blue to yellow ramp."""
    x = np.clip(np.asarray(x, float), 0.0, 1.0) * (len(_RAMP) - 1)
    i = np.minimum(np.floor(x).astype(int), len(_RAMP) - 2)
    f = (x - i)[..., None]
    return np.rint(_RAMP[i] * (1 - f) + _RAMP[i + 1] * f).astype(np.uint8)


def _hex(rgb) -> str:
    return "#%02x%02x%02x" % tuple(int(c) for c in rgb)


def _pts(xy) -> str:
    return " ".join(f"{x:.3f},{y:.3f}" for x, y in xy)


def render_trajectory(record: EpisodeRecord, scenario: ScenarioSpec, out_path, scale: float = 30.0) -> Path:
    """Top view (walls, robot path, pedestrian paths, goal) above a per-step error chart.

    The robot path is one polyline with one vertex per step; each pedestrian
    gets its own polyline. The error chart uses <path> elements.
    """
    if not record.rows:
        raise ValueError("record has no steps")
    b = scenario.world.bounds
    W, H = (b.xmax - b.xmin) * scale, (b.ymax - b.ymin) * scale
    chart_h = 160.0
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=f"{W + 20:.0f}",
                     height=f"{H + chart_h + 50:.0f}", version="1.1")
    top = ET.SubElement(svg, "g", {"class": "top-view", "transform": "translate(10,10)"})

    def tx(x, y):
        return ((x - b.xmin) * scale, H - (y - b.ymin) * scale)

    ET.SubElement(top, "rect", {"class": "bounds", "x": "0", "y": "0", "width": f"{W:.3f}",
                                "height": f"{H:.3f}", "fill": "white", "stroke": "#999"})
    walls = ET.SubElement(top, "g", {"class": "walls", "stroke": "black", "stroke-width": "2"})
    for x1, y1, x2, y2 in scenario.world.segments:
        (a, c), (d, e) = tx(x1, y1), tx(x2, y2)
        ET.SubElement(walls, "line", x1=f"{a:.3f}", y1=f"{c:.3f}", x2=f"{d:.3f}", y2=f"{e:.3f}")
    n_peds = max((len(r.peds) for r in record.rows), default=0)
    for k in range(n_peds):
        track = [tx(*r.peds[k]) for r in record.rows if k < len(r.peds)]
        ET.SubElement(top, "polyline", {"class": "ped-path", "points": _pts(track), "fill": "none",
                                        "stroke": "#d95f02", "stroke-width": "1",
                                        "stroke-opacity": "0.6"})
    ET.SubElement(top, "polyline", {"class": "robot-path", "points": _pts([tx(*r.gt[:2]) for r in record.rows]),
                                    "fill": "none", "stroke": "#1b9e77", "stroke-width": "2"})
    gx, gy = tx(*record.goal)
    ET.SubElement(top, "circle", {"class": "goal", "cx": f"{gx:.3f}", "cy": f"{gy:.3f}",
                                  "r": f"{0.5 * scale:.3f}", "fill": "none", "stroke": "#e7298a"})
    sx, sy = tx(*record.start[:2])
    ET.SubElement(top, "circle", {"class": "start", "cx": f"{sx:.3f}", "cy": f"{sy:.3f}",
                                  "r": "4", "fill": "#1b9e77"})

    chart = ET.SubElement(svg, "g", {"class": "error-chart", "transform": f"translate(10,{H + 30:.0f})"})
    ET.SubElement(chart, "rect", {"x": "0", "y": "0", "width": f"{W:.3f}", "height": f"{chart_h:.3f}",
                                  "fill": "none", "stroke": "#999"})
    t = np.array([r.t for r in record.rows])
    span = max(t[-1], 1e-9)
    for cls, vals, color in (("error-position", record.pos_errors(), "#7570b3"),
                             ("error-yaw", record.yaw_errors(), "#e6ab02")):
        top_v = max(float(vals.max()), 1e-9)
        pts = [(ti / span * W, chart_h - v / top_v * (chart_h - 10)) for ti, v in zip(t, vals)]
        d = "M " + " L ".join(f"{x:.3f} {y:.3f}" for x, y in pts)
        p = ET.SubElement(chart, "path", {"class": cls, "d": d, "fill": "none", "stroke": color})
        p.set("data-max", f"{top_v:.6f}")
    label = ET.SubElement(chart, "text", {"x": "4", "y": "14", "font-size": "12"})
    label.text = f"{record.outcome.value}: position error (purple), yaw error (amber)"
    out_path = Path(out_path)
    ET.ElementTree(svg).write(out_path, encoding="utf-8", xml_declaration=True)
    return out_path


def first_layer_activations(ac: ActorCritic, scan: ScanObservation) -> np.ndarray:
    """(32, L) post-ReLU outputs of the first scan convolution for one scan."""
    frames = ac.variant.scan_frames
    x = np.repeat((scan.ranges / scan.max_range)[None, None, :], frames, axis=1)
    return ac.policy.scan_first_layer(x)[0]


def _receptive_angles(n_out: int) -> np.ndarray:
    # centre beam of each output position of the first convolution (k=5, s=3)
    centres = np.arange(n_out) * 3 + 2
    return BEAM_OFFSETS[np.minimum(centres, len(BEAM_OFFSETS) - 1)]


def render_activations(ac: ActorCritic | str | Path, scan: ScanObservation, out_path) -> Path:
    """One panel per first-layer scan filter. Each output position is drawn at the
    bearing of the beam it is centred on, coloured by its activation.

    `.ppm` paths get a raster (one 8-pixel strip per channel); anything else is SVG.
    """
    if not isinstance(ac, ActorCritic):
        ac = load_actor_critic(ac)
    acts = first_layer_activations(ac, scan)
    top = float(acts.max())
    norm = acts / top if top > 0 else np.zeros_like(acts)
    colors = color_ramp(norm)
    out_path = Path(out_path)
    if out_path.suffix.lower() == ".ppm":
        strip = 8
        img = np.repeat(colors, strip, axis=0)                 # (32*8, L, 3)
        hdr = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
        out_path.write_bytes(hdr + img.tobytes())
        return out_path

    angles = _receptive_angles(acts.shape[1])
    cols, size, radius = 8, 120.0, 50.0
    rows = math.ceil(len(acts) / cols)
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=f"{cols * size:.0f}",
                     height=f"{rows * size:.0f}", version="1.1")
    svg.set("data-max-activation", f"{top:.9g}")
    for c in range(len(acts)):
        ox, oy = (c % cols) * size, (c // cols) * size
        g = ET.SubElement(svg, "g", {"class": "panel", "data-channel": str(c),
                                     "transform": f"translate({ox:.1f},{oy:.1f})"})
        ET.SubElement(g, "rect", {"x": "1", "y": "1", "width": f"{size - 2:.1f}",
                                  "height": f"{size - 2:.1f}", "fill": "#f4f4f4"})
        cx, cy = size / 2, size / 2 + 20
        for j, a in enumerate(angles):
            # robot forward points up the panel, left to the left
            px, py = cx - radius * math.sin(a), cy - radius * math.cos(a)
            ET.SubElement(g, "circle", {"class": "cell", "cx": f"{px:.2f}", "cy": f"{py:.2f}",
                                        "r": "1.6", "fill": _hex(colors[c, j]),
                                        "data-index": str(j), "data-angle": f"{a:.6f}",
                                        "data-value": repr(float(acts[c, j]))})
        lbl = ET.SubElement(g, "text", {"x": "4", "y": "12", "font-size": "10"})
        lbl.text = f"filter {c}"
    ET.ElementTree(svg).write(out_path, encoding="utf-8", xml_declaration=True)
    return out_path


def load_scan(path) -> ScanObservation:
    """Read 720 ranges from a .npy file or a comma/whitespace separated text file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scan file not found: {path}")
    if path.suffix == ".npy":
        r = np.load(path)
    else:
        r = np.array(path.read_text().replace(",", " ").split(), dtype=float)
    return ScanObservation(np.asarray(r, float).reshape(-1))


def save_scan(path, ranges) -> Path:
    path = Path(path)
    path.write_text(",".join(f"{x:.6f}" for x in np.asarray(ranges).reshape(-1)) + "\n")
    return path
