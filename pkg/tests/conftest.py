import math

import numpy as np
import pytest

from locnav.world import Rect, ScenarioSpec, WorldModel, load_scenario


def box_world(w=10.0, h=10.0, extra=(), name="box") -> WorldModel:
    segs = [(0, 0, w, 0), (w, 0, w, h), (w, h, 0, h), (0, h, 0, 0), *extra]
    return WorldModel(np.array(segs, float), Rect(0, 0, w, h), name)


def box_scenario(w=10.0, h=10.0, extra=(), start=None, goal=None, peds=()) -> ScenarioSpec:
    world = box_world(w, h, extra)
    start = start or Rect(1, 1, 2, 2)
    goal = goal or Rect(w - 2, h - 2, w - 1, h - 1)
    return ScenarioSpec(world, start, goal, list(peds), name="box")


@pytest.fixture(scope="session")
def hybrid():
    return load_scenario("hybrid")


@pytest.fixture(scope="session")
def room():
    return load_scenario("room")


@pytest.fixture(scope="session")
def empty20():
    return load_scenario("empty20")


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


TAU = 2 * math.pi


# -- acceptance summary: one line per criterion ---------------------------------------

ACCEPTANCE = {}   # criterion number -> detail string, filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    rows = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_c" not in nodeid or rep.when not in ("call", "setup"):
                continue
            n = int(nodeid.split("::test_c")[1][:2])
            if status == "passed" and rep.when == "setup":
                continue
            rows[n] = "PASS" if status == "passed" else "FAIL"
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(rows):
        terminalreporter.write_line(f"criterion {n:2d}: {rows[n]}  {ACCEPTANCE.get(n, '')}")
