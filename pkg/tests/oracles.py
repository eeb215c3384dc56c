"""Slow, independent reference implementations used to check the fast code paths."""

import math

import numba
import numpy as np


@numba.njit(cache=True)
def _crosses(ax, ay, bx, by, cx, cy, dx, dy):
    # do segments ab and cd intersect (closed)?
    d1 = (dx - cx) * (ay - cy) - (dy - cy) * (ax - cx)
    d2 = (dx - cx) * (by - cy) - (dy - cy) * (bx - cx)
    d3 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    d4 = (bx - ax) * (dy - ay) - (by - ay) * (dx - ax)
    return d1 * d2 <= 0.0 and d3 * d4 <= 0.0


@numba.njit(cache=True)
def ray_march(segments, circles, ox, oy, angles, max_range, step):
    """March each ray in `step` increments; report the midpoint of the first
    step that enters a disc or crosses a segment (error <= step / 2)."""
    out = np.empty(angles.shape[0])
    nsteps = int(math.ceil(max_range / step))
    for k in range(angles.shape[0]):
        c, s = math.cos(angles[k]), math.sin(angles[k])
        r = max_range
        px, py = ox, oy
        for i in range(1, nsteps + 1):
            t = min(i * step, max_range)
            qx, qy = ox + t * c, oy + t * s
            hit = False
            for j in range(segments.shape[0]):
                if _crosses(px, py, qx, qy, segments[j, 0], segments[j, 1], segments[j, 2], segments[j, 3]):
                    hit = True
                    break
            if not hit:
                for j in range(circles.shape[0]):
                    if (qx - circles[j, 0]) ** 2 + (qy - circles[j, 1]) ** 2 <= circles[j, 2] ** 2:
                        hit = True
                        break
            if hit:
                r = t - 0.5 * min(step, t - (i - 1) * step)
                break
            px, py = qx, qy
        out[k] = r
    return out


def random_world(rng, n_segments=6, n_circles=3, size=10.0):
    segs = rng.uniform(0.5, size - 0.5, (n_segments, 4))
    circ = np.column_stack([rng.uniform(1, size - 1, (n_circles, 2)), rng.uniform(0.2, 0.6, n_circles)])
    box = np.array([(0, 0, size, 0), (size, 0, size, size), (size, size, 0, size), (0, size, 0, 0)], float)
    return np.vstack([segs, box]), circ


def segment_clips_box(seg, x0, y0, x1, y1) -> bool:
    """Liang-Barsky clip of a segment against a closed box."""
    ax, ay, bx, by = seg
    dx, dy = bx - ax, by - ay
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, ax - x0), (dx, x1 - ax), (-dy, ay - y0), (dy, y1 - ay)):
        if p == 0:
            if q < 0:
                return False
            continue
        t = q / p
        if p < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return False
    return True


def naive_conv1d(x, w, b, stride):
    n, c, length = x.shape
    f, _, k = w.shape
    lout = (length - k) // stride + 1
    out = np.zeros((n, f, lout))
    for i in range(n):
        for o in range(f):
            for t in range(lout):
                acc = b[o]
                for ch in range(c):
                    for j in range(k):
                        acc += x[i, ch, t * stride + j] * w[o, ch, j]
                out[i, o, t] = acc
    return out


def naive_conv2d(x, w, b, stride, padding):
    x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    ho, wo = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for i in range(n):
        for o in range(f):
            for r in range(ho):
                for q in range(wo):
                    acc = b[o]
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += x[i, ch, r * stride + u, q * stride + v] * w[o, ch, u, v]
                    out[i, o, r, q] = acc
    return out


def gae_recursive(rewards, values, dones, last_value, gamma, lam):
    """A_t = delta_t + gamma * lam * (1 - done_t) * A_{t+1}, written as the plain definition."""
    T = len(rewards)

    def value_next(t):
        return last_value if t == T - 1 else values[t + 1]

    def adv(t):
        if t == T:
            return 0.0
        nonterm = 1.0 - dones[t]
        delta = rewards[t] + gamma * nonterm * value_next(t) - values[t]
        return delta + gamma * lam * nonterm * adv(t + 1)

    return np.array([adv(t) for t in range(T)])


def euler_unicycle(x, y, th, v, w, dt, n=10_000):
    h = dt / n
    for _ in range(n):
        x += v * math.cos(th) * h
        y += v * math.sin(th) * h
        th += w * h
    return x, y, th
