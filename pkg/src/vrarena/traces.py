"""Synthetic navigation traces used by tests and synthetic scenarios."""

from __future__ import annotations

import numpy as np

from .navigation import NavigationTrace

TRACKER_RATE = 250.0


def _times(duration: float, rate: float) -> np.ndarray:
    return np.arange(int(round(duration * rate)) + 1) / rate


def static_trace(x=0.0, y=0.0, yaw=0.0, pitch=0.0, roll=0.0, duration=1.0, rate=TRACKER_RATE,
                 user_id="u0") -> NavigationTrace:
    t = _times(duration, rate)
    one = np.ones_like(t)
    return NavigationTrace(t, yaw * one, pitch * one, roll * one, x * one, y * one, user_id)


def head_turn_trace(x=0.0, y=0.0, yaw=0.0, pitch=0.0, yaw_rate=90.0, turn_start=0.0, turn_end=1.0,
                    duration=2.0, rate=TRACKER_RATE, user_id="u0") -> NavigationTrace:
    """Constant-rate yaw rotation between ``turn_start`` and ``turn_end``, still otherwise."""
    t = _times(duration, rate)
    moving = np.clip(t, turn_start, turn_end) - turn_start
    yaw_t = (yaw + yaw_rate * moving + 180.0) % 360.0 - 180.0
    one = np.ones_like(t)
    return NavigationTrace(t, yaw_t, pitch * one, 0 * one, x * one, y * one, user_id)


def waypoint_trace(points, times, yaw=0.0, pitch=0.0, duration=None, rate=TRACKER_RATE,
                   user_id="u0") -> NavigationTrace:
    """Piecewise-constant floor position: ``points[i]`` from ``times[i]`` on."""
    duration = duration if duration is not None else times[-1] + 1.0
    t = _times(duration, rate)
    idx = np.searchsorted(np.asarray(times, dtype=float), t + 1e-12, side="right") - 1
    idx = np.clip(idx, 0, len(points) - 1)
    pts = np.asarray(points, dtype=float)[idx]
    one = np.ones_like(t)
    return NavigationTrace(t, yaw * one, pitch * one, 0 * one, pts[:, 0], pts[:, 1], user_id)


def random_walk_trace(seed: int, width=6.0, depth=4.0, duration=10.0, rate=TRACKER_RATE,
                      head_speed=30.0, pitch_spread=20.0, move_speed=0.0, x0=None, y0=None,
                      yaw0=None, user_id="u0") -> NavigationTrace:
    """Smooth seeded head motion (yaw rate as an Ornstein-Uhlenbeck process) and an
    optional straight-line random-waypoint walk at ``move_speed`` m/s."""
    rng = np.random.default_rng(seed)
    t = _times(duration, rate)
    dt = 1.0 / rate
    n = len(t)
    theta = 1.0  # mean reversion, 1/s
    shocks = rng.normal(0.0, head_speed * np.sqrt(2 * theta * dt), size=n)
    yaw_rate = np.zeros(n)
    for i in range(1, n):
        yaw_rate[i] = yaw_rate[i - 1] * (1 - theta * dt) + shocks[i]
    yaw = (rng.uniform(-180, 180) if yaw0 is None else yaw0) + np.cumsum(yaw_rate * dt)
    yaw = (yaw + 180.0) % 360.0 - 180.0
    ph = rng.uniform(0, 2 * np.pi, size=2)
    pitch = pitch_spread * 0.5 * (np.sin(0.4 * t + ph[0]) + np.sin(0.13 * t + ph[1]))
    x = np.empty(n)
    y = np.empty(n)
    pos = np.array([rng.uniform(0.2, width - 0.2) if x0 is None else x0,
                    rng.uniform(0.2, depth - 0.2) if y0 is None else y0])
    goal = pos.copy()
    for i in range(n):
        if move_speed > 0:
            d = goal - pos
            dist = float(np.hypot(*d))
            if dist < 1e-6:
                goal = np.array([rng.uniform(0.2, width - 0.2), rng.uniform(0.2, depth - 0.2)])
            else:
                pos = pos + d / dist * min(dist, move_speed * dt)
        x[i], y[i] = pos
    return NavigationTrace(t, yaw, pitch, np.zeros(n), x, y, user_id)
