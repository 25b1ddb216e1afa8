"""6DOF navigation traces and per-GOP tile navigation profiles."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import HeadPose, TilingConfig, viewport_distribution

TRACE_HEADER = ["t", "yaw", "pitch", "roll", "x", "y"]

# frame instants are matched to samples with this slack to absorb float drift
_TIME_EPS = 1e-9


class NavigationError(ValueError):
    pass


@dataclass(frozen=True)
class GopInterval:
    t_start: float
    duration: float
    frame_rate: float

    def __post_init__(self):
        if not self.duration > 0:
            raise NavigationError("GOP duration must be positive")
        frames = self.duration * self.frame_rate
        if round(frames) < 1 or abs(frames - round(frames)) > 1e-6:
            raise NavigationError("GOP must hold a positive integer number of frames")

    @property
    def frame_count(self) -> int:
        return int(round(self.duration * self.frame_rate))

    def frame_instants(self) -> np.ndarray:
        return self.t_start + np.arange(self.frame_count) / self.frame_rate


@dataclass(frozen=True)
class NavigationProfile:
    p: np.ndarray  # (tiles_x, tiles_y)
    interval: GopInterval

    def support(self) -> np.ndarray:
        return self.p > 0


class NavigationTrace:
    """Timestamped pose and floor-position samples for one user."""

    def __init__(self, t, yaw, pitch, roll, x, y, user_id="u0"):
        self.t = np.asarray(t, dtype=float)
        self.yaw = np.asarray(yaw, dtype=float)
        self.pitch = np.asarray(pitch, dtype=float)
        self.roll = np.asarray(roll, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.user_id = user_id
        n = len(self.t)
        if n == 0:
            raise NavigationError("empty trace")
        for arr in (self.yaw, self.pitch, self.roll, self.x, self.y):
            if arr.shape != (n,):
                raise NavigationError("trace columns differ in length")
        if np.any(np.diff(self.t) <= 0):
            raise NavigationError("trace timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t)

    @classmethod
    def static(cls, pose: HeadPose, x=0.0, y=0.0, t_end=1.0, rate=250.0, user_id="u0"):
        t = np.arange(int(round(t_end * rate)) + 1) / rate
        ones = np.ones_like(t)
        return cls(t, pose.yaw * ones, pose.pitch * ones, pose.roll * ones,
                   x * ones, y * ones, user_id)

    def span(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])

    def sample_index(self, t: float) -> int:
        """Index of the latest sample at or before ``t`` (zero-order hold)."""
        i = int(np.searchsorted(self.t, t + _TIME_EPS, side="right")) - 1
        if i < 0:
            raise NavigationError("trace underflow")
        return i

    def pose_at(self, t: float) -> HeadPose:
        i = self.sample_index(t)
        return HeadPose(self.yaw[i], self.pitch[i], self.roll[i])

    def position_at(self, t: float) -> tuple[float, float]:
        i = self.sample_index(t)
        return float(self.x[i]), float(self.y[i])

    def segment(self, t0: float, t1: float) -> "NavigationTrace":
        """Samples in ``[t0, t1]`` plus the held sample at ``t0``."""
        i0 = max(0, int(np.searchsorted(self.t, t0 + _TIME_EPS, side="right")) - 1)
        i1 = int(np.searchsorted(self.t, t1 + _TIME_EPS, side="right"))
        sl = slice(i0, max(i1, i0 + 1))
        return NavigationTrace(self.t[sl], self.yaw[sl], self.pitch[sl], self.roll[sl],
                               self.x[sl], self.y[sl], self.user_id)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for row in zip(self.t, self.yaw, self.pitch, self.roll, self.x, self.y):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, user_id=None) -> "NavigationTrace":
        path = Path(path)
        cols = {k: [] for k in TRACE_HEADER}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != TRACE_HEADER:
                raise NavigationError(f"{path}: line 1: expected header {','.join(TRACE_HEADER)}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(TRACE_HEADER):
                    raise NavigationError(f"{path}: line {lineno}: expected 6 fields")
                try:
                    vals = [float(v) for v in row]
                except ValueError:
                    raise NavigationError(f"{path}: line {lineno}: non-numeric field") from None
                for k, v in zip(TRACE_HEADER, vals):
                    cols[k].append(v)
        try:
            return cls(cols["t"], cols["yaw"], cols["pitch"], cols["roll"], cols["x"], cols["y"],
                       user_id or path.stem)
        except NavigationError as e:
            raise NavigationError(f"{path}: {e}") from None


def profile_for_interval(trace: NavigationTrace, iv: GopInterval, cfg: TilingConfig) -> NavigationProfile:
    instants = iv.frame_instants()
    t0, t1 = trace.span()
    if instants[0] < t0 - _TIME_EPS or instants[-1] > t1 + _TIME_EPS:
        raise NavigationError("trace underflow")
    acc = np.zeros(cfg.shape)
    for t in instants:
        acc += viewport_distribution(trace.pose_at(t), cfg)
    return NavigationProfile(acc / len(instants), iv)


def predict_profile(trace: NavigationTrace, iv: GopInterval, cfg: TilingConfig,
                    lag: float = 0.0) -> NavigationProfile:
    """Persistence prediction: hold the last pose known ``lag`` seconds before the GOP."""
    t_known = iv.t_start - lag
    if t_known < trace.t[0] - _TIME_EPS:
        raise NavigationError("no navigation history before the interval")
    pose = trace.pose_at(t_known)
    return NavigationProfile(viewport_distribution(pose, cfg), iv)


def mismatch_mass(predicted: NavigationProfile, realized: NavigationProfile) -> float:
    return 0.5 * float(np.abs(predicted.p - realized.p).sum())


def active_viewpoint(trace: NavigationTrace, t: float, viewpoint_locations) -> int:
    if len(viewpoint_locations) == 0:
        raise NavigationError("at least one viewpoint location is required")
    x, y = trace.position_at(t)
    best, best_d = 0, math.inf
    for i, (vx, vy) in enumerate(viewpoint_locations):
        d = (x - vx) ** 2 + (y - vy) ** 2
        if d < best_d:
            best, best_d = i, d
    return best


def max_yaw_rate(trace: NavigationTrace) -> float:
    """Largest absolute yaw rate (deg/s) between consecutive samples, seam-aware."""
    if len(trace) < 2:
        return 0.0
    dyaw = (np.diff(trace.yaw) + 180.0) % 360.0 - 180.0
    return float(np.max(np.abs(dyaw) / np.diff(trace.t)))
