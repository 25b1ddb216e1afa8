"""User to xGen transmitter assignment by bottleneck bipartite matching."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching


class AssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Assignment:
    pi: tuple[int, ...]  # pi[u] = transmitter index
    bottleneck: float
    feasibility_tests: int = 0

    def as_dict(self) -> dict[int, int]:
        return dict(enumerate(self.pi))


def _validate(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] == 0:
        raise AssignmentError("weights must be a non-empty users x transmitters matrix")
    if not np.all(np.isfinite(w)):
        raise AssignmentError("weights must be finite")
    if w.shape[1] < w.shape[0]:
        raise AssignmentError("need at least as many transmitters as users")
    return w


def _perfect(allowed: np.ndarray) -> bool:
    match = maximum_bipartite_matching(csr_matrix(allowed.astype(np.int8)), perm_type="column")
    return bool(np.all(match >= 0))


def _lexicographic(allowed: np.ndarray) -> tuple[int, ...]:
    """Lexicographically smallest user-perfect matching inside ``allowed``."""
    allowed = allowed.copy()
    n_users = allowed.shape[0]
    pi = []
    for u in range(n_users):
        for t in np.flatnonzero(allowed[u]):
            trial = allowed.copy()
            trial[u, :] = False
            trial[u, t] = True
            trial[u + 1:, t] = False
            if _perfect(trial):
                allowed = trial
                pi.append(int(t))
                break
        else:  # pragma: no cover - guarded by the feasibility search
            raise AssignmentError("no perfect matching under threshold")
    return tuple(pi)


def bottleneck_match(w) -> Assignment:
    """Perfect matching of users minimizing the largest selected weight.

    Binary search over the sorted distinct weights; each probe is a
    maximum-cardinality matching on the edges at or below the threshold.
    Among optimal matchings the lexicographically smallest ``pi`` is returned.
    """
    w = _validate(w)
    levels = np.unique(w)
    lo, hi = 0, len(levels) - 1  # the largest level always admits a perfect matching
    tests = 0
    while lo < hi:
        mid = (lo + hi) // 2
        tests += 1
        if _perfect(w <= levels[mid]):
            hi = mid
        else:
            lo = mid + 1
    thr = levels[lo]
    pi = _lexicographic(w <= thr)
    return Assignment(pi, float(max(w[u, t] for u, t in enumerate(pi))), tests)


def max_min_snr_assign(snr_db) -> Assignment:
    """Maximize the smallest selected SNR; ``bottleneck`` reports that SNR."""
    a = bottleneck_match(-np.asarray(snr_db, dtype=float))
    return Assignment(a.pi, -a.bottleneck, a.feasibility_tests)


def matching_bottleneck(w, pi) -> float:
    w = np.asarray(w, dtype=float)
    return float(max(w[u, t] for u, t in enumerate(pi)))


class Reassigner:
    """Periodic reassignment with hysteresis.

    Every ``period`` GOPs a fresh optimum is computed; the prior matching is
    kept when its bottleneck under the current weights lies within
    ``hysteresis`` of the optimum.
    """

    def __init__(self, period: int = 1, hysteresis: float = 0.0):
        if period < 1:
            raise AssignmentError("reassignment period must be at least one GOP")
        if hysteresis < 0:
            raise AssignmentError("hysteresis must be non-negative")
        self.period = period
        self.hysteresis = hysteresis
        self.current: Assignment | None = None

    def step(self, gop: int, w) -> Assignment:
        w = _validate(w)
        if self.current is not None and len(self.current.pi) != w.shape[0]:
            self.current = None
        if self.current is None:
            self.current = bottleneck_match(w)
            return self.current
        prior = Assignment(self.current.pi, matching_bottleneck(w, self.current.pi))
        if gop % self.period:
            self.current = prior
            return prior
        fresh = bottleneck_match(w)
        if prior.bottleneck <= fresh.bottleneck + self.hysteresis or math.isinf(self.hysteresis):
            self.current = prior
        else:
            self.current = fresh
        return self.current


def distance_matrix(tx_positions, rx_points) -> np.ndarray:
    tx = np.asarray(tx_positions, dtype=float)
    rx = np.asarray(rx_points, dtype=float)
    return np.linalg.norm(rx[:, None, :] - tx[None, :, :], axis=-1)
