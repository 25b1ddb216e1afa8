"""Rate and compute allocation for dual-connectivity tiled 360 video.

Three layers of allocation live here:

* ``allocate_single_link``: choose one scalable layer per tile under a single
  rate budget (exact multiple-choice knapsack).
* ``optimize_per_user``: baseline rates over the sub-6 GHz link, enhancement
  rates and raw tiles over the xGen link, and the headset decode/render
  splits, under the two end-to-end latency chains of one GOP.
* ``optimize_multi_user``: the decoupled multi-user problem, budgets split
  per user and one per-user solve each.

Rates are Mbps, durations seconds, data sizes bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rdmodel import RdModel, ScalableTileTable

MBIT_PER_BYTE = 8e-6


class OptimizerError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceProfile:
    z: float  # headset decode speed, Mbps of compressed data
    r: float  # headset render speed, cycles/s
    b_h: float  # bytes produced per render cycle
    E_v: float  # decoded viewport bytes per GOP
    E_r: float  # raw GOP tile bytes
    Z: float = 1e4  # aggregate edge decode speed, Mbps

    def __post_init__(self):
        for name in ("z", "r", "b_h", "E_v", "E_r", "Z"):
            if not getattr(self, name) > 0:
                raise OptimizerError(f"device parameter {name} must be positive")

    @classmethod
    def for_video(cls, tiling, frame_rate: float, gop: float, z: float, render_pixels_per_s: float,
                  viewport_px=(2048, 2048), bytes_per_pixel: float = 1.5, Z: float = 1e4):
        """Sizes for 8-bit 4:2:0 frames; rendering counted in pixels, so ``b_h`` is bytes/pixel."""
        frames = frame_rate * gop
        e_r = tiling.tile_pixels * bytes_per_pixel * frames
        e_v = viewport_px[0] * viewport_px[1] * bytes_per_pixel * frames
        return cls(z, render_pixels_per_s, bytes_per_pixel, e_v, e_r, Z)

    @property
    def raw_tile_mbit(self) -> float:
        return self.E_r * MBIT_PER_BYTE


@dataclass(frozen=True)
class LinkBudget:
    cw: float  # sub-6 GHz capacity for this user
    cx: float  # xGen capacity for this user


@dataclass(frozen=True)
class Splits:
    z_w: float
    z_x: float
    r_w: float
    r_x: float


@dataclass(frozen=True)
class LatencyBreakdown:
    tau_w: float
    tau_Z: float
    tau_x: float
    tau_zw: float
    tau_zx: float
    tau_rw: float
    tau_rx: float

    def baseline_chain(self) -> float:
        return self.tau_w + self.tau_zw + self.tau_rw

    def enhancement_chain(self) -> float:
        return self.tau_Z + self.tau_x + self.tau_zx + self.tau_rx

    def feasible(self, dT: float, tol: float = 1e-9) -> bool:
        return self.baseline_chain() <= dT + tol and self.enhancement_chain() <= dT + tol

    def as_tuple(self) -> tuple[float, ...]:
        return (self.tau_w, self.tau_Z, self.tau_x, self.tau_zw, self.tau_zx, self.tau_rw, self.tau_rx)


def _t(volume: float, speed: float) -> float:
    if volume <= 0:
        return 0.0
    return volume / speed if speed > 0 else math.inf


def latency_chain(R_w, R_x, raw, r_max, splits: Splits, dev: DeviceProfile, links: LinkBudget,
                  dT: float, Z_u: float, enhancement: bool = True, baseline: bool = True) -> LatencyBreakdown:
    """The seven GOP latency terms.

    ``R_w`` and ``R_x`` are per-tile rate tables (zero off the support), ``raw``
    marks tiles shipped raw; ``r_max`` is the full-layer rate table.
    ``enhancement=False`` means no xGen content this GOP, so the enhanced
    render is skipped; ``baseline=False`` drops the sub-6 GHz chain.
    """
    R_w = np.asarray(R_w, dtype=float)
    R_x = np.where(raw, 0.0, np.asarray(R_x, dtype=float))
    s_w = float(R_w.sum()) * dT
    s_x = float(R_x.sum()) * dT
    k = int(np.count_nonzero(raw))
    tau_w = _t(s_w, links.cw) if baseline else 0.0
    tau_zw = _t(s_w, splits.z_w) if baseline else 0.0
    tau_rw = _t(dev.E_v, splits.r_w * dev.b_h) if baseline else 0.0
    tau_Z = _t(float(np.asarray(r_max)[raw].sum()) * dT, Z_u)
    tau_x = _t(k * dev.raw_tile_mbit + s_x, links.cx)
    tau_zx = _t(s_x, splits.z_x)
    tau_rx = _t(dev.E_v, splits.r_x * dev.b_h) if enhancement else 0.0
    return LatencyBreakdown(tau_w, tau_Z, tau_x, tau_zw, tau_zx, tau_rw, tau_rx)


# ---------------------------------------------------------------------------
# single-link layer selection


@dataclass
class LayerSelection:
    layers: np.ndarray  # chosen layer index per tile (0-based), -1 outside the support
    rate: float
    objective: float
    exact: bool
    method: str


def _hull_moves(c: float, rates: np.ndarray, dist: np.ndarray):
    """Lower convex hull of (rate, c*dist) starting at the base layer: list of (slope, i_from, i_to)."""
    pts = [0]
    for i in range(1, len(rates)):
        while len(pts) >= 2:
            i0, i1 = pts[-2], pts[-1]
            s01 = (c * dist[i1] - c * dist[i0]) / (rates[i1] - rates[i0])
            s02 = (c * dist[i] - c * dist[i0]) / (rates[i] - rates[i0])
            if s02 <= s01:
                pts.pop()
            else:
                break
        pts.append(i)
    moves = []
    for i0, i1 in zip(pts[:-1], pts[1:]):
        gain = c * (dist[i0] - dist[i1]) / (rates[i1] - rates[i0])
        if gain > 0:
            moves.append((gain, i0, i1))
    return moves


def _lagrangian_bound(cs, rates, dists, C, lams) -> float:
    best = -math.inf
    for lam in lams:
        val = sum(float(np.min(c * d + lam * r)) for c, r, d in zip(cs, rates, dists)) - lam * C
        best = max(best, val)
    return best


def _pareto_dp(cs, rates, dists, C, cap=200_000):
    """Exact (rate, objective) frontier merge; None when the frontier outgrows ``cap``."""
    front_r = np.zeros(1)
    front_d = np.zeros(1)
    choice = [np.zeros((1, 0), dtype=np.int64)]
    for c, r, d in zip(cs, rates, dists):
        cand_r = (front_r[:, None] + r[None, :]).ravel()
        cand_d = (front_d[:, None] + c * d[None, :]).ravel()
        parent = np.repeat(np.arange(len(front_r)), len(r))
        layer = np.tile(np.arange(len(r)), len(front_r))
        keep = cand_r <= C * (1 + 1e-12)
        cand_r, cand_d, parent, layer = cand_r[keep], cand_d[keep], parent[keep], layer[keep]
        order = np.lexsort((cand_d, cand_r))
        cand_r, cand_d, parent, layer = cand_r[order], cand_d[order], parent[order], layer[order]
        run_min = np.minimum.accumulate(cand_d)
        mask = np.ones(len(cand_d), dtype=bool)
        mask[1:] = cand_d[1:] < run_min[:-1]
        front_r, front_d = cand_r[mask], cand_d[mask]
        prev = choice[-1][parent[mask]]
        choice.append(np.column_stack([prev, layer[mask]]))
        if len(front_r) > cap:
            return None
    best = int(np.argmin(front_d))
    return choice[-1][best], float(front_d[best])


def _quantized_dp(cs, rates, dists, C, quantum):
    units = int(math.floor(C / quantum + 1e-9))
    q_rates = [np.ceil(r / quantum - 1e-9).astype(int) for r in rates]
    inf = math.inf
    best = np.full(units + 1, inf)
    best[0] = 0.0
    picks = []
    for c, qr, d in zip(cs, q_rates, dists):
        nxt = np.full(units + 1, inf)
        pick = np.full(units + 1, -1)
        for li, (u, dv) in enumerate(zip(qr, d)):
            if u > units:
                continue
            cand = np.full(units + 1, inf)
            cand[u:] = best[: units + 1 - u] + c * dv
            better = cand < nxt
            nxt[better] = cand[better]
            pick[better] = li
        best = nxt
        picks.append(pick)
    j = int(np.argmin(best))
    obj = float(best[j])
    layers = []
    for qr, pick in zip(reversed(q_rates), reversed(picks)):
        li = int(pick[j])
        layers.append(li)
        j -= qr[li]
    return np.array(layers[::-1]), obj


def allocate_single_link(profile_p, table: ScalableTileTable, C: float, weights=None,
                         quantum: float = 0.1) -> LayerSelection:
    """Minimize the expected (weighted) viewport distortion under ``sum R <= C``.

    Tiles with zero navigation likelihood get nothing. A Lagrangian sweep over
    the per-tile convex hulls followed by a greedy fill is accepted when it
    meets the dual bound; otherwise an exact frontier merge decides, with a
    rate-quantized dynamic program as last resort for very large instances.
    """
    p = np.asarray(profile_p, dtype=float)
    if not C > 0:
        raise OptimizerError("budget must be positive")
    w = np.ones_like(p) if weights is None else np.asarray(weights, dtype=float)
    support = np.argwhere(p > 0)
    idx = [tuple(t) for t in support]
    cs = [float(p[t] * w[t]) for t in idx]
    rates = [table.rates[t] for t in idx]
    dists = [table.distortions[t] for t in idx]
    base = sum(float(r[0]) for r in rates)
    if base > C * (1 + 1e-12):
        raise OptimizerError("infeasible: base layers exceed budget")

    level = [0] * len(idx)
    moves = []
    for j, (c, r, d) in enumerate(zip(cs, rates, dists)):
        moves.extend((g, j, i0, i1) for g, i0, i1 in _hull_moves(c, r, d))
    moves.sort(key=lambda m: (-m[0], m[1], m[2]))
    used = base
    blocked = set()
    for g, j, i0, i1 in moves:
        if j in blocked or level[j] != i0:
            continue
        extra = rates[j][i1] - rates[j][i0]
        if used + extra <= C * (1 + 1e-12):
            level[j] = i1
            used += extra
        else:
            blocked.add(j)
    # spend leftovers on any single-tile upgrade that fits, best gain per rate first
    improved = True
    while improved:
        improved = False
        best = None
        for j in range(len(idx)):
            for li in range(level[j] + 1, len(rates[j])):
                extra = rates[j][li] - rates[j][level[j]]
                if used + extra > C * (1 + 1e-12):
                    break
                gain = cs[j] * (dists[j][level[j]] - dists[j][li])
                if best is None or gain > best[0]:
                    best = (gain, j, li, extra)
        if best is not None and best[0] > 0:
            _, j, li, extra = best
            level[j] = li
            used += extra
            improved = True
    obj = sum(c * d[l] for c, d, l in zip(cs, dists, level))
    lams = [0.0] + [m[0] for m in moves]
    bound = _lagrangian_bound(cs, rates, dists, C, lams)
    method, exact = "lagrangian", obj - bound <= 1e-12 * max(1.0, abs(obj))
    if not exact:
        res = _pareto_dp(cs, rates, dists, C)
        if res is not None:
            chosen, dp_obj = res
            if dp_obj < obj:
                level, obj = [int(v) for v in chosen], dp_obj
            method, exact = "frontier", True
        else:
            chosen, dp_obj = _quantized_dp(cs, rates, dists, C, quantum)
            if dp_obj < obj:
                level, obj = [int(v) for v in chosen], dp_obj
            method = "quantized"
    layers = np.full(p.shape, -1, dtype=int)
    for t, l in zip(idx, level):
        layers[t] = l
    rate = sum(float(r[l]) for r, l in zip(rates, level))
    return LayerSelection(layers, rate, float(obj), exact, method)


def selection_objective(sel_layers, profile_p, table: ScalableTileTable, weights=None) -> float:
    p = np.asarray(profile_p, dtype=float)
    w = np.ones_like(p) if weights is None else np.asarray(weights, dtype=float)
    total = 0.0
    for t in np.argwhere(sel_layers >= 0):
        t = tuple(t)
        total += p[t] * w[t] * table.distortions[t][sel_layers[t]]
    return float(total)


# ---------------------------------------------------------------------------
# per-user dual-connectivity optimization


@dataclass
class PerUserAllocation:
    R_w: np.ndarray
    R_x: np.ndarray
    support: np.ndarray  # M: tiles with positive navigation likelihood
    raw: np.ndarray  # M^r
    baseline_only: np.ndarray  # extra tiles carried at the base layer for robustness
    splits: Splits
    latency: LatencyBreakdown
    expected_distortion: float
    feasible: bool
    k: int
    dual: bool = True
    enhancement: bool = True
    R_w_snapped: np.ndarray | None = None
    R_x_snapped: np.ndarray | None = None
    snapped_distortion: float = math.nan
    snapped_latency: LatencyBreakdown | None = None
    snapped_feasible: bool = False
    objective_history: list = field(default_factory=list)
    k_objectives: dict = field(default_factory=dict)

    @property
    def enhancement_tiles(self) -> np.ndarray:
        return self.support & ~self.raw

    def delivered_rates(self, xgen_ok: bool = True, snapped: bool = False, r_max=None) -> np.ndarray:
        """Per-tile rate the viewport is decoded at; raw tiles count at ``r_max``."""
        rw = self.R_w_snapped if snapped else self.R_w
        rx = self.R_x_snapped if snapped else self.R_x
        if not xgen_ok:
            return rw.copy()
        out = rw + np.where(self.raw, 0.0, rx)
        if r_max is not None:
            out = np.where(self.raw, r_max, out)
        return out


def expected_distortion(alloc: PerUserAllocation, model: RdModel, profile_p, r_max, weights=None) -> float:
    """Sum over raw tiles of ``P w D(R_max)`` plus enhancement tiles of ``P w D(R_w + R_x)``."""
    p = np.asarray(profile_p, dtype=float)
    w = np.ones_like(p) if weights is None else np.asarray(weights, dtype=float)
    total = 0.0
    for t in np.argwhere(alloc.support):
        t = tuple(t)
        rate = r_max[t] if alloc.raw[t] else alloc.R_w[t] + alloc.R_x[t]
        total += p[t] * w[t] * float(model.distortion(rate, t))
    return total


def _waterfill(c, a, b, kind, lo, hi, budget, with_price=False):
    """min sum c_i D_i(T_i) s.t. sum T <= budget, lo <= T <= hi; returns T or None.

    ``with_price`` also returns the multiplier of the budget constraint.
    """
    if budget < lo.sum() * (1 - 1e-12):
        return None
    if budget >= hi.sum():
        return (hi.copy(), 0.0) if with_price else hi.copy()

    def marginal(T):
        if kind == "power":
            return c * a * np.abs(b) * T ** (b - 1.0)
        return c * a * b * np.exp(-b * T)

    def rates(log_lam):
        lam = math.exp(log_lam)
        if kind == "power":
            T = (lam / (c * a * np.abs(b))) ** (1.0 / (b - 1.0))
        else:
            T = np.log(c * a * b / lam) / b
        return np.clip(T, lo, hi)

    g_lo, g_hi = math.log(float(np.min(marginal(hi)))), math.log(float(np.max(marginal(lo))))
    lo_l, hi_l = g_lo - 1e-9, g_hi + 1e-9
    for _ in range(200):
        mid = 0.5 * (lo_l + hi_l)
        if rates(mid).sum() > budget:
            lo_l = mid
        else:
            hi_l = mid
        if hi_l - lo_l < 1e-13:
            break
    return (rates(hi_l), math.exp(hi_l)) if with_price else rates(hi_l)


class _Problem:
    """Fixed inputs of one per-user solve, flattened to the support."""

    def __init__(self, p, model, table, dev, links, dT, Z_u, weights, baseline_extra):
        self.p = np.asarray(p, dtype=float)
        self.shape = self.p.shape
        w = np.ones(self.shape) if weights is None else np.asarray(weights, dtype=float)
        self.support = self.p > 0
        extra = np.zeros(self.shape, dtype=bool) if baseline_extra is None else np.asarray(baseline_extra, bool)
        self.extra = extra & ~self.support
        self.idx = np.argwhere(self.support)
        sel = tuple(self.idx.T)
        self.c = (self.p * w)[sel]
        self.a, self.b = model.a[sel], model.b[sel]
        self.kind = model.kind
        self.model = model
        self.lo, self.hi = table.r_min[sel], table.r_max[sel]
        self.extra_min = float(table.r_min[self.extra].sum())
        self.table = table
        self.dev, self.links, self.dT, self.Z_u = dev, links, dT, Z_u
        self.e_r = dev.raw_tile_mbit / dT  # raw tile as a rate
        self.c_render = dev.E_v / (dev.b_h * dT)  # cycles/s needed to render in one GOP

    def dist(self, T, mask=slice(None)):
        if self.kind == "power":
            return self.a[mask] * T ** self.b[mask]
        return self.a[mask] * np.exp(-self.b[mask] * T)

    def criterion(self, T0=None, price=0.0):
        """Likelihood-weighted RD gain of streaming each tile raw.

        At the no-raw operating point ``T0`` this is the distortion drop from
        T0 to R_max plus the pooled rate the tile frees, priced at the
        water-filling multiplier. Without an operating point it falls back to
        the secant slope over [R_min, R_max].
        """
        if T0 is None:
            return self.c * (self.dist(self.lo) - self.dist(self.hi)) / (self.hi - self.lo)
        return self.c * (self.dist(T0) - self.dist(self.hi)) + price * (T0 - self.lo)

    def x_headroom(self, raw_sel) -> float:
        """1 - tau^Z/dT - |M^r| E_r / (C^x dT)."""
        k = int(raw_sel.sum())
        if k == 0:
            return 1.0
        if self.links.cx <= 0:
            return -math.inf
        return 1.0 - float(self.hi[raw_sel].sum()) / self.Z_u - k * self.e_r / self.links.cx


def _g(cap, speed):
    if speed <= 0:
        return 0.0
    return cap * speed / (cap + speed)


def _g_inv(cap, g):
    """speed with cap*speed/(cap+speed) == g."""
    if g <= 0:
        return 0.0
    if g >= cap:
        return math.inf
    return cap * g / (cap - g)


class _SplitSearch:
    """Maximize the pooled budget A_w + A_x over the decode and render splits.

    A_w = (1 - c/r_w) G_w(z_w), A_x = (h - c/r_x) G_x(z_x) with
    G(z) = C z / (C + z); subject to A_w >= m_w and A_x >= 0. Each coordinate
    step is concave and solved in closed form.
    """

    def __init__(self, z, r, cw, cx, c, h, m_w):
        self.z, self.r, self.cw, self.cx, self.c, self.h, self.m_w = z, r, cw, cx, c, h, m_w

    def budgets(self, zw, rw):
        zx, rx = self.z - zw, self.r - rw
        aw = (1.0 - self.c / rw) * _g(self.cw, zw) if rw > 0 else -math.inf
        ax = (self.h - self.c / rx) * _g(self.cx, zx) if rx > 0 else -math.inf
        return aw, ax

    def feasible(self, zw, rw, tol=1e-12):
        aw, ax = self.budgets(zw, rw)
        return aw >= self.m_w * (1 - tol) - 1e-12 and ax >= -1e-12

    def z_step(self, zw, rw):
        alpha = 1.0 - self.c / rw
        beta = self.h - self.c / (self.r - rw)
        if alpha <= 0 or beta < 0:
            return None
        lo = _g_inv(self.cw, self.m_w / alpha)
        if lo > self.z:
            return None
        sa, sb = math.sqrt(alpha) * self.cw, math.sqrt(beta) * self.cx
        star = (sa * (self.cx + self.z) - sb * self.cw) / (sa + sb) if sa + sb > 0 else self.z
        return min(max(star, lo), self.z)

    def r_step(self, zw, rw):
        gw, gx = _g(self.cw, zw), _g(self.cx, self.z - zw)
        if gw <= self.m_w or self.h <= 0:
            return None
        lo = self.c / (1.0 - self.m_w / gw)
        hi = self.r - self.c / self.h
        if lo > hi:
            return None
        star = self.r * math.sqrt(gw) / (math.sqrt(gw) + math.sqrt(gx)) if gx > 0 else hi
        return min(max(star, lo), hi)

    def initial(self, n=24):
        fz = (np.arange(n) + 0.5) / n
        zw = fz[:, None] * self.z
        rw = fz[None, :] * self.r
        gw = self.cw * zw / (self.cw + zw)
        gx = self.cx * (self.z - zw) / (self.cx + self.z - zw)
        aw = (1.0 - self.c / rw) * gw
        ax = (self.h - self.c / (self.r - rw)) * gx
        ok = (aw >= self.m_w) & (ax >= 0)
        if not ok.any():
            return None
        score = np.where(ok, aw + ax, -np.inf)
        i, j = np.unravel_index(int(np.argmax(score)), score.shape)
        return float(zw[i, 0]), float(rw[0, j])


def _decompose(prob: _Problem, T, raw_sel, aw):
    """Split totals into baseline and enhancement rates, baseline filled first."""
    lo = prob.lo[~raw_sel]
    room = aw - prob.extra_min - float(prob.lo[raw_sel].sum()) - float(lo.sum())
    spread = float((T - lo).sum())
    theta = 1.0 if spread <= 0 else min(1.0, max(0.0, room / spread))
    rw_e = lo + theta * (T - lo)
    return rw_e, T - rw_e


def _assemble(prob: _Problem, raw_sel, T, rw_e, rx_e, splits, dual, enhancement):
    R_w = np.zeros(prob.shape)
    R_x = np.zeros(prob.shape)
    raw = np.zeros(prob.shape, dtype=bool)
    sel = tuple(prob.idx.T)
    raw_idx = tuple(prob.idx[raw_sel].T)
    enh_idx = tuple(prob.idx[~raw_sel].T)
    raw[raw_idx] = True
    if dual:
        R_w[raw_idx] = prob.lo[raw_sel]
        R_w[enh_idx] = rw_e
        R_w[prob.extra] = prob.table.r_min[prob.extra]
        R_x[enh_idx] = rx_e
    else:
        R_x[enh_idx] = T
        R_x[prob.extra] = prob.table.r_min[prob.extra]
    del sel
    return R_w, R_x, raw


def _objective(prob, raw_sel, T):
    total = float((prob.c[raw_sel] * prob.dist(prob.hi[raw_sel], raw_sel)).sum())
    if T is not None and len(T):
        total += float((prob.c[~raw_sel] * prob.dist(T, ~raw_sel)).sum())
    return total


def _solve_dual(prob: _Problem, raw_sel, tol=1e-7, max_iter=200):
    """Inner solve for a fixed raw set; returns dict or None when infeasible."""
    dev, links = prob.dev, prob.links
    enh = ~raw_sel
    m_w = float(prob.lo.sum()) + prob.extra_min
    h = prob.x_headroom(raw_sel)
    c = prob.c_render
    wf = lambda B: _waterfill(prob.c[enh], prob.a[enh], prob.b[enh], prob.kind,  # noqa: E731
                              prob.lo[enh], prob.hi[enh], B, with_price=True)
    if not enh.any():
        # baseline fill only; render the enhanced view with the least cycles that fit
        if h <= 0:
            return None
        rx = c / h
        rw = dev.r - rx
        if rw <= 0 or (1.0 - c / rw) * _g(links.cw, dev.z) < m_w * (1 - 1e-12):
            return None
        splits = Splits(dev.z, 0.0, rw, rx)
        aw = (1.0 - c / rw) * _g(links.cw, dev.z)
        obj = _objective(prob, raw_sel, None)
        return dict(T=np.zeros(0), splits=splits, aw=aw, objective=obj, history=[obj])
    if links.cx <= 0:
        return None
    search = _SplitSearch(dev.z, dev.r, links.cw, links.cx, c, h, m_w)
    start = search.initial() or search.initial(96)
    if start is None:
        return None
    zw, rw = start
    history = []
    prev_obj = None
    pool_base = prob.extra_min + float(prob.lo[raw_sel].sum())
    for _ in range(max_iter):
        nz = search.z_step(zw, rw)
        if nz is not None and search.feasible(nz, rw):
            zw = nz
        nr = search.r_step(zw, rw)
        if nr is not None and search.feasible(zw, nr):
            rw = nr
        aw, ax = search.budgets(zw, rw)
        got = wf(aw - pool_base + ax)
        if got is None:
            return None
        T, price = got
        obj = _objective(prob, raw_sel, T)
        history.append(obj)
        if prev_obj is not None and abs(prev_obj - obj) <= tol * abs(obj):
            break
        prev_obj = obj
    aw, ax = search.budgets(zw, rw)
    splits = Splits(zw, dev.z - zw, rw, dev.r - rw)
    return dict(T=T, splits=splits, aw=aw, objective=history[-1], history=history, price=price)


def _solve_baseline_only(prob: _Problem):
    """Dual mode with no xGen content at all; everything on the baseline chain."""
    dev, links = prob.dev, prob.links
    c = prob.c_render
    aw = (1.0 - c / dev.r) * _g(links.cw, dev.z)
    T = _waterfill(prob.c, prob.a, prob.b, prob.kind, prob.lo, prob.hi, aw - prob.extra_min)
    if T is None:
        return None
    raw_sel = np.zeros(len(prob.c), dtype=bool)
    obj = _objective(prob, raw_sel, T)
    return dict(T=T, splits=Splits(dev.z, 0.0, dev.r, 0.0), aw=aw, objective=obj, history=[obj])


def _solve_single(prob: _Problem, raw_sel):
    """xGen link only: one latency chain with the whole headset."""
    dev, links = prob.dev, prob.links
    if links.cx <= 0:
        return None
    h = prob.x_headroom(raw_sel) - prob.c_render / dev.r
    if h < 0:
        return None
    a = h * _g(links.cx, dev.z)
    enh = ~raw_sel
    got = _waterfill(prob.c[enh], prob.a[enh], prob.b[enh], prob.kind, prob.lo[enh], prob.hi[enh],
                     a - prob.extra_min, with_price=True)
    if got is None:
        return None
    T, price = got
    obj = _objective(prob, raw_sel, T)
    return dict(T=T, splits=Splits(0.0, dev.z, 0.0, dev.r), aw=0.0, objective=obj, history=[obj], price=price)


def raw_candidates(prob: _Problem, no_raw=None) -> np.ndarray:
    """Support positions sorted by the raw-streaming gain, largest first.

    ``no_raw`` is the inner solution with an empty raw set; when it is
    missing (infeasible) the secant slope orders the tiles.
    """
    if no_raw is None or len(no_raw["T"]) != len(prob.c):
        return np.argsort(-prob.criterion(), kind="stable")
    return np.argsort(-prob.criterion(no_raw["T"], no_raw["price"]), kind="stable")


def max_raw_tiles(prob: _Problem, order) -> int:
    k = 0
    for j in range(1, len(order) + 1):
        sel = np.zeros(len(prob.c), dtype=bool)
        sel[order[:j]] = True
        if prob.x_headroom(sel) >= 0:
            k = j
        else:
            break
    return k


def _finish(prob: _Problem, best, raw_sel, dual, enhancement) -> PerUserAllocation:
    T = best["T"]
    if dual and len(T):
        rw_e, rx_e = _decompose(prob, T, raw_sel, best["aw"])
    else:
        rw_e, rx_e = None, None
    R_w, R_x, raw = _assemble(prob, raw_sel, T, rw_e, rx_e, best["splits"], dual, enhancement)
    if dual and not raw.any() and not np.any(R_x > 0):
        # nothing rides the xGen link: no enhanced render, whole headset on the baseline
        enhancement = False
        best = dict(best, splits=Splits(prob.dev.z, 0.0, prob.dev.r, 0.0))
    r_max = prob.table.r_max
    lat = latency_chain(R_w, R_x, raw, r_max, best["splits"], prob.dev, prob.links, prob.dT, prob.Z_u,
                        enhancement=enhancement, baseline=dual)
    alloc = PerUserAllocation(R_w, R_x, prob.support, raw, prob.extra, best["splits"], lat,
                              best["objective"], lat.feasible(prob.dT), int(raw_sel.sum()), dual,
                              enhancement, objective_history=best["history"])
    # snap down to cumulative layer rates
    total = R_w + np.where(raw, 0.0, R_x)
    rw_s = np.where(R_w > 0, prob.table.snap_down(np.maximum(R_w, 1e-12)), 0.0)
    tot_s = np.where(total > 0, prob.table.snap_down(np.maximum(total, 1e-12)), 0.0)
    rx_s = np.where(raw, 0.0, np.maximum(tot_s - rw_s, 0.0))
    alloc.R_w_snapped, alloc.R_x_snapped = rw_s, rx_s
    alloc.snapped_latency = latency_chain(rw_s, rx_s, raw, r_max, best["splits"], prob.dev, prob.links,
                                          prob.dT, prob.Z_u, enhancement=enhancement, baseline=dual)
    alloc.snapped_feasible = alloc.snapped_latency.feasible(prob.dT)
    snapped = PerUserAllocation(rw_s, rx_s, prob.support, raw, prob.extra, best["splits"],
                                alloc.snapped_latency, 0.0, True, alloc.k)
    alloc.snapped_distortion = _alloc_distortion(prob, snapped)
    return alloc


def _alloc_distortion(prob: _Problem, alloc: PerUserAllocation) -> float:
    rate = np.where(alloc.raw, prob.table.r_max, alloc.R_w + alloc.R_x)[tuple(prob.idx.T)]
    return float((prob.c * prob.dist(np.maximum(rate, 1e-12))).sum())


def _infeasible(prob: _Problem, dual: bool) -> PerUserAllocation:
    dev = prob.dev
    R_w = np.where(prob.support | prob.extra, prob.table.r_min, 0.0) if dual else np.zeros(prob.shape)
    R_x = np.zeros(prob.shape) if dual else np.where(prob.support | prob.extra, prob.table.r_min, 0.0)
    raw = np.zeros(prob.shape, dtype=bool)
    splits = Splits(dev.z, 0.0, dev.r, 0.0) if dual else Splits(0.0, dev.z, 0.0, dev.r)
    lat = latency_chain(R_w, R_x, raw, prob.table.r_max, splits, dev, prob.links, prob.dT, prob.Z_u,
                        enhancement=not dual, baseline=dual)
    alloc = PerUserAllocation(R_w, R_x, prob.support, raw, prob.extra, splits, lat, math.inf, False, 0,
                              dual, not dual)
    alloc.R_w_snapped, alloc.R_x_snapped = R_w.copy(), R_x.copy()
    alloc.snapped_latency, alloc.snapped_distortion = lat, math.inf
    return alloc


def optimize_per_user(profile_p, model: RdModel, table: ScalableTileTable, dev: DeviceProfile,
                      links: LinkBudget, dT: float, Z_u: float, weights=None, *, dual: bool = True,
                      baseline_extra=None, raw_sets=None, tol: float = 1e-7,
                      tie_rtol: float = 1e-9) -> PerUserAllocation:
    """Minimize expected viewport distortion of one user for one GOP.

    The raw set is swept as the first ``k`` tiles of the support sorted by
    their raw-streaming gain at the no-raw solution, ``k`` up to the largest count whose server
    decode plus raw transfer fits in the GOP. ``raw_sets`` overrides the sweep
    with explicit candidate sets (boolean tables), e.g. for exhaustive search.
    ``dual=False`` removes the sub-6 GHz link. Near-ties between raw-set sizes
    go to the larger ``k``.
    """
    if not (dT > 0 and Z_u > 0 and links.cw >= 0 and links.cx >= 0):
        raise OptimizerError("durations and capacities must be positive")
    prob = _Problem(profile_p, model, table, dev, links, dT, Z_u, weights, baseline_extra)
    n = len(prob.c)
    if n == 0:
        raise OptimizerError("navigation profile has empty support")
    inner = (lambda sel: _solve_dual(prob, sel, tol)) if dual else (lambda sel: _solve_single(prob, sel))
    solved = {}
    if raw_sets is None:
        empty = np.zeros(n, dtype=bool)
        solved[empty.tobytes()] = inner(empty)
        order = raw_candidates(prob, solved[empty.tobytes()])
        kmax = max_raw_tiles(prob, order)
        candidates = []
        for k in range(kmax + 1):
            sel = np.zeros(n, dtype=bool)
            sel[order[:k]] = True
            candidates.append(sel)
    else:
        flat = {tuple(t): j for j, t in enumerate(prob.idx)}
        candidates = []
        for rs in raw_sets:
            sel = np.zeros(n, dtype=bool)
            for t in np.argwhere(np.asarray(rs, bool)):
                sel[flat[tuple(t)]] = True
            candidates.append(sel)

    best, best_sel, best_enh = None, None, True
    k_objectives = {}
    for sel in candidates:
        key = sel.tobytes()
        res = solved[key] if key in solved else inner(sel)
        if res is None:
            continue
        k = int(sel.sum())
        k_objectives[k] = min(res["objective"], k_objectives.get(k, math.inf))
        if best is None or res["objective"] < best["objective"] * (1 - tie_rtol) or (
                res["objective"] <= best["objective"] * (1 + tie_rtol) and k > int(best_sel.sum())):
            best, best_sel = res, sel
    if dual:
        res = _solve_baseline_only(prob)
        if res is not None and (best is None or res["objective"] < best["objective"] * (1 - tie_rtol)):
            best, best_sel, best_enh = res, np.zeros(n, dtype=bool), False
    if best is None:
        return _infeasible(prob, dual)
    alloc = _finish(prob, best, best_sel, dual, best_enh if dual else True)
    alloc.k_objectives = k_objectives
    return alloc


# ---------------------------------------------------------------------------
# multi-user decoupling


@dataclass
class UserInput:
    profile_p: np.ndarray
    model: RdModel
    table: ScalableTileTable
    dev: DeviceProfile
    weights: np.ndarray | None = None
    baseline_extra: np.ndarray | None = None
    cx_cap: float = math.inf  # physical link capacity toward the serving transmitter


def split_budgets(n_users: int, Z: float, cw: float, cx_per_tx, serving) -> list[tuple[float, float, float]]:
    """(Z_u, C_u^w, C_u^x) per user: Z/N_u, C^w/N_u and C^{x,t}/|U_t|."""
    counts: dict[int, int] = {}
    for t in serving:
        counts[t] = counts.get(t, 0) + 1
    out = []
    for t in serving:
        cx_t = cx_per_tx[t] if np.ndim(cx_per_tx) else float(cx_per_tx)
        out.append((Z / n_users, cw / n_users, cx_t / counts[t]))
    return out


def optimize_multi_user(users: list[UserInput], Z: float, cw: float, cx_per_tx, serving, dT: float,
                        dual: bool = True, **kw) -> list[PerUserAllocation]:
    """Decoupled multi-user allocation; the system objective is the sum of per-user distortions."""
    if len(serving) != len(users):
        raise OptimizerError("every user needs a transmitter")
    budgets = split_budgets(len(users), Z, cw, cx_per_tx, serving)
    out = []
    for u, (z_u, cw_u, cx_u) in zip(users, budgets):
        links = LinkBudget(cw_u if dual else 0.0, min(cx_u, u.cx_cap))
        out.append(optimize_per_user(u.profile_p, u.model, u.table, u.dev, links, dT, z_u, u.weights,
                                     dual=dual, baseline_extra=u.baseline_extra, **kw))
    return out


def system_objective(allocs: list[PerUserAllocation]) -> float:
    return float(sum(a.expected_distortion for a in allocs))


def requires_no_raw(dev: DeviceProfile, links: LinkBudget, dT: float, r_max_sorted_first: float, Z_u: float) -> bool:
    """True when even one raw tile cannot fit: E_r/C^x + tau^Z > dT."""
    if links.cx <= 0:
        return True
    return dev.raw_tile_mbit / links.cx + r_max_sorted_first * dT / Z_u > dT
