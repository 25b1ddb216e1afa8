"""GOP-by-GOP session simulation, baselines and metrics output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .assignment import Reassigner, distance_matrix
from .channel import LinkState, sample_dropout, steer, xgen_link
from .geometry import spherical_tile_weights
from .navigation import GopInterval, active_viewpoint, mismatch_mass, predict_profile, profile_for_interval
from .optimizer import (LatencyBreakdown, OptimizerError, UserInput, optimize_multi_user)
from .rdmodel import RdModel, ScalableTileTable, psnr
from .scenario import METHODS, Scenario

METRICS_HEADER = ["gop", "user", "method", "psnr_db", "wspsnr_db", "rate_mbps", "downtime", "k_raw",
                  "tx_id", "tau_w", "tau_Z", "tau_x", "tau_zw", "tau_zx", "tau_rw", "tau_rx"]
SUMMARY_HEADER = ["user", "method", "psnr_mean", "psnr_std", "wspsnr_mean", "wspsnr_std",
                  "rate_mean", "rate_std", "downtime_pct", "gops"]
_ZERO_LATENCY = LatencyBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass
class GopRecord:
    gop: int
    user: str
    method: str
    mse: float
    wsmse: float
    psnr_db: float
    wspsnr_db: float
    rate_mbps: float
    downtime: bool
    k_raw: int
    tx_id: int
    latency: LatencyBreakdown
    aligned: bool = True
    dropped: bool = False
    viewpoint: int = 0
    mismatch: float = 0.0
    infeasible: bool = False  # the allocator had a link but no feasible plan

    def row(self) -> list[str]:
        vals = [self.gop, self.user, self.method, self.psnr_db, self.wspsnr_db, self.rate_mbps,
                int(self.downtime), self.k_raw, self.tx_id, *self.latency.as_tuple()]
        return [_fmt(v) for v in vals]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class SessionResult:
    scenario: str
    method: str
    records: list[GopRecord]
    summary: list[dict] = field(default_factory=list)

    def user_series(self, user: str, attr: str = "psnr_db") -> np.ndarray:
        return np.array([getattr(r, attr) for r in self.records if r.user == user])

    def overall(self) -> dict:
        return next(s for s in self.summary if s["user"] == "all")


# ---------------------------------------------------------------------------
# scoring and the DASH selector


def score_viewport(realized_p, delivered, model: RdModel, weights=None, floor_mse: float = 255.0**2 / 4.0):
    """(MSE, PSNR, WS-MSE, WS-PSNR) of the realized viewport.

    Tiles seen but delivered at zero rate score at ``floor_mse``. WS-MSE is
    the latitude-weighted sum, in the same units as the allocation objective.
    """
    p = np.asarray(realized_p, dtype=float)
    rate = np.asarray(delivered, dtype=float)
    w = np.ones_like(p) if weights is None else np.asarray(weights, dtype=float)
    d = np.full(p.shape, float(floor_mse))
    got = rate > 0
    d[got] = model.distortion(rate[got], tuple(np.argwhere(got).T))
    mse = float((p * d).sum())
    wsmse = float((p * w * d).sum())
    return mse, float(psnr(mse)), wsmse, float(psnr(wsmse))


@dataclass
class DashSelection:
    layers: np.ndarray  # representation index per tile
    rates: np.ndarray
    feasible: bool
    total: float


def dash_select(profile_p, table: ScalableTileTable, budget: float) -> DashSelection:
    """Viewport tiles at the highest common representation that fits, leftovers lifting
    viewport tiles one step in order of likelihood, all other tiles at the lowest one.

    Representations are the table's cumulative points taken as independent encodings.
    """
    p = np.asarray(profile_p, dtype=float)
    rates = table.rates
    L = table.layers
    view = p > 0
    layers = np.zeros(p.shape, dtype=int)
    base = float(table.r_min.sum())
    if base > budget * (1 + 1e-12):
        return DashSelection(layers, table.r_min.copy(), False, base)
    others = float(table.r_min[~view].sum())
    level = 0
    for l in range(L - 1, -1, -1):
        if others + float(rates[view][:, l].sum()) <= budget * (1 + 1e-12):
            level = l
            break
    layers[view] = level
    used = others + float(rates[view][:, level].sum())
    if level < L - 1:
        flat = np.flatnonzero(view.ravel())
        order = flat[np.argsort(-p.ravel()[flat], kind="stable")]
        for f in order:
            t = np.unravel_index(f, p.shape)
            extra = rates[t][level + 1] - rates[t][level]
            if used + extra <= budget * (1 + 1e-12):
                layers[t] = level + 1
                used += extra
    sel = np.take_along_axis(rates, layers[..., None], axis=-1)[..., 0]
    return DashSelection(layers, sel, True, float(sel.sum()))


def dash_budget(dev, cw_u: float, dT: float) -> float:
    """Largest total rate meeting the single-link headset chain (transfer, decode, render)."""
    head = 1.0 - dev.E_v / (dev.r * dev.b_h * dT)
    if head <= 0 or cw_u <= 0:
        return 0.0
    return head / (1.0 / cw_u + 1.0 / dev.z)


def dash_latency(total_rate: float, dev, cw_u: float, dT: float) -> LatencyBreakdown:
    s = total_rate * dT
    tw = s / cw_u if cw_u > 0 else math.inf
    return LatencyBreakdown(tw, 0.0, 0.0, s / dev.z, 0.0, dev.E_v / (dev.r * dev.b_h), 0.0)


def compare_single_link(profile_p, table: ScalableTileTable, model: RdModel, weights, budgets):
    """Per budget: (WS-PSNR of the exact layer selection, WS-PSNR of the DASH selection)."""
    from .optimizer import allocate_single_link, selection_objective

    out = []
    p = np.asarray(profile_p, dtype=float)
    for C in budgets:
        sel = allocate_single_link(p, table, C, weights)
        ds = dash_select(p, table, C)
        d_opt = selection_objective(sel.layers, p, table, weights)
        d_dash = selection_objective(np.where(p > 0, ds.layers, -1), p, table, weights)
        out.append((float(C), float(psnr(d_opt)), float(psnr(d_dash)) if ds.feasible else -math.inf))
    return out


# ---------------------------------------------------------------------------
# session loop


def _assign_weights(arena, positions, steering: str) -> np.ndarray:
    rx = [arena.receiver_point(x, y) for x, y in positions]
    w = distance_matrix([t.position for t in arena.transmitters], rx)
    if steering == "electronic_switch":
        # a transmitter outside the user's cell can never align
        penalty = math.hypot(arena.width, arena.depth) + arena.ceiling_height
        cells = [arena.cell_of(x, y) for x, y in positions]
        for u, c in enumerate(cells):
            for j, t in enumerate(arena.transmitters):
                if t.cell != c:
                    w[u, j] += penalty
    return w


def _lifi_pick(arena, positions, params) -> list[int]:
    picks = []
    for x, y in positions:
        rx = arena.receiver_point(x, y)
        snr = [xgen_link(t, rx, (), params, target=None).snr_db for t in arena.transmitters]
        picks.append(int(np.argmax(snr)))
    return picks


def _links(arena, serving, targets, aligned, positions, params) -> list[LinkState]:
    out = []
    active = sorted(set(serving))
    for u, t in enumerate(serving):
        rx = arena.receiver_point(*positions[u])
        interferers = [(arena.transmitters[j], targets.get(j)) for j in active if j != t]
        link = xgen_link(arena.transmitters[t], rx, interferers, params, target=targets.get(t))
        out.append(link if aligned[u] else link.degraded(aligned=False))
    return out


def run_session(s: Scenario, method: str | None = None) -> SessionResult:
    method = method or s.method
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(s.seed)
    arena, tiling, dev = s.arena, s.tiling, s.device
    weights = spherical_tile_weights(tiling)
    opt_w = weights if s.weighted_objective else None
    extra = np.ones(tiling.shape, dtype=bool) if s.baseline_tiles == "all" else None
    snapped = s.delivery == "snapped"
    n_u = s.n_users
    steering = arena.transmitters[0].steering if arena.transmitters else "mechanical"
    if method == "lifi":
        steering = "electronic_switch"
    reassigner = Reassigner(s.period, s.hysteresis)
    prev_targets: dict = {}
    records: list[GopRecord] = []

    for g in range(s.n_gops):
        t0 = g * s.gop
        iv = GopInterval(t0, s.gop, s.frame_rate)
        positions = [tr.position_at(t0) for tr in s.traces]
        vps = [active_viewpoint(tr, t0, arena.viewpoint_locations) if arena.viewpoint_locations else 0
               for tr in s.traces]
        models = [s.models[min(v, len(s.models) - 1)] for v in vps]
        tables = [s.tables[min(v, len(s.tables) - 1)] for v in vps]

        if method == "dash":
            serving, aligned, links = [-1] * n_u, [False] * n_u, [None] * n_u
        else:
            if method == "lifi":
                pi = _lifi_pick(arena, positions, s.channel)
            else:
                pi = list(reassigner.step(g, _assign_weights(arena, positions, steering)).pi)
            st = steer(arena, pi, positions, steering, s.gop, prev_targets, s.channel.slew_rate_deg_s,
                       s.channel)
            prev_targets.update(st.targets)
            serving, aligned = st.serving, st.aligned
            links = _links(arena, serving, st.targets, aligned, positions, s.channel)
        # one draw per user per GOP whatever the method, so methods share the drop pattern
        dropped = [sample_dropout(s.dropout, tr.segment(t0, t0 + s.gop), rng, g) for tr in s.traces]

        lag = [min(s.lag_gops * s.gop, t0 - tr.t[0]) for tr in s.traces]
        predicted = [predict_profile(tr, iv, tiling, lag=lg) for tr, lg in zip(s.traces, lag)]
        realized = [profile_for_interval(tr, iv, tiling) for tr in s.traces]

        if method == "dash":
            allocs = None
        else:
            dual = method == "proposed"
            users = []
            for u in range(n_u):
                cap = links[u].capacity if s.use_link_capacity else math.inf
                if not aligned[u]:
                    cap = 0.0
                users.append(UserInput(predicted[u].p, models[u], tables[u], dev, opt_w, extra, cap))
            allocs = optimize_multi_user(users, s.Z, s.cw, s.cx, serving, s.gop, dual=dual)

        for u in range(n_u):
            tr, table, model = s.traces[u], tables[u], models[u]
            mm = mismatch_mass(predicted[u], realized[u])
            if method == "dash":
                cw_u = s.cw / n_u
                ds = dash_select(predicted[u].p, table, dash_budget(dev, cw_u, s.gop))
                down = not ds.feasible
                rates = np.zeros(tiling.shape) if down else ds.rates
                lat = dash_latency(ds.total, dev, cw_u, s.gop)
                rate_total = 0.0 if down else ds.total
                k, tx, ok_link = 0, -1, False
                infeasible = not ds.feasible
            else:
                a = allocs[u]
                ok_link = aligned[u] and not dropped[u]
                lat = (a.snapped_latency if snapped else a.latency) or _ZERO_LATENCY
                tx = serving[u]
                if method == "proposed":
                    down = not a.feasible
                    xgen_ok = ok_link and a.enhancement
                else:
                    down = not a.feasible or not ok_link
                    xgen_ok = not down
                k = a.k
                infeasible = not a.feasible and (method == "proposed" or aligned[u])
                if down:
                    rates = np.zeros(tiling.shape)
                    rate_total = 0.0
                else:
                    rates = a.delivered_rates(xgen_ok, snapped, table.r_max)
                    rw = a.R_w_snapped if snapped else a.R_w
                    rx = a.R_x_snapped if snapped else a.R_x
                    rate_total = float(rw.sum())
                    if xgen_ok:
                        rate_total += float(np.where(a.raw, 0.0, rx).sum()) + a.k * dev.raw_tile_mbit / s.gop
            mse, p_db, wsmse, ws_db = score_viewport(realized[u].p, rates, model, weights, s.no_content_mse)
            records.append(GopRecord(g, tr.user_id, method, mse, wsmse, p_db, ws_db, rate_total, bool(down),
                                     int(k), int(tx), lat, bool(aligned[u]), bool(dropped[u]), vps[u], mm,
                                     bool(infeasible)))
    res = SessionResult(s.name, method, records)
    res.summary = summarize(records)
    return res


def summarize(records: list[GopRecord]) -> list[dict]:
    users = list(dict.fromkeys(r.user for r in records))
    groups = [(u, [r for r in records if r.user == u]) for u in users] + [("all", records)]
    out = []
    for name, rs in groups:
        if not rs:
            continue
        ps = np.array([r.psnr_db for r in rs])
        ws = np.array([r.wspsnr_db for r in rs])
        rt = np.array([r.rate_mbps for r in rs])
        dn = np.array([r.downtime for r in rs], dtype=float)
        out.append(dict(user=name, method=rs[0].method, psnr_mean=float(ps.mean()), psnr_std=float(ps.std()),
                        wspsnr_mean=float(ws.mean()), wspsnr_std=float(ws.std()),
                        rate_mean=float(rt.mean()), rate_std=float(rt.std()),
                        downtime_pct=float(100.0 * dn.mean()), gops=len(rs)))
    return out


def run_methods(s: Scenario, methods=METHODS) -> dict[str, SessionResult]:
    return {m: run_session(s, m) for m in methods}


def with_budgets(s: Scenario, **kw) -> Scenario:
    """Copy of a scenario with top-level fields replaced (cx, cw, Z, device, ...)."""
    return replace(s, **kw)


# ---------------------------------------------------------------------------
# CSV output


def write_metrics(path, records: list[GopRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in records:
            w.writerow(r.row())


def read_metrics(path) -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            d = {}
            for k, v in row.items():
                if k in ("user", "method"):
                    d[k] = v
                elif k in ("gop", "downtime", "k_raw", "tx_id"):
                    d[k] = int(v)
                else:
                    d[k] = float(v)
            out.append(d)
    return out


def write_summary(path, summary: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in summary:
            w.writerow([_fmt(s[k]) for k in SUMMARY_HEADER])


def read_summary(path) -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            out.append({k: (v if k in ("user", "method") else int(v) if k == "gops" else float(v))
                        for k, v in row.items()})
    return out


def format_summary(summary: list[dict]) -> str:
    head = f"{'user':>8} {'method':>13} {'PSNR':>8} {'std':>6} {'WS-PSNR':>8} {'std':>6} {'rate':>9} {'down%':>6}"
    lines = [head]
    for s in summary:
        lines.append(f"{s['user']:>8} {s['method']:>13} {s['psnr_mean']:8.2f} {s['psnr_std']:6.2f} "
                     f"{s['wspsnr_mean']:8.2f} {s['wspsnr_std']:6.2f} {s['rate_mean']:9.1f} "
                     f"{s['downtime_pct']:6.1f}")
    return "\n".join(lines)


def write_outputs(out_dir, result: SessionResult, prefix: str = "") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = out / f"{prefix}metrics.csv"
    s = out / f"{prefix}summary.csv"
    write_metrics(m, result.records)
    write_summary(s, result.summary)
    return m, s


__all__ = ["run_session", "score_viewport", "dash_select", "dash_budget", "compare_single_link",
           "write_metrics", "read_metrics", "write_summary", "read_summary", "summarize", "GopRecord",
           "SessionResult", "OptimizerError"]
