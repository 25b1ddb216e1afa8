"""One test per acceptance criterion; each prints a PASS/FAIL line with its runtime."""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from instances import all_subsets, desk_instance
from oracles import (grid_oracle, oracle_bottleneck, oracle_footprint, oracle_latency, oracle_layer_selection,
                     oracle_profile)
from scenarios import robust_raw
from vrarena import cli, scenario, sim, traces
from vrarena.assignment import bottleneck_match
from vrarena.geometry import HeadPose, TilingConfig, normalize_footprint, rasterize_viewport, spherical_tile_weights
from vrarena.geometry import viewport_distribution
from vrarena.navigation import GopInterval, NavigationTrace, profile_for_interval
from vrarena.optimizer import (DeviceProfile, LinkBudget, Splits, allocate_single_link, latency_chain,
                               optimize_per_user)
from vrarena.rdmodel import RdModel, build_layer_table, fit, generate_samples, synthetic_model

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def report(capsys):
    def _report(n, title, ok, elapsed, limit, detail=""):
        ok = bool(ok) and elapsed < limit
        with capsys.disabled():
            print(f"\nAC{n:<2} {'PASS' if ok else 'FAIL'}  {title}  [{elapsed:.2f} s, limit {limit:g} s]"
                  + (f"  {detail}" if detail else ""))
        assert ok, f"acceptance criterion {n} failed: {detail}"

    return _report


def _per_user(inst, **kw):
    return optimize_per_user(inst["p"], inst["model"], inst["table"], inst["dev"], inst["links"], inst["dT"],
                             inst["Z_u"], **kw)


def test_ac01_geometry_oracle(report):
    t = time.perf_counter()
    rng = np.random.default_rng(101)
    poses = [HeadPose(*v) for v in zip(rng.uniform(-180, 180, 50), rng.uniform(-89, 89, 50), rng.uniform(-30, 30, 50))]
    mismatches, worst_sum = 0, 0.0
    for tx, ty in ((2, 2), (6, 4)):
        cfg = TilingConfig(tiles_x=tx, tiles_y=ty, raster_grid=64)
        for pose in poses:
            fp = rasterize_viewport(pose, cfg)
            want = np.array(oracle_footprint(pose.yaw, pose.pitch, pose.roll, cfg.panorama_width,
                                             cfg.panorama_height, tx, ty, cfg.fov_h, cfg.fov_v, cfg.raster_grid))
            mismatches += int(not np.array_equal(fp.overlap, want))
            worst_sum = max(worst_sum, abs(normalize_footprint(fp).sum() - 1.0))
    report(1, "rasterizer vs per-sample projection oracle", mismatches == 0 and worst_sum <= 1e-12,
           time.perf_counter() - t, 10, f"100 footprints, {mismatches} count mismatches, max |sum-1| {worst_sum:.1e}")


def test_ac02_navigation(report):
    t = time.perf_counter()
    cfg = TilingConfig(tiles_x=2, tiles_y=2, raster_grid=16)
    rng = np.random.default_rng(202)
    worst, worst_cat = 0.0, 0.0
    for i in range(20):
        n = int(rng.integers(3, 15))
        ts = np.sort(rng.uniform(0, 1, n))
        ts[0], ts[-1] = 0.0, 1.0
        poses = [(float(a), float(b), 0.0) for a, b in zip(rng.uniform(-180, 180, n), rng.uniform(-70, 70, n))]
        tr = NavigationTrace(ts, [p[0] for p in poses], [p[1] for p in poses], np.zeros(n), np.zeros(n),
                             np.zeros(n))
        got = profile_for_interval(tr, GopInterval(0.0, 1.0, 10), cfg).p
        want = np.array(oracle_profile(list(ts), poses, 0.0, 1.0, 10,
                                       (cfg.panorama_width, cfg.panorama_height, 2, 2, 90, 90), 16))
        worst = max(worst, float(np.abs(got - want).max()))
        walk = traces.random_walk_trace(i, duration=2.0, head_speed=60)
        a = profile_for_interval(walk, GopInterval(0.0, 0.4, 10), cfg).p
        b = profile_for_interval(walk, GopInterval(0.4, 0.6, 10), cfg).p
        ab = profile_for_interval(walk, GopInterval(0.0, 1.0, 10), cfg).p
        worst_cat = max(worst_cat, float(np.abs(ab - (4 * a + 6 * b) / 10).max()))
    report(2, "navigation profiles vs hand oracle, concatenation identity", worst <= 1e-12 and worst_cat <= 1e-9,
           time.perf_counter() - t, 5, f"20 traces, max dev {worst:.1e}, concatenation {worst_cat:.1e}")


def test_ac03_rd_fitting(report):
    t = time.perf_counter()
    rates = [0.5, 1, 2, 4, 8, 16, 32]
    worst, beaten = 0.0, 0
    rng = np.random.default_rng(303)
    for seed in range(10):
        truth = synthetic_model((6, 4), seed)
        m = fit(generate_samples(truth, rates), "power")
        worst = max(worst, float(np.max(np.abs(m.a / truth.a - 1))), float(np.max(np.abs(m.b / truth.b - 1))))
        noisy = generate_samples(truth, rates, noise=0.03, rng=rng)
        beaten += int(np.sum(fit(noisy, "power").fit_error > fit(noisy, "exponential").fit_error))
    report(3, "power-law RD fit", worst <= 1e-6 and beaten == 0, time.perf_counter() - t, 2,
           f"max relative parameter error {worst:.1e}, tiles where exponential fits better: {beaten}")


def test_ac04_single_link(report):
    t = time.perf_counter()
    rng = np.random.default_rng(404)
    worst = 0.0
    for i in range(200):
        n = int(rng.integers(1, 5))
        layers = int(rng.integers(2, 5))
        shape = (n, 1)
        p = rng.dirichlet(np.ones(n)).reshape(shape)
        table = build_layer_table(synthetic_model(shape, i), layers, 1.0, 20.0)
        C = table.r_min.sum() + rng.uniform(0, 1.1) * (table.r_max.sum() - table.r_min.sum())
        got = allocate_single_link(p, table, C).objective
        best, _ = oracle_layer_selection(p, table.rates, table.distortions, C)
        worst = max(worst, abs(got - best) / best)
    cfg = TilingConfig(raster_grid=64)
    p = viewport_distribution(HeadPose(30, 10, 0), cfg)
    w = spherical_tile_weights(cfg)
    table = build_layer_table(synthetic_model(cfg.shape, 7), 8, 1.0, 100.0)
    lo, hi = table.r_min.sum(), table.rates[p > 0][:, -1].sum() + table.r_min[p <= 0].sum()
    # budgets inside the range where layer choice binds; at the top both methods take every layer
    rows = sim.compare_single_link(p, table, synthetic_model(cfg.shape, 7), w,
                                   lo + np.linspace(0.1, 0.8, 5) * (hi - lo))
    gains = [o - d for _, o, d in rows]
    opt = [o for _, o, _ in rows]
    ok = worst <= 1e-12 and all(g > 0 for g in gains) and all(b >= a for a, b in zip(opt, opt[1:]))
    report(4, "single-link allocator vs enumeration and DASH", ok, time.perf_counter() - t, 30,
           f"200 instances max gap {worst:.1e}; WS-PSNR gain over DASH per budget "
           + ", ".join(f"{g:.2f}" for g in gains) + " dB")


def test_ac05_per_user_optimizer(report):
    t = time.perf_counter()
    worst_gap, sweep_miss, k_miss, k_checked, n_feasible = -np.inf, 0, 0, 0, 0
    for seed in range(50):
        inst = desk_instance(seed)
        a = _per_user(inst)
        tb, dev, links = inst["table"], inst["dev"], inst["links"]
        best, _ = grid_oracle(inst["p"].ravel(), inst["model"].a.ravel(), inst["model"].b.ravel(),
                              tb.r_min.ravel(), tb.r_max.ravel(), z=dev.z, r=dev.r, b_h=dev.b_h, E_v=dev.E_v,
                              E_r=dev.E_r, C_w=links.cw, C_x=links.cx, dT=1.0, Z_u=inst["Z_u"])
        ex = _per_user(inst, raw_sets=all_subsets(inst["p"].shape))
        if np.isfinite(best):
            n_feasible += 1
            worst_gap = max(worst_gap, a.expected_distortion / best - 1)
        elif a.feasible:
            worst_gap = np.inf
        if a.feasible != ex.feasible or (a.feasible and abs(a.expected_distortion / ex.expected_distortion - 1) > 1e-9):
            sweep_miss += 1
        # shrink C^x below one raw tile's transfer plus decode for the k=0 rule
        for cx in (links.cx, dev.raw_tile_mbit * 0.9):
            b = _per_user(dict(inst, links=LinkBudget(links.cw, cx)))
            if dev.raw_tile_mbit / cx + float(tb.r_max.min()) / inst["Z_u"] > 1.0:
                k_checked += 1
                k_miss += int(b.k != 0)
    ok = worst_gap <= 0.01 and sweep_miss == 0 and k_miss == 0 and k_checked > 0
    report(5, "per-user optimizer vs grid+subset oracle", ok, time.perf_counter() - t, 300,
           f"{n_feasible} feasible of 50; worst gap to oracle {100 * worst_gap:+.3f}%; sorted vs exhaustive "
           f"mismatches {sweep_miss}; k=0 rule held on {k_checked - k_miss}/{k_checked}")


def _means(raw, data_dir, param, values):
    rows = cli.sweep(raw, data_dir, param, values)
    return [r["mean"] for r in rows if r["metric"] == "wspsnr_db"]


def test_ac06_trend_suite(report, data_dir):
    t = time.perf_counter()
    raw = scenario.load_raw(data_dir / "demo.json")
    cx = _means(raw, data_dir, "budgets.cx_mbps", [700, 850, 1000, 1200])
    z = _means(raw, data_dir, "device.z_mbps", [100, 200, 300, 500])
    Zs = [2000, 6000, 12000]
    z_low = _means(scenario.set_path(raw, "budgets.cx_mbps", 700), data_dir, "server.Z_mbps", Zs)
    z_high = _means(scenario.set_path(raw, "budgets.cx_mbps", 3000), data_dir, "server.Z_mbps", Zs)
    rend = _means(raw, data_dir, "device.render_gpixels_per_s", [1.88, 3.76, 5.64, 7.52, 9.4])
    nondec = lambda v: all(b >= a - 1e-9 for a, b in zip(v, v[1:]))  # noqa: E731
    ok_a = nondec(cx) and nondec(z)
    ok_b = max(z_low) - min(z_low) < 0.1 and z_high[-1] > z_high[0] and nondec(z_high)
    span = rend[-1] - rend[0]
    ok_c = 0 <= span <= 1.5 and (rend[-1] - rend[2]) <= (rend[2] - rend[0]) and nondec(rend)
    report(6, "trend suite on the 6-user arena", ok_a and ok_b and ok_c, time.perf_counter() - t, 600,
           f"C^x {cx[-1] - cx[0]:+.2f} dB, z {z[-1] - z[0]:+.2f} dB, Z at low C^x {z_low[-1] - z_low[0]:+.3f} dB, "
           f"Z at high C^x {z_high[-1] - z_high[0]:+.2f} dB, render {span:+.2f} dB "
           f"({rend[2] - rend[0]:+.2f} then {rend[-1] - rend[2]:+.2f})")


def test_ac07_bottleneck_matching(report):
    t = time.perf_counter()
    rng = np.random.default_rng(707)
    bad = 0
    cases = [rng.uniform(0, 10, (6, 6)) for _ in range(200)]
    for n_u, n_t in itertools.product(range(1, 8), repeat=2):
        if n_u <= n_t:
            cases += [rng.uniform(0, 10, (n_u, n_t)), rng.integers(0, 4, (n_u, n_t)).astype(float)]
    for w in cases:
        a = bottleneck_match(w)
        best, pi = oracle_bottleneck(w)
        bad += int(a.bottleneck != best or a.pi != pi)
        s = bottleneck_match(3.7 * w + 11.0)
        bad += int(s.pi != a.pi)
    report(7, "bottleneck matching vs permutation oracle", bad == 0, time.perf_counter() - t, 30,
           f"{len(cases)} instances incl. every shape up to 7x7, {bad} disagreements")


def test_ac08_dual_connectivity(report, data_dir):
    t = time.perf_counter()
    s = scenario.build(robust_raw(), data_dir)
    runs = {m: sim.run_session(s, m) for m in ("proposed", "prop_no_wifi", "lifi")}
    down = {m: r.overall()["downtime_pct"] for m, r in runs.items()}
    std = {m: r.overall()["psnr_std"] for m, r in runs.items()}
    ok = (down["proposed"] == 0.0 and down["prop_no_wifi"] == 22.0 and down["lifi"] == 22.0
          and std["proposed"] < std["prop_no_wifi"] and std["proposed"] < std["lifi"])
    report(8, "dual-connectivity robustness", ok, time.perf_counter() - t, 60,
           f"downtime {down['proposed']:.0f}/{down['prop_no_wifi']:.0f}/{down['lifi']:.0f}%, PSNR std "
           f"{std['proposed']:.2f} vs {std['prop_no_wifi']:.2f}/{std['lifi']:.2f} dB "
           f"(ratio {std['prop_no_wifi'] / std['proposed']:.2f})")


def test_ac09_golden_files(report, data_dir, tmp_path):
    t = time.perf_counter()
    ok = True
    for method in ("proposed", "prop_no_wifi"):
        for rep in range(2):
            res = sim.run_session(scenario.load(data_dir / "micro.json"), method)
            m, _ = sim.write_outputs(tmp_path / f"{method}{rep}", res)
            ok &= m.read_bytes() == (GOLDEN / f"micro_metrics_{method}.csv").read_bytes()
    ok &= (tmp_path / "proposed0" / "summary.csv").read_bytes() == (GOLDEN / "micro_summary_proposed.csv").read_bytes()
    report(9, "micro-scenario golden metrics", ok, time.perf_counter() - t, 5, "byte-for-byte, two runs per method")


def test_ac10_latency_formulas(report):
    t = time.perf_counter()
    rng = np.random.default_rng(1010)
    worst = 0.0
    for _ in range(20):
        shape = (int(rng.integers(1, 7)), int(rng.integers(1, 5)))
        R_w, R_x = rng.uniform(0.5, 20, shape), rng.uniform(0, 20, shape)
        raw, r_max = rng.random(shape) < 0.3, rng.uniform(20, 40, shape)
        sp = Splits(*rng.uniform(5, 200, 2), *rng.uniform(1e8, 5e9, 2))
        dev = DeviceProfile(z=sp.z_w + sp.z_x, r=sp.r_w + sp.r_x, b_h=rng.uniform(1, 4),
                            E_v=rng.uniform(1e5, 1e8), E_r=rng.uniform(1e5, 1e8))
        links = LinkBudget(*rng.uniform(50, 2000, 2))
        dT, Z_u = rng.uniform(0.2, 2), rng.uniform(100, 5000)
        got = np.array(latency_chain(R_w, R_x, raw, r_max, sp, dev, links, dT, Z_u).as_tuple())
        keys = list(np.ndindex(shape))
        want = np.array(oracle_latency({k: R_w[k] for k in keys}, {k: R_x[k] for k in keys},
                                       {k for k in keys if raw[k]}, {k: r_max[k] for k in keys}, sp.z_w, sp.z_x,
                                       sp.r_w, sp.r_x, dev.b_h, dev.E_v, dev.E_r, links.cw, links.cx, dT, Z_u))
        nz = want != 0
        worst = max(worst, float(np.max(np.abs(got[nz] / want[nz] - 1), initial=0.0)),
                    float(np.max(np.abs(got[~nz]), initial=0.0)))
    report(10, "latency terms vs spreadsheet recomputation", worst <= 1e-12, time.perf_counter() - t, 1,
           f"20 parameter sets, max relative deviation {worst:.1e}")
