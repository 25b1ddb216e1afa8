import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vrarena.rdmodel import (RdError, RdModel, RdSample, ScalableTileTable, build_layer_table, eval_rd, fit,
                             generate_samples, psnr, read_samples, synthetic_model, write_samples)


def test_eval_examples():
    m = RdModel("power", [[2000.0]], [[-0.9]])
    assert eval_rd(m, (0, 0), 1.0) == 2000.0
    assert eval_rd(RdModel("power", [[2000.0]], [[-1.0]]), (0, 0), 10.0) == pytest.approx(200.0, rel=1e-15)
    assert eval_rd(RdModel("exponential", [[1500.0]], [[0.5]]), (0, 0), 2.0) == pytest.approx(1500 * math.exp(-1))
    with pytest.raises(RdError):
        eval_rd(m, (0, 0), 0.0)


def test_psnr_anchor():
    assert psnr(65.025) == pytest.approx(30.0, abs=1e-12)


def test_two_samples_interpolate_exactly():
    s = [RdSample((0, 0), 1.0, 900.0), RdSample((0, 0), 4.0, 300.0)]
    m = fit(s, "power")
    assert m.fit_error[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert eval_rd(m, (0, 0), 4.0) == pytest.approx(300.0, rel=1e-12)


def test_noiseless_recovery():
    truth = RdModel("power", np.full((2, 3), 2000.0), np.full((2, 3), -0.9))
    m = fit(generate_samples(truth, [0.5, 1, 2, 4, 8, 16]), "power")
    np.testing.assert_allclose(m.a, truth.a, rtol=1e-9)
    np.testing.assert_allclose(m.b, truth.b, rtol=1e-9)
    assert m.shape == (2, 3)


def test_power_beats_exponential_on_power_data():
    truth = synthetic_model((6, 4), 3)
    s = generate_samples(truth, np.geomspace(0.5, 50, 8))
    assert np.all(fit(s, "power").fit_error <= fit(s, "exponential").fit_error)


def test_singular_design():
    with pytest.raises(RdError):
        fit([RdSample((0, 0), 2.0, 100.0), RdSample((0, 0), 2.0, 90.0)])
    with pytest.raises(RdError):
        fit([RdSample((0, 0), 2.0, 100.0)])


def test_layer_tables():
    m = synthetic_model((2, 2), 0)
    np.testing.assert_array_equal(build_layer_table(m, 2, 1.5, 9.0).rates[0, 0], [1.5, 9.0])
    np.testing.assert_allclose(build_layer_table(m, 4, 1.0, 8.0).rates[1, 1], [1, 2, 4, 8], rtol=1e-15)
    t = build_layer_table(m, 6, 0.5, 40.0)
    assert np.all(np.diff(t.distortions, axis=2) < 0)
    for bad in [(1, 1.0, 2.0), (3, 0.0, 2.0), (3, 2.0, 1.0)]:
        with pytest.raises(RdError):
            build_layer_table(m, *bad)


def test_snap_down():
    t = build_layer_table(synthetic_model((1, 1), 0), 4, 1.0, 8.0)
    np.testing.assert_array_equal(t.snap_down(np.array([[[3.9]]])[..., 0]), [[2.0]])
    np.testing.assert_array_equal(t.snap_down(np.array([[4.0]])), [[4.0]])
    np.testing.assert_array_equal(t.snap_down(np.array([[0.3]])), [[1.0]])


def test_table_invariants_enforced():
    with pytest.raises(RdError):
        ScalableTileTable(np.array([[[1.0, 1.0]]]), np.array([[[5.0, 4.0]]]))


def test_sample_csv(tmp_path):
    s = generate_samples(synthetic_model((2, 1), 1), [1.0, 3.0])
    p = tmp_path / "s.csv"
    write_samples(p, s)
    assert read_samples(p) == s
    p.write_text("tile_x,tile_y,rate_mbps,mse\n0,0,1.0,5\n0,0,abc,3\n")
    with pytest.raises(RdError, match="line 3"):
        read_samples(p)


def test_model_json_round_trip(tmp_path):
    m = synthetic_model((3, 2), 4)
    m.save(tmp_path / "m.json")
    back = RdModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.a, m.a)
    np.testing.assert_array_equal(back.b, m.b)


@given(st.integers(0, 10_000))
def test_monotone_models(seed):
    m = synthetic_model((3, 2), seed)
    r = np.geomspace(0.1, 500, 40)
    d = np.array([m.distortion(x) for x in r])
    assert np.all(np.diff(d, axis=0) < 0)


@given(st.integers(0, 10_000))
def test_round_trip_under_noise(seed):
    truth = synthetic_model((2, 2), seed)
    rng = np.random.default_rng(seed)
    rates = np.geomspace(0.5, 50, 12)
    m = fit(generate_samples(truth, rates, noise=0.05, rng=rng), "power")
    # predictions stay within a few fit errors of the truth over the sampled range
    for tile in np.ndindex(2, 2):
        rel = np.abs(m.distortion(rates, tile) / truth.distortion(rates, tile) - 1)
        assert rel.max() <= 4 * m.fit_error[tile] + 0.02
