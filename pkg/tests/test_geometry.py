import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import oracle_footprint, oracle_row_weight_mean
from vrarena.geometry import (GeometryError, HeadPose, TilingConfig, ViewportFootprint, normalize_footprint,
                              rasterize_viewport, spherical_tile_weights, tile_columns_touched,
                              viewport_distribution)

CFG64 = TilingConfig(raster_grid=64)


def _counts(pose, cfg):
    return np.array(oracle_footprint(pose.yaw, pose.pitch, pose.roll, cfg.panorama_width, cfg.panorama_height,
                                     cfg.tiles_x, cfg.tiles_y, cfg.fov_h, cfg.fov_v, cfg.raster_grid))


def test_pose_wraps_and_clamps():
    p = HeadPose(190.0, 95.0, -190.0)
    assert p.yaw == pytest.approx(-170.0)
    assert p.pitch == 90.0
    assert p.roll == pytest.approx(170.0)
    with pytest.raises(GeometryError):
        HeadPose(float("nan"), 0.0, 0.0)


@pytest.mark.parametrize("kw", [dict(panorama_width=7000), dict(tiles_x=7), dict(tiles_y=7),
                                dict(fov_h=180.0), dict(fov_v=0.0), dict(raster_grid=0)])
def test_tiling_rejects_invalid(kw):
    with pytest.raises(GeometryError):
        TilingConfig(**kw)


def test_front_pose_is_mirror_symmetric():
    fp = rasterize_viewport(HeadPose(0, 0, 0), CFG64).overlap
    np.testing.assert_array_equal(fp, fp[::-1, :])
    np.testing.assert_array_equal(fp, fp[:, ::-1])


def test_polar_pose_widens_and_wraps():
    front = rasterize_viewport(HeadPose(0, 0, 0), CFG64)
    polar = rasterize_viewport(HeadPose(120, -60, 0), CFG64)
    assert tile_columns_touched(polar) > tile_columns_touched(front)
    # the seam sits between column 5 and column 0
    assert polar.overlap[0].sum() > 0 and polar.overlap[5].sum() > 0


def test_matches_per_sample_oracle_2x2_fine_grid():
    cfg = TilingConfig(tiles_x=2, tiles_y=2, raster_grid=512)
    pose = HeadPose(0, 0, 0)
    np.testing.assert_array_equal(rasterize_viewport(pose, cfg).overlap, _counts(pose, cfg))
    s = normalize_footprint(rasterize_viewport(pose, cfg))
    np.testing.assert_allclose(s, _counts(pose, cfg) / cfg.raster_grid**2, rtol=0, atol=1e-15)


def test_footprint_totals_and_bounds():
    fp = rasterize_viewport(HeadPose(33, 12, 5), CFG64)
    assert fp.total == 64 * 64
    assert fp.overlap.min() >= 0


def test_normalize_rejects_empty():
    with pytest.raises(GeometryError, match="degenerate viewport"):
        normalize_footprint(ViewportFootprint(np.zeros((6, 4), dtype=int)))


def test_single_tile_footprint():
    cfg = TilingConfig(tiles_x=6, tiles_y=4, fov_h=10, fov_v=10, raster_grid=16)
    s = viewport_distribution(HeadPose(-150, 67.5, 0), cfg)
    assert s.max() == 1.0 and np.count_nonzero(s) == 1


def test_returned_footprint_is_a_copy():
    fp = rasterize_viewport(HeadPose(0, 0, 0), CFG64)
    fp.overlap[0, 0] = -5
    assert rasterize_viewport(HeadPose(0, 0, 0), CFG64).overlap[0, 0] >= 0


def test_weights_rows_symmetric_and_equator_heavier():
    w = spherical_tile_weights(TilingConfig())
    np.testing.assert_allclose(w[:, 0], w[:, 3], rtol=1e-12)
    np.testing.assert_allclose(w[:, 1], w[:, 2], rtol=1e-12)
    assert np.all(w[:, 1] > w[:, 0])
    assert np.all((w > 0) & (w <= 1))
    assert np.all(w == w[0])


def test_single_row_weight_is_two_over_pi():
    cfg = TilingConfig(panorama_width=7680, panorama_height=3840, tiles_x=6, tiles_y=1)
    w = spherical_tile_weights(cfg)
    num = oracle_row_weight_mean(3840, 0, 3840)
    assert w[0, 0] == pytest.approx(num, rel=1e-12)
    assert w[0, 0] == pytest.approx(2 / math.pi, rel=1e-6)


def test_weight_sum_matches_per_pixel_total():
    cfg = TilingConfig(panorama_width=720, panorama_height=360, tiles_x=6, tiles_y=4)
    w = spherical_tile_weights(cfg)
    total = sum(math.cos((j + 0.5 - 180) * math.pi / 360) for j in range(360)) * 720
    assert (w * cfg.tile_pixels).sum() == pytest.approx(total, rel=1e-9)


@given(st.floats(-180, 179.9), st.floats(-90, 90), st.floats(-180, 179.9))
def test_distribution_sums_to_one(yaw, pitch, roll):
    s = viewport_distribution(HeadPose(yaw, pitch, roll), CFG64)
    assert abs(s.sum() - 1.0) <= 1e-12
    assert s.min() >= 0


@given(st.integers(0, 5), st.floats(-29.0, 29.0))
def test_yaw_by_tile_width_rolls_columns(shift, yaw0):
    cfg = TilingConfig(raster_grid=64)
    base = rasterize_viewport(HeadPose(yaw0 + 0.123, 0, 0), cfg).overlap
    moved = rasterize_viewport(HeadPose(yaw0 + 0.123 + 60 * shift, 0, 0), cfg).overlap
    # equal up to samples sitting on pixel boundaries after the rotation
    assert np.abs(np.roll(base, shift, axis=0) - moved).sum() <= 0.005 * base.sum()


@given(st.floats(-180, 179.9), st.floats(0, 80), st.floats(0.5, 10))
def test_more_pitch_never_touches_fewer_columns(yaw, pitch, dp):
    cfg = TilingConfig(raster_grid=48)
    lo = tile_columns_touched(rasterize_viewport(HeadPose(yaw, pitch, 0), cfg))
    hi = tile_columns_touched(rasterize_viewport(HeadPose(yaw, min(90.0, pitch + dp), 0), cfg))
    assert hi >= lo
