"""Equirectangular mapping, viewport rasterization and spherical tile weights.

Tiles are indexed ``(n, m)`` with ``n`` the column (longitude, -180 -> 180
left to right) and ``m`` the row (latitude, +90 -> -90 top to bottom).
Tables over tiles are numpy arrays of shape ``(tiles_x, tiles_y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class GeometryError(ValueError):
    pass


def _wrap180(angle: float) -> float:
    a = math.fmod(angle + 180.0, 360.0)
    if a < 0:
        a += 360.0
    return a - 180.0


@dataclass(frozen=True)
class HeadPose:
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        for name in ("yaw", "pitch", "roll"):
            if not math.isfinite(getattr(self, name)):
                raise GeometryError(f"{name} must be finite")
        object.__setattr__(self, "yaw", _wrap180(float(self.yaw)))
        object.__setattr__(self, "pitch", min(90.0, max(-90.0, float(self.pitch))))
        object.__setattr__(self, "roll", _wrap180(float(self.roll)))


@dataclass(frozen=True)
class TilingConfig:
    panorama_width: int = 7680
    panorama_height: int = 3840
    tiles_x: int = 6
    tiles_y: int = 4
    fov_h: float = 90.0
    fov_v: float = 90.0
    raster_grid: int = 256

    def __post_init__(self):
        if self.panorama_width != 2 * self.panorama_height:
            raise GeometryError("equirectangular panorama must be 2:1")
        if self.tiles_x <= 0 or self.panorama_width % self.tiles_x:
            raise GeometryError("tiles_x must divide panorama_width")
        if self.tiles_y <= 0 or self.panorama_height % self.tiles_y:
            raise GeometryError("tiles_y must divide panorama_height")
        if not (0 < self.fov_h < 180 and 0 < self.fov_v < 180):
            raise GeometryError("fov must lie in (0, 180) degrees")
        if self.raster_grid < 1:
            raise GeometryError("raster_grid must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.tiles_x, self.tiles_y)

    @property
    def tile_width(self) -> int:
        return self.panorama_width // self.tiles_x

    @property
    def tile_height(self) -> int:
        return self.panorama_height // self.tiles_y

    @property
    def tile_pixels(self) -> int:
        return self.tile_width * self.tile_height


@dataclass(frozen=True)
class ViewportFootprint:
    overlap: np.ndarray  # (tiles_x, tiles_y) sample counts

    @property
    def total(self) -> int:
        return int(self.overlap.sum())


def rotation_matrix(pose: HeadPose) -> np.ndarray:
    """Camera-to-world rotation, yaw about +z, then pitch, then roll about the view axis.

    Camera frame: +x forward, +y right (increasing longitude), +z up.
    """
    y, p, r = (math.radians(v) for v in (pose.yaw, pose.pitch, pose.roll))
    cy, sy = math.cos(y), math.sin(y)
    cp, sp = math.cos(p), math.sin(p)
    cr, sr = math.cos(r), math.sin(r)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    # positive pitch raises the forward axis toward +z
    ry = np.array([[cp, 0.0, -sp], [0.0, 1.0, 0.0], [sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


@lru_cache(maxsize=16)
def _camera_rays(fov_h: float, fov_v: float, grid: int) -> np.ndarray:
    th = math.tan(math.radians(fov_h) / 2.0)
    tv = math.tan(math.radians(fov_v) / 2.0)
    u = ((np.arange(grid) + 0.5) / grid * 2.0 - 1.0) * th
    v = (1.0 - (np.arange(grid) + 0.5) / grid * 2.0) * tv
    uu, vv = np.meshgrid(u, v, indexing="xy")
    rays = np.stack([np.ones_like(uu), uu, vv], axis=-1).reshape(-1, 3)
    rays.setflags(write=False)
    return rays


def _pixels_to_tiles(lon_deg: np.ndarray, lat_deg: np.ndarray, cfg: TilingConfig):
    w, h = cfg.panorama_width, cfg.panorama_height
    px = np.floor((lon_deg + 180.0) / 360.0 * w).astype(np.int64) % w
    py = np.clip(np.floor((90.0 - lat_deg) / 180.0 * h).astype(np.int64), 0, h - 1)
    return px // cfg.tile_width, py // cfg.tile_height


def rasterize_viewport(pose: HeadPose, cfg: TilingConfig) -> ViewportFootprint:
    """Count viewport sample rays landing in each tile of the panorama."""
    return ViewportFootprint(_rasterize_cached(pose, cfg).copy())


@lru_cache(maxsize=65536)
def _rasterize_cached(pose: HeadPose, cfg: TilingConfig) -> np.ndarray:
    rays = _camera_rays(cfg.fov_h, cfg.fov_v, cfg.raster_grid) @ rotation_matrix(pose).T
    lon = np.degrees(np.arctan2(rays[:, 1], rays[:, 0]))
    lat = np.degrees(np.arctan2(rays[:, 2], np.hypot(rays[:, 0], rays[:, 1])))
    n, m = _pixels_to_tiles(lon, lat, cfg)
    counts = np.bincount(n * cfg.tiles_y + m, minlength=cfg.tiles_x * cfg.tiles_y)
    out = counts.reshape(cfg.tiles_x, cfg.tiles_y)
    out.setflags(write=False)
    return out


def normalize_footprint(fp: ViewportFootprint) -> np.ndarray:
    total = fp.overlap.sum()
    if total <= 0:
        raise GeometryError("degenerate viewport")
    return fp.overlap / total


def viewport_distribution(pose: HeadPose, cfg: TilingConfig) -> np.ndarray:
    """Normalized per-tile share ``s_nm`` of the viewport for one pose."""
    return normalize_footprint(rasterize_viewport(pose, cfg))


def pixel_row_weights(height: int) -> np.ndarray:
    j = np.arange(height)
    return np.cos((j + 0.5 - height / 2.0) * math.pi / height)


def spherical_tile_weights(cfg: TilingConfig) -> np.ndarray:
    """Latitude weights per tile: the mean per-pixel WS-MSE cosine over the tile's rows."""
    rows = pixel_row_weights(cfg.panorama_height).reshape(cfg.tiles_y, cfg.tile_height)
    row_w = rows.mean(axis=1)
    return np.tile(row_w, (cfg.tiles_x, 1))


def tile_columns_touched(fp: ViewportFootprint) -> int:
    return int(np.count_nonzero(fp.overlap.sum(axis=1)))
