"""Tile rate-distortion models and scalable layer tables.

Rates are in Mbps, distortion is luminance MSE on the 8-bit scale.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PEAK = 255.0


class RdError(ValueError):
    pass


def psnr(mse):
    """PSNR in dB for an 8-bit peak; the single conversion used across the package."""
    return 10.0 * np.log10(PEAK**2 / np.asarray(mse, dtype=float))


@dataclass(frozen=True)
class RdSample:
    tile: tuple[int, int]
    rate: float
    distortion: float

    def __post_init__(self):
        if not (self.rate > 0 and self.distortion > 0):
            raise RdError("rate and distortion must be positive")


@dataclass
class RdModel:
    """Per-tile parameters.

    power: ``D = a R^b`` with ``a > 0, b < 0``; exponential: ``D = a exp(-b R)``
    with ``a, b > 0`` (``a`` and ``b`` hold ``c`` and ``d``).
    """

    kind: str
    a: np.ndarray
    b: np.ndarray
    fit_error: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.kind not in ("power", "exponential"):
            raise RdError(f"unknown model kind {self.kind!r}")
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.a.shape != self.b.shape:
            raise RdError("parameter tables differ in shape")
        if np.any(self.a <= 0):
            raise RdError("scale parameter must be positive")
        if self.kind == "power" and np.any(self.b >= 0):
            raise RdError("power-law exponent must be negative")
        if self.kind == "exponential" and np.any(self.b <= 0):
            raise RdError("exponential decay must be positive")

    @property
    def shape(self):
        return self.a.shape

    def distortion(self, rate, tile=None):
        """Vectorized model value; ``rate`` broadcasts against the parameter table."""
        rate = np.asarray(rate, dtype=float)
        if np.any(rate <= 0):
            raise RdError("rate must be positive")
        a, b = (self.a, self.b) if tile is None else (self.a[tile], self.b[tile])
        if self.kind == "power":
            return a * rate**b
        return a * np.exp(-b * rate)

    def slope(self, rate, tile=None):
        """|dD/dR| at ``rate``."""
        rate = np.asarray(rate, dtype=float)
        a, b = (self.a, self.b) if tile is None else (self.a[tile], self.b[tile])
        if self.kind == "power":
            return a * np.abs(b) * rate ** (b - 1.0)
        return a * b * np.exp(-b * rate)

    def to_dict(self) -> dict:
        tiles = []
        for (n, m), a in np.ndenumerate(self.a):
            entry = {"tile_x": n, "tile_y": m, "a": float(a), "b": float(self.b[n, m])}
            if self.fit_error is not None:
                entry["fit_error"] = float(self.fit_error[n, m])
            tiles.append(entry)
        return {"kind": self.kind, "tiles_x": self.shape[0], "tiles_y": self.shape[1], "tiles": tiles}

    @classmethod
    def from_dict(cls, d: dict) -> "RdModel":
        shape = (int(d["tiles_x"]), int(d["tiles_y"]))
        a, b = np.full(shape, np.nan), np.full(shape, np.nan)
        for t in d["tiles"]:
            a[t["tile_x"], t["tile_y"]] = t["a"]
            b[t["tile_x"], t["tile_y"]] = t["b"]
        if np.isnan(a).any():
            raise RdError("model file does not cover every tile")
        return cls(d["kind"], a, b)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RdModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def eval_rd(model: RdModel, tile, rate: float) -> float:
    return float(model.distortion(rate, tile))


def _fit_tile(rates: np.ndarray, dist: np.ndarray, kind: str):
    if len(rates) < 2 or np.ptp(rates) == 0:
        raise RdError("singular design: need at least two distinct rates per tile")
    x = np.log(rates) if kind == "power" else rates
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, np.log(dist), rcond=None)
    a = math.exp(coef[0])
    b = coef[1] if kind == "power" else -coef[1]
    pred = a * rates**b if kind == "power" else a * np.exp(-b * rates)
    err = math.sqrt(float(np.mean(((pred - dist) / dist) ** 2)))
    return a, b, err


def fit(samples, kind: str = "power") -> RdModel:
    """Least-squares fit in the log domain, one parameter pair per tile."""
    if kind not in ("power", "exponential"):
        raise RdError(f"unknown model kind {kind!r}")
    by_tile: dict[tuple[int, int], list[RdSample]] = {}
    for s in samples:
        by_tile.setdefault(tuple(s.tile), []).append(s)
    if not by_tile:
        raise RdError("no samples")
    nx = max(t[0] for t in by_tile) + 1
    ny = max(t[1] for t in by_tile) + 1
    a, b, err = np.full((nx, ny), np.nan), np.full((nx, ny), np.nan), np.full((nx, ny), np.nan)
    for tile, ss in by_tile.items():
        rates = np.array([s.rate for s in ss])
        dist = np.array([s.distortion for s in ss])
        a[tile], b[tile], err[tile] = _fit_tile(rates, dist, kind)
    if np.isnan(a).any():
        raise RdError("samples do not cover a full tile grid")
    if kind == "power" and np.any(b >= 0) or kind == "exponential" and np.any(b <= 0):
        raise RdError("fitted model is not decreasing in rate")
    return RdModel(kind, a, b, err)


def read_samples(path) -> list[RdSample]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["tile_x", "tile_y", "rate_mbps", "mse"]
        if header is None or [h.strip() for h in header] != expected:
            raise RdError(f"line 1: expected header {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != 4:
                    raise ValueError
                out.append(RdSample((int(row[0]), int(row[1])), float(row[2]), float(row[3])))
            except (ValueError, RdError):
                raise RdError(f"line {lineno}: malformed sample {','.join(row)!r}") from None
    return out


def write_samples(path, samples) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tile_x", "tile_y", "rate_mbps", "mse"])
        for s in samples:
            w.writerow([s.tile[0], s.tile[1], repr(s.rate), repr(s.distortion)])


def synthetic_model(shape, seed: int, a_range=(500.0, 5000.0), b_range=(-1.2, -0.5)) -> RdModel:
    """Seeded power-law content: static tiles get steep curves, dynamic ones flat."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(a_range[0], a_range[1], size=shape)
    b = rng.uniform(b_range[0], b_range[1], size=shape)
    return RdModel("power", a, b)


def generate_samples(model: RdModel, rates, noise: float = 0.0, rng=None) -> list[RdSample]:
    rates = np.asarray(rates, dtype=float)
    out = []
    for tile in np.ndindex(model.shape):
        d = model.distortion(rates, tile)
        if noise:
            d = d * np.exp(rng.normal(0.0, noise, size=d.shape))
        out.extend(RdSample(tile, float(r), float(v)) for r, v in zip(rates, d))
    return out


@dataclass(frozen=True)
class ScalableTileTable:
    """Cumulative (rate, distortion) per embedded layer, arrays of shape (tiles_x, tiles_y, L)."""

    rates: np.ndarray
    distortions: np.ndarray

    def __post_init__(self):
        if self.rates.shape != self.distortions.shape or self.rates.ndim != 3:
            raise RdError("layer tables must share a (tiles_x, tiles_y, L) shape")
        if self.rates.shape[2] < 2:
            raise RdError("need at least two layers")
        if np.any(np.diff(self.rates, axis=2) <= 0):
            raise RdError("layer rates must increase")
        if np.any(np.diff(self.distortions, axis=2) >= 0):
            raise RdError("layer distortions must decrease")

    @property
    def layers(self) -> int:
        return self.rates.shape[2]

    @property
    def r_min(self) -> np.ndarray:
        return self.rates[..., 0]

    @property
    def r_max(self) -> np.ndarray:
        return self.rates[..., -1]

    def snap_down(self, rate: np.ndarray) -> np.ndarray:
        """Largest cumulative layer rate not exceeding ``rate`` (at least the base layer)."""
        rate = np.asarray(rate, dtype=float)
        tol = 1e-9 * self.rates
        ok = self.rates <= rate[..., None] + tol
        idx = np.maximum(ok.sum(axis=-1) - 1, 0)
        return np.take_along_axis(self.rates, idx[..., None], axis=-1)[..., 0]


def build_layer_table(model: RdModel, layers: int, r_min: float, r_max: float) -> ScalableTileTable:
    if layers < 2:
        raise RdError("need at least two layers")
    if not (0 < r_min < r_max):
        raise RdError("require 0 < r_min < r_max")
    ratio = (r_max / r_min) ** (1.0 / (layers - 1))
    steps = r_min * ratio ** np.arange(layers)
    steps[0], steps[-1] = r_min, r_max
    rates = np.broadcast_to(steps, model.shape + (layers,)).copy()
    dist = model.distortion(rates.transpose(2, 0, 1)).transpose(1, 2, 0)
    return ScalableTileTable(rates, dist)
