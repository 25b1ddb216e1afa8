"""Arena geometry, xGen and sub-6 GHz link models, steering and transient dropouts.

All lengths in meters, angles in degrees, capacities in Mbps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .navigation import NavigationTrace, max_yaw_rate

TECHS = ("vlc", "mmwave")
STEERING = ("electronic_switch", "mechanical", "hybrid", "beamform")


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class Transmitter:
    id: int
    position: tuple[float, float, float]
    tech: str
    steering: str
    cell: int


@dataclass
class Arena:
    width: float = 6.0
    depth: float = 4.0
    ceiling_height: float = 3.0
    cells_x: int = 3
    cells_y: int = 2
    transmitters: list[Transmitter] = field(default_factory=list)
    viewpoint_locations: list[tuple[float, float]] = field(default_factory=list)
    receiver_height: float = 1.5

    def __post_init__(self):
        if self.width <= 0 or self.depth <= 0 or self.cells_x < 1 or self.cells_y < 1:
            raise ChannelError("arena dimensions and cell counts must be positive")
        if not 0 <= self.receiver_height < self.ceiling_height:
            raise ChannelError("receivers must sit below the ceiling")
        for tx in self.transmitters:
            if tx.tech not in TECHS or tx.steering not in STEERING:
                raise ChannelError(f"transmitter {tx.id}: unknown tech or steering mode")
            if tx.position[2] <= 0:
                raise ChannelError(f"transmitter {tx.id} must be above the floor")

    @property
    def n_cells(self) -> int:
        return self.cells_x * self.cells_y

    @property
    def cell_size(self) -> tuple[float, float]:
        return self.width / self.cells_x, self.depth / self.cells_y

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width and 0.0 <= y <= self.depth

    def cell_of(self, x: float, y: float) -> int:
        """Cell index ``iy * cells_x + ix``; a point on a boundary belongs to the lower-index cell."""
        cw, cd = self.cell_size
        ix = min(max(math.ceil(x / cw) - 1, 0), self.cells_x - 1)
        iy = min(max(math.ceil(y / cd) - 1, 0), self.cells_y - 1)
        return iy * self.cells_x + ix

    def cell_center(self, cell: int) -> tuple[float, float]:
        cw, cd = self.cell_size
        iy, ix = divmod(cell, self.cells_x)
        return ((ix + 0.5) * cw, (iy + 0.5) * cd)

    def receiver_point(self, x: float, y: float) -> np.ndarray:
        return np.array([x, y, self.receiver_height])

    def cell_transmitter(self, cell: int) -> Transmitter:
        for tx in self.transmitters:
            if tx.cell == cell:
                return tx
        raise ChannelError(f"no transmitter above cell {cell}")


def transmitters_per_cell(n_users: int, n_cells: int) -> int:
    # footnote rule ceil(N_u / N_c), N_u users and N_c cells as used in the main text
    return max(1, math.ceil(n_users / n_cells))


def default_arena(n_users: int = 6, tech: str = "vlc", steering: str = "mechanical",
                  width=6.0, depth=4.0, ceiling=3.0, cells_x=3, cells_y=2,
                  tx_per_cell: int | None = None, viewpoints=None, receiver_height=1.5,
                  tx_spacing=0.2) -> Arena:
    arena = Arena(width, depth, ceiling, cells_x, cells_y, [], list(viewpoints or []), receiver_height)
    k = tx_per_cell or transmitters_per_cell(n_users, arena.n_cells)
    txs = []
    for cell in range(arena.n_cells):
        cx, cy = arena.cell_center(cell)
        for j in range(k):
            off = (j - (k - 1) / 2.0) * tx_spacing
            txs.append(Transmitter(len(txs), (cx + off, cy, ceiling), tech, steering, cell))
    arena.transmitters = txs
    arena.__post_init__()
    return arena


@dataclass(frozen=True)
class VlcParams:
    tx_power_w: float = 1.0
    half_power_angle_steered: float = 15.0
    half_power_angle_static: float = 60.0
    detector_area_m2: float = 1e-4
    responsivity_a_per_w: float = 0.5
    noise_psd_a2_per_hz: float = 1e-22
    bandwidth_hz: float = 1e9
    receiver_fov: float = 70.0
    capacity_cap_mbps: float = 10000.0


@dataclass(frozen=True)
class MmwaveParams:
    tx_power_dbm: float = 10.0
    tx_gain_dbi: float = 20.0
    rx_gain_dbi: float = 10.0
    sidelobe_attenuation_db: float = 20.0
    beamwidth: float = 20.0
    path_loss_ref_db: float = 68.0
    path_loss_exponent: float = 2.0
    bandwidth_hz: float = 2e9
    noise_figure_db: float = 7.0
    receiver_fov: float = 80.0
    coverage_half_angle: float = 75.0
    capacity_cap_mbps: float = 6000.0


@dataclass(frozen=True)
class ChannelParams:
    vlc: VlcParams = field(default_factory=VlcParams)
    mmwave: MmwaveParams = field(default_factory=MmwaveParams)
    slew_rate_deg_s: float = 360.0

    @classmethod
    def from_dict(cls, d: dict | None) -> "ChannelParams":
        d = d or {}
        return cls(VlcParams(**d.get("vlc", {})), MmwaveParams(**d.get("mmwave", {})),
                   d.get("slew_rate_deg_s", 360.0))


@dataclass(frozen=True)
class LinkState:
    snr_db: float
    sinr_db: float
    capacity: float
    aligned: bool = True
    dropped: bool = False

    def degraded(self, aligned: bool | None = None, dropped: bool | None = None) -> "LinkState":
        aligned = self.aligned if aligned is None else aligned
        dropped = self.dropped if dropped is None else dropped
        cap = self.capacity if aligned and not dropped else 0.0
        return LinkState(self.snr_db, self.sinr_db, cap, aligned, dropped)


def _angle(u: np.ndarray, v: np.ndarray) -> float:
    c = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


_DOWN = np.array([0.0, 0.0, -1.0])
_UP = np.array([0.0, 0.0, 1.0])


def _beam_axis(tx_pos: np.ndarray, target) -> np.ndarray:
    return _DOWN if target is None else np.asarray(target, dtype=float) - tx_pos


def _vlc_gain(p: VlcParams, tx_pos, axis, rx, steered: bool) -> float:
    """Lambertian line-of-sight DC gain; zero outside the receiver FOV or behind the emitter."""
    dvec = rx - tx_pos
    d = float(np.linalg.norm(dvec))
    phi = _angle(axis, dvec)
    psi = _angle(_UP, -dvec)
    if psi > p.receiver_fov or phi >= 90.0:
        return 0.0
    half = p.half_power_angle_steered if steered else p.half_power_angle_static
    m = -math.log(2.0) / math.log(math.cos(math.radians(half)))
    return ((m + 1.0) * p.detector_area_m2 / (2.0 * math.pi * d * d)
            * math.cos(math.radians(phi)) ** m * math.cos(math.radians(psi)))


def _mmwave_rx_dbm(p: MmwaveParams, tx_pos, axis, rx) -> float:
    dvec = rx - tx_pos
    d = max(float(np.linalg.norm(dvec)), 1e-3)
    gain = p.tx_gain_dbi if _angle(axis, dvec) <= p.beamwidth / 2.0 else p.tx_gain_dbi - p.sidelobe_attenuation_db
    pl = p.path_loss_ref_db + 10.0 * p.path_loss_exponent * math.log10(d)
    return p.tx_power_dbm + gain + p.rx_gain_dbi - pl


def _db(x: float) -> float:
    return 10.0 * math.log10(x) if x > 0 else -math.inf


def xgen_link(tx: Transmitter, rx_point, interferers=(), params: ChannelParams | None = None,
              target="self") -> LinkState:
    """Link from ``tx`` to a receiver at ``rx_point`` (3-vector).

    ``target`` is where the beam points: ``"self"`` steers at this receiver,
    ``None`` points straight down. ``interferers`` holds ``(tx, target)`` pairs
    for the other active transmitters, ``target`` as above but explicit.
    """
    params = params or ChannelParams()
    rx = np.asarray(rx_point, dtype=float)
    pos = np.asarray(tx.position, dtype=float)
    tgt = rx if isinstance(target, str) else target
    psi = _angle(_UP, pos - rx)
    if tx.tech == "vlc":
        p = params.vlc
        if psi > p.receiver_fov:
            return LinkState(-math.inf, -math.inf, 0.0, aligned=False)
        steered = tgt is not None
        h = _vlc_gain(p, pos, _beam_axis(pos, tgt), rx, steered)
        signal = (p.responsivity_a_per_w * p.tx_power_w * h) ** 2
        noise = p.noise_psd_a2_per_hz * p.bandwidth_hz
        interference = 0.0
        for itx, itgt in interferers:
            ipos = np.asarray(itx.position, dtype=float)
            hi = _vlc_gain(p, ipos, _beam_axis(ipos, itgt), rx, itgt is not None)
            interference += (p.responsivity_a_per_w * p.tx_power_w * hi) ** 2
        bandwidth, cap = p.bandwidth_hz, p.capacity_cap_mbps
        snr, sinr = signal / noise, signal / (noise + interference)
    else:
        p = params.mmwave
        if psi > p.receiver_fov:
            return LinkState(-math.inf, -math.inf, 0.0, aligned=False)
        noise_dbm = -174.0 + 10.0 * math.log10(p.bandwidth_hz) + p.noise_figure_db
        signal = 10 ** (_mmwave_rx_dbm(p, pos, _beam_axis(pos, tgt), rx) / 10.0)
        noise = 10 ** (noise_dbm / 10.0)
        interference = 0.0
        for itx, itgt in interferers:
            ipos = np.asarray(itx.position, dtype=float)
            interference += 10 ** (_mmwave_rx_dbm(p, ipos, _beam_axis(ipos, itgt), rx) / 10.0)
        bandwidth, cap = p.bandwidth_hz, p.capacity_cap_mbps
        snr, sinr = signal / noise, signal / (noise + interference)
    capacity = min(bandwidth * math.log2(1.0 + sinr) / 1e6, cap)
    return LinkState(_db(snr), min(_db(sinr), _db(snr)), capacity, aligned=True)


def wifi_link(n_users: int, cw_mbps: float) -> LinkState:
    """Sub-6 GHz share; distance independent and never dropped."""
    if n_users < 1:
        raise ChannelError("need at least one user")
    return LinkState(math.inf, math.inf, cw_mbps / n_users, aligned=True, dropped=False)


@dataclass
class SteerResult:
    aligned: list[bool]
    serving: list[int]  # transmitter index actually serving each user
    targets: dict[int, tuple[float, float, float]]


def steer(arena: Arena, assignment, user_positions, mode: str, dt: float,
          prev_targets: dict | None = None, slew_rate: float = 360.0,
          params: ChannelParams | None = None) -> SteerResult:
    """Alignment of each user's xGen link for one GOP.

    ``assignment`` maps user index to transmitter index; ``prev_targets`` holds
    the receiver point each transmitter pointed at during the previous GOP.
    """
    if mode not in STEERING:
        raise ChannelError(f"unknown steering mode {mode!r}")
    params = params or ChannelParams()
    prev_targets = dict(prev_targets or {})
    rx = [arena.receiver_point(x, y) for x, y in user_positions]
    cells = [arena.cell_of(x, y) for x, y in user_positions]
    occupancy: dict[int, int] = {}
    for c in cells:
        occupancy[c] = occupancy.get(c, 0) + 1

    aligned, serving, targets = [], [], {}
    for u, t in enumerate(assignment):
        tx = arena.transmitters[t]
        if mode == "electronic_switch":
            aligned.append(cells[u] == tx.cell)
            serving.append(t)
            continue
        if mode == "beamform":
            off = _angle(_DOWN, rx[u] - np.asarray(tx.position))
            aligned.append(off <= params.mmwave.coverage_half_angle)
            serving.append(t)
            targets[t] = tuple(rx[u])
            continue
        if mode == "hybrid" and occupancy[cells[u]] > 1:
            # shared cell: served by the static transmitter above that cell
            ctx = arena.cell_transmitter(cells[u])
            aligned.append(True)
            serving.append(ctx.id)
            continue
        pos = np.asarray(tx.position)
        prev = prev_targets.get(t)
        if prev is None:
            ok = True
        else:
            ok = _angle(np.asarray(prev) - pos, rx[u] - pos) <= slew_rate * dt + 1e-9
        aligned.append(ok)
        serving.append(t)
        targets[t] = tuple(rx[u])
    return SteerResult(aligned, serving, targets)


@dataclass(frozen=True)
class DropoutModel:
    kind: str = "none"
    p_drop: float = 0.0
    yaw_rate_threshold: float = 180.0
    gops: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("none", "bernoulli", "rotation_threshold", "schedule"):
            raise ChannelError(f"unknown dropout kind {self.kind!r}")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ChannelError("p_drop must lie in [0, 1]")


def sample_dropout(model: DropoutModel, segment: NavigationTrace | None, rng: np.random.Generator,
                   gop: int = 0) -> bool:
    if model.kind == "none":
        return False
    if model.kind == "bernoulli":
        return bool(rng.random() < model.p_drop)
    if model.kind == "schedule":
        return gop in model.gops
    return segment is not None and max_yaw_rate(segment) > model.yaw_rate_threshold
