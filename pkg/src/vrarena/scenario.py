"""Scenario files: strict JSON schema, defaults and resolution into simulation inputs."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .channel import Arena, ChannelParams, DropoutModel, Transmitter, default_arena
from .geometry import TilingConfig
from .navigation import NavigationTrace
from .optimizer import DeviceProfile
from .rdmodel import RdModel, ScalableTileTable, build_layer_table, synthetic_model
from . import traces

METHODS = ("proposed", "prop_no_wifi", "lifi", "dash")


class ScenarioError(ValueError):
    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer}: {message}" if pointer else message)
        self.pointer = pointer


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int = {"type": "integer"}
_posint = {"type": "integer", "minimum": 1}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

_synthetic_user = _obj({
    "kind": {"enum": ["static", "head_turn", "random_walk", "waypoints"]},
    "x": _num, "y": _num, "yaw": _num, "pitch": _num, "roll": _num,
    "yaw_rate": _num, "turn_start": _nonneg, "turn_end": _nonneg,
    "seed": _int, "head_speed": _nonneg, "pitch_spread": _nonneg, "move_speed": _nonneg,
    "points": {"type": "array", "items": _pair}, "times": {"type": "array", "items": _nonneg},
}, required=["kind"])

SCHEMA = _obj({
    "name": {"type": "string"},
    "seed": _int,
    "method": {"enum": list(METHODS)},
    "duration": _pos,
    "gop": _obj({"duration": _pos, "frame_rate": _pos, "profile_lag_gops": _nonneg}),
    "arena": _obj({
        "width": _pos, "depth": _pos, "ceiling_height": _pos, "cells_x": _posint, "cells_y": _posint,
        "tech": {"enum": ["vlc", "mmwave"]},
        "steering": {"enum": ["electronic_switch", "mechanical", "hybrid", "beamform"]},
        "tx_per_cell": {"type": ["integer", "null"], "minimum": 1},
        "receiver_height": _nonneg,
        "viewpoints": {"type": "array", "items": _pair},
        "transmitters": {"type": "array", "items": _obj({
            "position": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
            "cell": {"type": "integer", "minimum": 0}}, required=["position", "cell"])},
    }),
    "tiling": _obj({"panorama_width": _posint, "panorama_height": _posint, "tiles_x": _posint,
                    "tiles_y": _posint, "fov_h": _pos, "fov_v": _pos, "raster_grid": _posint}),
    "rd": _obj({"source": {"enum": ["synthetic", "file"]}, "seed": _int, "a_range": _pair,
                "b_range": _pair, "paths": {"type": "array", "items": {"type": "string"}},
                "viewpoint_models": _posint}),
    "layers": _obj({"count": {"type": "integer", "minimum": 2}, "r_min_mbps": _pos, "r_max_mbps": _pos}),
    "device": _obj({"z_mbps": _pos, "render_gpixels_per_s": _pos, "viewport_width": _posint,
                    "viewport_height": _posint, "bytes_per_pixel": _pos}),
    "server": _obj({"Z_mbps": _pos}),
    "budgets": _obj({"cw_mbps": _nonneg, "cx_mbps": _nonneg}),
    "channel": _obj({
        "vlc": {"type": "object", "additionalProperties": _num},
        "mmwave": {"type": "object", "additionalProperties": _num},
        "slew_rate_deg_s": _pos,
        "use_link_capacity": {"type": "boolean"},
    }),
    "dropout": _obj({"kind": {"enum": ["none", "bernoulli", "rotation_threshold", "schedule"]},
                     "p_drop": {"type": "number", "minimum": 0, "maximum": 1},
                     "yaw_rate_threshold": _nonneg,
                     "gops": {"type": "array", "items": {"type": "integer", "minimum": 0}}}),
    "assignment": _obj({"period": _posint, "hysteresis": _nonneg}),
    "scoring": _obj({"no_content_mse": _pos, "delivery": {"enum": ["continuous", "snapped"]},
                     "weighted_objective": {"type": "boolean"},
                     "baseline_tiles": {"enum": ["all", "support"]}}),
    "users": {"type": "array", "minItems": 1, "items": _obj({
        "id": {"type": "string"}, "trace": {"type": "string"}, "synthetic": _synthetic_user})},
})

DEFAULTS = {
    "name": "scenario",
    "seed": 0,
    "method": "proposed",
    "duration": 10.0,
    "gop": {"duration": 1.0, "frame_rate": 60.0, "profile_lag_gops": 1.0},
    "arena": {"width": 6.0, "depth": 4.0, "ceiling_height": 3.0, "cells_x": 3, "cells_y": 2,
              "tech": "vlc", "steering": "mechanical", "tx_per_cell": None, "receiver_height": 1.5,
              "viewpoints": []},
    "tiling": {"panorama_width": 7680, "panorama_height": 3840, "tiles_x": 6, "tiles_y": 4,
               "fov_h": 90.0, "fov_v": 90.0, "raster_grid": 64},
    "rd": {"source": "synthetic", "seed": 1, "a_range": [500.0, 5000.0], "b_range": [-1.2, -0.5],
           "viewpoint_models": 1},
    "layers": {"count": 8, "r_min_mbps": 1.0, "r_max_mbps": 100.0},
    "device": {"z_mbps": 300.0, "render_gpixels_per_s": 4.7, "viewport_width": 2048,
               "viewport_height": 2048, "bytes_per_pixel": 1.5},
    "server": {"Z_mbps": 12000.0},
    "budgets": {"cw_mbps": 600.0, "cx_mbps": 1000.0},
    "channel": {"vlc": {}, "mmwave": {}, "slew_rate_deg_s": 360.0, "use_link_capacity": True},
    "dropout": {"kind": "none", "p_drop": 0.0, "yaw_rate_threshold": 180.0, "gops": []},
    "assignment": {"period": 1, "hysteresis": 0.0},
    "scoring": {"no_content_mse": 255.0**2 / 4.0, "delivery": "continuous",
                "weighted_objective": True, "baseline_tiles": "all"},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("vlc", "mmwave"):
            out[k] = _merge(out[k], v)
        elif isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = copy.deepcopy(v)
    return out


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def validate(raw: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ScenarioError(e.message, _pointer(e.absolute_path))


def resolve_config(raw: dict) -> dict:
    """Validate a raw scenario dict and fill defaults."""
    validate(raw)
    cfg = _merge(DEFAULTS, raw)
    if "users" not in cfg:
        raise ScenarioError("'users' is a required property", "/")
    vlc_fields = set(ChannelParams().vlc.__dataclass_fields__)
    mm_fields = set(ChannelParams().mmwave.__dataclass_fields__)
    for key, allowed in (("vlc", vlc_fields), ("mmwave", mm_fields)):
        for k in cfg["channel"][key]:
            if k not in allowed:
                raise ScenarioError(f"unknown channel constant {k!r}", f"/channel/{key}/{k}")
    return cfg


@dataclass
class Scenario:
    name: str
    arena: Arena
    traces: list[NavigationTrace]
    tiling: TilingConfig
    models: list[RdModel]
    tables: list[ScalableTileTable]
    device: DeviceProfile
    Z: float
    cw: float
    cx: float
    channel: ChannelParams
    use_link_capacity: bool
    dropout: DropoutModel
    method: str
    gop: float
    frame_rate: float
    lag_gops: float
    n_gops: int
    seed: int
    period: int = 1
    hysteresis: float = 0.0
    no_content_mse: float = 255.0**2 / 4.0
    delivery: str = "continuous"
    weighted_objective: bool = True
    baseline_tiles: str = "all"
    config: dict = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return len(self.traces)


def _synth_trace(spec: dict, cfg: dict, uid: str, duration: float) -> NavigationTrace:
    kind = spec["kind"]
    a = cfg["arena"]
    g = dict(x=spec.get("x", a["width"] / 2), y=spec.get("y", a["depth"] / 2))
    if kind == "static":
        return traces.static_trace(g["x"], g["y"], spec.get("yaw", 0.0), spec.get("pitch", 0.0),
                                   spec.get("roll", 0.0), duration, user_id=uid)
    if kind == "head_turn":
        return traces.head_turn_trace(g["x"], g["y"], spec.get("yaw", 0.0), spec.get("pitch", 0.0),
                                      spec.get("yaw_rate", 90.0), spec.get("turn_start", 0.0),
                                      spec.get("turn_end", duration), duration, user_id=uid)
    if kind == "waypoints":
        if not spec.get("points") or len(spec.get("points")) != len(spec.get("times", [])):
            raise ScenarioError("waypoints need matching points and times", "/users")
        return traces.waypoint_trace(spec["points"], spec["times"], spec.get("yaw", 0.0),
                                     spec.get("pitch", 0.0), duration, user_id=uid)
    return traces.random_walk_trace(spec.get("seed", 0), a["width"], a["depth"], duration,
                                    head_speed=spec.get("head_speed", 30.0),
                                    pitch_spread=spec.get("pitch_spread", 20.0),
                                    move_speed=spec.get("move_speed", 0.0),
                                    x0=spec.get("x"), y0=spec.get("y"), yaw0=spec.get("yaw"), user_id=uid)


def build(raw: dict, base_dir: Path | str = ".") -> Scenario:
    cfg = resolve_config(raw)
    base_dir = Path(base_dir)
    duration = float(cfg["duration"])
    gop = cfg["gop"]
    n_gops = int(math.floor(duration / gop["duration"] + 1e-9))
    if n_gops < 1:
        raise ScenarioError("session shorter than one GOP", "/duration")
    # traces must cover the last frame of the last GOP
    span = n_gops * gop["duration"]

    user_traces = []
    for i, u in enumerate(cfg["users"]):
        uid = u.get("id", f"u{i}")
        if ("trace" in u) == ("synthetic" in u):
            raise ScenarioError("each user needs exactly one of 'trace' or 'synthetic'", f"/users/{i}")
        if "trace" in u:
            path = base_dir / u["trace"]
            if not path.exists():
                raise ScenarioError(f"trace file not found: {path}", f"/users/{i}/trace")
            user_traces.append(NavigationTrace.from_csv(path, uid))
        else:
            user_traces.append(_synth_trace(u["synthetic"], cfg, uid, span))

    a = cfg["arena"]
    try:
        arena = default_arena(len(user_traces), a["tech"], a["steering"], a["width"], a["depth"],
                              a["ceiling_height"], a["cells_x"], a["cells_y"], a["tx_per_cell"],
                              [tuple(v) for v in a["viewpoints"]], a["receiver_height"])
        if a.get("transmitters"):
            arena.transmitters = [Transmitter(j, tuple(t["position"]), a["tech"], a["steering"], t["cell"])
                                  for j, t in enumerate(a["transmitters"])]
            arena.__post_init__()
    except ValueError as e:
        raise ScenarioError(str(e), "/arena") from None
    for i, tr in enumerate(user_traces):
        if not (all(arena.contains(x, y) for x, y in zip(tr.x, tr.y))):
            raise ScenarioError("trace leaves the arena", f"/users/{i}")
    if a["steering"] != "electronic_switch" and len(arena.transmitters) < len(user_traces):
        raise ScenarioError("fewer transmitters than users", "/arena")

    try:
        tiling = TilingConfig(**cfg["tiling"])
    except ValueError as e:
        raise ScenarioError(str(e), "/tiling") from None

    rd = cfg["rd"]
    n_models = max(1, len(a["viewpoints"]) if rd["source"] == "synthetic" else len(rd.get("paths", [])))
    models = []
    if rd["source"] == "file":
        if not rd.get("paths"):
            raise ScenarioError("file source needs 'paths'", "/rd")
        for j, p in enumerate(rd["paths"]):
            path = base_dir / p
            if not path.exists():
                raise ScenarioError(f"model file not found: {path}", f"/rd/paths/{j}")
            models.append(RdModel.load(path))
    else:
        for j in range(n_models):
            models.append(synthetic_model(tiling.shape, rd["seed"] + j, rd["a_range"], rd["b_range"]))
    for j, m in enumerate(models):
        if m.shape != tiling.shape:
            raise ScenarioError("model tile grid does not match tiling", f"/rd/paths/{j}")
    lay = cfg["layers"]
    if not lay["r_min_mbps"] < lay["r_max_mbps"]:
        raise ScenarioError("r_min_mbps must be below r_max_mbps", "/layers")
    tables = [build_layer_table(m, lay["count"], lay["r_min_mbps"], lay["r_max_mbps"]) for m in models]

    d = cfg["device"]
    device = DeviceProfile.for_video(tiling, gop["frame_rate"], gop["duration"], d["z_mbps"],
                                     d["render_gpixels_per_s"] * 1e9,
                                     (d["viewport_width"], d["viewport_height"]), d["bytes_per_pixel"],
                                     cfg["server"]["Z_mbps"])
    try:
        channel = ChannelParams.from_dict(cfg["channel"])
        dm = cfg["dropout"]
        dropout = DropoutModel(dm["kind"], dm["p_drop"], dm["yaw_rate_threshold"], tuple(dm["gops"]))
    except (TypeError, ValueError) as e:
        raise ScenarioError(str(e), "/channel") from None

    return Scenario(
        name=cfg["name"], arena=arena, traces=user_traces, tiling=tiling, models=models, tables=tables,
        device=device, Z=cfg["server"]["Z_mbps"], cw=cfg["budgets"]["cw_mbps"], cx=cfg["budgets"]["cx_mbps"],
        channel=channel, use_link_capacity=cfg["channel"]["use_link_capacity"], dropout=dropout,
        method=cfg["method"], gop=gop["duration"], frame_rate=gop["frame_rate"],
        lag_gops=gop["profile_lag_gops"], n_gops=n_gops, seed=cfg["seed"],
        period=cfg["assignment"]["period"], hysteresis=cfg["assignment"]["hysteresis"],
        no_content_mse=cfg["scoring"]["no_content_mse"], delivery=cfg["scoring"]["delivery"],
        weighted_objective=cfg["scoring"]["weighted_objective"],
        baseline_tiles=cfg["scoring"]["baseline_tiles"], config=cfg,
    )


def load(path) -> Scenario:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON: {e.msg} (line {e.lineno})") from None
    return build(raw, path.parent)


def load_raw(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def set_path(raw: dict, path: str, value) -> dict:
    """Copy of ``raw`` with the dotted or JSON-pointer ``path`` set to ``value``."""
    parts = [p for p in (path.strip("/").split("/") if path.startswith("/") else path.split(".")) if p]
    if not parts:
        raise ScenarioError("empty parameter path")
    full = _merge(DEFAULTS, raw)
    node = full
    for p in parts[:-1]:
        if isinstance(node, list):
            node = node[int(p)]
        elif isinstance(node, dict) and p in node:
            node = node[p]
        else:
            raise ScenarioError(f"unknown parameter path {path!r}")
    leaf = parts[-1]
    if isinstance(node, dict):
        known = set(node) | set(SCHEMA_LEAVES.get(tuple(parts[:-1]), ()))
        if leaf not in known:
            raise ScenarioError(f"unknown parameter path {path!r}")
    out = copy.deepcopy(raw)
    node = out
    for p in parts[:-1]:
        if isinstance(node, list):
            node = node[int(p)]
        else:
            node = node.setdefault(p, {})
    if isinstance(node, list):
        node[int(leaf)] = value
    else:
        node[leaf] = value
    return out


def _schema_leaves(schema, prefix=()):
    out = {}
    props = schema.get("properties")
    if props:
        out[prefix] = tuple(props)
        for k, v in props.items():
            out.update(_schema_leaves(v, prefix + (k,)))
    return out


SCHEMA_LEAVES = _schema_leaves(SCHEMA)
