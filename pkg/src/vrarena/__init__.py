"""Simulation and allocation library for tiled 360 video over dual wireless links."""

from .geometry import HeadPose, TilingConfig, rasterize_viewport, spherical_tile_weights
from .navigation import GopInterval, NavigationTrace, profile_for_interval, predict_profile
from .rdmodel import RdModel, ScalableTileTable, build_layer_table, fit, psnr
from .assignment import bottleneck_match, max_min_snr_assign
from .optimizer import (DeviceProfile, LinkBudget, allocate_single_link, latency_chain,
                        optimize_multi_user, optimize_per_user)

__version__ = "0.1.0"
