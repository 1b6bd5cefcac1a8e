"""Diagonal decoding schedules for autoregressive token-grid generation."""

from .errors import BoundsError, ConfigError, DiagDError, InvariantError, ResourceError, UnsupportedBackendError
from .grid import Coordinate, DiagConfig, GridGeometry, TokenGrid, config_header, raster_coord, raster_index, validate_config
from .scheduler import Schedule, SpeedupReport, build_schedule, preset, speedup, step_count
from .visibility import VisibilityMask, build_finetune_mask, predecessor, visible_set
from .models import KVCache, LocalFieldModel, TinyTransformer, attention_dump, lfm_conditional, tt_forward
from .decoder import DecodeReport, DecodeSession, decode_diagd, decode_ntp, sample_stream
from .analysis import CostModel, DivergenceReport, calibrate, divergence, report_tables, throughput_estimate

__version__ = "0.1.0"
