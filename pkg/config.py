"""
Configuration settings for the stalled-vehicle tracking engine
"""
import os
import logging
from dataclasses import dataclass, fields, replace
from typing import Dict, Any, Iterable, Iterator, Optional, Tuple, get_type_hints

from utils.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class EngineConfig:
    """Thresholds for tracking, anomaly detection and evaluation"""
    # Association gates and edge weights
    iou_gate: float = 0.4
    dist_gate_px: float = 30.0
    sim_gate: float = 0.6
    alpha: float = 0.4
    beta: float = 0.6
    require_features: bool = False
    max_lost_frames: int = 150

    # Video
    fps: float = 30.0
    frame_width: int = 1920
    frame_height: int = 1080

    # Temporal structure
    dwell_threshold_frames: int = 1800
    speed_window_frames: int = 100
    speed_stop_threshold_px_per_frame: float = 0.5
    stop_radius_px: float = 10.0
    scene_margin_px: float = 10.0

    # Spatial structure
    quadtree_capacity: int = 4
    quadtree_max_depth: int = 12
    quadtree_radius_px: Optional[float] = None

    # Area of interest
    roi_speed_threshold_px_per_frame: float = 1.0
    roi_warmup_frames: int = 900

    # Alarm colours, in seconds of standstill
    severity_green_s: float = 60.0
    severity_yellow_s: float = 120.0
    severity_red_s: float = 180.0

    # Evaluation
    mot_iou_threshold: float = 0.5
    mostly_tracked_ratio: float = 0.8
    mostly_lost_ratio: float = 0.2
    anomaly_window_s: float = 10.0
    nrmse_max_s: float = 300.0

    @property
    def search_radius_px(self) -> float:
        """QuadTree radius; follows the distance gate unless set explicitly"""
        if self.quadtree_radius_px is None:
            return self.dist_gate_px
        return self.quadtree_radius_px

    @property
    def frame_extent(self) -> Tuple[int, int]:
        return (self.frame_width, self.frame_height)

    def with_gates(self, sim_gate: float, iou_gate: float, dist_gate_px: float) -> "EngineConfig":
        return replace(self, sim_gate=sim_gate, iou_gate=iou_gate, dist_gate_px=dist_gate_px)

    def validate(self) -> "EngineConfig":
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise ConfigError(f"alpha + beta must equal 1, got {self.alpha} + {self.beta}")
        if not 0.0 <= self.iou_gate <= 1.0:
            raise ConfigError(f"iou_gate must be within [0, 1], got {self.iou_gate}")
        if not -1.0 <= self.sim_gate <= 1.0:
            raise ConfigError(f"sim_gate must be within [-1, 1], got {self.sim_gate}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")

        positive = ("fps", "dwell_threshold_frames", "speed_window_frames", "quadtree_capacity",
                    "quadtree_max_depth", "frame_width", "frame_height", "nrmse_max_s")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")

        non_negative = ("dist_gate_px", "max_lost_frames", "speed_stop_threshold_px_per_frame",
                        "stop_radius_px", "scene_margin_px", "roi_speed_threshold_px_per_frame",
                        "roi_warmup_frames", "anomaly_window_s", "severity_green_s")
        for name in non_negative:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")

        if self.quadtree_radius_px is not None and self.quadtree_radius_px < 0:
            raise ConfigError(f"quadtree_radius_px must be >= 0, got {self.quadtree_radius_px}")
        if not self.severity_green_s <= self.severity_yellow_s <= self.severity_red_s:
            raise ConfigError("severity boundaries must satisfy green <= yellow <= red")
        if not 0.0 <= self.mot_iou_threshold <= 1.0:
            raise ConfigError(f"mot_iou_threshold must be within [0, 1], got {self.mot_iou_threshold}")
        if not 0.0 <= self.mostly_lost_ratio <= self.mostly_tracked_ratio <= 1.0:
            raise ConfigError("need 0 <= mostly_lost_ratio <= mostly_tracked_ratio <= 1")

        if abs(self.dwell_threshold_frames - 60.0 * self.fps) > 1e-9:
            logger.warning(
                f"dwell_threshold_frames={self.dwell_threshold_frames} is not one minute at "
                f"{self.fps} fps ({60.0 * self.fps:g} frames)"
            )
        return self


@dataclass
class SystemConfig:
    """Process-wide settings read from the environment"""
    # Logging
    log_level: str = "INFO"
    log_file: Optional[str] = None

    # Outputs
    manifest_name: str = "manifest.json"
    detections_format: str = "detections-csv/1"
    tracks_format: str = "tracks-csv/1"
    events_format: str = "events-csv/1"


class Config:
    """Main configuration class"""

    def __init__(self):
        self.system = SystemConfig()
        self._load_from_env()

    def _load_from_env(self):
        """Load configuration from environment variables"""
        self.system.log_level = os.getenv("LOG_LEVEL", self.system.log_level).upper()
        self.system.log_file = os.getenv("LOG_FILE", self.system.log_file) or None
        self.system.manifest_name = os.getenv("MANIFEST_NAME", self.system.manifest_name)

    def format_versions(self) -> Dict[str, str]:
        return {
            "detections": self.system.detections_format,
            "tracks": self.system.tracks_format,
            "events": self.system.events_format,
        }

    def get_logging_config(self, verbose: bool = False) -> Dict[str, Any]:
        """Get logging configuration"""
        handlers = [{"type": "stream"}]
        if self.system.log_file:
            handlers.append({"type": "file", "filename": self.system.log_file})
        return {
            "level": logging.DEBUG if verbose else getattr(logging, self.system.log_level, logging.INFO),
            "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            "handlers": handlers,
        }


def parse_key_value_lines(lines: Iterable[str], source: str,
                          first_line: int = 1) -> Iterator[Tuple[int, str, str]]:
    """
    Yield (line number, key, raw value) from `key = value` text.

    `#` starts a comment; blank lines are skipped.
    """
    for lineno, raw in enumerate(lines, first_line):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", source, lineno)
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError("missing key before '='", source, lineno)
        yield lineno, key, value


def _coerce(value: str, kind: Any, key: str, source: str, lineno: int) -> Any:
    if kind == Optional[float]:
        if value.lower() in ("", "none", "auto"):
            return None
        kind = float
    try:
        if kind is bool:
            lowered = value.lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError(value)
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}",
                          source, lineno) from None
    return value


_ENGINE_TYPES = get_type_hints(EngineConfig)
_ENGINE_KEYS = {f.name for f in fields(EngineConfig)}


def load_config(path: Optional[str] = None) -> EngineConfig:
    """
    Read an engine configuration file.

    Absent keys keep their defaults; unknown or repeated keys are errors.
    With no path the defaults are returned.
    """
    if path is None:
        return EngineConfig().validate()
    if not os.path.exists(path):
        raise ConfigError("config file not found", path)

    values: Dict[str, Any] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, key, raw in parse_key_value_lines(f, path):
            if key not in _ENGINE_KEYS:
                raise ConfigError(f"unknown config key {key!r}", path, lineno)
            if key in values:
                raise ConfigError(f"duplicate config key {key!r}", path, lineno)
            values[key] = _coerce(raw, _ENGINE_TYPES[key], key, path, lineno)

    cfg = EngineConfig(**values)
    try:
        cfg.validate()
    except ConfigError as e:
        raise ConfigError(str(e), path) from None
    logger.info(f"Loaded engine config from {path} ({len(values)} keys set)")
    return cfg


def dump_config(cfg: EngineConfig) -> str:
    """Serialize every field as `key = value` lines, in declaration order"""
    lines = []
    for f in fields(EngineConfig):
        value = getattr(cfg, f.name)
        if value is None:
            value = "auto"
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


# Global configuration instance
config = Config()
