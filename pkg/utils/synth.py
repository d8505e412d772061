"""
Synthetic traffic scenarios

Vehicles follow piecewise constant-velocity segments; a segment with zero
velocity is a stop. The generator emits detections (with optional jitter,
misses and occlusions), noise-free ground-truth tracks, and the stops long
enough to count as anomalies. Everything random comes from seeded numpy
generators, so a scenario and its seed fully determine the output.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import parse_key_value_lines
from .errors import DataError
from .geometry import BBox
from .record_parser import RecordParser, format_number, video_id_for
from .records import AnomalyGroundTruth, DetectionRecord, GroundTruthTrackRecord

logger = logging.getLogger(__name__)

FEATURE_DIM = 16
DETECTION_CONFIDENCE = 0.9

# (duration frames, vx, vy)
Segment = Tuple[int, float, float]


@dataclass
class VehicleSpec:
    """One vehicle; (x, y) is the box center at entry_frame"""
    entry_frame: int
    x: float
    y: float
    width: float = 60.0
    height: float = 30.0
    segments: List[Segment] = field(default_factory=list)
    feature_seed: int = 0
    class_label: str = "car"

    def stop_segments(self) -> List[Tuple[int, int]]:
        """(first frame, duration) of every zero-velocity segment"""
        stops = []
        frame = self.entry_frame
        for duration, vx, vy in self.segments:
            if vx == 0 and vy == 0 and duration > 0:
                stops.append((frame, duration))
            frame += duration
        return stops


@dataclass
class Occlusion:
    """Detections of vehicle `identity` are absent on frames start..end (inclusive)"""
    identity: int
    start: int
    end: int


@dataclass
class NoiseSpec:
    jitter_px: float = 0.0
    miss_prob: float = 0.0
    feature_noise: float = 0.05
    occlusions: List[Occlusion] = field(default_factory=list)


@dataclass
class ScenarioSpec:
    width: int = 1920
    height: int = 1080
    fps: float = 30.0
    duration_frames: int = 1800
    vehicles: List[VehicleSpec] = field(default_factory=list)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    rng_seed: int = 0
    video_id: str = "synth"
    min_anomaly_s: float = 60.0

    @property
    def frame_extent(self) -> Tuple[int, int]:
        return (self.width, self.height)

    def validate(self) -> "ScenarioSpec":
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"scenario frame extent must be positive, got {self.width}x{self.height}")
        if self.fps <= 0 or self.duration_frames < 0:
            raise DataError("scenario needs fps > 0 and duration_frames >= 0")
        if not 0.0 <= self.noise.miss_prob <= 1.0:
            raise DataError(f"miss_prob must be within [0, 1], got {self.noise.miss_prob}")
        if self.noise.jitter_px < 0 or self.noise.feature_noise < 0:
            raise DataError("noise levels must be >= 0")
        for index, vehicle in enumerate(self.vehicles, 1):
            if not (0 <= vehicle.x <= self.width and 0 <= vehicle.y <= self.height):
                raise DataError(f"vehicle {index} placed outside the {self.width}x{self.height} frame "
                                f"at ({vehicle.x}, {vehicle.y})")
            if vehicle.width <= 0 or vehicle.height <= 0:
                raise DataError(f"vehicle {index} needs a positive box size")
            if vehicle.entry_frame < 0:
                raise DataError(f"vehicle {index} enters before frame 0")
            if any(d < 0 for d, _, _ in vehicle.segments):
                raise DataError(f"vehicle {index} has a negative segment duration")
        for occ in self.noise.occlusions:
            if not 1 <= occ.identity <= len(self.vehicles):
                raise DataError(f"occlusion refers to unknown vehicle {occ.identity}")
            if occ.end < occ.start:
                raise DataError(f"occlusion of vehicle {occ.identity} ends before it starts")
        return self


def _inside(cx: float, cy: float, width: float, height: float) -> bool:
    return 0.0 <= cx <= width and 0.0 <= cy <= height


def trajectory(vehicle: VehicleSpec, spec: ScenarioSpec) -> Dict[int, Tuple[float, float]]:
    """
    Noise-free center per frame.

    The velocity of the segment active at frame f moves the vehicle from f
    to f + 1, so a stop segment starting at frame s keeps the center fixed
    from s on. The vehicle is gone once its segments end or its center
    leaves the frame.
    """
    centers: Dict[int, Tuple[float, float]] = {}
    cx, cy = vehicle.x, vehicle.y
    frame = vehicle.entry_frame
    for duration, vx, vy in vehicle.segments:
        for _ in range(duration):
            if frame >= spec.duration_frames or not _inside(cx, cy, spec.width, spec.height):
                return centers
            centers[frame] = (cx, cy)
            cx, cy = cx + vx, cy + vy
            frame += 1
    return centers


def motion_labels(vehicle: VehicleSpec, spec: ScenarioSpec) -> Dict[int, bool]:
    """
    Per visible frame, whether the vehicle is moving: it arrived with a
    nonzero velocity (at its entry frame: leaves with one).
    """
    velocities: Dict[int, Tuple[float, float]] = {}
    frame = vehicle.entry_frame
    for duration, vx, vy in vehicle.segments:
        for _ in range(duration):
            velocities[frame] = (vx, vy)
            frame += 1
    labels = {}
    for f in trajectory(vehicle, spec):
        vx, vy = velocities[f] if f == vehicle.entry_frame else velocities[f - 1]
        labels[f] = vx != 0 or vy != 0
    return labels


def base_feature(seed: int) -> np.ndarray:
    vec = np.random.default_rng(seed).normal(size=FEATURE_DIM)
    return vec / np.linalg.norm(vec)


def generate(spec: ScenarioSpec) -> Tuple[List[DetectionRecord], List[GroundTruthTrackRecord],
                                          List[AnomalyGroundTruth]]:
    """Detections, ground-truth track records and ground-truth anomalies for one scenario"""
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    noise = spec.noise

    paths = [trajectory(v, spec) for v in spec.vehicles]
    features = [base_feature(v.feature_seed) for v in spec.vehicles]
    hidden = {(o.identity, f) for o in noise.occlusions for f in range(o.start, o.end + 1)}

    detections: List[DetectionRecord] = []
    gt_tracks: List[GroundTruthTrackRecord] = []
    for frame in range(spec.duration_frames):
        for index, (vehicle, path) in enumerate(zip(spec.vehicles, paths)):
            if frame not in path:
                continue
            identity = index + 1
            cx, cy = path[frame]
            w, h = vehicle.width, vehicle.height
            gt_tracks.append(GroundTruthTrackRecord(frame, identity, BBox(cx - w / 2, cy - h / 2, w, h)))

            # same draws for every visible vehicle, whatever the noise levels
            missed = rng.random() < noise.miss_prob
            jitter = rng.normal(0.0, 1.0, size=2) * noise.jitter_px
            feature_noise = rng.normal(0.0, 1.0, size=FEATURE_DIM) * noise.feature_noise
            if missed or (identity, frame) in hidden:
                continue
            feature = features[index] + feature_noise
            feature = feature / np.linalg.norm(feature)
            feature.setflags(write=False)
            detections.append(DetectionRecord(
                frame=frame,
                bbox=BBox(cx + jitter[0] - w / 2, cy + jitter[1] - h / 2, w, h),
                confidence=DETECTION_CONFIDENCE,
                class_label=vehicle.class_label,
                feature=feature,
            ))

    anomalies = ground_truth_anomalies(spec, paths)
    logger.info(f"Scenario {spec.video_id}: {len(spec.vehicles)} vehicles, {len(detections)} detections, "
                f"{len(gt_tracks)} GT boxes, {len(anomalies)} GT anomalies")
    return detections, gt_tracks, anomalies


def ground_truth_anomalies(spec: ScenarioSpec,
                           paths: Optional[Sequence[Dict[int, Tuple[float, float]]]] = None) -> List[AnomalyGroundTruth]:
    """Stops inside the scene lasting at least min_anomaly_s, clipped to the stream"""
    if paths is None:
        paths = [trajectory(v, spec) for v in spec.vehicles]
    min_frames = spec.min_anomaly_s * spec.fps
    found = []
    for vehicle, path in zip(spec.vehicles, paths):
        for start, duration in vehicle.stop_segments():
            if start not in path:
                continue
            end = min(start + duration, spec.duration_frames)
            if end - start >= min_frames:
                found.append(AnomalyGroundTruth(spec.video_id, start / spec.fps, end / spec.fps))
    found.sort(key=lambda a: a.start_s)
    return found


def lane_scenario(n_vehicles: int, duration_frames: int, rng_seed: int = 0,
                  width: int = 1920, height: int = 1080, fps: float = 30.0,
                  stops: Sequence[Tuple[int, int, int]] = (), video_id: str = "synth",
                  lane_spacing: float = 50.0) -> ScenarioSpec:
    """
    Left-to-right traffic with one lane per vehicle.

    Lanes are lane_spacing px apart and boxes 30 px high, so boxes never
    overlap. `stops` holds (vehicle identity, absolute frame, duration)
    entries that insert a stop into that vehicle's drive.
    """
    if n_vehicles * lane_spacing >= height:
        raise DataError(f"{n_vehicles} lanes of {lane_spacing}px do not fit into {height}px")
    rng = np.random.default_rng(rng_seed)
    stop_by_vehicle = {identity: (frame, duration) for identity, frame, duration in stops}

    vehicles = []
    for index in range(n_vehicles):
        identity = index + 1
        entry = int(rng.integers(0, max(1, duration_frames // 2)))
        vx = float(rng.uniform(2.0, 8.0))
        box_w = float(rng.integers(40, 81))
        x = box_w / 2 + 1.0
        y = lane_spacing * (index + 1)
        if identity in stop_by_vehicle:
            stop_frame, stop_len = stop_by_vehicle[identity]
            entry = min(entry, stop_frame)
            # reach the stop point well inside the frame
            vx = min(vx, 0.8 * (width - x) / max(1, stop_frame - entry))
            segments = [(stop_frame - entry, vx, 0.0), (stop_len, 0.0, 0.0), (duration_frames, vx, 0.0)]
        else:
            segments = [(duration_frames, vx, 0.0)]
        vehicles.append(VehicleSpec(entry, x, y, box_w, 30.0, segments, feature_seed=rng_seed * 1000 + identity))

    return ScenarioSpec(width, height, fps, duration_frames, vehicles, NoiseSpec(), rng_seed, video_id)


# -- stanza text format ------------------------------------------------------

_SCENARIO_KEYS = {
    "width": int, "height": int, "fps": float, "duration_frames": int, "rng_seed": int,
    "video_id": str, "min_anomaly_s": float,
}
_NOISE_KEYS = {"jitter_px": float, "miss_prob": float, "feature_noise": float}
_VEHICLE_KEYS = {
    "entry_frame": int, "x": float, "y": float, "width": float, "height": float,
    "segments": str, "feature_seed": int, "class_label": str,
}
_OCCLUSION_KEYS = {"vehicle": int, "start": int, "end": int}


def _parse_segments(text: str, path: str, lineno: int) -> List[Segment]:
    segments = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        pieces = part.split(":")
        if len(pieces) != 3:
            raise DataError(f"segment {part!r} is not 'frames:vx:vy'", path, lineno)
        duration = RecordParser.int_field(pieces[0], "segment frames", path, lineno)
        vx = RecordParser.float_field(pieces[1], "vx", path, lineno)
        vy = RecordParser.float_field(pieces[2], "vy", path, lineno)
        segments.append((duration, vx, vy))
    return segments


def _typed(kind, value: str, key: str, path: str, lineno: int):
    if kind is int:
        return RecordParser.int_field(value, key, path, lineno)
    if kind is float:
        return RecordParser.float_field(value, key, path, lineno)
    return value


def load_scenario(path: str) -> ScenarioSpec:
    """
    Read a scenario file: top-level `key = value` settings, then one
    `[vehicle]` section per vehicle and optional `[occlusion]` sections.
    """
    RecordParser.require_file(path)
    top: Dict[str, object] = {}
    sections: List[Tuple[str, int, Dict[str, object]]] = []

    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            stripped = raw.split("#", 1)[0].strip()
            if stripped.startswith("["):
                name = stripped.strip("[]").strip().lower()
                if name not in ("vehicle", "occlusion"):
                    raise DataError(f"unknown section [{name}]", path, lineno)
                sections.append((name, lineno, {}))
                continue
            for _, key, value in parse_key_value_lines([raw], path, lineno):
                if sections:
                    name, _, target = sections[-1]
                    allowed = _VEHICLE_KEYS if name == "vehicle" else _OCCLUSION_KEYS
                else:
                    target = top
                    allowed = {**_SCENARIO_KEYS, **_NOISE_KEYS}
                if key not in allowed:
                    raise DataError(f"unknown scenario key {key!r}", path, lineno)
                if key in target:
                    raise DataError(f"duplicate scenario key {key!r}", path, lineno)
                if key == "segments":
                    target[key] = _parse_segments(value, path, lineno)
                else:
                    target[key] = _typed(allowed[key], value, key, path, lineno)

    top.setdefault("video_id", video_id_for(path))
    noise = NoiseSpec(**{k: top.pop(k) for k in list(top) if k in _NOISE_KEYS})
    spec = ScenarioSpec(**top, noise=noise)
    for name, lineno, values in sections:
        if name == "vehicle":
            missing = {"entry_frame", "x", "y"} - set(values)
            if missing:
                raise DataError(f"[vehicle] missing {', '.join(sorted(missing))}", path, lineno)
            spec.vehicles.append(VehicleSpec(**values))
        else:
            if set(values) != set(_OCCLUSION_KEYS):
                raise DataError("[occlusion] needs vehicle, start and end", path, lineno)
            noise.occlusions.append(Occlusion(values["vehicle"], values["start"], values["end"]))

    try:
        spec.validate()
    except DataError as e:
        raise DataError(str(e), path) from None
    logger.info(f"Loaded scenario {path}: {len(spec.vehicles)} vehicles, {spec.duration_frames} frames")
    return spec


def write_scenario(path: str, spec: ScenarioSpec) -> None:
    lines = [
        f"width = {spec.width}",
        f"height = {spec.height}",
        f"fps = {format_number(spec.fps)}",
        f"duration_frames = {spec.duration_frames}",
        f"rng_seed = {spec.rng_seed}",
        f"video_id = {spec.video_id}",
        f"min_anomaly_s = {format_number(spec.min_anomaly_s)}",
        f"jitter_px = {format_number(spec.noise.jitter_px)}",
        f"miss_prob = {format_number(spec.noise.miss_prob)}",
        f"feature_noise = {format_number(spec.noise.feature_noise)}",
    ]
    for v in spec.vehicles:
        segments = ", ".join(f"{d}:{format_number(vx)}:{format_number(vy)}" for d, vx, vy in v.segments)
        lines += [
            "",
            "[vehicle]",
            f"entry_frame = {v.entry_frame}",
            f"x = {format_number(v.x)}",
            f"y = {format_number(v.y)}",
            f"width = {format_number(v.width)}",
            f"height = {format_number(v.height)}",
            f"segments = {segments}",
            f"feature_seed = {v.feature_seed}",
            f"class_label = {v.class_label}",
        ]
    for occ in spec.noise.occlusions:
        lines += ["", "[occlusion]", f"vehicle = {occ.identity}", f"start = {occ.start}", f"end = {occ.end}"]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
