"""
Pipeline Coordinator

Orchestrates the stages of one run: reading inputs, tracking, anomaly
detection, evaluation and scenario generation. Stages talk through a
MessageBroker owned by the coordinator; outputs land in one run directory
together with a manifest describing the run.
"""

import json
import logging
import os
import tempfile
import time
import uuid
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

from config import EngineConfig, config
from utils.errors import DataError, StallwatchError, UsageError
from utils.messages import MessageBroker, MessageType, StageMessage
from utils.metrics import AnomalyScore, CalibrationRow, MotReport, calibration_frame
from utils.record_parser import RecordParser, RecordWriter, video_id_for
from utils.roi import RegionOfInterest, load_roi, save_roi
from utils.synth import generate, load_scenario
from .anomaly_agent import AnomalyAgent
from .base_agent import StageAgent
from .evaluation_agent import EvaluationAgent
from .tracking_agent import TrackingAgent

logger = logging.getLogger(__name__)


@dataclass
class VideoResult:
    """What one per-video workflow produced"""
    video_id: str
    inputs: List[str]
    outputs: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    hz: Optional[float] = None
    counts: Dict[str, int] = field(default_factory=dict)


@dataclass
class RunManifest:
    """
    Description of one run directory, written once at the end of the run
    """
    command: str
    output_dir: str
    config_path: Optional[str] = None
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    engine_config: Dict[str, Any] = field(default_factory=dict)
    stage_timings: Dict[str, Dict[str, float]] = field(default_factory=dict)
    hz: Dict[str, float] = field(default_factory=dict)
    format_versions: Dict[str, str] = field(default_factory=dict)

    def add_result(self, result: VideoResult) -> None:
        self.inputs.extend(p for p in result.inputs if p not in self.inputs)
        self.outputs.extend(result.outputs[k] for k in sorted(result.outputs))
        self.stage_timings[result.video_id] = dict(result.timings)
        if result.hz is not None:
            self.hz[result.video_id] = result.hz

    def write(self, path: str) -> str:
        """Atomically replace `path`; every listed output must exist"""
        missing = [p for p in self.outputs if not os.path.exists(p)]
        if missing:
            raise StallwatchError(f"manifest lists missing outputs: {', '.join(missing)}")
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(prefix=".manifest-", suffix=".json", dir=directory)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(asdict(self), f, indent=2, sort_keys=True)
                f.write("\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
        logger.info(f"Wrote run manifest {path}")
        return path

    @staticmethod
    def hz_for(tracks_path: str) -> float:
        """Processing rate recorded by the run that wrote `tracks_path`, 0.0 when unknown"""
        manifest_path = os.path.join(os.path.dirname(os.path.abspath(tracks_path)),
                                     config.system.manifest_name)
        if not os.path.exists(manifest_path):
            return 0.0
        try:
            with open(manifest_path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, ValueError) as e:
            logger.warning(f"Ignoring unreadable manifest {manifest_path}: {e}")
            return 0.0
        return float(data.get("hz", {}).get(video_id_for(tracks_path), 0.0))


def output_path(out_dir: str, video_id: str, kind: str) -> str:
    return os.path.join(out_dir, f"{video_id}.{kind}")


class PipelineCoordinator(StageAgent):
    """
    Drives the stage agents of one run.

    Requests are synchronous: a request is answered (or failed) by the
    time send returns, and an ERROR reply is raised again here.
    """

    def __init__(self, cfg: Optional[EngineConfig] = None, broker: Optional[MessageBroker] = None):
        super().__init__("CoordinatorAgent", broker or MessageBroker(), ["workflow_management"])
        self.cfg = (cfg or EngineConfig()).validate()

        self.tracking_agent = TrackingAgent(self.broker, self.cfg)
        self.anomaly_agent = AnomalyAgent(self.broker, self.cfg)
        self.evaluation_agent = EvaluationAgent(self.broker, self.cfg)

        self.stats.update({
            "workflows_started": 0,
            "workflows_completed": 0,
            "workflows_failed": 0,
            "total_processing_time": 0.0,
        })
        self._replies: Dict[str, StageMessage] = {}
        for msg_type in (MessageType.TRACKS_READY, MessageType.EVENTS_READY,
                         MessageType.REPORT_READY, MessageType.ERROR):
            self.broker.register_handler(self.agent_id, msg_type.value, self._store_reply)
        for msg_type in (MessageType.WORKFLOW_START, MessageType.WORKFLOW_COMPLETE):
            self.broker.register_handler(self.agent_id, msg_type.value, self._log_workflow)

    # -- messaging --------------------------------------------------------

    def _store_reply(self, message: StageMessage) -> None:
        self.stats["messages_received"] += 1
        self._replies[message.trace_id] = message

    def _log_workflow(self, message: StageMessage) -> None:
        logger.debug(f"workflow {message.workflow_id}: {message.type} {message.payload}")

    def _request(self, receiver: str, msg_type: MessageType, payload: Dict[str, Any],
                 workflow_id: Optional[str] = None) -> Dict[str, Any]:
        sent = self.send_message(receiver, msg_type, payload, workflow_id=workflow_id)
        reply = self._replies.pop(sent.trace_id, None)
        if reply is None:
            raise StallwatchError(f"{receiver} did not answer {msg_type.value}")
        if reply.is_error():
            if reply.payload.get("error_type") == "UsageError":
                raise UsageError(reply.error)
            raise DataError(reply.error)
        return reply.payload

    @contextmanager
    def workflow(self, kind: str, video_id: str) -> Iterator[str]:
        workflow_id = str(uuid.uuid4())
        started = time.perf_counter()
        self.send_message(self.agent_id, MessageType.WORKFLOW_START,
                          {"workflow_type": kind, "video_id": video_id}, workflow_id=workflow_id)
        self.stats["workflows_started"] += 1
        logger.info(f"Starting {kind} workflow for {video_id}")
        try:
            yield workflow_id
        except Exception:
            self.stats["workflows_failed"] += 1
            raise
        elapsed = time.perf_counter() - started
        self.stats["workflows_completed"] += 1
        self.stats["total_processing_time"] += elapsed
        self.send_message(self.agent_id, MessageType.WORKFLOW_COMPLETE,
                          {"workflow_type": kind, "video_id": video_id, "processing_time": elapsed},
                          workflow_id=workflow_id)
        logger.info(f"{kind} workflow for {video_id} completed in {elapsed:.2f}s")

    # -- in-memory stages -------------------------------------------------

    def track_detections(self, detections, video_id: str, workflow_id: Optional[str] = None) -> Dict[str, Any]:
        return self._request(self.tracking_agent.agent_id, MessageType.DETECTIONS_LOADED,
                             {"video_id": video_id, "detections": detections}, workflow_id)

    def find_anomalies(self, tracks, video_id: str, roi: Optional[RegionOfInterest] = None,
                       workflow_id: Optional[str] = None) -> Dict[str, Any]:
        return self._request(self.anomaly_agent.agent_id, MessageType.TRACKS_READY,
                             {"video_id": video_id, "tracks": tracks, "roi": roi}, workflow_id)

    def evaluate(self, kind: str, workflow_id: Optional[str] = None, **payload) -> Any:
        reply = self._request(self.evaluation_agent.agent_id, MessageType.EVALUATION_REQUEST,
                              {"kind": kind, **payload}, workflow_id)
        return reply["report"]

    # -- file workflows ---------------------------------------------------

    def run_track(self, detections_path: str, out_dir: str, video_id: Optional[str] = None) -> VideoResult:
        """Detections file -> `<video>.tracks.csv`"""
        video_id = video_id or video_id_for(detections_path)
        result = VideoResult(video_id, [detections_path])
        with self.workflow("track", video_id) as wid:
            self._track_to_file(detections_path, out_dir, result, wid)
        return result

    def _track_to_file(self, detections_path: str, out_dir: str, result: VideoResult, wid: str) -> None:
        started = time.perf_counter()
        detections = RecordParser.parse_detections(detections_path)
        result.timings["ingest"] = time.perf_counter() - started

        tracked = self.track_detections(detections, result.video_id, wid)
        result.timings["track"] = tracked["elapsed_s"]
        result.hz = tracked["hz"]

        started = time.perf_counter()
        tracks_path = output_path(out_dir, result.video_id, "tracks.csv")
        RecordWriter.write_tracks(tracks_path, tracked["tracks"])
        result.timings["write_tracks"] = time.perf_counter() - started
        result.outputs["tracks"] = tracks_path
        result.counts.update({"detections": len(detections), "tracks": len(tracked["tracks"]),
                              "frames": tracked["frame_count"]})

    def run_anomalies(self, detections_path: str, out_dir: str, video_id: Optional[str] = None,
                      roi_path: Optional[str] = None) -> VideoResult:
        """
        Detections file -> tracks, events, ROI and hypothesis-augmented tracks.

        The anomaly stage reads the tracks file the tracking stage just
        wrote, so its result matches running it on `track` output.
        """
        video_id = video_id or video_id_for(detections_path)
        inputs = [detections_path] + ([roi_path] if roi_path else [])
        result = VideoResult(video_id, inputs)
        with self.workflow("anomalies", video_id) as wid:
            roi = load_roi(roi_path) if roi_path else None
            self._track_to_file(detections_path, out_dir, result, wid)

            tracks = RecordParser.parse_tracks(result.outputs["tracks"])
            found = self.find_anomalies(tracks, video_id, roi, wid)
            result.timings["anomaly"] = found["elapsed_s"]

            started = time.perf_counter()
            result.outputs["events"] = output_path(out_dir, video_id, "events.csv")
            result.outputs["roi"] = output_path(out_dir, video_id, "roi.txt")
            result.outputs["anomaly_tracks"] = output_path(out_dir, video_id, "anomaly_tracks.csv")
            RecordWriter.write_events(result.outputs["events"], found["events"])
            save_roi(result.outputs["roi"], found["roi"])
            RecordWriter.write_tracks(result.outputs["anomaly_tracks"], found["tracks"])
            result.timings["write_events"] = time.perf_counter() - started
            result.counts.update({"events": len(found["events"]),
                                  "hypothesized_states": found["detector_stats"]["hypothesized_states"]})
        return result

    def run_eval_mot(self, tracks_path: str, gt_path: str) -> MotReport:
        with self.workflow("eval-mot", video_id_for(tracks_path)) as wid:
            tracks = RecordParser.parse_tracks(tracks_path)
            gt_tracks = RecordParser.parse_mot_ground_truth(gt_path)
            return self.evaluate("mot", wid, tracks=tracks, gt_tracks=gt_tracks,
                                 hz=RunManifest.hz_for(tracks_path))

    def run_eval_anomaly(self, events_paths: Sequence[str], gt_path: str) -> AnomalyScore:
        with self.workflow("eval-anomaly", ",".join(video_id_for(p) for p in events_paths)) as wid:
            events = [e for path in events_paths for e in RecordParser.parse_events(path)]
            gt = RecordParser.parse_anomaly_ground_truth(gt_path)
            return self.evaluate("anomaly", wid, events=events, gt=gt)

    def run_calibrate(self, detections_path: str, gt_path: str,
                      out_dir: Optional[str] = None) -> Tuple[List[CalibrationRow], Optional[CalibrationRow], Optional[str]]:
        with self.workflow("calibrate", video_id_for(detections_path)) as wid:
            detections = RecordParser.parse_detections(detections_path)
            gt_tracks = RecordParser.parse_mot_ground_truth(gt_path)
            report = self.evaluate("calibration", wid, detections=detections, gt_tracks=gt_tracks)
            written = None
            if out_dir is not None:
                written = os.path.join(out_dir, "calibration.csv")
                calibration_frame(report["rows"]).to_csv(written, index=False, lineterminator="\n")
            return report["rows"], report["best"], written

    def run_synth(self, scenario_path: str, out_dir: str, seed: Optional[int] = None,
                  video_id: Optional[str] = None) -> VideoResult:
        """Scenario file -> detections, tracking GT and anomaly GT files"""
        spec = load_scenario(scenario_path)
        if seed is not None:
            spec.rng_seed = seed
        if video_id is not None:
            spec.video_id = video_id
        result = VideoResult(spec.video_id, [scenario_path])
        with self.workflow("synth", spec.video_id):
            started = time.perf_counter()
            detections, gt_tracks, anomalies = generate(spec)
            result.timings["generate"] = time.perf_counter() - started

            started = time.perf_counter()
            result.outputs["detections"] = output_path(out_dir, spec.video_id, "detections.csv")
            result.outputs["gt"] = output_path(out_dir, spec.video_id, "gt.csv")
            result.outputs["anomalies_gt"] = output_path(out_dir, spec.video_id, "anomalies_gt.csv")
            RecordWriter.write_detections(result.outputs["detections"], detections)
            RecordWriter.write_mot_ground_truth(result.outputs["gt"], gt_tracks)
            RecordWriter.write_anomaly_ground_truth(result.outputs["anomalies_gt"], anomalies)
            result.timings["write"] = time.perf_counter() - started
            result.counts.update({"detections": len(detections), "gt_boxes": len(gt_tracks),
                                  "gt_anomalies": len(anomalies)})
        return result

    def get_system_status(self) -> Dict[str, Any]:
        return {
            "coordinator": self.health_check(),
            "agents": {a.agent_id: a.health_check()
                       for a in (self.tracking_agent, self.anomaly_agent, self.evaluation_agent)},
            "broker": self.broker.get_stats(),
        }


def run_video(command: str, input_path: str, cfg: EngineConfig, out_dir: str,
              video_id: Optional[str] = None, roi_path: Optional[str] = None,
              seed: Optional[int] = None) -> VideoResult:
    """One per-video workflow on a fresh coordinator and broker (picklable entry point for workers)"""
    coordinator = PipelineCoordinator(cfg)
    if command == "track":
        return coordinator.run_track(input_path, out_dir, video_id)
    if command == "anomalies":
        return coordinator.run_anomalies(input_path, out_dir, video_id, roi_path)
    if command == "synth":
        return coordinator.run_synth(input_path, out_dir, seed, video_id)
    raise UsageError(f"{command} is not a per-video command")


def run_videos(command: str, input_paths: Sequence[str], cfg: EngineConfig, out_dir: str,
               jobs: int = 1, **options) -> List[VideoResult]:
    """
    Run a per-video command over several inputs, in input order.

    With jobs > 1 the videos are spread over worker processes; each video
    is still processed sequentially by one worker.
    """
    if command != "synth":
        _check_video_ids(input_paths, options.get("video_id"))
    if jobs <= 1 or len(input_paths) <= 1:
        results = [run_video(command, path, cfg, out_dir, **options) for path in input_paths]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_video, command, path, cfg, out_dir, **options)
                       for path in input_paths]
            results = [f.result() for f in futures]

    _check_video_ids(input_paths, None, [r.video_id for r in results])
    return results


def _check_video_ids(input_paths: Sequence[str], video_id: Optional[str],
                     ids: Optional[Sequence[str]] = None) -> None:
    if video_id is not None and len(input_paths) > 1:
        raise UsageError("--video-id needs exactly one input")
    if ids is None:
        ids = [video_id or video_id_for(p) for p in input_paths]
    seen: Dict[str, str] = {}
    for path, vid in zip(input_paths, ids):
        if vid in seen:
            raise UsageError(f"inputs {seen[vid]} and {path} share video id {vid}")
        seen[vid] = path
