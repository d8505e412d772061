"""
Anomaly stage

Takes finished tracks, restricts attention to the area of interest and
runs the dwell counter over them frame by frame.
"""

import logging
import time

from config import EngineConfig
from utils.anomaly import AnomalyDetector
from utils.messages import MessageBroker, MessageType, StageMessage
from utils.roi import learn_roi
from .base_agent import StageAgent

logger = logging.getLogger(__name__)


class AnomalyAgent(StageAgent):
    """
    Consumes TRACKS_READY, replies EVENTS_READY

    An operator region passed as payload["roi"] replaces the learned one.
    """

    def __init__(self, broker: MessageBroker, cfg: EngineConfig):
        super().__init__("AnomalyAgent", broker, ["roi", "anomaly_detection"])
        self.cfg = cfg
        self.stats.update({
            "videos_processed": 0,
            "events_emitted": 0,
            "hypothesized_states": 0,
            "relinked_tracks": 0,
            "processing_time": 0.0,
        })
        self.register_handler(MessageType.TRACKS_READY, self.handle_tracks_ready)

    def handle_tracks_ready(self, message: StageMessage) -> None:
        video_id = message.payload["video_id"]
        tracks = message.payload["tracks"]
        roi = message.payload.get("roi")

        started = time.perf_counter()
        if roi is None:
            roi = learn_roi(tracks, self.cfg)
        else:
            logger.info(f"{video_id}: using supplied ROI with {len(roi.hull)} vertices")

        detector = AnomalyDetector(self.cfg, video_id, roi)
        augmented, events = detector.run(tracks)
        elapsed = time.perf_counter() - started

        self.stats["videos_processed"] += 1
        self.stats["events_emitted"] += len(events)
        self.stats["hypothesized_states"] += detector.stats["hypothesized_states"]
        self.stats["relinked_tracks"] += detector.stats["relinked_tracks"]
        self.stats["processing_time"] += elapsed
        logger.info(f"Anomalies {video_id}: {len(events)} events from {len(tracks)} tracks "
                    f"({detector.stats['hypothesized_states']} hypothetical states, "
                    f"{detector.stats['relinked_tracks']} re-links)")

        self.reply_to(message, MessageType.EVENTS_READY, {
            "video_id": video_id,
            "tracks": augmented,
            "events": events,
            "roi": roi,
            "detector_stats": dict(detector.stats),
            "elapsed_s": elapsed,
        })
