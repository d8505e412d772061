"""
Tracking stage

Links per-frame detections into vehicle identities with the gated
bipartite matcher and reports the processing rate.
"""

import logging
import time

from config import EngineConfig
from utils.association import TrackerState, group_by_frame, step
from utils.messages import MessageBroker, MessageType, StageMessage
from .base_agent import StageAgent

logger = logging.getLogger(__name__)


class TrackingAgent(StageAgent):
    """
    Consumes DETECTIONS_LOADED, replies TRACKS_READY
    """

    def __init__(self, broker: MessageBroker, cfg: EngineConfig):
        super().__init__("TrackingAgent", broker, ["tracking"])
        self.cfg = cfg
        self.stats.update({
            "videos_tracked": 0,
            "frames_processed": 0,
            "tracks_created": 0,
            "processing_time": 0.0,
        })
        self.register_handler(MessageType.DETECTIONS_LOADED, self.handle_detections_loaded)

    def handle_detections_loaded(self, message: StageMessage) -> None:
        video_id = message.payload["video_id"]
        detections = message.payload["detections"]
        logger.info(f"Tracking {video_id}: {len(detections)} detections")

        state = TrackerState()
        frames = group_by_frame(detections)
        started = time.perf_counter()
        for frame, frame_detections in frames:
            step(state, frame_detections, self.cfg)
            logger.debug(f"{video_id} frame {frame}: {len(frame_detections)} detections, "
                         f"{len(state.live_tracks())} live tracks")
        elapsed = time.perf_counter() - started

        tracks = state.ordered_tracks()
        hz = len(frames) / elapsed if elapsed > 0 else 0.0
        self.stats["videos_tracked"] += 1
        self.stats["frames_processed"] += len(frames)
        self.stats["tracks_created"] += len(tracks)
        self.stats["processing_time"] += elapsed
        logger.info(f"Tracked {video_id}: {len(tracks)} tracks over {len(frames)} frames ({hz:.1f} Hz)")

        self.reply_to(message, MessageType.TRACKS_READY, {
            "video_id": video_id,
            "tracks": tracks,
            "frame_count": len(frames),
            "hz": hz,
            "elapsed_s": elapsed,
        })
