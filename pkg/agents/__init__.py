# Pipeline stages communicating through utils.messages
from .coordinator import PipelineCoordinator, RunManifest, VideoResult, run_video, run_videos
