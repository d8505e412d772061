"""
Record types exchanged between the parsers, the agents and the metrics.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .geometry import BBox


@dataclass(frozen=True, eq=False)
class DetectionRecord:
    """One detector output in one frame"""
    frame: int
    bbox: BBox
    confidence: float
    class_label: str
    feature: Optional[np.ndarray] = None


@dataclass(frozen=True)
class GroundTruthTrackRecord:
    frame: int
    identity: int
    bbox: BBox


@dataclass(frozen=True)
class AnomalyGroundTruth:
    video_id: str
    start_s: float
    end_s: float


class Severity(Enum):
    """Alarm colour of a stalled vehicle; ordered by rank"""
    NONE = "none"
    GREEN = "green"
    YELLOW = "yellow"
    RED = "red"

    @property
    def rank(self) -> int:
        return _SEVERITY_RANK[self]


_SEVERITY_RANK = {Severity.NONE: 0, Severity.GREEN: 1, Severity.YELLOW: 2, Severity.RED: 3}


@dataclass
class AnomalyEvent:
    """
    A detected stall.

    start_s is the stop onset, end_s stays None while the vehicle is still
    stopped. severity only ever escalates; severity_changes keeps the frame
    of every escalation.
    """
    video_id: str
    track_id: int
    start_s: float
    end_s: Optional[float] = None
    confidence: float = 1.0
    severity: Severity = Severity.GREEN
    emitted_frame: Optional[int] = None
    severity_changes: List[Tuple[int, Severity]] = field(default_factory=list)

    @property
    def is_open(self) -> bool:
        return self.end_s is None

    def escalate(self, frame: int, severity: Severity) -> bool:
        """Raise severity if the new stage is higher; returns True on change"""
        if severity.rank > self.severity.rank:
            self.severity = severity
            self.severity_changes.append((frame, severity))
            return True
        return False
