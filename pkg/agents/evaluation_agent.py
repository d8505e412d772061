"""
Evaluation stage
"""

import logging

from config import EngineConfig
from utils.errors import UsageError
from utils.messages import MessageBroker, MessageType, StageMessage
from utils.metrics import DEFAULT_GATE_GRID, best_row, clear_mot, score_anomalies, sweep_gates
from utils.record_parser import RecordParser
from .base_agent import StageAgent

logger = logging.getLogger(__name__)


class EvaluationAgent(StageAgent):
    """
    Consumes EVALUATION_REQUEST, replies REPORT_READY

    payload["kind"] selects the evaluation: "mot" (tracks against GT
    tracks), "anomaly" (events against GT anomalies) or "calibration"
    (tracking under each gate setting of a grid).
    """

    def __init__(self, broker: MessageBroker, cfg: EngineConfig):
        super().__init__("EvaluationAgent", broker, ["clear_mot", "anomaly_score", "calibration"])
        self.cfg = cfg
        self.stats.update({
            "mot_reports": 0,
            "anomaly_reports": 0,
            "calibrations": 0,
        })
        self.register_handler(MessageType.EVALUATION_REQUEST, self.handle_evaluation_request)

    def handle_evaluation_request(self, message: StageMessage) -> None:
        kind = message.payload.get("kind")
        if kind == "mot":
            report = self._evaluate_mot(message.payload)
        elif kind == "anomaly":
            report = score_anomalies(message.payload["gt"], message.payload["events"], self.cfg)
            self.stats["anomaly_reports"] += 1
            logger.info(f"Anomaly score: S4 {report.s4:.4f} (F1 {report.f1:.4f}, NRMSE {report.nrmse:.4f})")
        elif kind == "calibration":
            rows = sweep_gates(message.payload["detections"], message.payload["gt_tracks"], self.cfg,
                               message.payload.get("grid") or DEFAULT_GATE_GRID)
            report = {"rows": rows, "best": best_row(rows)}
            self.stats["calibrations"] += 1
        else:
            raise UsageError(f"unknown evaluation kind {kind!r}")

        self.reply_to(message, MessageType.REPORT_READY, {"kind": kind, "report": report})

    def _evaluate_mot(self, payload):
        predictions = RecordParser.track_records(payload["tracks"])
        report = clear_mot(payload["gt_tracks"], predictions, self.cfg.mot_iou_threshold,
                           self.cfg.mostly_tracked_ratio, self.cfg.mostly_lost_ratio,
                           payload.get("hz", 0.0))
        self.stats["mot_reports"] += 1
        logger.info(f"CLEAR MOT: MOTA {report.mota} over {report.gt_total} GT boxes, "
                    f"IDS {report.ids}")
        return report
