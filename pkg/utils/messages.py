"""
Stage messages

Structured messages the pipeline stages exchange through a broker. Each
video run owns its own MessageBroker, so runs in parallel workers never
share handlers or history.
"""

import logging
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Deque, Dict, List, Optional, Set

logger = logging.getLogger(__name__)


class MessageType(Enum):
    """Message types understood by the pipeline stages"""
    # Data flow
    DETECTIONS_LOADED = "DETECTIONS_LOADED"
    TRACKS_READY = "TRACKS_READY"
    EVENTS_READY = "EVENTS_READY"
    EVALUATION_REQUEST = "EVALUATION_REQUEST"
    REPORT_READY = "REPORT_READY"

    ERROR = "ERROR"

    # Workflow control
    WORKFLOW_START = "WORKFLOW_START"
    WORKFLOW_COMPLETE = "WORKFLOW_COMPLETE"


@dataclass
class StageMessage:
    """
    One message between two stages.

    payload carries in-memory objects (detections, tracks, reports) and is
    never copied; the broker history keeps only envelopes.
    """
    sender: str
    receiver: str
    type: str
    trace_id: str
    payload: Dict[str, Any]
    sent_at: float = field(default_factory=time.time)
    error: Optional[str] = None
    metadata: Dict[str, Any] = field(default_factory=dict)
    workflow_id: Optional[str] = None

    @classmethod
    def create(cls, sender: str, receiver: str, msg_type: str, payload: Dict[str, Any],
               metadata: Optional[Dict[str, Any]] = None, trace_id: Optional[str] = None,
               workflow_id: Optional[str] = None) -> "StageMessage":
        return cls(sender, receiver, msg_type, trace_id or uuid.uuid4().hex, payload,
                   metadata=dict(metadata or {}), workflow_id=workflow_id)

    @classmethod
    def create_error(cls, sender: str, receiver: str, error_msg: str, error_type: str = "DataError",
                     trace_id: Optional[str] = None, workflow_id: Optional[str] = None) -> "StageMessage":
        """ERROR reply; error_type ("DataError" or "UsageError") picks the exception re-raised by the requester"""
        return cls(sender, receiver, MessageType.ERROR.value, trace_id or uuid.uuid4().hex,
                   {"error": error_msg, "error_type": error_type}, error=error_msg,
                   workflow_id=workflow_id)

    def is_error(self) -> bool:
        return self.error is not None or self.type == MessageType.ERROR.value

    def envelope(self) -> Dict[str, Any]:
        return {
            "trace_id": self.trace_id,
            "route": f"{self.sender} -> {self.receiver}",
            "type": self.type,
            "sent_at": self.sent_at,
            "is_error": self.is_error(),
            "workflow_id": self.workflow_id,
        }


@dataclass
class WorkflowRecord:
    """What the broker saw of one workflow"""
    workflow_id: str
    started_at: float = field(default_factory=time.time)
    status: str = "active"
    participants: Set[str] = field(default_factory=set)
    message_count: int = 0
    error_count: int = 0
    completed_at: Optional[float] = None

    def observe(self, message: StageMessage) -> None:
        self.message_count += 1
        self.participants.update((message.sender, message.receiver))
        if message.is_error():
            self.error_count += 1
            self.status = "failed"
        elif message.type == MessageType.WORKFLOW_COMPLETE.value and self.status == "active":
            self.status = "completed"
            self.completed_at = time.time()


Handler = Callable[[StageMessage], None]


class MessageBroker:
    """
    Synchronous in-process message routing.

    send() calls every handler registered for (receiver, type) before it
    returns. Handler exceptions are logged and counted, never raised.
    """

    def __init__(self, max_history: int = 1000):
        self.handlers: Dict[tuple, List[Handler]] = {}
        self.history: Deque[Dict[str, Any]] = deque(maxlen=max_history)
        self.workflows: Dict[str, WorkflowRecord] = {}
        self.agents: Dict[str, Dict[str, Any]] = {}
        self.stats = {
            "messages_sent": 0,
            "messages_handled": 0,
            "undeliverable": 0,
            "handler_errors": 0,
        }

    def register_handler(self, receiver: str, msg_type: str, handler: Handler) -> None:
        self.handlers.setdefault((receiver, msg_type), []).append(handler)
        logger.debug(f"{receiver} handles {msg_type}")

    def register_agent(self, agent_id: str, agent_info: Dict[str, Any]) -> None:
        self.agents[agent_id] = dict(agent_info)
        logger.debug(f"Registered agent: {agent_id}")

    def send(self, message: StageMessage) -> bool:
        """Deliver a message; False when nobody handles it or a handler failed"""
        self.history.append(message.envelope())
        self.stats["messages_sent"] += 1
        if message.workflow_id is not None:
            record = self.workflows.get(message.workflow_id)
            if record is None:
                record = self.workflows[message.workflow_id] = WorkflowRecord(message.workflow_id)
            record.observe(message)

        handlers = self.handlers.get((message.receiver, message.type), [])
        if not handlers:
            logger.warning(f"No handler for {message.type} to {message.receiver}")
            self.stats["undeliverable"] += 1
            return False

        delivered = True
        for handler in handlers:
            try:
                handler(message)
            except Exception as e:
                logger.error(f"{message.receiver} failed on {message.type}: {e}", exc_info=True)
                self.stats["handler_errors"] += 1
                delivered = False
            else:
                self.stats["messages_handled"] += 1
        return delivered

    def get_workflow_status(self, workflow_id: str) -> Optional[WorkflowRecord]:
        return self.workflows.get(workflow_id)

    def get_stats(self) -> Dict[str, Any]:
        statuses = [w.status for w in self.workflows.values()]
        return {
            **self.stats,
            "registered_agents": len(self.agents),
            "workflows_active": statuses.count("active"),
            "workflows_completed": statuses.count("completed"),
            "workflows_failed": statuses.count("failed"),
            "history_size": len(self.history),
        }
