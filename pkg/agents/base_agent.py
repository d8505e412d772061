"""
Base class for pipeline stages

Every stage is an agent on the run's MessageBroker: it registers handlers
for the message types it consumes and replies to the sender. Failures in a
handler become ERROR replies instead of exceptions crossing the broker.
"""

import functools
import logging
from typing import Any, Callable, Dict, Optional

from utils.errors import UsageError
from utils.messages import MessageBroker, MessageType, StageMessage

logger = logging.getLogger(__name__)


class StageAgent:
    """
    Common messaging and bookkeeping for pipeline stages
    """

    def __init__(self, agent_id: str, broker: MessageBroker, capabilities: Optional[list] = None):
        self.agent_id = agent_id
        self.broker = broker
        self.stats = {
            "messages_sent": 0,
            "messages_received": 0,
            "errors": 0,
        }
        broker.register_agent(agent_id, {"capabilities": capabilities or []})
        logger.debug(f"Initialized stage agent: {agent_id}")

    def register_handler(self, msg_type: MessageType, handler: Callable[[StageMessage], None]) -> None:
        """Register `handler` for messages of `msg_type` addressed to this agent, wrapped so it
        replies with ERROR instead of raising"""

        @functools.wraps(handler)
        def guarded(message: StageMessage) -> None:
            self.stats["messages_received"] += 1
            try:
                handler(message)
            except Exception as e:
                logger.error(f"{self.agent_id}: error handling {message.type}: {e}", exc_info=True)
                self.reply_error(message, e)

        self.broker.register_handler(self.agent_id, msg_type.value, guarded)

    def send_message(self, receiver: str, msg_type: MessageType, payload: Dict[str, Any],
                     metadata: Optional[Dict[str, Any]] = None, trace_id: Optional[str] = None,
                     workflow_id: Optional[str] = None) -> StageMessage:
        message = StageMessage.create(self.agent_id, receiver, msg_type.value, payload,
                                      metadata, trace_id, workflow_id)
        self.broker.send(message)
        self.stats["messages_sent"] += 1
        return message

    def reply_to(self, original: StageMessage, msg_type: MessageType, payload: Dict[str, Any],
                 metadata: Optional[Dict[str, Any]] = None) -> StageMessage:
        metadata = dict(metadata or {})
        metadata["original_trace_id"] = original.trace_id
        return self.send_message(original.sender, msg_type, payload, metadata,
                                 trace_id=original.trace_id, workflow_id=original.workflow_id)

    def reply_error(self, original: StageMessage, error: Exception) -> StageMessage:
        self.stats["errors"] += 1
        error_type = "UsageError" if isinstance(error, UsageError) else "DataError"
        message = StageMessage.create_error(self.agent_id, original.sender, str(error), error_type,
                                            trace_id=original.trace_id,
                                            workflow_id=original.workflow_id)
        self.broker.send(message)
        self.stats["messages_sent"] += 1
        return message

    def get_stats(self) -> Dict[str, Any]:
        return self.stats.copy()

    def health_check(self) -> Dict[str, Any]:
        return {
            "status": "healthy",
            "agent_id": self.agent_id,
            "stats": self.get_stats(),
        }
