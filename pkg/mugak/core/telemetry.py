"""Structured run events for Mugak.

Every stage reports through :func:`log_event`, one JSON object per line on
stderr. Events in use:

- ``dataset_generated`` after a split is written
- ``local_epoch`` and ``decoder_epoch`` with the mean loss of each epoch
- ``stage_complete`` with the stage, split and wall time
- ``evaluation`` with the headline F1 of a report
- ``window_skipped`` and ``prediction_clamped`` at WARNING
"""

import json
import logging
import sys
from typing import Any, Dict, Optional

# stdout carries evaluation tables
logging.basicConfig(
    level=logging.INFO,
    format="[%(asctime)s] %(levelname)s - %(name)s - %(message)s",
    stream=sys.stderr,
)

logger = logging.getLogger("mugak")


def log_event(event: str, data: Optional[Dict[str, Any]], level: int = logging.INFO) -> None:
    """Emit ``{"event": event, **data}`` with sorted keys at ``level``."""
    try:
        payload = {"event": event, **(data or {})}
        logger.log(level, json.dumps(payload, ensure_ascii=False, sort_keys=True))
    except (TypeError, ValueError):
        # unserializable payload
        logger.log(level, "Event: %s", event)


def setup_logging(level: str = "INFO") -> None:
    """Set the ``mugak`` logger level from a name such as ``DEBUG``."""
    logger.setLevel(getattr(logging, level.upper()))
