"""Line-delimited JSON logging to stderr.

Logs are for operators and never parsed back by the pipeline, so wall-clock
timestamps here do not affect reproducibility of outputs.
"""
from __future__ import annotations

import json
import sys
from datetime import datetime, timezone

_QUIET = False


def set_quiet(quiet: bool):
    global _QUIET
    _QUIET = quiet


def log_event(event: str, **fields):
    if _QUIET:
        return
    record = {"ts": datetime.now(timezone.utc).isoformat(timespec="seconds"),
              "event": event}
    record.update(fields)
    print(json.dumps(record, default=str), file=sys.stderr, flush=True)
