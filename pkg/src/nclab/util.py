"""Shared plumbing: error types, worker caps, CSV float precision."""

import os

# %.17g round-trips float64 exactly; well above the 15-digit floor we promise.
FLOAT_FMT = "%.17g"


class ConfigurationError(ValueError):
    """A sampling pool or batch layout makes the requested draw impossible."""


def worker_count(task_count: int | None = None) -> int:
    """Worker cap for parallel shards, bounded by the NC_LAB_THREADS env var."""
    env = os.environ.get("NC_LAB_THREADS", "")
    try:
        cap = int(env)
    except ValueError:
        cap = 0
    if cap <= 0:
        cap = os.cpu_count() or 1
    if task_count is not None:
        cap = max(1, min(cap, task_count))
    return cap
