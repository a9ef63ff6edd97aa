"""Process-wide runtime knobs."""

from __future__ import annotations

import os


def max_threads() -> int:
    """Parallelism cap: LIVMAP_THREADS if set, else the machine's cores."""
    raw = os.environ.get("LIVMAP_THREADS")
    if raw is not None:
        try:
            value = int(raw)
        except ValueError:
            value = 1
        return max(1, value)
    return max(1, os.cpu_count() or 1)
