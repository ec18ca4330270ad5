"""
Environment configuration for GraspKit.

Values come from the process environment, optionally seeded from a .env file
through python-dotenv (see .env.example).
"""

import os
from typing import Optional

from dotenv import load_dotenv

load_dotenv()

# =============================================================================
# ENVIRONMENT CONFIGURATION
# =============================================================================

# Upper bound on worker threads used by sweeps and per-grasp evaluation
GRASPKIT_THREADS: Optional[str] = os.getenv("GRASPKIT_THREADS")

GRASPKIT_LOG_LEVEL: str = os.getenv("GRASPKIT_LOG_LEVEL", "INFO")

# Significant digits used when floats are written to JSON artifacts
GRASPKIT_OUTPUT_PRECISION: int = int(os.getenv("GRASPKIT_OUTPUT_PRECISION", "10"))


def thread_count() -> int:
    """Number of worker threads allowed, never less than one."""
    value = os.getenv("GRASPKIT_THREADS", GRASPKIT_THREADS or "")
    if value.strip():
        try:
            return max(1, int(value))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)
