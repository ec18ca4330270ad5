#!/usr/bin/env python3
"""
GraspKit Startup Script

This script provides a convenient way to run GraspKit commands with the
environment set up. It creates a .env file from .env.example when missing and
then hands the arguments to the CLI.

Usage:
    python run.py synth --seed 7 --out data/grasp
    python run.py reconstruct --in data/grasp --out data/recon

Environment Setup:
- Creates .env file from .env.example if it doesn't exist
- Falls back to a basic .env template if .env.example is missing

Author: GraspKit Team
Version: 1.0.0
"""

import os
import sys

DEFAULT_ENV = """# Worker threads for sweeps (defaults to the CPU count)
# GRASPKIT_THREADS=4

# Logging level: DEBUG, INFO, WARNING or ERROR
GRASPKIT_LOG_LEVEL=INFO

# Significant digits for floats written to JSON artifacts
GRASPKIT_OUTPUT_PRECISION=10
"""


def ensure_env_file() -> None:
    """Create .env from .env.example (or a basic template) when it is missing."""
    if os.path.exists(".env"):
        return
    if os.path.exists(".env.example"):
        with open(".env.example", "r") as example_file:
            with open(".env", "w") as env_file:
                env_file.write(example_file.read())
        print("Created .env file from .env.example.", file=sys.stderr)
    else:
        with open(".env", "w") as env_file:
            env_file.write(DEFAULT_ENV)
        print(".env.example not found, created a basic .env file.", file=sys.stderr)


if __name__ == "__main__":
    # =============================================================================
    # ENVIRONMENT CONFIGURATION
    # =============================================================================

    ensure_env_file()

    # =============================================================================
    # COMMAND DISPATCH
    # =============================================================================

    from app import run

    sys.exit(run(sys.argv[1:]))
