"""
GraspKit - hand-object contact modeling from multi-view captures

This is the main application file for GraspKit. It wires the command modules
into one command-line group:

- Synthetic grasp generation and multi-view 3D hand reconstruction
- Thermal contact normalization and hand-derived per-point features
- A calibrated proximity heuristic and a learned per-point MLP
- Evaluation metrics and dataset-level contact analyses

Exit codes:
- 0: success
- 1: domain error (missing or malformed input, infeasible scenario, ...)
- 2: usage error

Author: GraspKit Team
Version: 1.0.0
"""

import logging
import sys
from typing import List, Optional

import click
from dotenv import load_dotenv

from services.settings import GRASPKIT_LOG_LEVEL

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

USAGE_ERROR_EXIT = 2


# =============================================================================
# CLI GROUP
# =============================================================================

@click.group(name="graspkit")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
              default=GRASPKIT_LOG_LEVEL, show_default=True)
def cli(log_level: str):
    """Hand-object contact modeling toolkit."""
    logging.basicConfig(level=getattr(logging, log_level.upper()),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


# Import and register command modules
from commands import contact, learning, pipeline  # noqa: E402

for module in (pipeline, contact, learning):
    for command in module.COMMANDS:
        cli.add_command(command)


# =============================================================================
# ENTRY POINT
# =============================================================================

def run(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    try:
        result = cli.main(args=argv, prog_name="graspkit", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return USAGE_ERROR_EXIT
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo("Aborted!", err=True)
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(run())
