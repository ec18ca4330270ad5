"""
Shared plumbing for command handlers.

Handlers return result dicts ({"status": "success", ...} or
{"status": "error", "error": ..., "details": ...}); respond() prints the dict
as JSON and turns an error result into exit code 1.
"""

import functools
import json
import logging
import os
from typing import Any, Callable, Dict, List, Optional, Tuple

import click

from services.analysis import GraspSet
from services.errors import ConfigError, GraspKitError, MalformedInputError, StorageError
from services.synth import SynthScenario, generate_corpus
from storage.formats import grasp_directories, json_serializer, read_grasp

logger = logging.getLogger(__name__)

Result = Dict[str, Any]

DOMAIN_ERROR_EXIT = 1


def success(**payload: Any) -> Result:
    return {"status": "success", **payload}


def failure(error: str, details: Any = None) -> Result:
    return {"status": "error", "error": error, "details": details}


def handles_errors(handler: Callable[..., Result]) -> Callable[..., Result]:
    """Turn GraspKit and file-system exceptions raised by `handler` into error results."""

    @functools.wraps(handler)
    def wrapper(*args, **kwargs) -> Result:
        try:
            return handler(*args, **kwargs)
        except MalformedInputError as e:
            return failure(str(e), {"type": type(e).__name__, "path": e.path, "line": e.line, "column": e.column})
        except GraspKitError as e:
            return failure(str(e), {"type": type(e).__name__})
        except OSError as e:
            return failure(f"{e.strerror or e}: {e.filename}" if e.filename else str(e), {"type": type(e).__name__})

    return wrapper


def respond(result: Result) -> None:
    """Print the result and exit 1 when it is an error."""
    click.echo(json.dumps(result, default=json_serializer, sort_keys=True))
    if result.get("status") != "success":
        logger.error(f"{click.get_current_context().info_name}: {result.get('error')}")
        raise click.exceptions.Exit(DOMAIN_ERROR_EXIT)


# Options shared by every pipeline command.
config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                             help="JSON config file; flags override it.")
seed_option = click.option("--seed", type=click.IntRange(min=0), default=None, help="Random seed.")
out_option = click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True,
                          help="Output directory.")
corpus_option = click.option("--corpus", "corpus_dir", type=click.Path(file_okay=False), default=None,
                             help="Directory of grasp directories (object.ply, gt_joints.json, grasp.json).")
generate_option = click.option("--generate", "generate_n", type=click.IntRange(min=1), default=None,
                               help="Use N seeded synthetic grasps instead of --corpus.")


def load_corpus(corpus_dir: Optional[str], generate_n: Optional[int], scenario: SynthScenario,
                seed: int) -> Tuple[GraspSet, List[str], List[str]]:
    """
    Grasps from a corpus directory or a seeded synthetic corpus.

    Returns:
        (grasps, grasp names, input paths for the manifest)
    """
    if generate_n:
        grasps = generate_corpus(scenario, generate_n, seed)
        return grasps, [f"synth-{k:04d}" for k in range(len(grasps))], []
    if not corpus_dir:
        raise ConfigError("either --corpus or --generate is required")
    directories = grasp_directories(corpus_dir)
    if not directories:
        raise StorageError(f"no grasp directories in {corpus_dir}")
    grasps = GraspSet(tuple(read_grasp(d) for d in directories))
    logger.info(f"load_corpus: {len(grasps)} grasps from {corpus_dir}")
    return grasps, [os.path.basename(d) for d in directories], [corpus_dir]
