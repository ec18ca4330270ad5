"""
Run manifests.

Every command writes manifest.json next to its outputs: the command name,
the effective configuration, SHA-256 of every input file, package versions
and a UTC timestamp.
"""

import hashlib
import logging
import os
import platform
from datetime import datetime, timezone
from importlib import metadata
from typing import Any, Dict, Iterable, Optional

from storage.formats import write_json

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TRACKED_PACKAGES = ("numpy", "scipy", "trimesh", "pandas", "click", "python-dotenv")


def file_digest(path: str, chunk: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(chunk), b""):
            digest.update(block)
    return digest.hexdigest()


def input_digests(paths: Iterable[str]) -> Dict[str, str]:
    """SHA-256 per input file; directories contribute every file inside them."""
    digests = {}
    for path in paths:
        if os.path.isdir(path):
            for root, _, files in sorted(os.walk(path)):
                for name in sorted(files):
                    if name == MANIFEST_NAME:
                        continue
                    full = os.path.join(root, name)
                    digests[full] = file_digest(full)
        elif os.path.exists(path):
            digests[path] = file_digest(path)
    return digests


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for package in TRACKED_PACKAGES:
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "not installed"
    return versions


def write_manifest(out_dir: str, command: str, config: Dict[str, Any], inputs: Iterable[str] = (),
                   extra: Optional[Dict[str, Any]] = None) -> str:
    """Write manifest.json into out_dir and return its path."""
    os.makedirs(out_dir, exist_ok=True)
    payload = {
        "command": command,
        "config": config,
        "inputs": input_digests(inputs),
        "versions": package_versions(),
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        payload.update(extra)
    path = os.path.join(out_dir, MANIFEST_NAME)
    write_json(path, payload)
    logger.debug(f"write_manifest: {path}")
    return path
