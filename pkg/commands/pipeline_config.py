"""
Effective configuration for pipeline commands.

Values are layered: built-in defaults, then an optional JSON config file,
then command-line flags. Unknown keys in the file are rejected.
"""

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Optional

from services.errors import ConfigError, GraspKitError
from services.features import FAMILIES
from services.heuristic import CALIBRATION_SAMPLES, PSI_CUTOFF
from services.learner import TrainConfig
from services.reconstruct import RansacParams
from services.synth import SynthScenario
from storage.formats import read_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    family: str = "skeleton"
    split: str = "object"
    level: str = "phalange"
    psi_cutoff: float = PSI_CUTOFF
    calibration_samples: int = CALIBRATION_SAMPLES
    calibration_mode: str = "corpus"
    temperature: float = 0.1
    rebalance_lambda: float = 0.0
    voxel_resolution: int = 64
    cluster_threshold: float = 0.1
    pose_threshold: float = 0.1
    rescue: bool = True
    refine: bool = False
    ransac: RansacParams = field(default_factory=RansacParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    scenario: SynthScenario = field(default_factory=SynthScenario)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.split not in ("object", "participant"):
            raise ConfigError(f"split must be 'object' or 'participant', got {self.split!r}")
        if self.level not in ("point", "phalange"):
            raise ConfigError(f"level must be 'point' or 'phalange', got {self.level!r}")
        if self.calibration_mode not in ("corpus", "per-grasp"):
            raise ConfigError("calibration mode must be 'corpus' or 'per-grasp'")

    def seeded_scenario(self) -> SynthScenario:
        """The synthetic scenario driven by the top-level seed."""
        return replace(self.scenario, seed=self.seed)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "PipelineConfig":
        _reject_unknown(payload, {f.name for f in fields(cls)}, "config")
        values = dict(payload)
        try:
            if "ransac" in values:
                _reject_unknown(values["ransac"], {f.name for f in fields(RansacParams)}, "ransac")
                values["ransac"] = RansacParams(**values["ransac"])
            if "train" in values:
                _reject_unknown(values["train"], {f.name for f in fields(TrainConfig)}, "train")
                train = dict(values["train"])
                if "hidden" in train:
                    train["hidden"] = tuple(train["hidden"])
                values["train"] = TrainConfig(**train)
            if "scenario" in values:
                values["scenario"] = SynthScenario.from_dict(values["scenario"])
            return cls(**values)
        except ConfigError:
            raise
        except (TypeError, ValueError, GraspKitError) as e:
            raise ConfigError(f"invalid configuration: {e}")


def _reject_unknown(payload: Any, known: set, section: str) -> None:
    if not isinstance(payload, dict):
        raise ConfigError(f"{section} must be a JSON object")
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")


def merge(base: Dict[str, Any], overlay: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; overlay wins, nested objects merge key by key."""
    merged = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def resolve_config(config_path: Optional[str] = None, flags: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """
    Defaults < config file < flags.

    Flags set to None are treated as not given.
    """
    payload = PipelineConfig().to_dict()
    if config_path:
        overlay = read_json(config_path)
        _reject_unknown(overlay, set(payload), "config")
        payload = merge(payload, overlay)
    if flags:
        payload = merge(payload, _drop_unset(flags))
    config = PipelineConfig.from_dict(payload)
    logger.debug(f"resolve_config: {config}")
    return config


def _drop_unset(flags: Dict[str, Any]) -> Dict[str, Any]:
    cleaned = {}
    for key, value in flags.items():
        if isinstance(value, dict):
            nested = _drop_unset(value)
            if nested:
                cleaned[key] = nested
        elif value is not None:
            cleaned[key] = value
    return cleaned
