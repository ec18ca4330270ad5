"""
Exception hierarchy for GraspKit services.

Every domain failure raised by the services derives from GraspKitError so the
command layer can map it to exit code 1 without catching unrelated bugs.
"""

from typing import Optional, Sequence


class GraspKitError(Exception):
    """Base class for all domain errors."""


class ConfigError(GraspKitError):
    """Invalid or unknown configuration keys."""


# =============================================================================
# GEOMETRY
# =============================================================================

class GeometryError(GraspKitError):
    pass


class EmptyMeshError(GeometryError):
    pass


class BehindCameraError(GeometryError):
    """A projected point has non-positive depth in the camera frame."""


# =============================================================================
# HAND MODEL
# =============================================================================

class HandModelError(GraspKitError):
    pass


class ParameterRangeError(HandModelError):
    def __init__(self, message: str, indices: Sequence[int]):
        super().__init__(f"{message}: indices {list(indices)}")
        self.indices = list(indices)


class FitDivergedError(HandModelError):
    def __init__(self, message: str, trace: Sequence[float]):
        super().__init__(message)
        self.trace = list(trace)


# =============================================================================
# RECONSTRUCTION
# =============================================================================

class ReconstructionError(GraspKitError):
    pass


class TriangulationError(ReconstructionError):
    pass


class ReconstructionFailedError(ReconstructionError):
    pass


class PnPError(ReconstructionError):
    pass


# =============================================================================
# CONTACT, FEATURES, LEARNING, ANALYSIS
# =============================================================================

class ContactError(GraspKitError):
    pass


class FeatureError(GraspKitError):
    pass


class CalibrationError(GraspKitError):
    pass


class TrainingError(GraspKitError):
    pass


class TrainingDivergedError(TrainingError):
    """Raised on a NaN loss; carries the last model whose loss was finite."""

    def __init__(self, message: str, last_good_model=None):
        super().__init__(message)
        self.last_good_model = last_good_model


class AnalysisError(GraspKitError):
    pass


class MetricsError(GraspKitError):
    pass


class ScenarioInfeasibleError(GraspKitError):
    pass


# =============================================================================
# STORAGE
# =============================================================================

class StorageError(GraspKitError):
    pass


class MalformedInputError(StorageError):
    def __init__(self, path: str, message: str, line: Optional[int] = None,
                 column: Optional[int] = None):
        location = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{path}: {message}{location}")
        self.path = path
        self.line = line
        self.column = column
