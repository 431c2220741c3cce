"""Exception hierarchy shared across the toolkit."""


class PruneKitError(Exception):
    """Base class for all toolkit errors."""


class ManifestError(PruneKitError):
    """Manifest file is malformed or references missing/inconsistent data."""


class ValidationError(PruneKitError):
    """A snapshot violates a structural invariant."""


class CostError(PruneKitError):
    """Channel configuration cannot be costed for this snapshot."""


class ImportanceError(PruneKitError):
    """Block importances are undefined for this snapshot."""


class PlanError(PruneKitError):
    """No channel configuration can satisfy the requested budget."""


class InheritError(PruneKitError):
    """Channel selection or weight slicing is inconsistent."""


class EngineError(PruneKitError):
    """Shape mismatch or non-finite value during forward/backward."""


class TrainingDiverged(PruneKitError):
    """Loss became non-finite during training."""


class DataError(PruneKitError):
    """Dataset files are missing, truncated, or invalid."""


class StageError(PruneKitError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"stage={stage}: {cause}")
        self.stage = stage
        self.cause = cause
