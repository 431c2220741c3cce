"""Framework-checkpoint to snapshot-format converter."""

from .checkpoint import CheckpointError, read_checkpoint
from .export import ExportError, ExportSummary, export

__version__ = "0.1.0"
