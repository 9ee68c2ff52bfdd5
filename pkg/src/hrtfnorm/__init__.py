"""Cross-database HRTF magnitude harmonization toolkit."""

from .core import (
    Database,
    Ear,
    FormatError,
    FrequencyGrid,
    SourcePosition,
    SubjectHrtf,
    ValidationError,
    find_common_positions,
    load_database,
    save_database,
    select_positions,
)
from .normalize import (
    AverageHrtf,
    NormalizationMode,
    compute_average_hrtf,
    denormalize,
    normalize,
)
from .metrics import BandSelection, lsd, lsd_per_position

__all__ = [
    "AverageHrtf",
    "BandSelection",
    "Database",
    "Ear",
    "FormatError",
    "FrequencyGrid",
    "NormalizationMode",
    "SourcePosition",
    "SubjectHrtf",
    "ValidationError",
    "compute_average_hrtf",
    "denormalize",
    "find_common_positions",
    "load_database",
    "lsd",
    "lsd_per_position",
    "normalize",
    "save_database",
    "select_positions",
]
