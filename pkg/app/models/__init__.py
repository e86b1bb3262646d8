from .run import (
    MeasurementRun,
    VerdictRecord,
)

__all__ = [
    # Stored verdict runs
    "MeasurementRun",
    "VerdictRecord",
]
