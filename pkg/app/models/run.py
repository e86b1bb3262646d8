from datetime import datetime, timezone
from typing import List, Optional

from sqlmodel import Field, Relationship, SQLModel


def _now() -> datetime:
    return datetime.now(timezone.utc)


class MeasurementRun(SQLModel, table=True):
    """One stored set of unit verdicts"""

    id: Optional[int] = Field(default=None, primary_key=True)

    name: str = Field(index=True)
    level: str = Field(index=True)
    description: Optional[str] = None

    created_at: datetime = Field(default_factory=_now)

    # Relationships
    verdicts: List["VerdictRecord"] = Relationship(back_populates="run")


class VerdictRecord(SQLModel, table=True):
    id: Optional[int] = Field(default=None, primary_key=True)
    run_id: int = Field(foreign_key="measurementrun.id", index=True)

    level: str
    key: str = Field(index=True)
    status: str = Field(index=True)
    n_measurements: int = 0
    rescan: str = "none"

    # Relationships
    run: MeasurementRun = Relationship(back_populates="verdicts")
