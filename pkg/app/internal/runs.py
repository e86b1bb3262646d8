import logging
from typing import Iterable, Optional

from sqlalchemy import func
from sqlmodel import Session, select

from app.internal.netaddr import NetworkLevel, NetworkUnit
from app.models.run import MeasurementRun, VerdictRecord
from app.models.verdict import RescanState, UnitVerdict, VerdictStatus

logger = logging.getLogger(__name__)


class RunService:
    """Stores verdict runs and answers queries over them"""

    def store_verdicts(
        self,
        session: Session,
        name: str,
        level: NetworkLevel | str,
        verdicts: Iterable[UnitVerdict],
        description: Optional[str] = None,
    ) -> MeasurementRun:
        level = NetworkLevel(level)
        run = MeasurementRun(name=name, level=level.value, description=description)
        session.add(run)
        session.flush()
        count = 0
        for v in verdicts:
            if v.unit.level is not level:
                raise ValueError(f"{v.unit} does not belong to a {level} run")
            session.add(
                VerdictRecord(
                    run_id=run.id,
                    level=v.unit.level.value,
                    key=str(v.unit.key),
                    status=v.status.value,
                    n_measurements=v.n_measurements,
                    rescan=v.rescan.value,
                )
            )
            count += 1
        session.commit()
        session.refresh(run)
        logger.info("Stored run %d (%s) with %d verdicts", run.id, name, count)
        return run

    def list_runs(self, session: Session, limit: int = 20, offset: int = 0) -> list[MeasurementRun]:
        statement = select(MeasurementRun).order_by(MeasurementRun.id).offset(offset).limit(limit)
        return list(session.exec(statement).all())

    def get_run(self, session: Session, run_id: int) -> Optional[MeasurementRun]:
        return session.get(MeasurementRun, run_id)

    def verdicts_of(
        self,
        session: Session,
        run_id: int,
        status: Optional[VerdictStatus] = None,
        limit: int = 100,
        offset: int = 0,
    ) -> list[VerdictRecord]:
        statement = select(VerdictRecord).where(VerdictRecord.run_id == run_id)
        if status:
            statement = statement.where(VerdictRecord.status == VerdictStatus(status).value)
        statement = statement.order_by(VerdictRecord.id).offset(offset).limit(limit)
        return list(session.exec(statement).all())

    def histogram(self, session: Session, run_id: int) -> dict[str, int]:
        statement = (
            select(VerdictRecord.status, func.count(VerdictRecord.id))
            .where(VerdictRecord.run_id == run_id)
            .group_by(VerdictRecord.status)
        )
        counts = dict(session.exec(statement).all())
        return {status.value: counts.get(status.value, 0) for status in VerdictStatus}

    def load_verdicts(self, session: Session, run_id: int) -> list[UnitVerdict]:
        records = session.exec(select(VerdictRecord).where(VerdictRecord.run_id == run_id)).all()
        return [
            UnitVerdict(
                unit=NetworkUnit.parse(r.level, r.key),
                status=VerdictStatus(r.status),
                n_measurements=r.n_measurements,
                rescan=RescanState(r.rescan),
            )
            for r in records
        ]


# Global service instance
run_service = RunService()
