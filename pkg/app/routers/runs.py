import io
from typing import Dict, List, Optional

from fastapi import APIRouter, Depends, HTTPException, Query
from fastapi.responses import PlainTextResponse
from sqlmodel import Session

from app.database import get_session
from app.internal.parser import write_verdicts
from app.internal.runs import run_service
from app.models.run import MeasurementRun, VerdictRecord
from app.models.verdict import VerdictStatus

router = APIRouter(prefix="/api/runs", tags=["runs"])


def _run_or_404(session: Session, run_id: int) -> MeasurementRun:
    run = run_service.get_run(session, run_id)
    if not run:
        raise HTTPException(status_code=404, detail="Run not found")
    return run


@router.get("/", response_model=List[MeasurementRun])
async def list_runs(
    limit: int = Query(20, ge=1, le=100),
    offset: int = Query(0, ge=0),
    session: Session = Depends(get_session),
):
    """List stored verdict runs"""
    return run_service.list_runs(session, limit=limit, offset=offset)


@router.get("/{run_id}", response_model=MeasurementRun)
async def get_run(run_id: int, session: Session = Depends(get_session)):
    return _run_or_404(session, run_id)


@router.get("/{run_id}/verdicts", response_model=List[VerdictRecord])
async def list_verdicts(
    run_id: int,
    status: Optional[VerdictStatus] = Query(None, description="Only units with this status"),
    limit: int = Query(100, ge=1, le=1000),
    offset: int = Query(0, ge=0),
    session: Session = Depends(get_session),
):
    """Unit verdicts of a run"""
    _run_or_404(session, run_id)
    return run_service.verdicts_of(session, run_id, status=status, limit=limit, offset=offset)


@router.get("/{run_id}/histogram")
async def histogram(run_id: int, session: Session = Depends(get_session)) -> Dict[str, int]:
    """Number of units per verdict status"""
    _run_or_404(session, run_id)
    return run_service.histogram(session, run_id)


@router.get("/{run_id}/export", response_class=PlainTextResponse)
async def export_run(run_id: int, session: Session = Depends(get_session)):
    """Verdicts of a run as the CSV that `savscan infer` writes"""
    _run_or_404(session, run_id)
    verdicts = sorted(run_service.load_verdicts(session, run_id), key=lambda v: v.unit.sort_key())
    out = io.StringIO()
    write_verdicts(out, verdicts)
    return PlainTextResponse(out.getvalue(), media_type="text/csv")
