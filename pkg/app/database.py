from typing import Any, Generator

from sqlmodel import Session, SQLModel, create_engine

from app.config import settings

# Import models to register them with SQLModel
from app.models import MeasurementRun, VerdictRecord  # noqa: F401


def _connect_args(url: str) -> dict[str, Any]:
    # Request handlers and the threadpool share SQLite connections
    if url.startswith("sqlite"):
        return {"check_same_thread": False}
    return {}


engine = create_engine(
    settings.database_url,
    echo=settings.debug,
    connect_args=_connect_args(settings.database_url),
)


def create_db_and_tables():
    SQLModel.metadata.create_all(engine)


def get_session() -> Generator[Session, None, None]:
    with Session(engine) as session:
        yield session
