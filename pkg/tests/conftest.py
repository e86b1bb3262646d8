import os

import hypothesis
import pytest
from sqlalchemy.pool import StaticPool
from sqlmodel import Session, SQLModel, create_engine

import app.models  # noqa: F401
from app.internal import codec
from app.internal.netaddr import Address, BgpTable, Prefix
from app.models.topology import ResolverBehavior, SimNetwork, SimResolver, SimTopology

hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=500, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "fast"))


def addr(text: str) -> Address:
    return Address.parse(text)


def net(text: str) -> Prefix:
    return Prefix.parse(text)


@pytest.fixture
def zones():
    return codec.default_zones()


@pytest.fixture
def table():
    return BgpTable(
        [
            (net("1.2.0.0/16"), 100),
            (net("1.2.3.0/24"), 200),
            (net("5.6.7.0/24"), 300),
            (net("9.9.9.0/24"), 19281),
            (net("2001:db8::/32"), 100),
        ]
    )


def resolver(
    text: str, open: bool = True, acl=None, behavior=ResolverBehavior.RECURSIVE, upstream=None, sibling=None
):
    address = addr(text)
    return SimResolver(
        addr=address,
        open=open,
        acl=tuple(acl) if acl is not None else (Prefix.of(address, 24 if address.family == 4 else 48),),
        behavior=behavior,
        upstream=addr(upstream) if upstream else None,
        sibling=addr(sibling) if sibling else None,
    )


def topology(*networks: SimNetwork, loss: float = 0.0, seed: int = 0) -> SimTopology:
    return SimTopology(
        networks=networks,
        external_routes=((net("9.9.9.0/24"), 19281),),
        loss_probability=loss,
        seed=seed,
    )


@pytest.fixture
def session():
    engine = create_engine("sqlite://", connect_args={"check_same_thread": False}, poolclass=StaticPool)
    SQLModel.metadata.create_all(engine)
    with Session(engine) as session:
        yield session
