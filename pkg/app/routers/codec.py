from typing import Any, Dict

from fastapi import APIRouter, HTTPException, Query
from pydantic import BaseModel, Field

from app.internal import codec
from app.internal.errors import CodecError, FormatError, NotOursError
from app.internal.netaddr import Address
from app.models.probe import ProbeDomain, ProbeKind, TransportZone

router = APIRouter(prefix="/api/codec", tags=["codec"])


class EncodeRequest(BaseModel):
    target: str
    kind: ProbeKind
    scan_id: int = Field(default=1, ge=1)
    nf: bool = False
    transport_zone: TransportZone = TransportZone.V4_ONLY
    nonce: str | None = None
    seed: int = 0


def _domain_dict(d: ProbeDomain) -> Dict[str, Any]:
    return {
        "nonce": d.nonce,
        "target": str(d.target),
        "kind": d.kind,
        "scan_id": d.scan_id,
        "nf": d.nf,
        "transport_zone": d.transport_zone,
    }


@router.get("/decode")
async def decode_name(name: str = Query(..., description="Query name seen by the authoritative server")):
    """Decode a measurement query name with the configured zones"""
    try:
        domain = codec.decode(name, codec.default_zones())
    except NotOursError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except CodecError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return _domain_dict(domain)


@router.post("/encode")
async def encode_name(request: EncodeRequest) -> Dict[str, Any]:
    try:
        domain = ProbeDomain(
            nonce=request.nonce or codec.fresh_nonce(codec.NonceGenerator(request.seed)),
            target=Address.parse(request.target),
            kind=request.kind,
            scan_id=request.scan_id,
            nf=request.nf,
            transport_zone=request.transport_zone,
        )
        name = codec.encode(domain, codec.default_zones())
    except (FormatError, CodecError, ValueError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    return {"name": name, **_domain_dict(domain)}
