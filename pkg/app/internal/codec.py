import re
from dataclasses import dataclass, field
from typing import Iterable

from app.config import settings
from app.internal.errors import FormatError, MalformedNameError, NameTooLongError, NotOursError
from app.internal.netaddr import Address, Family
from app.models.probe import ProbeDomain, ProbeKind, ZoneConfig

MAX_NAME_LENGTH = 253
NONCE_ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789"
NONCE_LENGTH = 6
NONCE_SPACE = len(NONCE_ALPHABET) ** NONCE_LENGTH

_HEX_TARGET = re.compile(r"^[0-9a-f]{8}$")
_DEC_TARGET = re.compile(r"^(0|[1-9][0-9]{0,38})$")
_KIND_SCAN = re.compile(r"^([sn])([1-9][0-9]*)$")
_NONCE = re.compile(r"^[a-z0-9]{6}$")


def encode_target(target: Address) -> str:
    if target.family is Family.V4:
        return f"{target.value:08x}"
    return str(target.value)


def decode_target(label: str, family: Family) -> Address:
    if family is Family.V4:
        if not _HEX_TARGET.match(label):
            raise MalformedNameError(f"bad IPv4 target label {label!r}")
        return Address(Family.V4, int(label, 16))
    if not _DEC_TARGET.match(label):
        raise MalformedNameError(f"bad IPv6 target label {label!r}")
    value = int(label)
    if value >= 1 << 128:
        raise MalformedNameError(f"IPv6 target label {label!r} out of range")
    return Address(Family.V6, value)


def encode(d: ProbeDomain, z: ZoneConfig) -> str:
    vlabel, apex = z.zone_of(d.transport_zone)
    labels = [d.nonce, encode_target(d.target)]
    if d.nf:
        labels.append("nf")
    labels.extend([f"{d.kind.letter}{d.scan_id}", vlabel, apex])
    name = ".".join(labels)
    if len(name) > MAX_NAME_LENGTH:
        raise NameTooLongError(f"query name of {len(name)} chars exceeds {MAX_NAME_LENGTH}")
    return name


def decode(name: str, z: ZoneConfig) -> ProbeDomain:
    name = name.strip().rstrip(".").lower()
    # Longest apex first in case one apex is a suffix of the other
    for apex in sorted((z.apex_v4only, z.apex_v6only), key=len, reverse=True):
        if name.endswith("." + apex):
            break
    else:
        raise NotOursError(f"{name!r} is not under our zones")

    labels = name[: -len(apex) - 1].split(".")
    if len(labels) == 4:
        nonce, target_label, kind_scan, vlabel = labels
        nf = False
    elif len(labels) == 5 and labels[2] == "nf":
        nonce, target_label, _, kind_scan, vlabel = labels
        nf = True
    else:
        raise MalformedNameError(f"unexpected label layout in {name!r}")

    zone = z.transport_of(vlabel, apex)
    if zone is None:
        raise MalformedNameError(f"unknown version label {vlabel!r} in {name!r}")
    if not _NONCE.match(nonce):
        raise MalformedNameError(f"bad nonce {nonce!r}")
    match = _KIND_SCAN.match(kind_scan)
    if not match:
        raise MalformedNameError(f"bad kind/scan label {kind_scan!r}")

    return ProbeDomain(
        nonce=nonce,
        target=decode_target(target_label, zone.target_family),
        kind=ProbeKind.SPOOFED if match.group(1) == "s" else ProbeKind.UNSPOOFED,
        scan_id=int(match.group(2)),
        nf=nf,
        transport_zone=zone,
    )


def _base36(value: int) -> str:
    chars = []
    for _ in range(NONCE_LENGTH):
        value, digit = divmod(value, len(NONCE_ALPHABET))
        chars.append(NONCE_ALPHABET[digit])
    return "".join(reversed(chars))


def _derive(seed: int) -> tuple[int, int]:
    # Multiplier must be coprime to 36^6, i.e. not divisible by 2 or 3
    mixed = (seed * 0x9E3779B97F4A7C15 + 0x632BE59BD9B4E019) % (1 << 64)
    multiplier = (mixed % NONCE_SPACE) | 1
    while multiplier % 3 == 0:
        multiplier = (multiplier + 2) % NONCE_SPACE
    offset = (mixed >> 32) % NONCE_SPACE
    return multiplier, offset


@dataclass
class NonceGenerator:
    """Seeded stream of nonces; an affine permutation of [0, 36^6) so draws never repeat"""

    seed: int = 0
    counter: int = 0
    _params: tuple[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._params = _derive(self.seed)

    def next(self) -> str:
        multiplier, offset = self._params
        value = (multiplier * self.counter + offset) % NONCE_SPACE
        self.counter += 1
        return _base36(value)


def fresh_nonce(gen: NonceGenerator) -> str:
    return gen.next()


_ZONE_LINE = re.compile(r"^\s*([a-z_0-9]+)\s*=\s*(\S+)\s*$")
_ZONE_KEYS = {"apex_v4only", "apex_v6only", "sub_v4", "sub_v6"}


def load_zone_config(stream: Iterable[str]) -> ZoneConfig:
    """key=value lines (apex_v4only, apex_v6only, sub_v4, sub_v6); missing keys keep defaults"""
    values = {
        "apex_v4only": settings.apex_v4only,
        "apex_v6only": settings.apex_v6only,
        "sub_v4": settings.sub_v4,
        "sub_v6": settings.sub_v6,
    }
    for line in stream:
        line = line.split("#", 1)[0]
        if not line.strip():
            continue
        match = _ZONE_LINE.match(line)
        if not match or match.group(1) not in _ZONE_KEYS:
            raise FormatError(f"bad zone config line {line.strip()!r}")
        values[match.group(1)] = match.group(2)
    try:
        return ZoneConfig(**values)
    except ValueError as e:
        raise FormatError(str(e)) from e


def default_zones() -> ZoneConfig:
    return ZoneConfig(
        apex_v4only=settings.apex_v4only,
        apex_v6only=settings.apex_v6only,
        sub_v4=settings.sub_v4,
        sub_v6=settings.sub_v6,
    )
