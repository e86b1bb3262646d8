class SavScanError(Exception):
    """Base class for all savscan errors"""


class FormatError(SavScanError, ValueError):
    """Input file or record could not be parsed as a whole"""


class EmptyTableError(SavScanError, ValueError):
    """A routing table ended up with no valid entries"""


class FamilyMismatchError(SavScanError, ValueError):
    """Address family does not fit the requested operation"""


class UnknownAsnError(SavScanError, KeyError):
    """ASN does not appear in any of the given routing tables"""


class CodecError(SavScanError, ValueError):
    """Query name could not be encoded or decoded"""


class NotOursError(CodecError):
    """Query name is outside our measurement zones"""


class MalformedNameError(CodecError):
    """Query name is under our zones but does not follow the label grammar"""


class NameTooLongError(CodecError):
    """Rendered query name exceeds the DNS length limit"""


class EmptyTargetSetError(SavScanError, ValueError):
    """A scan plan has no target left after exclusions"""


class RescanError(SavScanError, ValueError):
    """Rescan data refers to a unit that was not partial before"""


class TopologyError(SavScanError, ValueError):
    """Simulated topology violates one of its invariants"""


class MissingTableError(SavScanError, ValueError):
    """Routing-table level requested without a routing table"""
