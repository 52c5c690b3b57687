"""Exception types shared across the package."""


class Bp7Error(Exception):
    """Base class for all protocol and configuration errors."""


class MalformedEid(Bp7Error):
    """Endpoint ID is not a well-formed ipn-scheme identifier."""


class MalformedBundle(Bp7Error):
    """Bundle bytes violate the expected block structure."""


class CrcMismatch(Bp7Error):
    """A block's CRC does not match its content."""


class MalformedBlock(Bp7Error):
    """Extension block content has the wrong arity or field types."""


class PrefixViolation(Bp7Error):
    """An optional block field is set while an earlier field is missing."""


class MalformedSignal(Bp7Error):
    """CRS/CCS payload is not a well-formed signal."""


class DuplicateCteb(Bp7Error):
    """A bundle may carry at most one custody transfer block."""


class Overflow(Bp7Error):
    """A sequence range exceeds the maximum sequence number."""


class StoreFull(Bp7Error):
    """The persistent store cannot hold another bundle."""


class ConfigError(Bp7Error):
    """Scenario or node configuration is invalid."""
