"""Sequence-based bundle identities: scopes, counters, and tags.

A bundle under reporting or custody is identified network-wide by the
triple {scope, sequence number, block-source administrative endpoint}.
The scope is either an explicit sequence ID (>= 1) or, for the reserved
ID 0, the per-destination counter keyed by the bundle's destination.
"""

from __future__ import annotations

from dataclasses import dataclass

from .bundle import PrimaryBlockData
from .eid import EndpointId

DEFAULT_MAX_SEQUENCE = 2**32 - 1


@dataclass(frozen=True)
class SequenceScope:
    explicit_id: int | None = None
    destination: EndpointId | None = None

    def __post_init__(self):
        if (self.explicit_id is None) == (self.destination is None):
            raise ValueError("scope is either an explicit id or a destination")
        if self.explicit_id is not None and self.explicit_id < 1:
            raise ValueError("id 0 is reserved for the per-destination scope")

    @classmethod
    def explicit(cls, sequence_id: int) -> "SequenceScope":
        return cls(explicit_id=sequence_id)

    @classmethod
    def for_destination(cls, destination: EndpointId) -> "SequenceScope":
        return cls(destination=destination)

    @property
    def is_per_destination(self) -> bool:
        return self.destination is not None

    def wire_id(self) -> int:
        """Sequence ID as written on the wire; 0 means per-destination."""
        return 0 if self.is_per_destination else self.explicit_id

    def text(self) -> str:
        if self.is_per_destination:
            return f"dst:{self.destination}"
        return f"id:{self.explicit_id}"

    @classmethod
    def parse(cls, text: str) -> "SequenceScope":
        if text.startswith("dst:"):
            return cls.for_destination(EndpointId.parse(text[4:]))
        if text.startswith("id:"):
            return cls.explicit(int(text[3:]))
        raise ValueError(f"not a scope: {text!r}")


@dataclass(frozen=True)
class BundleTag:
    """Network-unique identity {scope, sequence number, block source}."""

    scope: SequenceScope
    sequence_number: int
    block_source: EndpointId

    def __post_init__(self):
        if self.sequence_number < 0:
            raise ValueError("sequence number must be non-negative")
        if not self.block_source.is_administrative:
            raise ValueError("block source must be an administrative endpoint")

    def text(self) -> str:
        return f"{self.scope.text()}/{self.sequence_number}/{self.block_source}"

    @classmethod
    def parse(cls, text: str) -> "BundleTag":
        scope_text, number, source = text.split("/")
        return cls(SequenceScope.parse(scope_text), int(number), EndpointId.parse(source))

    def sort_key(self):
        return (self.scope.text(), str(self.block_source), self.sequence_number)


class SequenceCounterTable:
    """Per-scope counters issuing sequence numbers 0,1,2,... modulo N+1.

    Scopes are independent: issuing from one never moves another.
    """

    def __init__(self, max_value: int = DEFAULT_MAX_SEQUENCE):
        self.max_value = max_value
        self._next: dict[SequenceScope, int] = {}

    def next_sequence_number(self, scope: SequenceScope) -> int:
        value = self._next.get(scope, 0)
        self._next[scope] = (value + 1) % (self.max_value + 1)
        return value

    def snapshot(self) -> dict[SequenceScope, int]:
        return dict(self._next)


def derive_tag(
    scope_field: int | None,
    sequence_number: int,
    block_source_field: EndpointId | None,
    bundle_primary: PrimaryBlockData,
) -> BundleTag:
    """Resolve wire fields, applying their defaulting rules, into a tag.

    An absent or zero scope field selects the per-destination scope of
    the bundle's destination; an absent block source defaults to the
    administrative endpoint of the bundle's source node.
    """
    if not scope_field:
        scope = SequenceScope.for_destination(bundle_primary.destination)
    else:
        scope = SequenceScope.explicit(scope_field)
    if block_source_field is None:
        source = bundle_primary.source.administrative()
    else:
        source = block_source_field.administrative()
    return BundleTag(scope, sequence_number, source)
