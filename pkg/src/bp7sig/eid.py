"""ipn-scheme endpoint identifiers and their wire form.

Only the ipn scheme is supported; every endpoint in this package is a
node number plus a service number, and service number 0 is the node's
administrative endpoint (where CRS/CCS records are addressed).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import cbor
from .cbor import CborDecodeError
from .errors import MalformedEid

IPN_SCHEME_CODE = 2

_TEXT_FORM = re.compile(r"^ipn:(\d+)\.(\d+)$")


@dataclass(frozen=True, order=True)
class EndpointId:
    node_number: int
    service_number: int

    def __post_init__(self):
        if self.node_number < 0 or self.service_number < 0:
            raise MalformedEid("ipn components must be non-negative")

    @property
    def is_administrative(self) -> bool:
        return self.service_number == 0

    def administrative(self) -> "EndpointId":
        """The administrative endpoint of the same node."""
        return EndpointId(self.node_number, 0)

    def __str__(self) -> str:
        return f"ipn:{self.node_number}.{self.service_number}"

    @classmethod
    def parse(cls, text: str) -> "EndpointId":
        match = _TEXT_FORM.match(text)
        if not match:
            raise MalformedEid(f"not an ipn endpoint: {text!r}")
        return cls(int(match.group(1)), int(match.group(2)))


def eid_item(eid: EndpointId) -> list:
    """The EID as a decoded CBOR structure, for nesting in larger items."""
    return [IPN_SCHEME_CODE, [eid.node_number, eid.service_number]]


def eid_from_item(item) -> EndpointId:
    """Validate a decoded [scheme, ssp] structure into an EndpointId."""
    if not isinstance(item, list) or len(item) != 2:
        raise MalformedEid("endpoint item is not a 2-element array")
    scheme, ssp = item
    if scheme != IPN_SCHEME_CODE:
        raise MalformedEid(f"unsupported EID scheme code {scheme!r}")
    if (
        not isinstance(ssp, list)
        or len(ssp) != 2
        or not all(isinstance(n, int) and n >= 0 for n in ssp)
    ):
        raise MalformedEid("ipn SSP is not [node, service]")
    return EndpointId(ssp[0], ssp[1])


def encode_eid(eid: EndpointId) -> bytes:
    return cbor.encode(eid_item(eid))


def decode_eid(data: bytes) -> EndpointId:
    try:
        item = cbor.decode(data)
    except CborDecodeError as exc:
        raise MalformedEid(str(exc)) from exc
    return eid_from_item(item)
