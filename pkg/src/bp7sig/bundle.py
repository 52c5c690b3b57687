"""RFC 9171 bundle structure, restricted to the subset the signals need.

A bundle on the wire is an indefinite-length CBOR array holding the
primary block followed by canonical blocks, payload block last. No
fragmentation, no BPSec, no dtn-scheme endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum

from . import cbor
from .cbor import CborDecodeError, Decoder
from .crc import crc16_x25, crc32c
from .eid import EndpointId, eid_from_item, eid_item
from .errors import CrcMismatch, MalformedBundle, MalformedEid

BP_VERSION = 7

# Primary-block processing flag: payload is an administrative record.
FLAG_ADMIN_RECORD = 0x02

PAYLOAD_BLOCK_TYPE = 1
PAYLOAD_BLOCK_NUMBER = 1
# Extension block type codes from the private-use range 192-255.
CREB_BLOCK_TYPE = 192
CTEB_BLOCK_TYPE = 193


class CrcType(IntEnum):
    NONE = 0
    CRC16 = 1
    CRC32C = 2


_CRC_SIZES = {CrcType.CRC16: 2, CrcType.CRC32C: 4}


@dataclass(frozen=True)
class PrimaryBlockData:
    destination: EndpointId
    source: EndpointId
    report_to: EndpointId
    creation_time: int  # ms
    creation_sequence: int
    lifetime: int  # ms
    processing_flags: int = 0
    crc_type: CrcType = CrcType.CRC32C
    version: int = BP_VERSION

    def identity(self) -> str:
        """Per-source unique identity (source, creation time, sequence)."""
        return f"{self.source}-{self.creation_time}-{self.creation_sequence}"

    @property
    def is_admin_record(self) -> bool:
        return bool(self.processing_flags & FLAG_ADMIN_RECORD)


@dataclass(frozen=True)
class CanonicalBlock:
    block_type_code: int
    block_number: int
    type_specific_data: bytes
    block_flags: int = 0
    crc_type: CrcType = CrcType.CRC32C


@dataclass(frozen=True)
class Bundle:
    primary: PrimaryBlockData
    blocks: tuple[CanonicalBlock, ...]

    @property
    def payload(self) -> CanonicalBlock:
        return self.blocks[-1]

    def block_of_type(self, type_code: int) -> CanonicalBlock | None:
        for block in self.blocks:
            if block.block_type_code == type_code:
                return block
        return None

    def blocks_of_type(self, type_code: int) -> list[CanonicalBlock]:
        return [b for b in self.blocks if b.block_type_code == type_code]

    def replace_block(self, block_number: int, data: bytes) -> "Bundle":
        """New bundle with one block's content swapped, number kept."""
        blocks = tuple(
            replace(b, type_specific_data=data) if b.block_number == block_number else b
            for b in self.blocks
        )
        return Bundle(self.primary, blocks)

    def insert_extension(self, block_type_code: int, data: bytes) -> "Bundle":
        """New bundle with an extension block added before the payload."""
        next_number = max(b.block_number for b in self.blocks) + 1
        block = CanonicalBlock(block_type_code, next_number, data)
        return Bundle(self.primary, self.blocks[:-1] + (block,) + (self.payload,))


def make_bundle(
    primary: PrimaryBlockData,
    extensions: list[CanonicalBlock] | None = None,
    payload: bytes = b"",
) -> Bundle:
    """Assemble a bundle; extension block numbers are assigned from 2."""
    blocks = []
    for offset, ext in enumerate(extensions or []):
        blocks.append(replace(ext, block_number=2 + offset))
    blocks.append(
        CanonicalBlock(PAYLOAD_BLOCK_TYPE, PAYLOAD_BLOCK_NUMBER, payload, crc_type=primary.crc_type)
    )
    return Bundle(primary, tuple(blocks))


def _apply_crc(items: list, crc_type: CrcType) -> bytes:
    """Encode the block items, filling the trailing CRC field if any."""
    if crc_type == CrcType.NONE:
        return cbor.encode(items)
    size = _CRC_SIZES[crc_type]
    encoded = cbor.encode(items + [b"\x00" * size])
    compute = crc16_x25 if crc_type == CrcType.CRC16 else crc32c
    # The zero-filled CRC field is the last item, so its content bytes
    # are exactly the tail of the encoding.
    return encoded[:-size] + compute(encoded).to_bytes(size, "big")


def _check_crc(raw: bytes, crc_type: CrcType, declared: bytes, where: str) -> None:
    size = _CRC_SIZES[crc_type]
    if len(declared) != size:
        raise MalformedBundle(f"{where}: CRC field has wrong length")
    zeroed = raw[:-size] + b"\x00" * size
    compute = crc16_x25 if crc_type == CrcType.CRC16 else crc32c
    if compute(zeroed).to_bytes(size, "big") != declared:
        raise CrcMismatch(f"{where}: CRC check failed")


def _encode_primary(p: PrimaryBlockData) -> bytes:
    if p.version != BP_VERSION:
        raise MalformedBundle(f"cannot encode version {p.version}")
    if p.lifetime <= 0:
        raise MalformedBundle("lifetime must be positive")
    items = [
        p.version,
        p.processing_flags,
        int(p.crc_type),
        eid_item(p.destination),
        eid_item(p.source),
        eid_item(p.report_to),
        [p.creation_time, p.creation_sequence],
        p.lifetime,
    ]
    return _apply_crc(items, p.crc_type)


def _encode_canonical(b: CanonicalBlock) -> bytes:
    items = [
        b.block_type_code,
        b.block_number,
        b.block_flags,
        int(b.crc_type),
        bytes(b.type_specific_data),
    ]
    return _apply_crc(items, b.crc_type)


def encode_bundle(bundle: Bundle) -> bytes:
    """Deterministic encoding: equal bundles yield identical bytes."""
    _validate_structure(bundle)
    parts = [bytes([cbor.INDEFINITE_ARRAY_HEAD]), _encode_primary(bundle.primary)]
    parts.extend(_encode_canonical(b) for b in bundle.blocks)
    parts.append(bytes([cbor.BREAK]))
    return b"".join(parts)


def _validate_structure(bundle: Bundle) -> None:
    if not bundle.blocks:
        raise MalformedBundle("bundle has no payload block")
    payloads = bundle.blocks_of_type(PAYLOAD_BLOCK_TYPE)
    if len(payloads) != 1 or bundle.blocks[-1] is not payloads[0]:
        raise MalformedBundle("exactly one payload block, in last position")
    if payloads[0].block_number != PAYLOAD_BLOCK_NUMBER:
        raise MalformedBundle("payload block must be number 1")
    numbers = [b.block_number for b in bundle.blocks]
    if len(set(numbers)) != len(numbers):
        raise MalformedBundle("block numbers must be unique")
    if len(bundle.blocks_of_type(CTEB_BLOCK_TYPE)) > 1:
        raise MalformedBundle("at most one custody transfer block")


def _crc_type(value, where: str) -> CrcType:
    if not isinstance(value, int):
        raise MalformedBundle(f"{where}: CRC type is not an integer")
    try:
        return CrcType(value)
    except ValueError as exc:
        raise MalformedBundle(f"{where}: unknown CRC type {value}") from exc


def _decode_primary(item, raw: bytes) -> PrimaryBlockData:
    if not isinstance(item, list) or len(item) not in (8, 9):
        raise MalformedBundle("primary block is not an 8/9-element array")
    version = item[0]
    if version != BP_VERSION:
        raise MalformedBundle(f"unsupported bundle protocol version {version!r}")
    flags = item[1]
    if not isinstance(flags, int) or flags < 0:
        raise MalformedBundle("processing flags are not an unsigned integer")
    crc_type = _crc_type(item[2], "primary")
    if (len(item) == 9) != (crc_type != CrcType.NONE):
        raise MalformedBundle("primary: CRC field does not match CRC type")
    try:
        destination = eid_from_item(item[3])
        source = eid_from_item(item[4])
        report_to = eid_from_item(item[5])
    except MalformedEid as exc:
        raise MalformedBundle(f"primary: {exc}") from exc
    timestamp = item[6]
    if (
        not isinstance(timestamp, list)
        or len(timestamp) != 2
        or not all(isinstance(n, int) and n >= 0 for n in timestamp)
    ):
        raise MalformedBundle("creation timestamp is not [time, sequence]")
    lifetime = item[7]
    if not isinstance(lifetime, int) or lifetime <= 0:
        raise MalformedBundle("lifetime must be a positive integer")
    if crc_type != CrcType.NONE:
        if not isinstance(item[8], bytes):
            raise MalformedBundle("primary: CRC field is not a byte string")
        _check_crc(raw, crc_type, item[8], "primary")
    return PrimaryBlockData(
        destination=destination,
        source=source,
        report_to=report_to,
        creation_time=timestamp[0],
        creation_sequence=timestamp[1],
        lifetime=lifetime,
        processing_flags=flags,
        crc_type=crc_type,
    )


def _decode_canonical(item, raw: bytes) -> CanonicalBlock:
    if not isinstance(item, list) or len(item) not in (5, 6):
        raise MalformedBundle("canonical block is not a 5/6-element array")
    type_code, number, flags = item[0], item[1], item[2]
    for name, value in (("type code", type_code), ("number", number), ("flags", flags)):
        if not isinstance(value, int) or value < 0:
            raise MalformedBundle(f"block {name} is not an unsigned integer")
    crc_type = _crc_type(item[3], f"block {number}")
    if not isinstance(item[4], bytes):
        raise MalformedBundle("block data is not a byte string")
    if (len(item) == 6) != (crc_type != CrcType.NONE):
        raise MalformedBundle(f"block {number}: CRC field does not match CRC type")
    if crc_type != CrcType.NONE:
        if not isinstance(item[5], bytes):
            raise MalformedBundle(f"block {number}: CRC field is not a byte string")
        _check_crc(raw, crc_type, item[5], f"block {number}")
    return CanonicalBlock(type_code, number, item[4], flags, crc_type)


def decode_bundle(data: bytes) -> Bundle:
    decoder = Decoder(data)
    try:
        decoder.expect_indefinite_array()
        primary_item, primary_raw = decoder.decode_item_raw()
        primary = _decode_primary(primary_item, primary_raw)
        blocks = []
        while not decoder.peek_break():
            item, raw = decoder.decode_item_raw()
            blocks.append(_decode_canonical(item, raw))
        decoder.take_break()
    except CborDecodeError as exc:
        raise MalformedBundle(str(exc)) from exc
    if not decoder.at_end():
        raise MalformedBundle("trailing bytes after bundle")
    bundle = Bundle(primary, tuple(blocks))
    _validate_structure(bundle)
    return bundle
