"""Minimal CBOR codec covering exactly the wire subset this package emits.

Supported items: unsigned and negative integers, byte strings, text
strings, definite-length arrays and maps, and the indefinite-length
array used as the outermost bundle container. Integer heads are always
minimal-length; the decoder rejects non-minimal heads, so re-encoding a
decoded item is byte-identical to the original.
"""

from __future__ import annotations

from .errors import Bp7Error

BREAK = 0xFF
INDEFINITE_ARRAY_HEAD = 0x9F


class CborDecodeError(Bp7Error):
    """Input is not a well-formed item of the supported subset."""


def _head(major: int, argument: int) -> bytes:
    if argument < 24:
        return bytes([(major << 5) | argument])
    if argument <= 0xFF:
        return bytes([(major << 5) | 24, argument])
    if argument <= 0xFFFF:
        return bytes([(major << 5) | 25]) + argument.to_bytes(2, "big")
    if argument <= 0xFFFFFFFF:
        return bytes([(major << 5) | 26]) + argument.to_bytes(4, "big")
    if argument <= 0xFFFFFFFFFFFFFFFF:
        return bytes([(major << 5) | 27]) + argument.to_bytes(8, "big")
    raise ValueError("integer does not fit in a CBOR head")


def encode(value) -> bytes:
    """Encode an int, bytes, str, list/tuple or dict as one definite item.

    Map pairs are written in dict iteration order; callers that need a
    canonical order sort before encoding.
    """
    if isinstance(value, bool):
        raise TypeError("booleans are not part of the wire subset")
    if isinstance(value, int):
        if value >= 0:
            return _head(0, value)
        return _head(1, -1 - value)
    if isinstance(value, (bytes, bytearray)):
        return _head(2, len(value)) + bytes(value)
    if isinstance(value, str):
        raw = value.encode("utf-8")
        return _head(3, len(raw)) + raw
    if isinstance(value, (list, tuple)):
        return _head(4, len(value)) + b"".join(encode(item) for item in value)
    if isinstance(value, dict):
        parts = [_head(5, len(value))]
        for key, item in value.items():
            parts.append(encode(key))
            parts.append(encode(item))
        return b"".join(parts)
    raise TypeError(f"cannot encode {type(value).__name__} as CBOR")


class Decoder:
    """Cursor-style decoder over a byte buffer."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def at_end(self) -> bool:
        return self.pos >= len(self.data)

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CborDecodeError("truncated item")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def _argument(self, info: int) -> int:
        if info < 24:
            return info
        if info == 24:
            value = self._take(1)[0]
            floor = 24
        elif info == 25:
            value = int.from_bytes(self._take(2), "big")
            floor = 0x100
        elif info == 26:
            value = int.from_bytes(self._take(4), "big")
            floor = 0x10000
        elif info == 27:
            value = int.from_bytes(self._take(8), "big")
            floor = 0x100000000
        else:
            raise CborDecodeError(f"unsupported additional info {info}")
        if value < floor:
            raise CborDecodeError("non-minimal integer head")
        return value

    def peek_break(self) -> bool:
        return not self.at_end() and self.data[self.pos] == BREAK

    def take_break(self) -> None:
        if self._take(1)[0] != BREAK:
            raise CborDecodeError("expected break code")

    def expect_indefinite_array(self) -> None:
        if self._take(1)[0] != INDEFINITE_ARRAY_HEAD:
            raise CborDecodeError("expected indefinite-length array head")

    def decode_item(self):
        initial = self._take(1)[0]
        major, info = initial >> 5, initial & 0x1F
        if major in (0, 1) or (major in (2, 3, 4, 5) and info != 31):
            argument = self._argument(info)
        else:
            raise CborDecodeError(f"unsupported item head 0x{initial:02x}")
        if major == 0:
            return argument
        if major == 1:
            return -1 - argument
        if major == 2:
            return self._take(argument)
        if major == 3:
            try:
                return self._take(argument).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CborDecodeError("invalid utf-8 in text string") from exc
        if major == 4:
            return [self.decode_item() for _ in range(argument)]
        out: dict = {}
        for _ in range(argument):
            key = self.decode_item()
            if not isinstance(key, int):
                raise CborDecodeError("map keys must be integers in this subset")
            if key in out:
                raise CborDecodeError("duplicate map key")
            out[key] = self.decode_item()
        return out

    def decode_item_raw(self):
        """Decode one item and also return its exact byte span."""
        start = self.pos
        item = self.decode_item()
        return item, self.data[start : self.pos]


def decode(data: bytes):
    """Decode a single complete item; trailing bytes are an error."""
    decoder = Decoder(data)
    item = decoder.decode_item()
    if not decoder.at_end():
        raise CborDecodeError("trailing bytes after item")
    return item
