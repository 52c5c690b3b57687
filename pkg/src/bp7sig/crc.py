"""Block integrity checks: CRC-16/X-25 and CRC-32C (Castagnoli).

Both are the reflected, inverted variants named by RFC 9171 for CRC
types 1 and 2. Check values for b"123456789" are 0x906E and 0xE3069283.
"""


def _reflected_table(poly: int) -> list[int]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ poly if crc & 1 else crc >> 1
        table.append(crc)
    return table


_CRC16_TABLE = _reflected_table(0x8408)
_CRC32C_TABLE = _reflected_table(0x82F63B78)


def crc16_x25(data: bytes) -> int:
    crc = 0xFFFF
    for b in data:
        crc = (crc >> 8) ^ _CRC16_TABLE[(crc ^ b) & 0xFF]
    return crc ^ 0xFFFF


def crc32c(data: bytes) -> int:
    crc = 0xFFFFFFFF
    for b in data:
        crc = (crc >> 8) ^ _CRC32C_TABLE[(crc ^ b) & 0xFF]
    return crc ^ 0xFFFFFFFF
