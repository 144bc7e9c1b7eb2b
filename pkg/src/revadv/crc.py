"""CRC-32 (reflected polynomial 0xEDB88320, init and final xor 0xFFFFFFFF)."""

import zlib


def crc32(data):
    return zlib.crc32(bytes(data)) & 0xFFFFFFFF


def crc32_bits(bits):
    """CRC of a bit sequence: its bit count (u32, big-endian) then its MSB-first packing."""
    from .bitstream import BitStream

    bits = BitStream.coerce(bits)
    return crc32(len(bits).to_bytes(4, "big") + bits.to_bytes())
