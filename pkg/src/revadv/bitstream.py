"""Bit sequences with MSB-first byte serialization."""

import numpy as np

from .errors import FormatError


class BitStream:
    """Immutable ordered bits, stored one per ``uint8`` element."""

    __slots__ = ("bits",)

    def __init__(self, bits=()):
        arr = np.array(bits, dtype=np.uint8).ravel()
        if arr.size and arr.max() > 1:
            raise ValueError("bit values must be 0 or 1")
        arr.setflags(write=False)
        self.bits = arr

    @classmethod
    def empty(cls):
        return cls()

    @classmethod
    def coerce(cls, value):
        return value if isinstance(value, cls) else cls(value)

    @classmethod
    def from_uint(cls, value, width):
        value = int(value)
        if value < 0 or value >> width:
            raise ValueError(f"{value} does not fit in {width} bits")
        return cls([(value >> (width - 1 - i)) & 1 for i in range(width)])

    @classmethod
    def from_bytes(cls, data, nbits=None):
        arr = np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))
        if nbits is None:
            nbits = arr.size
        if nbits > arr.size:
            raise FormatError(f"need {nbits} bits but only {arr.size} present", offset=len(data))
        return cls(arr[:nbits])

    def to_bytes(self):
        """Pack MSB-first; the final byte is zero-padded."""
        return np.packbits(self.bits).tobytes()

    def to_uint(self):
        v = 0
        for b in self.bits:
            v = (v << 1) | int(b)
        return v

    def __len__(self):
        return int(self.bits.size)

    def __iter__(self):
        return iter(self.bits.tolist())

    def __getitem__(self, item):
        if isinstance(item, slice):
            return BitStream(self.bits[item])
        return int(self.bits[item])

    def __add__(self, other):
        return BitStream(np.concatenate([self.bits, BitStream.coerce(other).bits]))

    def __eq__(self, other):
        if not isinstance(other, BitStream):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((len(self), self.to_bytes()))

    def __repr__(self):
        head = "".join(map(str, self.bits[:32].tolist()))
        more = "..." if len(self) > 32 else ""
        return f"BitStream({len(self)} bits: {head}{more})"

    @staticmethod
    def concat(parts):
        parts = [BitStream.coerce(p).bits for p in parts]
        return BitStream(np.concatenate(parts) if parts else ())


class BitWriter:
    def __init__(self):
        self._parts = []

    def write_uint(self, value, width):
        self._parts.append(BitStream.from_uint(value, width).bits)
        return self

    def write(self, bits):
        self._parts.append(BitStream.coerce(bits).bits)
        return self

    def getvalue(self):
        return BitStream(np.concatenate(self._parts) if self._parts else ())


class BitReader:
    """Sequential reader; reading past the end raises :class:`FormatError`."""

    def __init__(self, bits):
        self._bits = BitStream.coerce(bits).bits
        self.pos = 0

    @property
    def remaining(self):
        return self._bits.size - self.pos

    def read(self, n):
        n = int(n)
        if n < 0 or n > self.remaining:
            raise FormatError(f"read of {n} bits past end of stream", offset=self.pos)
        out = BitStream(self._bits[self.pos:self.pos + n])
        self.pos += n
        return out

    def read_uint(self, width):
        return self.read(width).to_uint()

    def rest(self):
        return self.read(self.remaining)
