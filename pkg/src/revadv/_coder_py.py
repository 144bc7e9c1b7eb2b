"""Pure-Python adaptive arithmetic coder.

Reference implementation and import-time fallback for the compiled
``_coder`` extension; both must emit identical bits for identical input.
Integer range coder with 32-bit state, carry-free via pending
(underflow) bits, and Witten-Neal-Cleary termination.
"""

import numpy as np

from .errors import CodecError

STATE_BITS = 32
FULL = 1 << STATE_BITS
HALF = FULL >> 1
QUARTER = HALF >> 1
MASK = FULL - 1
MAX_TOTAL = 1 << 24


class AdaptiveModel:
    """Frequency table over ``nsym`` symbols, every count starting at 1."""

    def __init__(self, nsym):
        nsym = int(nsym)
        if not 1 <= nsym <= MAX_TOTAL // 2:
            raise ValueError(f"alphabet size {nsym} out of range")
        self.nsym = nsym
        self.counts = [1] * nsym
        self.total = nsym

    def interval(self, symbol):
        if not 0 <= symbol < self.nsym:
            raise ValueError(f"symbol {symbol} outside alphabet of {self.nsym}")
        counts = self.counts
        low = 0
        for i in range(symbol):
            low += counts[i]
        return low, low + counts[symbol]

    def find(self, target):
        counts = self.counts
        low = 0
        for s in range(self.nsym):
            high = low + counts[s]
            if target < high:
                return s, low, high
            low = high
        raise CodecError("cumulative frequency out of range")

    def update(self, symbol):
        self.counts[symbol] += 1
        self.total += 1
        if self.total > MAX_TOTAL:
            self.counts = [(c + 1) >> 1 for c in self.counts]
            self.total = sum(self.counts)


class ArithmeticEncoder:
    def __init__(self):
        self.low = 0
        self.high = MASK
        self.pending = 0
        self.out = bytearray()
        self.used = False

    def _emit(self, bit):
        out = self.out
        out.append(bit)
        if self.pending:
            out.extend(bytes([bit ^ 1]) * self.pending)
            self.pending = 0

    def encode(self, model, symbol):
        symbol = int(symbol)
        sym_low, sym_high = model.interval(symbol)
        total = model.total
        low, high = self.low, self.high
        rng = high - low + 1
        high = low + sym_high * rng // total - 1
        low = low + sym_low * rng // total
        while True:
            if high < HALF:
                self._emit(0)
            elif low >= HALF:
                self._emit(1)
            elif low >= QUARTER and high < HALF + QUARTER:
                self.pending += 1
                low -= QUARTER
                high -= QUARTER
            else:
                break
            low = (low << 1) & MASK
            high = ((high << 1) & MASK) | 1
        self.low, self.high = low, high
        model.update(symbol)
        self.used = True

    def encode_many(self, model, symbols):
        for s in symbols:
            self.encode(model, s)

    def finish(self):
        """Flush and return the code as a uint8 array of 0/1 values."""
        if self.used:
            self.pending += 1
            self._emit(0 if self.low < QUARTER else 1)
            self.used = False
        return np.frombuffer(bytes(self.out), dtype=np.uint8).copy()


class ArithmeticDecoder:
    def __init__(self, bits):
        self.bits = np.asarray(bits, dtype=np.uint8).tobytes()
        self.nbits = len(self.bits)
        self.pos = 0
        self.low = 0
        self.high = MASK
        self.code = 0
        for _ in range(STATE_BITS):
            self.code = (self.code << 1) | self._next()

    def _next(self):
        pos = self.pos
        self.pos = pos + 1
        if pos < self.nbits:
            return self.bits[pos]
        if pos >= self.nbits + STATE_BITS:
            raise CodecError("code stream exhausted", offset=self.nbits)
        return 0

    def decode(self, model):
        low, high, code = self.low, self.high, self.code
        rng = high - low + 1
        total = model.total
        target = ((code - low + 1) * total - 1) // rng
        symbol, sym_low, sym_high = model.find(target)
        high = low + sym_high * rng // total - 1
        low = low + sym_low * rng // total
        while True:
            if high < HALF:
                pass
            elif low >= HALF:
                low -= HALF
                high -= HALF
                code -= HALF
            elif low >= QUARTER and high < HALF + QUARTER:
                low -= QUARTER
                high -= QUARTER
                code -= QUARTER
            else:
                break
            low <<= 1
            high = (high << 1) | 1
            code = (code << 1) | self._next()
        self.low, self.high, self.code = low, high, code
        model.update(symbol)
        return symbol

    def decode_many(self, model, n):
        return np.array([self.decode(model) for _ in range(int(n))], dtype=np.int64)

    @property
    def consumed(self):
        return self.pos
