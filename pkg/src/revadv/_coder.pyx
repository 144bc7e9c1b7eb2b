# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled adaptive arithmetic coder; bit-identical to ``_coder_py``."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memset
from libc.stdint cimport uint8_t, uint32_t, uint64_t, int64_t

from .errors import CodecError

cnp.import_array()

cdef enum:
    STATE_BITS = 32

cdef uint64_t FULL = (<uint64_t>1) << STATE_BITS
cdef uint64_t HALF = FULL >> 1
cdef uint64_t QUARTER = HALF >> 1
cdef uint64_t MASK = FULL - 1
cdef uint64_t MAX_TOTAL = (<uint64_t>1) << 24


cdef class AdaptiveModel:
    cdef uint32_t *counts
    cdef readonly int nsym
    cdef readonly uint64_t total

    def __cinit__(self, nsym):
        nsym = int(nsym)
        if not 1 <= nsym <= MAX_TOTAL // 2:
            raise ValueError(f"alphabet size {nsym} out of range")
        self.nsym = nsym
        self.counts = <uint32_t *> malloc(nsym * sizeof(uint32_t))
        if self.counts == NULL:
            raise MemoryError()
        cdef int i
        for i in range(nsym):
            self.counts[i] = 1
        self.total = nsym

    def __dealloc__(self):
        free(self.counts)

    cdef inline int _interval(self, int symbol, uint64_t *lo, uint64_t *hi) except -1:
        if symbol < 0 or symbol >= self.nsym:
            raise ValueError(f"symbol {symbol} outside alphabet of {self.nsym}")
        cdef uint64_t acc = 0
        cdef int i
        for i in range(symbol):
            acc += self.counts[i]
        lo[0] = acc
        hi[0] = acc + self.counts[symbol]
        return 0

    cdef inline int _find(self, uint64_t target, uint64_t *lo, uint64_t *hi) except -1:
        cdef uint64_t acc = 0, nxt
        cdef int s
        for s in range(self.nsym):
            nxt = acc + self.counts[s]
            if target < nxt:
                lo[0] = acc
                hi[0] = nxt
                return s
            acc = nxt
        raise CodecError("cumulative frequency out of range")

    cdef inline void _update(self, int symbol):
        cdef int i
        cdef uint64_t t = 0
        self.counts[symbol] += 1
        self.total += 1
        if self.total > MAX_TOTAL:
            for i in range(self.nsym):
                self.counts[i] = (self.counts[i] + 1) >> 1
                t += self.counts[i]
            self.total = t


cdef class ArithmeticEncoder:
    cdef uint64_t low, high, pending
    cdef uint8_t *buf
    cdef Py_ssize_t size, cap
    cdef bint used

    def __cinit__(self):
        self.low = 0
        self.high = MASK
        self.pending = 0
        self.size = 0
        self.cap = 256
        self.buf = <uint8_t *> malloc(self.cap)
        if self.buf == NULL:
            raise MemoryError()
        self.used = False

    def __dealloc__(self):
        free(self.buf)

    cdef int _reserve(self, Py_ssize_t extra) except -1:
        cdef Py_ssize_t need = self.size + extra
        cdef uint8_t *grown
        if need <= self.cap:
            return 0
        while self.cap < need:
            self.cap *= 2
        grown = <uint8_t *> realloc(self.buf, self.cap)
        if grown == NULL:
            raise MemoryError()
        self.buf = grown
        return 0

    cdef inline int _emit(self, uint8_t bit) except -1:
        self._reserve(1 + self.pending)
        self.buf[self.size] = bit
        self.size += 1
        if self.pending:
            memset(self.buf + self.size, bit ^ 1, self.pending)
            self.size += self.pending
            self.pending = 0
        return 0

    cdef int _encode(self, AdaptiveModel model, int symbol) except -1:
        cdef uint64_t sym_low, sym_high, rng, low, high
        cdef uint64_t total = model.total
        model._interval(symbol, &sym_low, &sym_high)
        low = self.low
        high = self.high
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
        self.low = low
        self.high = high
        model._update(symbol)
        self.used = True
        return 0

    def encode(self, AdaptiveModel model, symbol):
        self._encode(model, int(symbol))

    def encode_many(self, AdaptiveModel model, symbols):
        cdef int64_t[::1] view = np.ascontiguousarray(symbols, dtype=np.int64)
        cdef Py_ssize_t i
        for i in range(view.shape[0]):
            self._encode(model, <int>view[i])

    def finish(self):
        if self.used:
            self.pending += 1
            self._emit(0 if self.low < QUARTER else 1)
            self.used = False
        out = np.empty(self.size, dtype=np.uint8)
        cdef uint8_t[::1] view = out
        cdef Py_ssize_t i
        for i in range(self.size):
            view[i] = self.buf[i]
        return out


cdef class ArithmeticDecoder:
    cdef const uint8_t[::1] bits
    cdef Py_ssize_t nbits, pos
    cdef uint64_t low, high, code

    def __init__(self, bits):
        self.bits = np.ascontiguousarray(bits, dtype=np.uint8)
        self.nbits = self.bits.shape[0]
        self.pos = 0
        self.low = 0
        self.high = MASK
        self.code = 0
        cdef int i
        for i in range(STATE_BITS):
            self.code = (self.code << 1) | self._next()

    cdef inline uint64_t _next(self) except? 2:
        cdef Py_ssize_t pos = self.pos
        self.pos = pos + 1
        if pos < self.nbits:
            return self.bits[pos]
        if pos >= self.nbits + STATE_BITS:
            raise CodecError("code stream exhausted", offset=self.nbits)
        return 0

    cdef int _decode(self, AdaptiveModel model) except -1:
        cdef uint64_t low = self.low, high = self.high, code = self.code
        cdef uint64_t rng = high - low + 1
        cdef uint64_t total = model.total
        cdef uint64_t target = ((code - low + 1) * total - 1) // rng
        cdef uint64_t sym_low, sym_high
        cdef int symbol = model._find(target, &sym_low, &sym_high)
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
        self.low = low
        self.high = high
        self.code = code
        model._update(symbol)
        return symbol

    def decode(self, AdaptiveModel model):
        return self._decode(model)

    def decode_many(self, AdaptiveModel model, n):
        cdef Py_ssize_t i, count = int(n)
        out = np.empty(count, dtype=np.int64)
        cdef int64_t[::1] view = out
        for i in range(count):
            view[i] = self._decode(model)
        return out

    @property
    def consumed(self):
        return self.pos
