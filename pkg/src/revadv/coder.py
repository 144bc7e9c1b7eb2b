"""Adaptive arithmetic coding front end.

The compiled ``_coder`` extension is used when it was built; otherwise the
pure-Python ``_coder_py`` twin is imported. Both produce identical bits.
Set ``REVADV_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _coder_py
from .bitstream import BitStream

if os.environ.get("REVADV_PURE_PYTHON"):
    _impl = _coder_py
else:
    try:
        from . import _coder as _impl
    except ImportError:  # extension not built
        _impl = _coder_py

BACKEND = "python" if _impl is _coder_py else "cython"

AdaptiveModel = _impl.AdaptiveModel
ArithmeticEncoder = _impl.ArithmeticEncoder
ArithmeticDecoder = _impl.ArithmeticDecoder


def ac_encode(bits, impl=None):
    """Code a bit sequence with one adaptive binary model (counts start 1/1)."""
    impl = impl or _impl
    bits = BitStream.coerce(bits)
    enc = impl.ArithmeticEncoder()
    enc.encode_many(impl.AdaptiveModel(2), bits.bits)
    return BitStream(enc.finish())


def ac_decode(code, n, impl=None):
    """Inverse of :func:`ac_encode`; ``n`` is the number of bits originally coded."""
    impl = impl or _impl
    code = BitStream.coerce(code)
    if n == 0:
        return BitStream.empty()
    dec = impl.ArithmeticDecoder(code.bits)
    return BitStream(dec.decode_many(impl.AdaptiveModel(2), n).astype(np.uint8))
