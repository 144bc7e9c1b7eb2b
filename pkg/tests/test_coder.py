import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import crc32_bitwise
from revadv import _coder_py, coder
from revadv.bitstream import BitReader, BitStream, BitWriter
from revadv.crc import crc32, crc32_bits
from revadv.errors import CodecError, FormatError

IMPLS = [_coder_py]
try:
    from revadv import _coder

    IMPLS.append(_coder)
except ImportError:  # extension not built
    _coder = None


def test_crc_check_value():
    assert crc32(b"123456789") == 0xCBF43926
    assert crc32_bitwise(b"123456789") == 0xCBF43926


@given(st.binary(max_size=300))
def test_crc_matches_bitwise_oracle(data):
    assert crc32(data) == crc32_bitwise(data)


def test_crc_bits_depends_on_length():
    # same packed bytes, different bit counts
    assert crc32_bits([1, 0, 1]) != crc32_bits([1, 0, 1, 0])


def test_bitstream_uint_and_bytes():
    b = BitStream.from_uint(0b1011, 4)
    assert list(b) == [1, 0, 1, 1]
    assert b.to_uint() == 11
    assert BitStream.from_bytes(b"\xa5").bits.tolist() == [1, 0, 1, 0, 0, 1, 0, 1]
    assert BitStream.from_bytes(b"\xa5", 3) == BitStream([1, 0, 1])
    assert BitStream([1, 0, 1]).to_bytes() == b"\xa0"
    with pytest.raises(ValueError):
        BitStream.from_uint(16, 4)


@given(st.lists(st.integers(0, 1), max_size=200))
def test_bitstream_bytes_roundtrip(bits):
    b = BitStream(bits)
    assert BitStream.from_bytes(b.to_bytes(), len(b)) == b


def test_writer_reader():
    w = BitWriter().write_uint(5, 3).write([1, 1]).write_uint(0xABCD, 16)
    r = BitReader(w.getvalue())
    assert r.read_uint(3) == 5
    assert list(r.read(2)) == [1, 1]
    assert r.read_uint(16) == 0xABCD
    assert r.remaining == 0
    with pytest.raises(FormatError):
        r.read(1)


def test_empty_input_empty_output():
    for impl in IMPLS:
        assert len(coder.ac_encode([], impl=impl)) == 0
        assert len(coder.ac_decode([], 0, impl=impl)) == 0


def test_thousand_zeros_compress_below_30_bits():
    code = coder.ac_encode(np.zeros(1000, np.uint8))
    assert len(code) < 30
    assert coder.ac_decode(code, 1000) == BitStream(np.zeros(1000, np.uint8))


def test_random_bits_do_not_shrink_much():
    bits = np.random.default_rng(3).integers(0, 2, 4096)
    code = coder.ac_encode(bits)
    assert len(code) >= 4032
    assert coder.ac_decode(code, 4096) == BitStream(bits)


@pytest.mark.skipif(_coder is None, reason="compiled extension not built")
def test_compiled_and_python_coders_agree():
    rng = np.random.default_rng(11)
    for trial in range(60):
        nsym = int(rng.integers(1, 600))
        n = int(rng.integers(0, 3000))
        syms = np.minimum(rng.geometric(0.2, n) - 1, nsym - 1).astype(np.int64)
        codes = []
        for impl in (_coder_py, _coder):
            enc = impl.ArithmeticEncoder()
            enc.encode_many(impl.AdaptiveModel(nsym), syms)
            codes.append(enc.finish())
        assert np.array_equal(codes[0], codes[1]), trial
        for impl in (_coder_py, _coder):
            dec = impl.ArithmeticDecoder(codes[0])
            assert np.array_equal(dec.decode_many(impl.AdaptiveModel(nsym), n), syms)


def test_model_rescales_past_max_total():
    # enough symbols to force count halving
    n = (1 << 24) // 64 + 10
    syms = np.zeros(n, np.int64)
    syms[::7] = 1
    for impl in IMPLS[-1:]:
        enc = impl.ArithmeticEncoder()
        m = impl.AdaptiveModel(2)
        enc.encode_many(m, syms)
        code = enc.finish()
        back = impl.ArithmeticDecoder(code).decode_many(impl.AdaptiveModel(2), n)
        assert np.array_equal(back, syms)


def test_mixed_models_in_one_stream():
    rng = np.random.default_rng(5)
    data = [(int(rng.integers(0, 2)), int(rng.integers(0, 300))) for _ in range(500)]
    for impl in IMPLS:
        enc = impl.ArithmeticEncoder()
        mb, mv = impl.AdaptiveModel(2), impl.AdaptiveModel(300)
        for b, v in data:
            enc.encode(mb, b)
            enc.encode(mv, v)
        code = enc.finish()
        dec = impl.ArithmeticDecoder(code)
        mb, mv = impl.AdaptiveModel(2), impl.AdaptiveModel(300)
        assert [(dec.decode(mb), dec.decode(mv)) for _ in data] == data


def test_decoder_rejects_overread():
    for impl in IMPLS:
        dec = impl.ArithmeticDecoder(np.array([], np.uint8))
        with pytest.raises(CodecError):
            dec.decode_many(impl.AdaptiveModel(256), 100)


def test_symbol_outside_alphabet():
    for impl in IMPLS:
        with pytest.raises(ValueError):
            impl.ArithmeticEncoder().encode(impl.AdaptiveModel(4), 4)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 1), max_size=2000))
def test_binary_roundtrip_property(bits):
    code = coder.ac_encode(bits)
    assert coder.ac_decode(code, len(bits)) == BitStream(bits)
