"""Compiled vs pure-Python arithmetic coder throughput.

    python3 benchmarks/bench_coder.py [--bits N] [--repeat R]

Both implementations code the same skewed binary stream and a 511-symbol
stream (the perturbation alphabet); outputs are checked for equality.
"""

import argparse
import time

import numpy as np

from revadv import _coder_py

try:
    from revadv import _coder
except ImportError:
    _coder = None


def _best(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _roundtrip(impl, symbols, nsym):
    enc = impl.ArithmeticEncoder()
    enc.encode_many(impl.AdaptiveModel(nsym), symbols)
    code = enc.finish()
    dec = impl.ArithmeticDecoder(code)
    back = dec.decode_many(impl.AdaptiveModel(nsym), len(symbols))
    return code, back


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--bits", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    cases = {
        "binary p=0.1": (rng.random(args.bits) < 0.1).astype(np.int64),
        "511-ary laplace": np.minimum(np.abs(rng.laplace(0, 6, args.bits // 8)).astype(np.int64), 510),
    }
    impls = [("python", _coder_py)] + ([("cython", _coder)] if _coder else [])
    print(f"{'case':<18}{'impl':<8}{'symbols':>10}{'code bits':>11}{'seconds':>10}{'Msym/s':>9}")
    for name, symbols in cases.items():
        nsym = 2 if "binary" in name else 511
        codes = []
        for label, impl in impls:
            secs, (code, back) = _best(lambda: _roundtrip(impl, symbols, nsym), args.repeat)
            assert np.array_equal(back, symbols), f"{label} failed to round-trip"
            codes.append(code)
            rate = len(symbols) / secs / 1e6
            print(f"{name:<18}{label:<8}{len(symbols):>10}{len(code):>11}{secs:>10.3f}{rate:>9.2f}")
        if len(codes) == 2:
            assert np.array_equal(codes[0], codes[1]), "implementations disagree"
    if _coder is None:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
