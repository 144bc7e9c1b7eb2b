"""Binary PGM (P5) / PPM (P6) with maxval 255, plus atomic file writes."""

import os
import tempfile

import numpy as np

from .errors import FormatError


def atomic_write(path, data):
    """Write ``data`` to ``path`` via a temp file and rename; no partial files on failure."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_pnm(image):
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[..., None]
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] not in (1, 3):
        raise FormatError("expected an (H, W, 1|3) uint8 image")
    h, w, c = image.shape
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(image).tobytes()


def _tokens(data):
    """Yield (token, end_offset) for the header, skipping '#' comments."""
    pos = 0
    n = len(data)
    while True:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PNM header", offset=pos)
        yield data[start:pos], pos


def decode_pnm(data):
    """Parse P5/P6 bytes into an (H, W, C) uint8 array."""
    data = bytes(data)
    toks = _tokens(data)
    magic, _ = next(toks)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {magic!r}", offset=0)
    try:
        w = int(next(toks)[0])
        h = int(next(toks)[0])
        maxval_tok, end = next(toks)
        maxval = int(maxval_tok)
    except ValueError as exc:
        raise FormatError(f"bad PNM header: {exc}", offset=0) from None
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}", offset=end)
    c = 1 if magic == b"P5" else 3
    start = end + 1  # exactly one whitespace byte after maxval
    count = w * h * c
    if len(data) < start + count:
        raise FormatError(f"PNM raster truncated: need {count} bytes", offset=len(data))
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=start).reshape(h, w, c).copy()


def write_image(path, image):
    atomic_write(path, encode_pnm(image))


def read_image(path):
    with open(path, "rb") as fh:
        return decode_pnm(fh.read())
