"""Reversible data hiding for 8-bit images.

Two backends share one contract: ``extract(embed(cover, payload))`` returns
the payload and the cover bit-exactly, using nothing but the marked image.

``hs``
    Histogram shifting. Every pass visits each channel once. In a channel,
    the first 52 pixels form a header region whose LSBs hold the pass header
    (peak bin, zero bin, chunk length, map length); their original LSBs
    travel in the pass's own payload. The remaining pixels are shifted one
    step from the peak toward the zero bin, and pixels at the peak carry one
    bit each. Occupied zero-bin pixels are disambiguated by an
    arithmetic-coded location map. Each pixel moves by at most one level
    per pass.

``ce``
    Compression embedding. The lowest bit plane(s) of the image form the
    host sequence. They are replaced by a 64-bit header, the arithmetic-coded
    host, and the payload; any leftover positions keep their original bits.

Both backends append a CRC-32 over the cover and payload, so tampering or an
unmarked input is reported rather than silently decoded.
"""

from dataclasses import dataclass

import numpy as np

from .bitstream import BitReader, BitStream, BitWriter
from .coder import ac_decode, ac_encode
from .crc import crc32
from .errors import CapacityError, CodecError, FormatError, NotMarkedError

BACKENDS = ("hs", "ce")
BACKEND_IDS = {"hs": 1, "ce": 2}

HEADER_PIXELS = 52  # 8 + 8 + 20 + 16 header bits, one LSB each
CHUNK_BITS = 20
MAP_BITS = 16
UNIT_CHECK_BITS = 16
UNIT_OVERHEAD = HEADER_PIXELS + UNIT_CHECK_BITS + 1  # saved LSBs, check, first-pass flag
TRAILER_BITS = 32
MAX_PASSES = 64

CE_MAGIC = 0xCE
CE_VERSION = 1
CE_HEADER_BITS = 64
CE_LEN_BITS = 24


@dataclass(frozen=True)
class EmbedReport:
    backend: str
    passes: int
    bits_embedded: int
    capacity_remaining: int
    max_change: int


def _as_image(image):
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise FormatError("RDH works on uint8 images")
    if image.ndim == 2:
        return image[..., None], True
    if image.ndim != 3:
        raise FormatError(f"unsupported image shape {image.shape}")
    return image, False


def _cover_check(cover, payload):
    """CRC-32 binding the cover pixels to the payload."""
    return crc32(
        np.ascontiguousarray(cover).tobytes()
        + len(payload).to_bytes(4, "big")
        + payload.to_bytes()
    )


# -- histogram shifting -----------------------------------------------------


def _choose_bins(hist):
    """Peak (lowest value on ties) and zero bin.

    The zero bin is the nearest empty bin (lowest value on ties). With no
    empty bin, it is the least-populated bin at distance >= 2 from the peak,
    then nearest, then lowest value; a non-empty neighbour would make
    shifted pixels indistinguishable from carriers.
    """
    p = int(np.argmax(hist))
    values = np.arange(256)
    dist = np.abs(values - p)
    empty = np.flatnonzero((hist == 0) & (values != p))
    if empty.size:
        return p, int(empty[np.lexsort((empty, dist[empty]))[0]])
    cand = np.flatnonzero(dist >= 2)
    order = np.lexsort((cand, dist[cand], hist[cand]))
    return p, int(cand[order[0]])


@dataclass(frozen=True)
class _UnitPlan:
    peak: int
    zero: int
    direction: int
    shifted: np.ndarray
    carriers: np.ndarray  # indices into the channel, raster order
    map_code: BitStream
    capacity: int  # payload bits this unit can take (negative: infeasible)


def _plan_unit(x):
    body = x[HEADER_PIXELS:]
    hist = np.bincount(body, minlength=256)
    p, z = _choose_bins(hist)
    d = 1 if z > p else -1
    lo, hi = min(p, z), max(p, z)
    shifted = x.copy()
    move = np.zeros(x.shape, dtype=bool)
    move[HEADER_PIXELS:] = (body > lo) & (body < hi)
    shifted[move] += d
    if hist[z]:
        cand = np.flatnonzero(shifted[HEADER_PIXELS:] == z) + HEADER_PIXELS
        map_code = ac_encode((x[cand] == z).astype(np.uint8))
    else:
        map_code = BitStream.empty()
    carriers = np.flatnonzero(body == p) + HEADER_PIXELS
    capacity = len(carriers) - UNIT_OVERHEAD - len(map_code)
    if len(map_code) >= 1 << MAP_BITS:
        capacity = -1
    capacity = min(capacity, (1 << CHUNK_BITS) - 1)
    return _UnitPlan(p, z, d, shifted, carriers, map_code, capacity)


def _unit_check(p, z, chunk, map_code, first):
    w = BitWriter().write_uint(p, 8).write_uint(z, 8)
    w.write_uint(len(chunk), CHUNK_BITS).write_uint(len(map_code), MAP_BITS)
    w.write_uint(first, 1).write(map_code).write(chunk)
    return crc32(w.getvalue().to_bytes() + len(chunk).to_bytes(4, "big")) & 0xFFFF


def _embed_unit(x, plan, chunk, first):
    """Apply one histogram-shift pass to a flat channel; returns the marked channel."""
    lsbs = BitStream(x[:HEADER_PIXELS] & 1)
    check = _unit_check(plan.peak, plan.zero, chunk, plan.map_code, first)
    stream = (
        BitWriter()
        .write(lsbs)
        .write_uint(check, UNIT_CHECK_BITS)
        .write_uint(first, 1)
        .write(plan.map_code)
        .write(chunk)
        .getvalue()
    )
    marked = plan.shifted.copy()
    used = plan.carriers[: len(stream)]
    marked[used] += plan.direction * stream.bits.astype(np.int64)
    header = (
        BitWriter()
        .write_uint(plan.peak, 8)
        .write_uint(plan.zero, 8)
        .write_uint(len(chunk), CHUNK_BITS)
        .write_uint(len(plan.map_code), MAP_BITS)
        .getvalue()
    )
    marked[:HEADER_PIXELS] = (marked[:HEADER_PIXELS] & ~1) | header.bits
    return marked


def _extract_unit(y):
    """Invert one pass on a flat channel. Returns (cover channel, chunk, first flag)."""
    if y.size < HEADER_PIXELS:
        raise NotMarkedError("channel too small to hold a pass header")
    r = BitReader(BitStream(y[:HEADER_PIXELS] & 1))
    p, z = r.read_uint(8), r.read_uint(8)
    chunk_len, map_len = r.read_uint(CHUNK_BITS), r.read_uint(MAP_BITS)
    if p == z:
        raise NotMarkedError("pass header names identical peak and zero bins")
    d = 1 if z > p else -1
    body = y[HEADER_PIXELS:]
    is_carrier = (body == p) | (body == p + d)
    carriers = np.flatnonzero(is_carrier) + HEADER_PIXELS
    need = UNIT_OVERHEAD + map_len + chunk_len
    if need > len(carriers):
        raise NotMarkedError("pass header promises more bits than the image carries")
    bits = (y[carriers[:need]] == p + d).astype(np.uint8)
    rd = BitReader(bits)
    lsbs = rd.read(HEADER_PIXELS)
    check = rd.read_uint(UNIT_CHECK_BITS)
    first = rd.read_uint(1)
    map_code = rd.read(map_len)
    chunk = rd.read(chunk_len)
    if _unit_check(p, z, chunk, map_code, first) != check:
        raise NotMarkedError("pass check mismatch")

    x = y.copy()
    x[:HEADER_PIXELS] = (y[:HEADER_PIXELS] & ~1) | lsbs.bits
    x[carriers] = p
    # pixels that were shifted toward z now sit strictly past p + d, up to z
    lo, hi = (p + 2 * d, z) if d > 0 else (z, p + 2 * d)
    in_range = np.zeros(y.shape, dtype=bool)
    in_range[HEADER_PIXELS:] = (body >= lo) & (body <= hi) & ~is_carrier
    at_zero = np.flatnonzero(in_range & (y == z))
    if map_len:
        try:
            flags = ac_decode(map_code, len(at_zero)).bits.astype(bool)
        except CodecError as exc:
            raise NotMarkedError(f"location map does not decode: {exc}") from None
        in_range[at_zero[flags]] = False
    x[in_range] -= d
    return x, chunk, first


def _hs_channels(img):
    return [img[:, :, c].reshape(-1).astype(np.int64) for c in range(img.shape[2])]


def hs_capacity(cover):
    """Exact single-pass capacity in payload bits; -1 when not even an empty payload fits."""
    img, _ = _as_image(cover)
    if img.shape[0] * img.shape[1] <= HEADER_PIXELS:
        return -1
    caps = [_plan_unit(x).capacity for x in _hs_channels(img)]
    if min(caps) < 0:
        return -1
    return max(-1, sum(caps) - TRAILER_BITS)


def hs_embed(cover, payload, max_passes=1):
    cover_img, squeeze = _as_image(cover)
    payload = BitStream.coerce(payload)
    if max_passes < 1 or max_passes > MAX_PASSES:
        raise ValueError(f"max_passes must be in [1, {MAX_PASSES}]")
    data = payload + BitStream.from_uint(_cover_check(cover_img, payload), TRAILER_BITS)
    h, w, _ = cover_img.shape
    if h * w <= HEADER_PIXELS:
        raise CapacityError(len(data), 0, "image too small for a pass header")

    channels = _hs_channels(cover_img)
    pos = 0
    passes = 0
    offered = 0
    while passes < max_passes and (passes == 0 or pos < len(data)):
        first = int(passes == 0)
        plans = [_plan_unit(x) for x in channels]
        if min(p.capacity for p in plans) < 0:
            break
        for c, plan in enumerate(plans):
            take = min(plan.capacity, len(data) - pos)
            chunk = data[pos:pos + take]
            channels[c] = _embed_unit(channels[c], plan, chunk, first)
            pos += take
            offered += plan.capacity
        passes += 1
    if pos < len(data):
        raise CapacityError(len(data), max(0, offered - TRAILER_BITS) if passes else 0)

    marked = np.stack([x.reshape(h, w) for x in channels], axis=-1).astype(np.uint8)
    change = int(np.max(np.abs(marked.astype(np.int64) - cover_img))) if marked.size else 0
    report = EmbedReport("hs", passes, len(payload), offered - len(data), change)
    return (marked[..., 0] if squeeze else marked), report


def hs_extract(marked):
    img, squeeze = _as_image(marked)
    h, w, nch = img.shape
    if h * w <= HEADER_PIXELS:
        raise NotMarkedError("image too small to carry a pass header")
    channels = _hs_channels(img)
    chunks = []
    for _ in range(MAX_PASSES):
        flags = set()
        for c in reversed(range(nch)):
            channels[c], chunk, first = _extract_unit(channels[c])
            chunks.append(chunk)
            flags.add(first)
        if len(flags) != 1:
            raise NotMarkedError("channels disagree on pass order")
        if flags.pop():
            break
    else:
        raise NotMarkedError("no first pass found")
    data = BitStream.concat(reversed(chunks))
    cover = np.stack([x.reshape(h, w) for x in channels], axis=-1)
    if len(data) < TRAILER_BITS or cover.min() < 0 or cover.max() > 255:
        raise NotMarkedError("recovered data is inconsistent")
    cover = cover.astype(np.uint8)
    payload = data[: len(data) - TRAILER_BITS]
    if data[len(data) - TRAILER_BITS:].to_uint() != _cover_check(cover, payload):
        raise NotMarkedError("cover/payload check mismatch")
    return payload, (cover[..., 0] if squeeze else cover)


# -- compression embedding --------------------------------------------------


def _host_bits(flat, planes):
    return np.concatenate([(flat >> k) & 1 for k in range(planes)]).astype(np.uint8)


def _ce_layout(flat, planes):
    host = _host_bits(flat, planes)
    code = ac_encode(host)
    capacity = len(host) - CE_HEADER_BITS - len(code) - TRAILER_BITS
    return host, code, capacity


def ce_capacity(cover, planes=1):
    """Capacity in payload bits over ``1..planes`` bit planes; -1 when nothing fits."""
    img, _ = _as_image(cover)
    flat = img.reshape(-1)
    if flat.size < CE_HEADER_BITS:
        return -1
    best = -1
    for k in range(1, planes + 1):
        _, code, cap = _ce_layout(flat, k)
        if len(code) < 1 << CE_LEN_BITS:
            best = max(best, cap)
    return best


def ce_embed(cover, payload, planes=1):
    """Embed into the lowest ``k <= planes`` bit planes, using the smallest ``k`` that fits."""
    img, squeeze = _as_image(cover)
    payload = BitStream.coerce(payload)
    if not 1 <= planes <= 8:
        raise ValueError("planes must be in [1, 8]")
    flat = img.reshape(-1).astype(np.int64)
    if flat.size < CE_HEADER_BITS:
        raise CapacityError(len(payload) + TRAILER_BITS, 0, "image too small for the header")
    if len(payload) >= 1 << CE_LEN_BITS:
        raise CapacityError(len(payload), (1 << CE_LEN_BITS) - 1)
    best = 0
    for k in range(1, planes + 1):
        host, code, cap = _ce_layout(flat, k)
        best = max(best, cap)
        if cap >= len(payload) and len(code) < 1 << CE_LEN_BITS:
            break
    else:
        raise CapacityError(len(payload), best)

    trailer = _cover_check(img, payload)
    marked_host = (
        BitWriter()
        .write_uint(CE_MAGIC, 8)
        .write_uint(CE_VERSION, 4)
        .write_uint(k, 4)
        .write_uint(len(code), CE_LEN_BITS)
        .write_uint(len(payload), CE_LEN_BITS)
        .write(code)
        .write(payload)
        .write_uint(trailer, TRAILER_BITS)
        .getvalue()
        .bits
    )
    bits = host.copy()
    bits[: len(marked_host)] = marked_host
    out = flat & ~((1 << k) - 1)
    for plane in range(k):
        out |= bits[plane * flat.size:(plane + 1) * flat.size].astype(np.int64) << plane
    marked = out.astype(np.uint8).reshape(img.shape)
    change = int(np.max(np.abs(marked.astype(np.int64) - img))) if marked.size else 0
    report = EmbedReport("ce", k, len(payload), cap - len(payload), change)
    return (marked[..., 0] if squeeze else marked), report


def ce_extract(marked):
    img, squeeze = _as_image(marked)
    flat = img.reshape(-1).astype(np.int64)
    if flat.size < CE_HEADER_BITS:
        raise NotMarkedError("image too small to carry a header")
    r = BitReader(BitStream((flat[:CE_HEADER_BITS] & 1).astype(np.uint8)))
    if r.read_uint(8) != CE_MAGIC or r.read_uint(4) != CE_VERSION:
        raise NotMarkedError("compression-embedding magic not found")
    k = r.read_uint(4)
    code_len, payload_len = r.read_uint(CE_LEN_BITS), r.read_uint(CE_LEN_BITS)
    if not 1 <= k <= 8:
        raise NotMarkedError(f"invalid plane count {k}")
    bits = _host_bits(flat, k)
    if CE_HEADER_BITS + code_len + payload_len + TRAILER_BITS > len(bits):
        raise NotMarkedError("header lengths exceed the host sequence")
    rd = BitReader(bits)
    rd.read(CE_HEADER_BITS)
    code = rd.read(code_len)
    payload = rd.read(payload_len)
    trailer = rd.read_uint(TRAILER_BITS)
    try:
        host = ac_decode(code, len(bits)).bits
    except CodecError as exc:
        raise NotMarkedError(f"host sequence does not decode: {exc}") from None
    out = flat & ~((1 << k) - 1)
    for plane in range(k):
        out |= host[plane * flat.size:(plane + 1) * flat.size].astype(np.int64) << plane
    cover = out.astype(np.uint8).reshape(img.shape)
    if trailer != _cover_check(cover, payload):
        raise NotMarkedError("cover/payload check mismatch")
    return payload, (cover[..., 0] if squeeze else cover)


# -- dispatch ---------------------------------------------------------------


def capacity_estimate(cover, backend="hs", planes=1):
    """Payload bits that are guaranteed to embed (single pass for ``hs``).

    Every payload no longer than the estimate embeds; -1 means the cover
    cannot carry even an empty payload.
    """
    if backend == "hs":
        return hs_capacity(cover)
    if backend == "ce":
        return ce_capacity(cover, planes)
    raise ValueError(f"unknown RDH backend {backend!r}")


def embed(cover, payload, backend="hs", max_passes=1, planes=1):
    if backend == "hs":
        return hs_embed(cover, payload, max_passes)
    if backend == "ce":
        return ce_embed(cover, payload, planes)
    raise ValueError(f"unknown RDH backend {backend!r}")


def extract(marked, backend="hs"):
    if backend == "hs":
        return hs_extract(marked)
    if backend == "ce":
        return ce_extract(marked)
    raise ValueError(f"unknown RDH backend {backend!r}")
