"""Attack an image, hide the perturbation inside it, and undo both later.

``create_rae`` attacks an image, encodes the integer perturbation
``r = X_adv - X`` behind an :class:`RAEHeader`, and hides it in ``X_adv``
with a reversible data hiding backend. ``recover`` runs the steps backwards
and returns the original image bit-exactly.

RAE header wire layout (big-endian, 184 bits)::

    "RAE1" (32) | version (8) | attack id (8) | backend id (8)
    | eps, 16.8 fixed point (24) | H (16) | W (16) | C (8)
    | perturbation bit length (32) | CRC-32 of the perturbation bits (32)
"""

import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from . import attacks, rdh
from .bitstream import BitReader, BitStream, BitWriter
from .classifier import _check_dims, predict, predict_batch
from .coder import AdaptiveModel, ArithmeticDecoder, ArithmeticEncoder
from .crc import crc32
from .errors import (
    AttackFailedError,
    CapacityError,
    CorruptedPayloadError,
    FormatError,
    RevAdvError,
)

log = logging.getLogger(__name__)

RAE_MAGIC = b"RAE1"
RAE_VERSION = 1
RAE_HEADER_BITS = 184
REPORT_VERSION = 1
MODE_DENSE, MODE_SPARSE = 0, 1
VALUE_ALPHABET_BITS = 10

DEFAULT_EPS_GRID = (8, 16, 32, 64)
DEFAULT_METHODS = ("fgsm", "igsm_l2", "deepfool_l2", "cw_l2")
DEFAULT_HS_PASSES = 4
DEFAULT_CE_PLANES = 2
EPS_METHODS = ("fgsm", "igsm_l2")

PUBLISHED_REFERENCE = {
    "source": "ImageNet sample with pretrained VGG-16; not reproducible at this scale",
    "igsm_l2": {
        "100": {"ae": 0.4845, "rae": 0.2839},
        "200": {"ae": 0.7897, "rae": 0.6294},
        "300": {"ae": 0.9306, "rae": 0.7435},
        "400": {"ae": 0.9672, "rae": 0.7617},
    },
    "deepfool_l2": {"ae": 0.9875, "rae": 0.8424},
    "cw_l2": {"ae": 0.9943, "rae": 0.9577},
}


# -- perturbation codec -----------------------------------------------------


@dataclass(frozen=True)
class Perturbation:
    values: np.ndarray  # int16, (H, W, C)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 2:
            v = v[..., None]
        if v.ndim != 3:
            raise FormatError(f"perturbation must be (H, W, C), got {v.shape}")
        if v.size and (v.min() < -255 or v.max() > 255):
            raise FormatError("perturbation values must lie in [-255, 255]")
        object.__setattr__(self, "values", v.astype(np.int16))

    @classmethod
    def between(cls, adversarial, original):
        return cls(np.asarray(adversarial, np.int16) - np.asarray(original, np.int16))

    @property
    def dims(self):
        return tuple(self.values.shape)

    def remove_from(self, adversarial):
        """Original image: ``X_adv - r``."""
        out = np.asarray(adversarial).astype(np.int16).reshape(self.values.shape) - self.values
        if out.min() < 0 or out.max() > 255:
            raise CorruptedPayloadError("perturbation pushes pixels outside [0, 255]")
        return out.astype(np.uint8)

    def __eq__(self, other):
        return isinstance(other, Perturbation) and np.array_equal(self.values, other.values)

    __hash__ = None


def zigzag(v):
    v = np.asarray(v, dtype=np.int64)
    return np.where(v >= 0, 2 * v, -2 * v - 1)


def unzigzag(u):
    u = np.asarray(u, dtype=np.int64)
    return np.where(u % 2 == 0, u // 2, -(u + 1) // 2)


def _count_width(n):
    return max(1, int(n).bit_length())


def _dense_code(flat):
    zz = zigzag(flat)
    alphabet = int(zz.max()) + 1 if zz.size else 1
    enc = ArithmeticEncoder()
    enc.encode_many(AdaptiveModel(alphabet), zz)
    return BitWriter().write_uint(alphabet, VALUE_ALPHABET_BITS).write(enc.finish()).getvalue()


def _sparse_code(flat):
    n = flat.size
    idx = np.flatnonzero(flat)
    w = BitWriter().write_uint(len(idx), _count_width(n))
    if not len(idx):
        return w.getvalue()
    vals = zigzag(flat[idx]) - 1
    alphabet = int(vals.max()) + 1
    w.write_uint(alphabet, VALUE_ALPHABET_BITS)
    gaps = np.diff(np.concatenate([[-1], idx])) - 1
    bucket_model = AdaptiveModel(_count_width(n) + 1)
    mantissa_model = AdaptiveModel(2)
    value_model = AdaptiveModel(alphabet)
    enc = ArithmeticEncoder()
    for gap, val in zip(gaps.tolist(), vals.tolist()):
        g = gap + 1
        b = g.bit_length() - 1
        enc.encode(bucket_model, b)
        for k in range(b - 1, -1, -1):
            enc.encode(mantissa_model, (g >> k) & 1)
        enc.encode(value_model, val)
    return w.write(enc.finish()).getvalue()


def encode_perturbation(r):
    """Serialise a perturbation, picking the shorter of dense and sparse coding.

    Layout: 2-bit mode | H (16) | W (16) | C (8) | mode body. Dense mode
    codes every zigzagged value with one adaptive model; sparse mode codes
    the nonzero count, then (gap, value) pairs with exp-Golomb gap buckets.
    """
    if not isinstance(r, Perturbation):
        r = Perturbation(r)
    h, w, c = r.dims
    flat = r.values.reshape(-1).astype(np.int64)
    sparse = _sparse_code(flat)
    dense = _dense_code(flat) if flat.size else None
    mode, body = MODE_SPARSE, sparse
    if dense is not None and len(dense) < len(sparse):
        mode, body = MODE_DENSE, dense
    return (
        BitWriter()
        .write_uint(mode, 2)
        .write_uint(h, 16)
        .write_uint(w, 16)
        .write_uint(c, 8)
        .write(body)
        .getvalue()
    )


def decode_perturbation(bits):
    bits = BitStream.coerce(bits)
    rd = BitReader(bits)
    try:
        mode = rd.read_uint(2)
        h, w, c = rd.read_uint(16), rd.read_uint(16), rd.read_uint(8)
        n = h * w * c
        if mode == MODE_DENSE:
            alphabet = rd.read_uint(VALUE_ALPHABET_BITS)
            if not 1 <= alphabet <= 511:
                raise FormatError("dense alphabet out of range", offset=rd.pos)
            dec = ArithmeticDecoder(rd.rest().bits)
            flat = unzigzag(dec.decode_many(AdaptiveModel(alphabet), n))
        elif mode == MODE_SPARSE:
            count = rd.read_uint(_count_width(n))
            if count > n:
                raise FormatError("nonzero count exceeds pixel count", offset=rd.pos)
            flat = np.zeros(n, dtype=np.int64)
            if count:
                alphabet = rd.read_uint(VALUE_ALPHABET_BITS)
                if not 1 <= alphabet <= 510:
                    raise FormatError("sparse alphabet out of range", offset=rd.pos)
                dec = ArithmeticDecoder(rd.rest().bits)
                bucket_model = AdaptiveModel(_count_width(n) + 1)
                mantissa_model = AdaptiveModel(2)
                value_model = AdaptiveModel(alphabet)
                pos = -1
                for _ in range(count):
                    b = dec.decode(bucket_model)
                    g = 1
                    for _ in range(b):
                        g = (g << 1) | dec.decode(mantissa_model)
                    pos += g
                    if pos >= n:
                        raise FormatError("sparse index past end of image")
                    flat[pos] = unzigzag(dec.decode(value_model) + 1)
        else:
            raise FormatError(f"invalid perturbation mode tag {mode}", offset=0)
    except FormatError:
        raise
    except (ValueError, IndexError) as exc:
        raise FormatError(f"malformed perturbation stream: {exc}") from None
    if flat.size and (flat.min() < -255 or flat.max() > 255):
        raise FormatError("decoded perturbation out of range")
    return Perturbation(flat.reshape(h, w, c))


# -- header -----------------------------------------------------------------


@dataclass(frozen=True)
class RAEHeader:
    attack_id: int
    backend_id: int
    eps: float
    dims: tuple
    payload_bits: int
    payload_crc: int
    version: int = RAE_VERSION

    @property
    def method(self):
        return {v: k for k, v in attacks.METHOD_IDS.items()}.get(self.attack_id, "unknown")

    @property
    def backend(self):
        return {v: k for k, v in rdh.BACKEND_IDS.items()}.get(self.backend_id, "unknown")

    def to_bits(self):
        h, w, c = self.dims
        return (
            BitWriter()
            .write(BitStream.from_bytes(RAE_MAGIC))
            .write_uint(self.version, 8)
            .write_uint(self.attack_id, 8)
            .write_uint(self.backend_id, 8)
            .write_uint(eps_to_fixed(self.eps), 24)
            .write_uint(h, 16)
            .write_uint(w, 16)
            .write_uint(c, 8)
            .write_uint(self.payload_bits, 32)
            .write_uint(self.payload_crc, 32)
            .getvalue()
        )

    @classmethod
    def read(cls, reader):
        if reader.read(32).to_bytes() != RAE_MAGIC:
            raise CorruptedPayloadError("RAE header magic mismatch", offset=0)
        version = reader.read_uint(8)
        if version != RAE_VERSION:
            raise CorruptedPayloadError(f"unsupported RAE header version {version}", offset=32)
        attack_id, backend_id = reader.read_uint(8), reader.read_uint(8)
        eps = reader.read_uint(24) / 256.0
        dims = (reader.read_uint(16), reader.read_uint(16), reader.read_uint(8))
        return cls(attack_id, backend_id, eps, dims, reader.read_uint(32), reader.read_uint(32), version)


def eps_to_fixed(eps):
    v = int(math.floor(eps * 256.0 + 0.5))
    if not 0 <= v < 1 << 24:
        raise ValueError(f"eps {eps} does not fit 16.8 fixed point")
    return v


# -- create / recover -------------------------------------------------------


@dataclass(frozen=True)
class RAEReport:
    method: str
    eps: float
    backend: str
    true_label: int
    original_label: int
    adversarial_label: int
    rae_label: int
    attack_success: bool
    rae_success: bool
    l2_adversarial: float
    l2_rae: float
    linf_rae_vs_adversarial: int
    payload_bits: int
    perturbation_bits: int
    passes: int

    def to_dict(self):
        return dict(self.__dict__)


def _rdh_opts(backend, max_passes, planes):
    if backend == "hs":
        return {"max_passes": DEFAULT_HS_PASSES if max_passes is None else max_passes}
    if backend == "ce":
        return {"planes": DEFAULT_CE_PLANES if planes is None else planes}
    raise ValueError(f"unknown RDH backend {backend!r}")


def build_payload(r, method, eps, backend):
    body = encode_perturbation(r)
    header = RAEHeader(
        attacks.METHOD_IDS[method], rdh.BACKEND_IDS[backend], float(eps), r.dims,
        len(body), crc32(body.to_bytes()),
    )
    return header.to_bits() + body


def create_rae(
    params, image, attack, backend="hs", label=None, proceed_anyway=False,
    max_passes=None, planes=None, attack_result=None, retry_smaller_eps=False,
):
    """Attack ``image`` and hide the perturbation inside the adversarial image.

    ``label`` defaults to the model's prediction on the clean image. Raises
    :class:`AttackFailedError` when the quantised attack does not change the
    label (unless ``proceed_anyway``) and :class:`CapacityError` when the
    payload does not fit. With ``retry_smaller_eps`` an IGSM attack whose
    payload does not fit is rerun at half the radius while it still succeeds.
    """
    image = _check_dims(params, image)
    opts = _rdh_opts(backend, max_passes, planes)
    clean = predict(params, image).label
    label = clean if label is None else int(label)
    res = attack_result or attacks.run_attack(params, image, label, attack)
    if not res.success and not proceed_anyway:
        raise AttackFailedError(f"{attack.method} did not change the label", res)
    while True:
        r = Perturbation.between(res.adversarial, image)
        payload = build_payload(r, attack.method, attack.eps, backend)
        try:
            rae, emb = rdh.embed(res.adversarial, payload, backend, **opts)
            break
        except CapacityError:
            if not (retry_smaller_eps and attack.method == "igsm_l2" and attack.eps >= 2):
                raise
            smaller = replace(attack, eps=attack.eps / 2)
            retry = attacks.run_attack(params, image, label, smaller)
            if not retry.success and not proceed_anyway:
                raise
            attack, res = smaller, retry
    rae_label = predict(params, rae).label
    diff_adv = np.abs(rae.astype(np.int64) - res.adversarial.astype(np.int64))
    report = RAEReport(
        method=attack.method,
        eps=float(attack.eps),
        backend=backend,
        true_label=label,
        original_label=clean,
        adversarial_label=res.adv_label,
        rae_label=rae_label,
        attack_success=bool(res.success),
        rae_success=rae_label != label,
        l2_adversarial=res.l2,
        l2_rae=float(np.linalg.norm(rae.astype(np.float64) - image.astype(np.float64))),
        linf_rae_vs_adversarial=int(diff_adv.max()) if diff_adv.size else 0,
        payload_bits=len(payload),
        perturbation_bits=len(payload) - RAE_HEADER_BITS,
        passes=emb.passes,
    )
    return rae, report


def recover(rae, backend="hs"):
    """Extract and verify the payload; returns ``(original, adversarial, r, header)``."""
    payload, adversarial = rdh.extract(rae, backend)
    rd = BitReader(payload)
    try:
        header = RAEHeader.read(rd)
        body = rd.read(header.payload_bits)
    except FormatError as exc:
        raise CorruptedPayloadError(f"RAE payload unreadable: {exc}") from None
    if rd.remaining:
        raise CorruptedPayloadError("trailing bits after RAE payload")
    if crc32(body.to_bytes()) != header.payload_crc:
        raise CorruptedPayloadError("perturbation CRC mismatch")
    r = decode_perturbation(body)
    adv = adversarial if adversarial.ndim == 3 else adversarial[..., None]
    if r.dims != header.dims or adv.shape != r.dims:
        raise CorruptedPayloadError("perturbation dims disagree with the image")
    original = r.remove_from(adv)
    if np.asarray(rae).ndim == 2:
        original, adversarial = original[..., 0], adv[..., 0]
    return original, adversarial, r, header


# -- evaluation -------------------------------------------------------------


def _cells(methods, eps_list):
    cells = []
    for m in methods:
        m = attacks.METHOD_ALIASES.get(m, m)
        if m in EPS_METHODS:
            cells.extend((m, float(e)) for e in eps_list)
        else:
            cells.append((m, None))
    return cells


def _cell_key(method, eps):
    return method if eps is None else f"{method}@{eps:g}"


@dataclass(frozen=True)
class _Task:
    params: object
    cells: tuple
    backend: str
    max_passes: int
    planes: int
    verify_recovery: bool


_WORKER_TASK = None


def _init_worker(task):
    global _WORKER_TASK
    _WORKER_TASK = task


def _eval_one(item):
    image, label = item
    return _eval_image(_WORKER_TASK, image, label)


def _eval_image(task, image, label):
    params = task.params
    clean_ok = predict(params, image).label == label
    out = []
    for method, eps in task.cells:
        cfg = attacks.AttackConfig(method=method, eps=eps or 0.0)
        rec = {"ae": False, "rae": False, "embedded": False, "embed_failed": False,
               "l2": 0.0, "agree": None, "recovered": None, "error": None}
        try:
            res = attacks.run_attack(params, image, label, cfg)
        except RevAdvError as exc:
            rec["error"] = type(exc).__name__
            out.append(rec)
            continue
        rec["ae"] = bool(res.success)
        rec["l2"] = res.l2
        if res.success:
            try:
                rae, rep = create_rae(
                    params, image, cfg, task.backend, label=label, attack_result=res,
                    max_passes=task.max_passes, planes=task.planes,
                )
            except CapacityError:
                rec["embed_failed"] = True
            else:
                rec["embedded"] = True
                rec["rae"] = rep.rae_success
                rec["agree"] = rep.rae_label == rep.adversarial_label
                if task.verify_recovery:
                    original = recover(rae, task.backend)[0]
                    rec["recovered"] = bool(np.array_equal(original, image))
        out.append(rec)
    return clean_ok, out


def _rate(num, den):
    return num / den if den else None


def _summarise(records):
    n = len(records)
    ae = [r for r in records if r["ae"]]
    embedded = [r for r in records if r["embedded"]]
    l2 = [r["l2"] for r in ae]
    agree = [r["agree"] for r in embedded]
    recovered = [r["recovered"] for r in embedded if r["recovered"] is not None]
    return {
        "images": n,
        "ae_success_rate": _rate(len(ae), n),
        "rae_success_rate": _rate(sum(r["rae"] for r in records), n),
        "embedding_failure_rate": _rate(sum(r["embed_failed"] for r in records), len(ae)),
        "mean_l2": float(np.mean(l2)) if l2 else None,
        "max_l2": float(np.max(l2)) if l2 else None,
        "label_agreement_rate": _rate(sum(agree), len(agree)),
        "recovered_exactly": f"{sum(recovered)}/{len(recovered)}",
        "attack_errors": sum(r["error"] is not None for r in records),
    }


def evaluate(
    params, dataset, methods=DEFAULT_METHODS, eps_list=DEFAULT_EPS_GRID, backend="hs",
    workers=1, max_passes=None, planes=None, verify_recovery=True, limit=None,
    initially_correct_only=False,
):
    """AE vs RAE success rates per (method, eps) cell, for two cohorts.

    Cohorts: every image, and images the model classifies correctly before
    the attack. An RAE counts as successful when its label differs from the
    true label; failed attacks produce no RAE. ``limit`` caps the number of
    images taken (after the initially-correct filter, if requested).
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    images, labels = dataset.images, dataset.labels
    if initially_correct_only:
        keep = np.flatnonzero(predict_batch(params, images) == labels)
        images, labels = images[keep], labels[keep]
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    cells = tuple(_cells(methods, eps_list))
    opts = _rdh_opts(backend, max_passes, planes)
    task = _Task(params, cells, backend, opts.get("max_passes"), opts.get("planes"), verify_recovery)
    items = [(images[i], int(labels[i])) for i in range(len(labels))]

    if workers and workers > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(workers, initializer=_init_worker, initargs=(task,)) as pool:
            results = pool.map(_eval_one, items, chunksize=max(1, len(items) // (4 * workers)))
    else:
        results = [_eval_image(task, img, lbl) for img, lbl in items]

    correct = [ok for ok, _ in results]
    report_cells = []
    for j, (method, eps) in enumerate(cells):
        per_image = [recs[j] for _, recs in results]
        report_cells.append({
            "method": method,
            "eps": eps,
            "all": _summarise(per_image),
            "initially_correct": _summarise([r for r, ok in zip(per_image, correct) if ok]),
        })
    return {
        "report_version": REPORT_VERSION,
        "backend": backend,
        "rdh_options": opts,
        "images": len(items),
        "initially_correct": int(sum(correct)),
        "cohorts": {
            "all": "every evaluated image",
            "initially_correct": "images classified correctly before the attack (default view)",
        },
        "success_rule": "label differs from the true label; failed attacks yield no RAE",
        "cells": report_cells,
        "published_reference": PUBLISHED_REFERENCE,
    }


def report_to_json(report):
    return json.dumps(report, indent=2) + "\n"
