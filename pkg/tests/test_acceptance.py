"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is echoed in the terminal summary.
Run with ``pytest tests/test_acceptance.py -v``; the evaluation run behind
criteria 4 and 7 takes a few minutes.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import (
    crc32_bitwise, grid_fixtures, low_entropy_cover, record_criterion, two_class_pixel_model,
)
from revadv import attacks as A
from revadv import classifier, coder, pipeline, rdh
from revadv import numerics as N
from revadv.bitstream import BitStream
from revadv.cli import run
from revadv.crc import crc32
from revadv.errors import CapacityError

IGSM_GRID = (8.0, 16.0, 32.0, 64.0)


def check(number, title, parts):
    """``parts`` maps a sub-check name to ``(ok, detail)``."""
    passed = all(ok for ok, _ in parts.values())
    detail = "; ".join(f"{name} {'ok' if ok else 'FAILED'} ({info})" for name, (ok, info) in parts.items())
    line = record_criterion(number, title, passed, detail)
    assert passed, line


# -- 1 -----------------------------------------------------------------------


def random_pairs(backend, count, seed):
    rng = np.random.default_rng(seed)
    made = 0
    while made < count:
        h, w = int(rng.integers(9, 48)), int(rng.integers(9, 48))
        cover = low_entropy_cover(rng, h, w, int(rng.choice([1, 1, 3])))
        cap = rdh.capacity_estimate(cover, backend, planes=2)
        if cap < 0:
            continue
        made += 1
        yield cover, BitStream(rng.integers(0, 2, int(rng.integers(0, cap + 1))))


def test_criterion_1_reversibility(shapes_model):
    t0 = time.perf_counter()
    parts = {}
    for backend in rdh.BACKENDS:
        exact = total = 0
        for cover, payload in random_pairs(backend, 1000, seed=100 + len(backend)):
            marked, _ = rdh.embed(cover, payload, backend, planes=2)
            out, back = rdh.extract(marked, backend)
            total += 1
            exact += out == payload and np.array_equal(back, cover) and back.dtype == np.uint8
        parts[f"{backend} embed/extract"] = (exact == total == 1000, f"{exact}/{total} exact")

    # flat-background shapes leave room for the payload; noisy ones do not
    covers = classifier.generate_shapes_dataset(seed=2024, n=1200, split="test", max_noise=0)
    runs = exact = capacity_failures = 0
    for i, img in enumerate(covers.images):
        if runs == 500:
            break
        backend = "hs" if i % 3 else "ce"
        cfg = A.AttackConfig("igsm_l2", eps=(4.0, 8.0)[i % 2])
        try:
            rae, _ = pipeline.create_rae(shapes_model, img, cfg, backend, proceed_anyway=True)
        except CapacityError:
            capacity_failures += 1
            continue
        runs += 1
        exact += np.array_equal(pipeline.recover(rae, backend)[0], img)
    parts["recover(create_rae)"] = (
        exact == runs == 500, f"{exact}/{runs} byte-identical, {capacity_failures} covers skipped for capacity"
    )
    elapsed = time.perf_counter() - t0
    parts["runtime"] = (elapsed < 120, f"{elapsed:.1f}s < 120s")
    check(1, "reversibility", parts)


# -- 2 -----------------------------------------------------------------------


def test_criterion_2_gradients(shapes_model, shapes_splits):
    # Relative error is taken over the whole gradient vector at each point:
    # per coordinate, components ~1e-4 of the largest one are swamped by the
    # rounding noise of the central difference itself. The trained model is
    # so confident (loss ~1e-9) that differences of J carry no digits at
    # all, so J is checked on untrained networks of the same shape and Z_k
    # on both.
    t0 = time.perf_counter()
    _, test = shapes_splits
    rng = np.random.default_rng(7)
    widths = (1024, *classifier.TrainConfig().hidden, 4)
    worst, worst_coord, points, checked, skipped = 0.0, 0.0, 0, 0, 0
    for n, i in enumerate(rng.choice(len(test), 100, replace=False)):
        fresh = N.Graph.mlp(*classifier.init_params(widths, (32, 32, 1), seed=n))
        x = np.clip(classifier.to_input(test.images[i]) + rng.uniform(-0.05, 0.05, 1024), 0, 1)
        for graph, kw in ((fresh, {"label": int(test.labels[i])}),
                          (fresh, {"logit": int(rng.integers(0, 4))}),
                          (shapes_model.graph, {"logit": int(rng.integers(0, 4))})):
            res = N.check_gradients(graph, x, step=1e-5, **kw)
            worst = max(worst, res.norm_rel_error)
            worst_coord = max(worst_coord, res.max_rel_error)
            checked += res.checked
            skipped += len(res.skipped)
        points += 1
    elapsed = time.perf_counter() - t0
    check(2, "gradient correctness", {
        "finite differences": (worst < 1e-6 and points >= 100,
                               f"{points} points x (J, Z_k untrained; Z_k trained), {checked} coordinates, "
                               f"{skipped} near relu kinks skipped, max rel err {worst:.2e} < 1e-6 "
                               f"(worst single coordinate {worst_coord:.1e})"),
        "runtime": (elapsed < 60, f"{elapsed:.1f}s < 60s"),
    })


# -- 3 -----------------------------------------------------------------------


def test_criterion_3_attack_oracles(shapes_model, shapes_splits):
    rng = np.random.default_rng(31)
    worst_df, done = 0.0, 0
    while done < 50:
        w, b = rng.normal(size=2) * 5, rng.normal()
        img = rng.integers(60, 200, (1, 2, 1)).astype(np.uint8)
        xn = img.reshape(-1) / 255.0
        f = w @ xn + b
        minimal = -f / (w @ w) * w
        if (xn + 1.02 * minimal).min() <= 0 or (xn + 1.02 * minimal).max() >= 1:
            continue
        res = A.deepfool_l2(two_class_pixel_model(w, b), img, int(f > 0), overshoot=0.02)
        step = (res.float_iterate.reshape(-1) / 255.0 - xn) / 1.02  # undo the overshoot
        worst_df = max(worst_df, float(np.max(np.abs(step - minimal))))
        worst_df = max(worst_df, 0.0 if res.iterations == 1 else math.inf)
        done += 1

    worst_cw = 0.0
    fixtures = grid_fixtures(60, seed=33)
    for graph, x0, oracle in fixtures:
        _, dist, _ = A.cw_l2_float(graph, x0, 0)
        worst_cw = max(worst_cw, abs(math.sqrt(dist) - oracle) / oracle if dist is not None else math.inf)

    _, test = shapes_splits
    violations, iterates = 0, 0
    for i in rng.choice(len(test), 100, replace=False):
        img, eps, trace = test.images[i], float(rng.uniform(1, 80)), []
        A.igsm_l2(shapes_model, img, int(test.labels[i]), eps, trace=trace)
        x0 = img.reshape(-1).astype(float)
        for x in trace:
            iterates += 1
            violations += np.linalg.norm(x - x0) > eps + 1e-9 or x.min() < 0 or x.max() > 255
    check(3, "attack oracles", {
        "(a) DeepFool closed form": (worst_df <= 1e-9, f"50 fixtures, max abs err {worst_df:.1e} <= 1e-9"),
        "(b) C&W vs grid": (worst_cw <= 0.05, f"{len(fixtures)} fixtures, worst rel gap {worst_cw:.4f} <= 0.05"),
        "(c) IGSM l2 ball": (violations == 0, f"100 runs, {iterates} iterates, {violations} outside"),
    })


# -- 4 and 7: one evaluation run shared by both -------------------------------


@pytest.fixture(scope="module")
def full_eval(shapes_model, tmp_path_factory):
    d = tmp_path_factory.mktemp("eval")
    classifier.save_model(shapes_model, d / "model.radm")
    argv = ["eval", "--model", str(d / "model.radm"), "--data", "synthetic",
            "--methods", "fgsm,igsm,deepfool,cw", "--eps-list", "8,16,32,64",
            "--backend", "hs", "--initially-correct-only", "--limit", "500",
            "--workers", "1", "--out", str(d / "eval.json")]
    t0 = time.perf_counter()
    rc = run(argv)
    elapsed = time.perf_counter() - t0
    report = json.loads((d / "eval.json").read_text()) if rc == 0 else None
    return rc, elapsed, report


@pytest.mark.slow
def test_criterion_4_qualitative_patterns(full_eval):
    rc, _, report = full_eval
    assert rc == 0 and report is not None
    cells = report["cells"]
    view = {(c["method"], c["eps"]): c["initially_correct"] for c in cells}
    images = report["images"]
    df, cw = view[("deepfool_l2", None)], view[("cw_l2", None)]
    ae_ok = df["ae_success_rate"] >= 0.95 and cw["ae_success_rate"] >= 0.95

    bad = [
        f"{c['method']}@{c['eps']}/{cohort}"
        for c in cells for cohort in ("all", "initially_correct")
        if c[cohort]["images"] and c[cohort]["rae_success_rate"] > c[cohort]["ae_success_rate"]
    ]
    rae_curve = [view[("igsm_l2", e)]["rae_success_rate"] for e in IGSM_GRID]
    drops = [a - b for a, b in zip(rae_curve, rae_curve[1:]) if b < a]
    monotone = len(drops) == 0 or (len(drops) == 1 and drops[0] <= 0.03)

    embedded = sum(int(c["initially_correct"]["recovered_exactly"].split("/")[1]) for c in cells)
    failure = [view[k]["embedding_failure_rate"] for k in view if view[k]["embedding_failure_rate"] is not None]
    note = (f"HS embedded {embedded} RAEs over all cells, embedding-failure rate "
            f"{min(failure):.3f}..{max(failure):.3f}")
    if embedded == 0:
        note += "; holds vacuously, no noisy cover had room for its payload"
    check(4, "qualitative patterns", {
        "(a) AE success": (ae_ok and images >= 500,
                           f"{images} initially-correct images; DeepFool {df['ae_success_rate']:.4f}, "
                           f"C&W {cw['ae_success_rate']:.4f}, need >= 0.95"),
        "(b) RAE <= AE": (not bad, f"violations {bad or 'none'}; {note}"),
        "(c) IGSM RAE trend": (monotone, "RAE " + ", ".join(f"{e:g}:{r:.3f}" for e, r in zip(IGSM_GRID, rae_curve))
                                  + (" (all zero, vacuous)" if not any(rae_curve) else "")),
    })


# -- 5 -----------------------------------------------------------------------


def test_criterion_5_classifier(shapes_splits):
    train, test = shapes_splits
    t0 = time.perf_counter()
    a = classifier.train(train, classifier.TrainConfig(), test=test)
    b = classifier.train(train, classifier.TrainConfig(), test=test)
    elapsed = time.perf_counter() - t0
    acc = classifier.accuracy(a, test)
    same = classifier.model_to_bytes(a) == classifier.model_to_bytes(b)
    check(5, "classifier sanity", {
        "accuracy": (acc >= 0.97, f"test accuracy {acc:.4f} >= 0.97"),
        "determinism": (same, f"two default runs bitwise-equal model files ({elapsed:.1f}s)"),
    })


# -- 6 -----------------------------------------------------------------------


def test_criterion_6_codec():
    crc_ok = crc32(b"123456789") == 0xCBF43926 == crc32_bitwise(b"123456789")
    rng = np.random.default_rng(66)
    for data in (rng.integers(0, 256, int(rng.integers(0, 200)), dtype=np.uint8).tobytes() for _ in range(200)):
        crc_ok &= crc32(data) == crc32_bitwise(data)

    t0 = time.perf_counter()
    bad = 0
    for _ in range(100_000):
        nsym = int(rng.integers(2, 300))
        n = int(rng.integers(0, 48))
        syms = np.minimum(rng.geometric(rng.uniform(0.05, 0.9), n) - 1, nsym - 1).astype(np.int64)
        enc = coder.ArithmeticEncoder()
        enc.encode_many(coder.AdaptiveModel(nsym), syms)
        code = enc.finish()
        back = coder.ArithmeticDecoder(code).decode_many(coder.AdaptiveModel(nsym), n)
        bad += not np.array_equal(back, syms)
    elapsed = time.perf_counter() - t0

    zeros = coder.ac_encode(np.zeros(1000, np.uint8))
    zeros_ok = len(zeros) < 30 and coder.ac_decode(zeros, 1000) == BitStream(np.zeros(1000, np.uint8))
    check(6, "codec micro-checks", {
        "CRC-32": (crc_ok, "check value 0xCBF43926 and 200 random buffers vs bitwise oracle"),
        "coder round trips": (bad == 0, f"100000 streams, {bad} mismatches, {coder.BACKEND} coder, {elapsed:.1f}s"),
        "1000 zeros": (zeros_ok, f"{len(zeros)} bits < 30"),
    })


# -- 7 -----------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_eval_runtime(full_eval):
    rc, elapsed, report = full_eval
    images = report["images"] if report else 0
    cells = len(report["cells"]) if report else 0
    check(7, "end-to-end runtime", {
        "eval": (rc == 0 and elapsed < 600 and images == 500 and cells == 10,
                 f"exit {rc}, {images} images, {cells} cells (4 methods), 1 worker, {elapsed:.0f}s < 600s"),
    })
