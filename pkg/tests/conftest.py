import numpy as np
import pytest

from revadv import classifier
from revadv import numerics as N


@pytest.fixture(scope="session")
def shapes_splits():
    return classifier.shapes_splits()


@pytest.fixture(scope="session")
def shapes_model(shapes_splits):
    train, test = shapes_splits
    return classifier.train(train, classifier.TrainConfig(), test=test)


@pytest.fixture(scope="session")
def correct_test_images(shapes_model, shapes_splits):
    """First 200 test images the model gets right, as (images, labels)."""
    _, test = shapes_splits
    ok = np.flatnonzero(classifier.predict_batch(shapes_model, test.images) == test.labels)[:200]
    return test.images[ok], test.labels[ok]


def linear_model(weight, bias, dims):
    """Single dense layer (no hidden units) wrapped as ModelParams."""
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    return classifier.ModelParams(
        widths=(weight.shape[0], weight.shape[1]), weights=(weight,), biases=(bias,), dims=dims
    )


def low_entropy_cover(rng, h, w, c=1):
    base = rng.integers(0, 256)
    amp = rng.integers(0, 4)
    img = base + rng.integers(-amp, amp + 1, (h, w, c))
    if rng.random() < 0.5:  # a bright block, like a shape on a background
        y, x = rng.integers(0, h), rng.integers(0, w)
        img[y:y + h // 2, x:x + w // 2] += rng.integers(-80, 80)
    return np.clip(img, 0, 255).astype(np.uint8)


def crc32_bitwise(data):
    """Table-free reflected CRC-32, written out bit by bit."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF


GRID = np.linspace(0.0, 1.0, 513)  # resolution 1/512, box faces included
GRID_POINTS = np.stack(np.meshgrid(GRID, GRID, indexing="ij"), -1).reshape(-1, 2)


def two_class_pixel_model(w, b):
    """Class-1 minus class-0 logit equals ``w . x / 255 + b`` on a 1x2 image."""
    weight = np.stack([np.zeros(2), np.asarray(w, float)], axis=1)
    return linear_model(weight, [0.0, b], (1, 2, 1))


def grid_fixtures(n, seed):
    """Random 2-pixel linear classifiers, start in class 0, adversarial region >= 1% of the box."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        w, b = rng.normal(size=2), 0.5 * rng.normal()
        x0 = rng.uniform(0.1, 0.9, 2)
        if x0 @ w + b >= 0 or abs(x0 @ w + b) / np.linalg.norm(w) <= 0.05:
            continue
        region = GRID_POINTS[GRID_POINTS @ w + b >= 0]
        if len(region) < 0.01 * len(GRID_POINTS):
            continue
        oracle = float(np.min(np.linalg.norm(region - x0, axis=1)))
        graph = N.Graph.mlp([np.stack([np.zeros(2), w], 1)], [np.array([0.0, b])])
        out.append((graph, x0, oracle))
    return out


ACCEPTANCE = {}  # criterion number -> (passed, detail)


def record_criterion(number, title, passed, detail):
    ACCEPTANCE[number] = (bool(passed), f"{title}: {detail}")
    line = f"ACCEPTANCE {number} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
