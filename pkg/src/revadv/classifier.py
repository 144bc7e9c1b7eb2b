"""Reference classifier: datasets, training, prediction and persistence.

The classifier is a small relu MLP over ``image / 255``. Models are stored
in the ``RADM`` container::

    magic "RADM" | version u8 | K u8 | H u16 | W u16 | C u8 | layer-count u8
    | layer widths u16 each | weights and biases f64 little-endian | CRC32

Header integers are big-endian; the trailing CRC32 (big-endian) covers every
preceding byte.
"""

import logging
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import numerics
from .crc import crc32
from .errors import DimensionError, FormatError, TrainingError

log = logging.getLogger(__name__)

SHAPE_CLASSES = ("disk", "square", "cross", "triangle")
IMAGE_SIZE = 32
MAX_NOISE = 16
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MODEL_MAGIC = b"RADM"
MODEL_VERSION = 1


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray  # (n, H, W, C) uint8
    labels: np.ndarray  # (n,) int64
    split: str = "train"
    num_classes: int = len(SHAPE_CLASSES)

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.dtype != np.uint8:
            raise DimensionError("images must be a (n, H, W, C) uint8 array")
        if len(self.images) != len(self.labels):
            raise DimensionError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DimensionError("label out of range")

    def __len__(self):
        return len(self.labels)

    @property
    def dims(self):
        return tuple(self.images.shape[1:])

    def subset(self, index, split=None):
        return LabeledDataset(
            self.images[index], self.labels[index], split or self.split, self.num_classes
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 0.02
    momentum: float = 0.9
    seed: int = 0
    hidden: tuple = (128, 64)
    weight_decay: float = 0.0


@dataclass(frozen=True, eq=False)
class ModelParams:
    widths: tuple  # input, hidden..., classes
    weights: tuple
    biases: tuple
    dims: tuple  # (H, W, C)
    seed: int = 0
    metrics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.weights):
            raise DimensionError("layer count does not match architecture")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[i], self.widths[i + 1]) or b.shape != (self.widths[i + 1],):
                raise DimensionError(f"layer {i} shape disagrees with widths {self.widths}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise TrainingError(f"layer {i} holds non-finite values")
        if int(np.prod(self.dims)) != self.widths[0]:
            raise DimensionError(f"image dims {self.dims} do not match input width {self.widths[0]}")

    @property
    def num_classes(self):
        return self.widths[-1]

    @cached_property
    def graph(self):
        return numerics.Graph.mlp(self.weights, self.biases)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (
            self.widths == other.widths
            and self.dims == other.dims
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )

    __hash__ = None


@dataclass(frozen=True)
class Prediction:
    label: int
    logits: np.ndarray
    probabilities: np.ndarray


# -- datasets ---------------------------------------------------------------


def _shape_mask(kind, cx, cy, r, size):
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = x - cx, y - cy
    if kind == 0:
        return dx * dx + dy * dy <= r * r
    if kind == 1:
        s = 0.8 * r
        return (np.abs(dx) <= s) & (np.abs(dy) <= s)
    if kind == 2:
        t = max(1.5, r / 3.0)
        return ((np.abs(dx) <= t) & (np.abs(dy) <= r)) | ((np.abs(dy) <= t) & (np.abs(dx) <= r))
    # upward triangle, apex at the top
    return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2.0)


def generate_shapes_dataset(seed, n, size=IMAGE_SIZE, split="train", max_noise=MAX_NOISE):
    """Procedural grayscale shapes in four classes: disk, square, cross, triangle.

    Labels cycle through the classes before a seeded shuffle, so any ``n``
    yields counts within one of ``n / 4``. Each image draws its own
    background and foreground levels, centre and size jitter, and a noise
    amplitude ``a`` in ``[0, max_noise]``; the noise is uniform on ``[-a, a]``.
    """
    k = len(SHAPE_CLASSES)
    if n < k:
        raise ValueError(f"need at least {k} images, got {n}")
    if not 0 <= max_noise <= MAX_NOISE:
        raise ValueError(f"max_noise must lie in [0, {MAX_NOISE}]")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % k).astype(np.int64)
    images = np.empty((n, size, size, 1), dtype=np.uint8)
    c = (size - 1) / 2.0
    for i, label in enumerate(labels):
        bg = rng.integers(16, 96)
        fg = rng.integers(150, 240)
        cx, cy = c + rng.uniform(-4, 4, size=2)
        r = rng.uniform(0.22, 0.36) * size
        amp = rng.integers(0, max_noise + 1)
        img = np.where(_shape_mask(label, cx, cy, r, size), fg, bg).astype(np.int64)
        img += rng.integers(-amp, amp + 1, size=img.shape)
        images[i, :, :, 0] = np.clip(img, 0, 255)
    return LabeledDataset(images, labels, split, k)


def shapes_splits(seed=0, n_train=8000, n_test=2000):
    """Default train/test split drawn from one seeded generator run."""
    full = generate_shapes_dataset(seed, n_train + n_test)
    return (
        full.subset(slice(0, n_train), "train"),
        full.subset(slice(n_train, n_train + n_test), "test"),
    )


def _read_idx(path, magic, what):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise FormatError(f"{what} file too short for IDX magic", offset=0)
    (found,) = struct.unpack_from(">I", data, 0)
    if found != magic:
        raise FormatError(f"{what} file has bad IDX magic 0x{found:08x}", offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{what} file truncated inside header", offset=len(data))
    shape = struct.unpack_from(f">{ndim}I", data, 4)
    count = int(np.prod(shape))
    if len(data) < header + count:
        raise FormatError(f"{what} file truncated: expected {count} data bytes", offset=len(data))
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=header).reshape(shape)


def load_idx(images_path, labels_path, split="train", num_classes=None):
    """Read an IDX image/label pair (ubyte images, ubyte labels)."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, "image")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "label").astype(np.int64)
    if len(labels) != len(images):
        raise FormatError(
            f"label count {len(labels)} does not match image count {len(images)}", offset=4
        )
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 1
    return LabeledDataset(images[..., None].copy(), labels, split, num_classes)


# -- training ---------------------------------------------------------------


def to_input(images):
    """uint8 images (n, H, W, C) or (H, W, C) -> float rows in [0, 1]."""
    images = np.asarray(images)
    if images.ndim == 3:
        return images.reshape(-1).astype(np.float64) / 255.0
    return images.reshape(len(images), -1).astype(np.float64) / 255.0


def init_params(widths, dims, seed):
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths, widths[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _batch_loss_grads(graph, x, y):
    acts = numerics.forward(graph, x)
    p = numerics.softmax(acts.logits)
    n = len(y)
    loss = -np.log(np.maximum(p[np.arange(n), y], 1e-300)).mean()
    g = p
    g[np.arange(n), y] -= 1.0
    g /= n
    _, grads = numerics.backward(graph, acts, g)
    return loss, grads


def accuracy(params, dataset):
    if len(dataset) == 0:
        return float("nan")
    return float(np.mean(predict_batch(params, dataset.images) == dataset.labels))


def train(dataset, config=TrainConfig(), test=None):
    """Minibatch SGD with momentum on cross-entropy.

    Deterministic given ``(dataset, config)``: the seed drives both weight
    initialisation and per-epoch shuffling.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    dims = dataset.dims
    widths = (int(np.prod(dims)), *config.hidden, dataset.num_classes)
    weights, biases = init_params(widths, dims, config.seed)
    velocity = [np.zeros_like(p) for pair in zip(weights, biases) for p in pair]
    x_all = to_input(dataset.images)
    y_all = dataset.labels
    rng = np.random.default_rng([config.seed, 1])

    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            graph = numerics.Graph.mlp(weights, biases)
            loss, grads = _batch_loss_grads(graph, x_all[idx], y_all[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"loss became non-finite in epoch {epoch}")
            total += loss * len(idx)
            params = [p for pair in zip(weights, biases) for p in pair]
            for i, (p, v, g) in enumerate(zip(params, velocity, grads)):
                if config.weight_decay and i % 2 == 0:
                    g = g + config.weight_decay * p
                v *= config.momentum
                v -= config.learning_rate * g
                p += v
        log.info("epoch %d: mean loss %.4f", epoch + 1, total / len(dataset))

    model = ModelParams(widths, tuple(weights), tuple(biases), dims, config.seed)
    model.metrics["train_accuracy"] = accuracy(model, dataset)
    if test is not None and len(test):
        model.metrics["test_accuracy"] = accuracy(model, test)
    log.info("training done: %s", model.metrics)
    return model


# -- inference --------------------------------------------------------------


def _check_dims(params, image):
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[..., None]
    if tuple(image.shape) != tuple(params.dims):
        raise DimensionError(f"image dims {image.shape} do not match model dims {params.dims}")
    return image


def predict(params, image):
    """Top-1 label; ties go to the lowest class index (``np.argmax`` semantics)."""
    image = _check_dims(params, image)
    logits = numerics.forward(params.graph, to_input(image)).logits
    return Prediction(int(np.argmax(logits)), logits, numerics.softmax(logits))


def predict_batch(params, images):
    images = np.asarray(images)
    if images.shape[1:] != tuple(params.dims):
        raise DimensionError(f"image dims {images.shape[1:]} do not match model dims {params.dims}")
    logits = numerics.forward(params.graph, to_input(images)).logits
    return np.argmax(logits, axis=1)


# -- persistence --------------------------------------------------------------


def model_to_bytes(params):
    h, w, c = params.dims
    head = MODEL_MAGIC + struct.pack(
        ">BBHHBB", MODEL_VERSION, params.num_classes, h, w, c, len(params.widths)
    )
    head += struct.pack(f">{len(params.widths)}H", *params.widths)
    body = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for pair in zip(params.weights, params.biases)
        for a in pair
    )
    data = head + body
    return data + struct.pack(">I", crc32(data))


def model_from_bytes(data):
    fixed = 4 + struct.calcsize(">BBHHBB")
    if len(data) < fixed + 4:
        raise FormatError("model file truncated", offset=len(data))
    if data[:4] != MODEL_MAGIC:
        raise FormatError("bad model magic", offset=0)
    (stored,) = struct.unpack_from(">I", data, len(data) - 4)
    if crc32(data[:-4]) != stored:
        raise FormatError("model CRC mismatch", offset=len(data) - 4)
    version, k, h, w, c, nlayers = struct.unpack_from(">BBHHBB", data, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}", offset=4)
    widths = struct.unpack_from(f">{nlayers}H", data, fixed)
    if widths[-1] != k:
        raise FormatError("class count disagrees with final layer width", offset=5)
    pos = fixed + 2 * nlayers
    weights, biases = [], []
    for fan_in, fan_out in zip(widths, widths[1:]):
        for shape, out in (((fan_in, fan_out), weights), ((fan_out,), biases)):
            nbytes = 8 * int(np.prod(shape))
            if pos + nbytes > len(data) - 4:
                raise FormatError("model payload truncated", offset=pos)
            out.append(np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64))
            pos += nbytes
    if pos != len(data) - 4:
        raise FormatError("trailing bytes after model payload", offset=pos)
    return ModelParams(tuple(widths), tuple(weights), tuple(biases), (h, w, c))


def save_model(params, path):
    from .imageio import atomic_write

    atomic_write(path, model_to_bytes(params))


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
