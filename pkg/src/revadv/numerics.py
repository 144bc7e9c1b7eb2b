"""Small reverse-mode differentiation engine for dense/relu networks.

Tensors are plain ``float64`` numpy arrays. A :class:`Graph` is an ordered
stack of :class:`Dense` and :class:`ReLU` layers topped by an implicit
softmax cross-entropy head. The forward pass records every activation, and
:func:`backward` walks the tape in reverse, returning the input gradient and
one gradient per parameter slot.

Everything here is pure: layers never mutate their weights, and repeated
calls on the same inputs return bitwise-identical results.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

__all__ = [
    "Dense",
    "ReLU",
    "Graph",
    "Activations",
    "GradCheck",
    "softmax",
    "forward",
    "backward",
    "loss_and_input_gradient",
    "logit_input_gradient",
    "logit_jacobian",
    "check_gradients",
]


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


class Dense:
    """Affine layer ``y = x @ weight + bias`` with weight shaped (in, out)."""

    kind = "dense"

    def __init__(self, weight, bias):
        self.weight = _frozen(weight)
        self.bias = _frozen(bias)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise DimensionError(
                f"dense layer shapes disagree: weight {self.weight.shape}, bias {self.bias.shape}"
            )

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]

    def forward(self, x):
        return x @ self.weight + self.bias

    def backward(self, x, y, grad_y):
        grad_x = grad_y @ self.weight.T
        if grad_y.ndim == 1:
            grad_w = np.outer(x, grad_y)
            grad_b = grad_y.copy()
        else:
            grad_w = x.T @ grad_y
            grad_b = grad_y.sum(axis=0)
        return grad_x, (grad_w, grad_b)

    def params(self):
        return (self.weight, self.bias)


class ReLU:
    kind = "relu"

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, x, y, grad_y):
        # subgradient at exactly 0 is 0
        return grad_y * (x > 0.0), ()

    def params(self):
        return ()


class Graph:
    """Feed-forward network: layers in order, then a softmax head."""

    def __init__(self, layers):
        self.layers = tuple(layers)
        dims = [layer for layer in self.layers if isinstance(layer, Dense)]
        if not dims:
            raise DimensionError("graph needs at least one dense layer")
        for a, b in zip(dims, dims[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionError(f"layer widths {a.out_dim} and {b.in_dim} do not chain")
        self.input_dim = dims[0].in_dim
        self.num_classes = dims[-1].out_dim

    @classmethod
    def mlp(cls, weights, biases):
        """Dense layers with relu between consecutive ones (none after the last)."""
        layers = []
        for i, (w, b) in enumerate(zip(weights, biases)):
            if i:
                layers.append(ReLU())
            layers.append(Dense(w, b))
        return cls(layers)

    def params(self):
        """Flat tuple of parameter slots in layer order."""
        return tuple(p for layer in self.layers for p in layer.params())


@dataclass(frozen=True)
class Activations:
    """Tape of a forward pass: ``values[0]`` is the input, ``values[-1]`` the logits."""

    values: tuple

    @property
    def logits(self):
        return self.values[-1]

    @property
    def probabilities(self):
        return softmax(self.logits)


@dataclass(frozen=True)
class GradCheck:
    max_rel_error: float
    checked: int
    skipped: tuple  # coordinates within one step of a relu kink
    norm_rel_error: float = 0.0

    def __float__(self):
        return self.max_rel_error


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _as_input(graph, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != graph.input_dim:
        raise DimensionError(f"input shape {x.shape} does not match graph input dim {graph.input_dim}")
    return x


def forward(graph, x):
    x = _as_input(graph, x)
    values = [x]
    for layer in graph.layers:
        values.append(layer.forward(values[-1]))
    return Activations(tuple(values))


def backward(graph, acts, grad_logits, params=True):
    """Propagate ``grad_logits`` back through the tape.

    For a single (1-D) input, ``grad_logits`` may carry an extra leading axis
    to pull back several cotangents at once (rows of a Jacobian); parameter
    gradients are then not meaningful and are skipped. ``params=False``
    skips them too, for callers that only want the input gradient.
    """
    grad = np.asarray(grad_logits, dtype=np.float64)
    stacked = (acts.values[0].ndim == 1 and grad.ndim == 2) or not params
    param_grads = []
    for i in range(len(graph.layers) - 1, -1, -1):
        layer = graph.layers[i]
        x, y = acts.values[i], acts.values[i + 1]
        if stacked and isinstance(layer, Dense):
            grad, pg = grad @ layer.weight.T, ()
        else:
            grad, pg = layer.backward(x, y, grad)
        param_grads.append(pg)
    flat = tuple(g for pg in reversed(param_grads) for g in pg)
    return grad, flat


def _check_label(graph, label, what="label"):
    if not 0 <= int(label) < graph.num_classes:
        raise DomainError(f"{what} {label} out of range for {graph.num_classes} classes")
    return int(label)


def _cross_entropy(z, label):
    shifted = z - z.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[label])


def loss_and_input_gradient(graph, x, label):
    """Cross-entropy ``-log softmax(Z(x))[label]`` and its gradient w.r.t. ``x``."""
    label = _check_label(graph, label)
    acts = forward(graph, x)
    z = acts.logits
    if z.ndim != 1:
        raise DimensionError("loss_and_input_gradient takes a single input vector")
    loss = _cross_entropy(z, label)
    g = softmax(z)
    g[label] -= 1.0
    grad_x, _ = backward(graph, acts, g, params=False)
    return loss, grad_x


def logit_input_gradient(graph, x, k):
    k = _check_label(graph, k, "class")
    acts = forward(graph, x)
    seed = np.zeros(graph.num_classes)
    seed[k] = 1.0
    grad_x, _ = backward(graph, acts, seed, params=False)
    return grad_x


def logit_jacobian(graph, x):
    """Logits and their (K, D) Jacobian w.r.t. a single input, in one sweep."""
    acts = forward(graph, x)
    jac, _ = backward(graph, acts, np.eye(graph.num_classes))
    return acts.logits, jac


def check_gradients(graph, point, step=1e-5, label=None, logit=None, coords=None):
    """Compare analytic and central-difference input gradients.

    Checks the cross-entropy gradient for ``label`` (default 0), or the
    gradient of a single logit when ``logit`` is given. A coordinate is
    skipped when perturbing it by ``step`` would carry any relu
    pre-activation across zero, since the function is not differentiable
    there; skipped coordinates are reported separately. ``coords``
    restricts the check to a subset of input coordinates.

    ``max_rel_error`` is the worst per-coordinate relative error and
    ``norm_rel_error`` is ``||analytic - numeric|| / ||analytic||`` over the
    checked coordinates.
    """
    if step <= 0:
        raise DomainError("step must be positive")
    x = _as_input(graph, point)
    if x.ndim != 1:
        raise DimensionError("check_gradients takes a single input vector")
    if logit is not None:
        _check_label(graph, logit, "class")
        value = lambda z: z[:, logit]  # noqa: E731
        analytic = logit_input_gradient(graph, x, logit)
    else:
        lbl = 0 if label is None else label
        value = lambda z: np.array([_cross_entropy(row, lbl) for row in z])  # noqa: E731
        analytic = loss_and_input_gradient(graph, x, lbl)[1]

    coords = np.arange(x.size) if coords is None else np.asarray(coords, dtype=np.int64).reshape(-1)
    relu_at = [i for i, layer in enumerate(graph.layers) if isinstance(layer, ReLU)]
    base = forward(graph, x)
    signs = [base.values[i] > 0.0 for i in relu_at]

    numeric = np.empty(coords.size)
    smooth = np.ones(coords.size, dtype=bool)
    for lo in range(0, coords.size, 256):
        idx = coords[lo:lo + 256]
        rows = np.arange(idx.size)
        xp = np.repeat(x[None], idx.size, axis=0)
        xm = xp.copy()
        xp[rows, idx] += step
        xm[rows, idx] -= step
        ap, am = forward(graph, xp), forward(graph, xm)
        for i, s in zip(relu_at, signs):
            smooth[lo:lo + idx.size] &= np.all((ap.values[i] > 0.0) == s, axis=1)
            smooth[lo:lo + idx.size] &= np.all((am.values[i] > 0.0) == s, axis=1)
        numeric[lo:lo + idx.size] = (value(ap.logits) - value(am.logits)) / (2.0 * step)

    a, n = analytic[coords][smooth], numeric[smooth]
    per = np.abs(a - n) / np.maximum(1e-12, np.abs(a) + np.abs(n))
    worst = float(per.max()) if per.size else 0.0
    scale = float(np.linalg.norm(a))
    norm_err = float(np.linalg.norm(a - n)) / scale if scale > 0 else float(np.linalg.norm(n) > 0)
    skipped = tuple(int(j) for j in coords[~smooth])
    return GradCheck(worst, int(smooth.sum()), skipped, norm_err)
