"""Untargeted evasion attacks against a :class:`~revadv.classifier.ModelParams`.

All attacks work on the classifier's normalised input (``pixel / 255``) and
report budgets and distortions in 0-255 pixel units. Each one returns an
:class:`AttackResult` whose adversarial image has already been quantised to
8 bits; success is judged on that quantised image, since it is what gets
embedded and shared.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .classifier import _check_dims, predict, to_input
from .errors import DegenerateGradientError, DomainError, ZeroGradientError

METHODS = ("fgsm", "igsm_l2", "deepfool_l2", "cw_l2")
METHOD_ALIASES = {"igsm": "igsm_l2", "deepfool": "deepfool_l2", "cw": "cw_l2"}
METHOD_IDS = {"fgsm": 1, "igsm_l2": 2, "deepfool_l2": 3, "cw_l2": 4}


@dataclass(frozen=True)
class AttackConfig:
    method: str = "deepfool_l2"
    eps: float = 0.0
    alpha: float = None  # IGSM step; defaults to max(eps / 10, 1)
    max_iter: int = None  # IGSM 20, DeepFool 50
    overshoot: float = 0.02
    kappa: float = 0.0
    c_bounds: tuple = (1e-3, 1e6)
    search_steps: int = 9
    inner_iters: int = 200
    learning_rate: float = 0.1  # C&W Adam step, cosine-decayed

    def __post_init__(self):
        object.__setattr__(self, "method", METHOD_ALIASES.get(self.method, self.method))
        if self.method not in METHODS:
            raise DomainError(f"unknown attack method {self.method!r}")
        if self.eps < 0:
            raise DomainError("eps must be non-negative")
        if self.alpha is not None and self.alpha <= 0:
            raise DomainError("alpha must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise DomainError("max_iter must be at least 1")
        if self.kappa < 0:
            raise DomainError("kappa must be non-negative")

    @property
    def method_id(self):
        return METHOD_IDS[self.method]


@dataclass(frozen=True)
class AttackResult:
    adversarial: np.ndarray  # uint8, same shape as the input image
    success: bool
    iterations: int
    l2: float  # ||adversarial - original||_2 in pixel units
    float_iterate: np.ndarray = field(repr=False)  # pre-quantisation, pixel units
    true_label: int = -1
    adv_label: int = -1
    float_success: bool = None


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_and_verify(params, float_iterate, original, label, iterations=0):
    """Round to 8 bits (half away from zero) and re-classify.

    The success flag always describes the quantised image.
    """
    original = _check_dims(params, original)
    it = np.clip(np.asarray(float_iterate, dtype=np.float64).reshape(original.shape), 0.0, 255.0)
    adv = round_half_away(it).astype(np.uint8)
    pred = predict(params, adv)
    l2 = float(np.linalg.norm(adv.astype(np.float64) - original.astype(np.float64)))
    float_label = int(np.argmax(numerics.forward(params.graph, it.reshape(-1) / 255.0).logits))
    return AttackResult(
        adversarial=adv,
        success=pred.label != int(label),
        iterations=int(iterations),
        l2=l2,
        float_iterate=it,
        true_label=int(label),
        adv_label=pred.label,
        float_success=float_label != int(label),
    )


def _label(params, x):
    return int(np.argmax(numerics.forward(params.graph, x).logits))


# -- FGSM -------------------------------------------------------------------


def fgsm(params, image, label, eps):
    """One signed-gradient step of size ``eps`` (pixel units) on the true-class loss."""
    if eps < 0:
        raise DomainError("eps must be non-negative")
    image = _check_dims(params, image)
    x0 = image.astype(np.float64)
    _, grad = numerics.loss_and_input_gradient(params.graph, to_input(image), label)
    step = eps * np.sign(grad).reshape(x0.shape)
    return quantize_and_verify(params, np.clip(x0 + step, 0.0, 255.0), image, label, 1)


# -- l2 IGSM ----------------------------------------------------------------


def project_l2_ball(x, x0, eps):
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x.shape != x0.shape:
        raise DomainError(f"shapes differ: {x.shape} vs {x0.shape}")
    d = x - x0
    norm = float(np.linalg.norm(d))
    if norm <= eps:
        return x
    return x0 + eps * d / norm


def igsm_l2(params, image, label, eps, alpha=None, max_iter=20, trace=None):
    """Iterated normalised-gradient ascent on the true-class loss, kept in the l2 ``eps``-ball.

    Each step is projected back onto the ball and clipped to [0, 255]. Stops
    as soon as the quantised iterate is misclassified. ``trace``, if given,
    receives every float iterate.
    """
    if eps < 0:
        raise DomainError("eps must be non-negative")
    alpha = max(eps / 10.0, 1.0) if alpha is None else alpha
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    image = _check_dims(params, image)
    x0 = image.astype(np.float64).reshape(-1)
    x = x0.copy()
    if eps == 0:
        return quantize_and_verify(params, x, image, label, 0)
    it = 0
    for it in range(1, max_iter + 1):
        _, grad = numerics.loss_and_input_gradient(params.graph, x / 255.0, label)
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0.0:
            raise ZeroGradientError("loss gradient vanished; cannot pick a direction")
        x = np.clip(project_l2_ball(x + alpha * grad / gnorm, x0, eps), 0.0, 255.0)
        if trace is not None:
            trace.append(x.copy())
        if _label(params, round_half_away(x) / 255.0) != label:
            break
    return quantize_and_verify(params, x, image, label, it)


# -- DeepFool ---------------------------------------------------------------


def deepfool_step(logits, jac, current):
    """Minimal linearised step to the nearest other-class boundary.

    Returns ``(delta, l)`` in the coordinates of ``jac``.
    """
    f = logits - logits[current]
    w = jac - jac[current]
    best, best_k = math.inf, -1
    for k in range(len(logits)):
        if k == current:
            continue
        wn = float(np.linalg.norm(w[k]))
        if wn == 0.0:
            continue
        d = abs(f[k]) / wn
        if d < best:
            best, best_k = d, k
    if best_k < 0:
        raise DegenerateGradientError("every class gradient difference is zero")
    wl = w[best_k]
    return (abs(f[best_k]) / float(wl @ wl)) * wl, best_k


def deepfool_l2(params, image, label=None, max_iter=50, overshoot=0.02):
    """Multiclass l2 DeepFool.

    Accumulates linearised boundary steps until the overshot iterate
    ``x0 + (1 + overshoot) * r`` changes class. ``label`` defaults to the
    model's prediction; if the image is already misclassified w.r.t. a
    given label the input is returned unchanged.
    """
    if max_iter < 1:
        raise DomainError("max_iter must be at least 1")
    image = _check_dims(params, image)
    x0 = to_input(image)
    start = _label(params, x0)
    if label is None:
        label = start
    if start != label:
        return quantize_and_verify(params, image, image, label, 0)
    r = np.zeros_like(x0)
    it = 0
    x = x0
    while _label(params, x) == start and it < max_iter:
        logits, jac = numerics.logit_jacobian(params.graph, x)
        step, _ = deepfool_step(logits, jac, start)
        r = r + step
        it += 1
        x = np.clip(x0 + (1.0 + overshoot) * r, 0.0, 1.0)
    return quantize_and_verify(params, x * 255.0, image, label, it)


# -- Carlini & Wagner l2 ----------------------------------------------------


def cw_loss(logits, true_class, kappa=0.0):
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= true_class < len(z):
        raise DomainError("true class out of range")
    others = np.delete(z, true_class)
    return float(max(z[true_class] - others.max(), -kappa))


def _cw_objective_grad(graph, w, x0, true_class, c, kappa):
    x = (np.tanh(w) + 1.0) / 2.0
    acts = numerics.forward(graph, x)
    z = acts.logits
    others = z.copy()
    others[true_class] = -np.inf
    j = int(np.argmax(others))
    margin = z[true_class] - z[j]
    d = x - x0
    dist = float(d @ d)
    if margin > -kappa:
        seed = np.zeros_like(z)
        seed[true_class] = c
        seed[j] = -c
        gx_loss, _ = numerics.backward(graph, acts, seed, params=False)
        gx = 2.0 * d + gx_loss
    else:
        gx = 2.0 * d
    return x, dist, margin, gx * (1.0 - np.tanh(w) ** 2) / 2.0


def cw_l2_float(
    graph,
    x0,
    label,
    kappa=0.0,
    c_bounds=(1e-3, 1e6),
    search_steps=9,
    inner_iters=200,
    learning_rate=0.1,
    accept=None,
):
    """C&W l2 on a raw graph in normalised coordinates.

    Minimises ``||delta||^2 + c * f(x0 + delta)`` over the box via
    ``x = (tanh(w) + 1) / 2`` and Adam, with a geometric binary search on
    ``c``. Every search step restarts from ``x0``; the Adam step decays from
    ``learning_rate`` to zero on a cosine schedule, so early iterations
    travel far (optima on a face of the box need large ``|w|``) and late
    ones settle onto the boundary. The winner is finally pulled back along
    the segment towards ``x0`` by bisection, as far as it stays successful.

    Returns ``(best_x, best_dist, iterations)``; ``best_x`` is None when no
    iterate satisfied ``f <= 0`` (and ``accept``, if given).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    w0 = np.arctanh(np.clip(2.0 * x0 - 1.0, -1.0 + 1e-12, 1.0 - 1e-12))
    lo, hi = math.log(c_bounds[0]), math.log(c_bounds[1])
    best_x, best_dist = None, math.inf
    iterations = 0
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    for _ in range(search_steps):
        c = math.exp((lo + hi) / 2.0)
        w = w0.copy()
        m = np.zeros_like(w)
        v = np.zeros_like(w)
        found = False
        for t in range(1, inner_iters + 1):
            x, dist, margin, g = _cw_objective_grad(graph, w, x0, label, c, kappa)
            if t > 1 and margin <= -kappa and (accept is None or accept(x)):
                found = True
                if dist < best_dist:
                    best_x, best_dist = x, dist
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            mhat = m / (1 - beta1**t)
            vhat = v / (1 - beta2**t)
            step = learning_rate * 0.5 * (1.0 + math.cos(math.pi * (t - 1) / inner_iters))
            w = w - step * mhat / (np.sqrt(vhat) + adam_eps)
            iterations += 1
        x, dist, margin, _ = _cw_objective_grad(graph, w, x0, label, c, kappa)
        if margin <= -kappa and (accept is None or accept(x)):
            found = True
            if dist < best_dist:
                best_x, best_dist = x, dist
        if found:
            hi = math.log(c)
        else:
            lo = math.log(c)
    if best_x is not None:
        best_x = _shrink_towards(graph, x0, best_x, label, kappa, accept)
        d = best_x - x0
        best_dist = float(d @ d)
    return best_x, best_dist, iterations


def _shrink_towards(graph, x0, x, label, kappa, accept, steps=30):
    """Closest successful point on the segment ``x0 -> x`` (``x`` itself succeeds)."""

    def ok(t):
        p = x0 + t * (x - x0)
        z = numerics.forward(graph, p).logits
        return cw_loss(z, label, kappa) <= -kappa and (accept is None or accept(p))

    lo, hi = 0.0, 1.0
    for _ in range(steps):
        mid = (lo + hi) / 2.0
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return x0 + hi * (x - x0)


def cw_l2(params, image, label, kappa=0.0, c_bounds=(1e-3, 1e6), search_steps=9, inner_iters=200, learning_rate=0.1):
    """Carlini & Wagner l2 attack; keeps the lowest-distortion iterate that survives quantisation."""
    if kappa < 0:
        raise DomainError("kappa must be non-negative")
    image = _check_dims(params, image)
    x0 = to_input(image)
    if _label(params, x0) != label:
        return quantize_and_verify(params, image, image, label, 0)

    def survives(x):
        return _label(params, round_half_away(x * 255.0) / 255.0) != label

    best_x, _, iterations = cw_l2_float(
        params.graph, x0, label, kappa, c_bounds, search_steps, inner_iters, learning_rate,
        accept=survives,
    )
    if best_x is None:
        return quantize_and_verify(params, image, image, label, iterations)
    return quantize_and_verify(params, best_x * 255.0, image, label, iterations)


def run_attack(params, image, label, config):
    m = config.method
    if m == "fgsm":
        return fgsm(params, image, label, config.eps)
    if m == "igsm_l2":
        return igsm_l2(params, image, label, config.eps, config.alpha, config.max_iter or 20)
    if m == "deepfool_l2":
        return deepfool_l2(params, image, label, config.max_iter or 50, config.overshoot)
    return cw_l2(
        params, image, label, config.kappa, config.c_bounds, config.search_steps,
        config.inner_iters, config.learning_rate,
    )
