"""First-order optimizers and the stacked-layer rectification loop."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .homography import Homography, HorizonError, image_corners
from .image import as_image, mse
from .kernels import KernelSpec
from .layer import MEAN, PTLayer, backward, forward, new_layer


def sgd_step(params, grads, lr: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError(f"params {params.shape} and grads {grads.shape} differ in shape")
    if lr <= 0:
        raise ValueError("lr must be positive")
    return params - lr * grads


@dataclass(frozen=True)
class AdamState:
    m1: np.ndarray
    m2: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @classmethod
    def fresh(cls, shape, **hyper) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), **hyper)


def adam_step(state: AdamState, params, grads) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns new params and a new state."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m1.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, "
                         f"state {state.m1.shape}")
    t = state.step + 1
    m1 = state.beta1 * state.m1 + (1.0 - state.beta1) * grads
    m2 = state.beta2 * state.m2 + (1.0 - state.beta2) * grads * grads
    m1_hat = m1 / (1.0 - state.beta1 ** t)
    m2_hat = m2 / (1.0 - state.beta2 ** t)
    params = params - state.lr * m1_hat / (np.sqrt(m2_hat) + state.eps)
    return params, replace(state, m1=m1, m2=m2, step=t)


@dataclass(frozen=True)
class TrainConfig:
    """Rectifier training settings.

    With ``param_scaling`` on, ``lr`` is the Adam step for parameters in
    size-normalized units (see :func:`step_scale`).
    """

    epochs: int = 500
    lr: float = 1e-2
    kernel: KernelSpec = field(default_factory=KernelSpec)
    layer_count: int = 2
    seed: int = 0
    init: str = "exact_identity"
    grad_reduction: str = MEAN
    param_scaling: bool = True


@dataclass(frozen=True)
class RectifierModel:
    layers: tuple[PTLayer, ...]

    def __post_init__(self):
        if any(layer.m_count != 1 for layer in self.layers):
            raise ValueError("every rectifier layer must hold exactly one TM")

    def composite(self) -> Homography:
        """Map from a final-output pixel to its sampling point in the model input.

        Under gather warping the first layer's TM is applied last:
        ``p -> t1(t2(...tk(p)))``.
        """
        h = Homography.identity()
        for layer in self.layers:
            h = h @ layer.tms[0]
        return h

    def __call__(self, images) -> np.ndarray:
        out = as_image(images)
        for layer in self.layers:
            out, _ = forward(layer, out)
        return out


@dataclass(frozen=True)
class TrainReport:
    losses: tuple[float, ...]
    composite: Homography
    corner_error: float      # NaN when no ground-truth distortion was given


def corner_error(composite: Homography, distortion: Homography, width: int, height: int) -> float:
    """Largest displacement of an image corner under ``distortion`` after ``composite``.

    ``composite`` is the learned output-to-input sampling map and
    ``distortion`` the one used to create the distorted image, so a perfect
    rectification makes their product the identity.
    """
    worst = 0.0
    for c in image_corners(width, height):
        try:
            p = distortion.apply(composite.apply(c))
        except HorizonError:
            return float("inf")
        worst = max(worst, float(np.hypot(p[0] - c[0], p[1] - c[1])))
    return worst


def step_scale(height: int, width: int) -> np.ndarray:
    """Per-parameter Adam step multipliers for a ``height`` x ``width`` image.

    Equivalent to running Adam on parameters expressed in coordinates
    divided by the image size: translations step ``size`` times faster
    than the linear block and the projective pair ``size`` times slower.
    """
    size = float(max(height, width))
    return np.array([1.0, 1.0, size, 1.0, 1.0, size, 1.0 / size, 1.0 / size])


def _stack(pairs):
    if not pairs:
        raise ValueError("empty dataset")
    distorted = [as_image(d) for d, _ in pairs]
    original = [as_image(o) for _, o in pairs]
    shape = distorted[0].shape[1:]
    for a, b in zip(distorted, original):
        if a.shape[1:] != shape or b.shape[1:] != shape:
            raise ValueError("all pairs must share one image shape")
    return np.concatenate(distorted), np.concatenate(original)


def _run(layers, x, target, config: TrainConfig):
    """Full-batch Adam over all TM parameters of a chain of layers."""
    if config.epochs < 1:
        raise ValueError("epochs must be >= 1")
    params = np.concatenate([layer.params.ravel() for layer in layers])
    lr = config.lr
    if config.param_scaling:
        lr = lr * np.tile(step_scale(x.shape[1], x.shape[2]), params.size // 8)
    state = AdamState.fresh(params.shape, lr=lr)
    sizes = [layer.m_count * 8 for layer in layers]
    losses = []
    for _ in range(config.epochs):
        caches = []
        out = x
        for layer in layers:
            out, cache = forward(layer, out)
            caches.append(cache)
        loss, grad = mse(out, target)
        losses.append(loss)
        grads = []
        for layer, cache in zip(reversed(layers), reversed(caches)):
            res = backward(layer, cache, grad)
            grad = res.d_input
            grads.append(res.d_tms.ravel())
        params, state = adam_step(state, params, np.concatenate(grads[::-1]))
        split = np.split(params, np.cumsum(sizes)[:-1])
        layers = [layer.with_params(p) for layer, p in zip(layers, split)]
    return layers, losses


def train_rectifier(pairs, config: TrainConfig = TrainConfig(), true_distortion: Homography | None = None):
    """Train a stack of single-TM layers mapping distorted images to originals.

    ``pairs`` is a list of ``(distorted, original)`` images. The loss trace
    records the MSE before each update, so ``losses[0]`` is the initial MSE.
    """
    x, target = _stack(pairs)
    if config.layer_count < 1:
        raise ValueError("layer_count must be >= 1")
    layers = [new_layer(1, config.kernel, config.init, seed=config.seed + i,
                        grad_reduction=config.grad_reduction)
              for i in range(config.layer_count)]
    layers, losses = _run(layers, x, target, config)
    model = RectifierModel(tuple(layers))
    comp = model.composite()
    err = float("nan")
    if true_distortion is not None:
        err = corner_error(comp, true_distortion, x.shape[2], x.shape[1])
    return model, TrainReport(tuple(losses), comp, err)


def train_multiview(pairs, m_count: int, config: TrainConfig = TrainConfig()):
    """Train one ``m_count``-TM layer; every output block is fit to the original.

    Returns the trained layer and its loss trace.
    """
    x, target = _stack(pairs)
    layer = new_layer(m_count, config.kernel, config.init, seed=config.seed,
                      grad_reduction=config.grad_reduction)
    (layer,), losses = _run([layer], x, np.tile(target, (1, 1, 1, m_count)), config)
    return layer, tuple(losses)
