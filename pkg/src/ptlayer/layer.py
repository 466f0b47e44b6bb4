"""Perspective-transformation layer: multi-TM warp and its analytic backward pass.

Conventions
-----------
* Gather warping: transformation ``m`` maps each integer output position
  ``(x_o, y_o)`` to the input sampling position ``(x'', y'')``.
* Pixel centres sit on integer coordinates; ``x`` indexes columns.
* Taps outside the input read as zero. Output pixels whose homogeneous
  scale ``w`` falls below :data:`~ptlayer.homography.OMEGA_EPS` are zero and
  receive no gradient.
* Output channel ``m * Ch + ch`` holds input channel ``ch`` warped by TM ``m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .homography import OMEGA_EPS, Homography
from .image import as_image
from .kernels import KernelSpec, k1, k1_prime

MEAN = "mean"
SUM = "sum"

# six affine parameters, then the two projective ones
JITTER_SCALE = np.array([1e-2] * 6 + [1e-3] * 2)


@dataclass(frozen=True)
class PTLayer:
    tms: tuple[Homography, ...]
    kernel: KernelSpec = field(default_factory=KernelSpec)
    grad_reduction: str = MEAN

    def __post_init__(self):
        object.__setattr__(self, "tms", tuple(self.tms))
        if len(self.tms) < 1:
            raise ValueError("a layer needs at least one transformation matrix")
        if self.grad_reduction not in (MEAN, SUM):
            raise ValueError(f"grad_reduction must be 'mean' or 'sum', got {self.grad_reduction!r}")

    @property
    def m_count(self) -> int:
        return len(self.tms)

    @property
    def params(self) -> np.ndarray:
        """``(M, 8)`` array of free parameters."""
        return np.stack([h.params() for h in self.tms])

    def with_params(self, params) -> "PTLayer":
        params = np.asarray(params, dtype=np.float64).reshape(self.m_count, 8)
        return PTLayer(tuple(Homography.from_params(p) for p in params),
                       self.kernel, self.grad_reduction)


def new_layer(m_count: int, kernel: KernelSpec | None = None, init: str = "exact_identity",
              seed: int | None = None, grad_reduction: str = MEAN) -> PTLayer:
    """Create a layer of ``m_count`` TMs.

    ``init`` is ``"exact_identity"`` or ``"identity_jitter"``; the latter adds
    seeded uniform noise of +-1e-2 to the affine parameters and +-1e-3 to the
    projective ones, drawn TM-major in row-major parameter order.
    """
    if m_count < 1:
        raise ValueError("m_count must be >= 1")
    kernel = kernel or KernelSpec()
    if init == "exact_identity":
        return PTLayer((Homography.identity(),) * m_count, kernel, grad_reduction)
    if init != "identity_jitter":
        raise ValueError(f"unknown init {init!r}")
    rng = np.random.default_rng(seed)
    params = Homography.identity().params() + rng.uniform(-1.0, 1.0, size=(m_count, 8)) * JITTER_SCALE
    return PTLayer(tuple(Homography.from_params(p) for p in params), kernel, grad_reduction)


@dataclass(frozen=True)
class ForwardCache:
    input: np.ndarray
    params: np.ndarray
    kernel: KernelSpec
    xs: np.ndarray        # (M, H, W) sampling x''
    ys: np.ndarray
    omega: np.ndarray
    valid: np.ndarray     # False where w is guarded or every tap is outside


@dataclass(frozen=True)
class BackwardResult:
    d_input: np.ndarray
    d_tms: np.ndarray     # (M, 8)


def sampling_grids(mats, height: int, width: int, radius: int = 1):
    """Sampling coordinates of every output pixel for a stack of ``(M, 3, 3)`` matrices.

    Returns ``(xs, ys, omega, valid)``, each ``(M, H, W)``. Invalid pixels
    have their coordinates replaced by 0 so index arithmetic stays bounded.
    """
    mats = np.asarray(mats, dtype=np.float64).reshape(-1, 3, 3)
    yo, xo = np.mgrid[0:height, 0:width].astype(np.float64)
    m = mats[:, :, :, None, None]
    omega = m[:, 2, 0] * xo + m[:, 2, 1] * yo + 1.0
    valid = np.abs(omega) >= OMEGA_EPS
    w = np.where(valid, omega, 1.0)
    xs = (m[:, 0, 0] * xo + m[:, 0, 1] * yo + m[:, 0, 2]) / w
    ys = (m[:, 1, 0] * xo + m[:, 1, 1] * yo + m[:, 1, 2]) / w
    valid &= (xs > -radius) & (xs < width - 1 + radius)
    valid &= (ys > -radius) & (ys < height - 1 + radius)
    xs = np.where(valid, xs, 0.0)
    ys = np.where(valid, ys, 0.0)
    return xs, ys, omega, valid


def sampling_grid(h: Homography, height: int, width: int, radius: int = 1):
    """Single-homography form of :func:`sampling_grids`; arrays are ``(H, W)``."""
    return tuple(a[0] for a in sampling_grids(h.m, height, width, radius))


def _taps(kernel, xs, ys, valid, height, width):
    """Yield ``(ty, tx, du, dv, inside)`` per tap, rows outer, columns inner.

    ``ty``/``tx`` are clipped to valid indices; ``inside`` masks real taps.
    """
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    for oy in kernel.offsets:
        ty = y0 + oy
        in_y = (ty >= 0) & (ty < height)
        for ox in kernel.offsets:
            tx = x0 + ox
            inside = valid & in_y & (tx >= 0) & (tx < width)
            yield (np.clip(ty, 0, height - 1), np.clip(tx, 0, width - 1),
                   xs - tx, ys - ty, inside)


def _blocks(a, m_count):
    """``(N, H, W, M*Ch)`` -> ``(N, M, H, W, Ch)``."""
    n, height, width, mc = a.shape
    return a.reshape(n, height, width, m_count, mc // m_count).transpose(0, 3, 1, 2, 4)


def forward(layer: PTLayer, image) -> tuple[np.ndarray, ForwardCache]:
    """Warp ``image`` ``(N, H, W, Ch)`` by every TM; output is ``(N, H, W, Ch*M)``."""
    x = as_image(image, name="input")
    n, height, width, ch = x.shape
    kernel = layer.kernel
    params = layer.params
    mats = np.stack([h.m for h in layer.tms])
    xs, ys, omega, valid = sampling_grids(mats, height, width, kernel.radius)
    acc = np.zeros((n, layer.m_count, height, width, ch))
    for ty, tx, du, dv, inside in _taps(kernel, xs, ys, valid, height, width):
        w = k1(kernel, du) * k1(kernel, dv)
        acc += np.where(inside[None, ..., None], x[:, ty, tx, :] * w[None, ..., None], 0.0)
    out = acc.transpose(0, 2, 3, 1, 4).reshape(n, height, width, layer.m_count * ch)
    return out, ForwardCache(x, params, kernel, xs, ys, omega, valid)


def _check(layer: PTLayer, cache: ForwardCache, d_output) -> np.ndarray:
    d_output = np.asarray(d_output, dtype=np.float64)
    n, height, width, ch = cache.input.shape
    if d_output.shape != (n, height, width, ch * layer.m_count):
        raise ValueError(f"d_output shape {d_output.shape} does not match the forward output "
                         f"{(n, height, width, ch * layer.m_count)}")
    if (cache.params.shape != (layer.m_count, 8) or not np.array_equal(cache.params, layer.params)
            or cache.kernel != layer.kernel):
        raise ValueError("cache was produced by a different layer configuration")
    return d_output


def coordinate_grads(layer: PTLayer, cache: ForwardCache, d_output, *, swap_axes=False):
    """Gradients with respect to the input and to every sampling coordinate.

    Returns ``(d_input, gx, gy)`` where ``gx`` and ``gy`` are ``(N, M, H, W)``
    arrays of dL/dx'' and dL/dy'' summed over channels. ``swap_axes`` only
    lets the gradient checker reproduce an index-swap bug.
    """
    d_output = _check(layer, cache, d_output)
    x = cache.input
    n, height, width, ch = x.shape
    kernel = layer.kernel
    xs, ys = cache.xs, cache.ys
    g = _blocks(d_output, layer.m_count)
    d_input = np.zeros(x.size)
    n_idx = np.arange(n)[:, None, None, None, None]
    c_idx = np.arange(ch)
    gx = np.zeros(g.shape[:4])
    gy = np.zeros(g.shape[:4])
    for ty, tx, du, dv, inside in _taps(kernel, xs, ys, cache.valid, height, width):
        if swap_axes:
            du, dv = xs - ty, ys - tx
        kx, ky = k1(kernel, du), k1(kernel, dv)
        dkx, dky = k1_prime(kernel, du), k1_prime(kernel, dv)
        mask = inside[None, ..., None]
        vals = np.where(mask, x[:, ty, tx, :], 0.0)
        gx += np.sum(g * vals * (dkx * ky)[None, ..., None], axis=4)
        gy += np.sum(g * vals * (kx * dky)[None, ..., None], axis=4)
        contrib = np.where(mask, g * (kx * ky)[None, ..., None], 0.0)
        flat = ((n_idx * height + ty[None, ..., None]) * width + tx[None, ..., None]) * ch + c_idx
        d_input += np.bincount(flat.ravel(), weights=contrib.ravel(), minlength=x.size)
    return d_input.reshape(x.shape), gx, gy


def chain_to_params(cache: ForwardCache, gx, gy) -> np.ndarray:
    """Sum per-pixel coordinate gradients ``(N, M, H, W)`` into ``(M, 8)``.

    Applies the quotient rule through the perspective divide.
    """
    height, width = cache.input.shape[1:3]
    yo, xo = np.mgrid[0:height, 0:width].astype(np.float64)
    valid = cache.valid
    w = np.where(valid, cache.omega, 1.0)
    ax = np.where(valid, gx.sum(axis=0), 0.0) / w
    ay = np.where(valid, gy.sum(axis=0), 0.0) / w
    persp = -(ax * cache.xs + ay * cache.ys)
    terms = [ax * xo, ax * yo, ax, ay * xo, ay * yo, ay, persp * xo, persp * yo]
    return np.stack([t.sum(axis=(1, 2)) for t in terms], axis=1)


def contributing_positions(cache: ForwardCache) -> int:
    """Number of per-position derivatives averaged into each TM gradient."""
    return int(np.prod(cache.input.shape))


def backward(layer: PTLayer, cache: ForwardCache, d_output) -> BackwardResult:
    """Backpropagate ``d_output`` to the layer input and TM parameters."""
    d_input, gx, gy = coordinate_grads(layer, cache, d_output)
    d_tms = chain_to_params(cache, gx, gy)
    if layer.grad_reduction == MEAN:
        d_tms = d_tms / contributing_positions(cache)
    return BackwardResult(d_input, d_tms)


def warp(image, h: Homography, kernel: KernelSpec | None = None) -> np.ndarray:
    """Warp ``image`` by a single homography (gather convention)."""
    out, _ = forward(PTLayer((h,), kernel or KernelSpec()), image)
    return out
