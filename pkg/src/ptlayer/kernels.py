"""Separable interpolation kernels and their derivatives.

Both kernels are evaluated elementwise on numpy arrays (or Python floats)
so the same code path serves the vectorized warp and the scalar reference
implementation used in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BILINEAR = "bilinear"
BICUBIC = "bicubic"


@dataclass(frozen=True)
class KernelSpec:
    """Interpolation kernel selector.

    ``alpha`` is the free parameter of the cubic convolution kernel and is
    ignored for bilinear sampling.
    """

    kind: str = BILINEAR
    alpha: float = -0.5

    def __post_init__(self):
        if self.kind not in (BILINEAR, BICUBIC):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")

    @property
    def radius(self) -> int:
        """Half-width of the support in pixels."""
        return 1 if self.kind == BILINEAR else 2

    @property
    def offsets(self) -> tuple[int, ...]:
        """Integer tap offsets relative to ``floor(u)``."""
        return (0, 1) if self.kind == BILINEAR else (-1, 0, 1, 2)

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """Parse ``bilinear``, ``bicubic`` or ``bicubic:<alpha>``."""
        kind, _, alpha = text.partition(":")
        kind = kind.strip().lower()
        if kind == BILINEAR:
            if alpha:
                raise ValueError("bilinear kernel takes no parameter")
            return cls(BILINEAR)
        if kind == BICUBIC:
            return cls(BICUBIC, float(alpha) if alpha else -0.5)
        raise ValueError(f"unknown kernel {text!r}")

    def __str__(self):
        if self.kind == BILINEAR:
            return BILINEAR
        return f"{BICUBIC}:{self.alpha!r}"


def k1(spec: KernelSpec, u):
    """One-dimensional kernel value at offset ``u``."""
    u = np.asarray(u, dtype=np.float64)
    a = np.abs(u)
    if spec.kind == BILINEAR:
        out = np.where(a < 1.0, 1.0 - a, 0.0)
    else:
        alpha = spec.alpha
        a2 = a * a
        a3 = a2 * a
        inner = (alpha + 2.0) * a3 - (alpha + 3.0) * a2 + 1.0
        outer = alpha * a3 - 5.0 * alpha * a2 + 8.0 * alpha * a - 4.0 * alpha
        out = np.where(a <= 1.0, inner, np.where(a < 2.0, outer, 0.0))
    return out[()] if out.ndim == 0 else out


def k1_prime(spec: KernelSpec, u):
    """Derivative of :func:`k1`; right-hand derivative at breakpoints."""
    u = np.asarray(u, dtype=np.float64)
    if spec.kind == BILINEAR:
        out = np.where((u >= -1.0) & (u < 0.0), 1.0,
                       np.where((u >= 0.0) & (u < 1.0), -1.0, 0.0))
    else:
        alpha = spec.alpha
        a = np.abs(u)
        sign = np.where(u < 0.0, -1.0, 1.0)
        inner = 3.0 * (alpha + 2.0) * a * a - 2.0 * (alpha + 3.0) * a
        outer = 3.0 * alpha * a * a - 10.0 * alpha * a + 8.0 * alpha
        # half-open intervals [-2,-1), [-1,1), [1,2) pick the right-hand branch
        g = np.where((u >= -1.0) & (u < 1.0), inner,
                     np.where((u >= -2.0) & (u < 2.0), outer, 0.0))
        out = sign * g
    return out[()] if out.ndim == 0 else out


def weight(spec: KernelSpec, du, dv):
    """Separable 2-D kernel weight ``k1(du) * k1(dv)``."""
    return k1(spec, du) * k1(spec, dv)
