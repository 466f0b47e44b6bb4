"""Finite-difference validation of the layer's analytic gradients.

The checker perturbs every TM parameter and every input element by
``+-step`` and compares central differences (Richardson-extrapolated from
``step`` and ``step / 2`` for the TM parameters) of
``L = mse(forward(layer, input), target)`` with :func:`~ptlayer.layer.backward`.
It can also be pointed at deliberately broken backward implementations
(:data:`MUTANTS`) to show that it catches them.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .homography import Homography
from .image import as_image, mse
from .kernels import BICUBIC, BILINEAR, KernelSpec
from .layer import (MEAN, SUM, BackwardResult, PTLayer, backward, chain_to_params,
                    contributing_positions, coordinate_grads, forward,
                    sampling_grid)

PARAM_NAMES = ("h11", "h12", "h13", "h21", "h22", "h23", "h31", "h32")
TOLERANCE = {BILINEAR: 1e-5, BICUBIC: 1e-4}
BREAKPOINT_MARGIN = 1e-3
OMEGA_MARGIN = 1e-3
REL_FLOOR = 1e-8


class GradCheckConfigError(ValueError):
    """The configuration samples too close to a kernel breakpoint or the horizon."""


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error_input: float
    max_rel_error_tms: float
    worst_parameter: str
    configurations_tested: int = 1

    @property
    def max_rel_error(self) -> float:
        return max(self.max_rel_error_input, self.max_rel_error_tms)

    def merge(self, other: "GradCheckReport") -> "GradCheckReport":
        worst = self.worst_parameter if self.max_rel_error >= other.max_rel_error else other.worst_parameter
        return GradCheckReport(max(self.max_rel_error_input, other.max_rel_error_input),
                               max(self.max_rel_error_tms, other.max_rel_error_tms),
                               worst, self.configurations_tested + other.configurations_tested)


def rel_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / denom


def check_sampling(layer: PTLayer, height: int, width: int) -> None:
    """Reject layers whose sampling points sit within the breakpoint margin."""
    for m, h in enumerate(layer.tms):
        xs, ys, omega, valid = sampling_grid(h, height, width, layer.kernel.radius)
        if np.any(np.abs(omega) < OMEGA_MARGIN):
            raise GradCheckConfigError(f"TM {m}: |w| < {OMEGA_MARGIN} at some output pixel")
        # every breakpoint of either kernel is an integer offset, so the
        # sampling coordinate itself must stay off the integer grid
        raw = sampling_grid(h, height, width, radius=10**9)
        for name, coord in (("x", raw[0]), ("y", raw[1])):
            dist = np.abs(coord - np.round(coord))
            if np.any(dist < BREAKPOINT_MARGIN):
                y, x = np.unravel_index(np.argmin(dist), dist.shape)
                raise GradCheckConfigError(
                    f"TM {m}: output pixel ({x}, {y}) samples {name}={coord[y, x]:.6f}, "
                    f"within {BREAKPOINT_MARGIN} of a kernel breakpoint")


def _loss_delta(plus, minus, target, count) -> np.ndarray:
    """``L(plus) - L(minus)`` per leading index, without subtracting two losses."""
    d = (plus - minus) * (plus + minus - 2.0 * target)
    return d.reshape(d.shape[0], -1).sum(axis=1) / count


def finite_diff_check(layer: PTLayer, image, target, step: float = 1e-5,
                      backward_fn=backward) -> GradCheckReport:
    """Compare ``backward_fn`` against central differences of the MSE loss."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = as_image(image)
    n, height, width, ch = x.shape
    check_sampling(layer, height, width)
    out, cache = forward(layer, x)
    target = np.asarray(target, dtype=np.float64)
    _, grad = mse(out, target)
    res: BackwardResult = backward_fn(layer, cache, grad)
    count = out.size

    # TM parameters: every perturbed TM becomes one block of a single wide
    # layer; block outputs equal the corresponding single-TM warps exactly
    base = layer.params
    offsets = (step, -step, step / 2, -step / 2)
    perturbed = []
    for m in range(layer.m_count):
        for k in range(8):
            for h in offsets:
                p = base[m].copy()
                p[k] += h
                perturbed.append(p)
    wide = PTLayer(tuple(Homography.from_params(p) for p in perturbed), layer.kernel)
    blocks = forward(wide, x)[0].reshape(n, height, width, len(perturbed), ch)
    blocks = np.moveaxis(blocks, 3, 0).reshape(layer.m_count, 8, len(offsets), n, height, width, ch)
    tgt = np.moveaxis(target.reshape(n, height, width, layer.m_count, ch), 3, 0)
    fd_tms = np.zeros_like(base)
    for m in range(layer.m_count):
        for k in range(8):
            b = blocks[m, k]
            full = _loss_delta(b[0][None], b[1][None], tgt[m][None], count)[0] / (2 * step)
            half = _loss_delta(b[2][None], b[3][None], tgt[m][None], count)[0] / step
            # Richardson extrapolation cancels the step**2 truncation term,
            # which is large for the projective pair in pixel units
            fd_tms[m, k] = (4.0 * half - full) / 3.0
    if layer.grad_reduction == MEAN:
        fd_tms /= contributing_positions(cache)
    err_tms = rel_error(res.d_tms, fd_tms)

    # input elements: one batch entry per perturbed element and sign
    idx = np.array(np.unravel_index(np.arange(x.size), x.shape)).T
    fd_in = np.zeros(x.size)
    for b in range(n):
        rows = np.flatnonzero(idx[:, 0] == b)
        batch = np.repeat(x[b:b + 1], len(rows), axis=0)
        local = np.arange(len(rows))
        plus = batch.copy()
        minus = batch.copy()
        plus[local, idx[rows, 1], idx[rows, 2], idx[rows, 3]] += step
        minus[local, idx[rows, 1], idx[rows, 2], idx[rows, 3]] -= step
        op = forward(layer, plus)[0]
        om = forward(layer, minus)[0]
        fd_in[rows] = _loss_delta(op, om, target[b:b + 1], count) / (2 * step)
    err_in = rel_error(res.d_input.ravel(), fd_in)

    if err_tms.max() >= err_in.max():
        m, k = np.unravel_index(np.argmax(err_tms), err_tms.shape)
        worst = f"tm{m}.{PARAM_NAMES[k]}"
    else:
        worst = "input[{},{},{},{}]".format(*np.unravel_index(np.argmax(err_in), x.shape))
    return GradCheckReport(float(err_in.max()), float(err_tms.max()), worst)


# -- seeded bugs --------------------------------------------------------------

def backward_dropped_quotient(layer, cache, d_output) -> BackwardResult:
    """Backward pass that forgets the perspective-divide term of h31 and h32."""
    d_input, gx, gy = coordinate_grads(layer, cache, d_output)
    d_tms = chain_to_params(cache, gx, gy)
    d_tms[:, 6:] = 0.0
    if layer.grad_reduction == MEAN:
        d_tms /= contributing_positions(cache)
    return BackwardResult(d_input, d_tms)


def backward_swapped_axes(layer, cache, d_output) -> BackwardResult:
    """Backward pass evaluating the kernel at (x'' - y, y'' - x)."""
    d_input, gx, gy = coordinate_grads(layer, cache, d_output, swap_axes=True)
    d_tms = chain_to_params(cache, gx, gy)
    if layer.grad_reduction == MEAN:
        d_tms /= contributing_positions(cache)
    return BackwardResult(d_input, d_tms)


def backward_reduction_mismatch(layer, cache, d_output) -> BackwardResult:
    """Backward pass that applies the opposite per-position reduction."""
    d_input, gx, gy = coordinate_grads(layer, cache, d_output)
    d_tms = chain_to_params(cache, gx, gy)
    if layer.grad_reduction == SUM:
        d_tms /= contributing_positions(cache)
    return BackwardResult(d_input, d_tms)


MUTANTS = {
    "dropped_quotient": backward_dropped_quotient,
    "swapped_axes": backward_swapped_axes,
    "reduction_mismatch": backward_reduction_mismatch,
}


# -- randomized suite ---------------------------------------------------------

def smooth_image(rng: np.random.Generator, n: int, height: int, width: int, ch: int) -> np.ndarray:
    """Random sum of low-frequency sinusoids, rescaled into [0, 1]."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    out = np.empty((n, height, width, ch))
    for b in range(n):
        for c in range(ch):
            acc = np.zeros((height, width))
            for _ in range(3):
                fx, fy = rng.uniform(-0.8, 0.8, size=2)
                acc += rng.uniform(0.2, 1.0) * np.sin(fx * xx + fy * yy + rng.uniform(0, 2 * np.pi))
            acc -= acc.min()
            out[b, :, :, c] = acc / max(acc.max(), 1e-12)
    return out


def random_layer(rng: np.random.Generator, m_count: int, kernel: KernelSpec,
                 grad_reduction: str = MEAN) -> PTLayer:
    """Mildly perturbed identity TMs with non-integer translations."""
    tms = []
    for _ in range(m_count):
        p = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        p[[0, 1, 3, 4]] += rng.uniform(-0.1, 0.1, size=4)
        p[[2, 5]] += rng.uniform(-1.5, 1.5, size=2)
        p[6:] += rng.uniform(-0.01, 0.01, size=2)
        tms.append(Homography.from_params(p))
    return PTLayer(tuple(tms), kernel, grad_reduction)


def random_configuration(rng: np.random.Generator, kernel: KernelSpec, size: int = 8,
                         grad_reduction: str = MEAN, max_tries: int = 1000):
    """Draw ``(layer, input, target)`` that satisfies the breakpoint margin."""
    n = int(rng.integers(1, 3))
    ch = int(rng.integers(1, 4))
    m_count = int(rng.integers(1, 3))
    x = smooth_image(rng, n, size, size, ch)
    target = smooth_image(rng, n, size, size, ch * m_count)
    for _ in range(max_tries):
        layer = random_layer(rng, m_count, kernel, grad_reduction)
        try:
            check_sampling(layer, size, size)
        except GradCheckConfigError:
            continue
        return layer, x, target
    raise GradCheckConfigError("could not draw a configuration clear of kernel breakpoints")


def run_suite(seed: int, configs: int, kernels=(KernelSpec(BILINEAR), KernelSpec(BICUBIC)),
              step: float = 1e-5, backward_fn=backward) -> dict[str, GradCheckReport]:
    """Check ``configs`` random configurations per kernel. Deterministic in ``seed``."""
    if configs < 1:
        raise ValueError("configs must be >= 1")
    reports = {}
    for kernel in kernels:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(kernel.radius,)))
        report = None
        for i in range(configs):
            # alternate reductions so both code paths are exercised
            layer, x, target = random_configuration(rng, kernel, grad_reduction=(MEAN, SUM)[i % 2])
            r = finite_diff_check(layer, x, target, step, backward_fn)
            report = r if report is None else report.merge(r)
        reports[kernel.kind] = report
    return reports


def passes(reports: dict[str, GradCheckReport]) -> bool:
    return all(r.max_rel_error < TOLERANCE[kind] for kind, r in reports.items())


def format_table(reports: dict[str, GradCheckReport]) -> str:
    rows = [("kernel", "configs", "max_rel_input", "max_rel_tms", "worst", "tolerance", "status")]
    for kind, r in reports.items():
        tol = TOLERANCE[kind]
        rows.append((kind, str(r.configurations_tested), f"{r.max_rel_error_input:.3e}",
                     f"{r.max_rel_error_tms:.3e}", r.worst_parameter, f"{tol:.0e}",
                     "PASS" if r.max_rel_error < tol else "FAIL"))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    return "".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() + "\n" for row in rows)


def format_csv(reports: dict[str, GradCheckReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kernel", "configurations_tested", "max_rel_error_input", "max_rel_error_tms",
                "worst_parameter", "tolerance", "passed"])
    for kind, r in reports.items():
        w.writerow([kind, r.configurations_tested, repr(r.max_rel_error_input), repr(r.max_rel_error_tms),
                    r.worst_parameter, TOLERANCE[kind], int(r.max_rel_error < TOLERANCE[kind])])
    return buf.getvalue()
