"""Random perspective distortions and corpus preparation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .homography import DegenerateHomographyError, Homography, image_corners
from .image import as_image
from .kernels import KernelSpec
from .layer import warp

MAX_REJECTIONS = 100
MANIFEST_HEADER = ["index", "transformed"] + [f"h{r}{c}" for r in (1, 2, 3) for c in (1, 2, 3)][:8]


class DistortConfigError(ValueError):
    """The distortion strength cannot be satisfied."""


@dataclass(frozen=True)
class DistortConfig:
    rho: float = 0.15
    keep_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.rho < 0.5:
            raise ValueError("rho must lie in [0, 0.5)")
        if not 0 <= self.keep_fraction <= 1:
            raise ValueError("keep_fraction must lie in [0, 1]")


def image_stream(seed: int, index: int) -> np.random.Generator:
    """Independent random stream for image ``index``; serial and parallel runs agree."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, index)))


def is_well_behaved(h: Homography, width: int, height: int) -> bool:
    """True when ``w`` stays positive (above the guard) over the whole image rectangle."""
    m = h.m
    # w is affine in (x, y): its extremes over the rectangle are at the corners
    for x, y in image_corners(width, height):
        if m[2, 0] * x + m[2, 1] * y + 1.0 < 1e-8:
            return False
    return True


def random_homography(cfg: DistortConfig, width: int, height: int, rng: np.random.Generator) -> Homography:
    """Perturb each image corner uniformly within ``rho * min(H, W)`` and fit a homography.

    The result maps original corners to displaced corners.
    """
    if width < 2 or height < 2:
        raise ValueError("image must be at least 2x2")
    if cfg.rho == 0:
        return Homography.identity()
    corners = image_corners(width, height)
    reach = cfg.rho * min(width, height)
    for _ in range(MAX_REJECTIONS):
        moved = corners + rng.uniform(-reach, reach, size=corners.shape)
        try:
            h = Homography.from_point_pairs(corners, moved)
        except DegenerateHomographyError:
            continue
        if is_well_behaved(h, width, height):
            return h
    raise DistortConfigError(f"no valid homography after {MAX_REJECTIONS} draws; rho={cfg.rho} too large")


def unmodified_count(n: int, keep_fraction: float) -> int:
    # tolerance absorbs products like 0.1 * 30 = 3.0000000000000004
    return min(n, math.ceil(keep_fraction * n - 1e-9))


@dataclass(frozen=True)
class ManifestEntry:
    index: int
    transformed: bool
    homography: Homography


def distort_corpus(images, cfg: DistortConfig, kernel: KernelSpec | None = None):
    """Warp a seeded random subset of ``images``; the rest are returned unchanged.

    Returns ``(outputs, manifest)``. Each transformed output satisfies
    ``out(p) = original(h(p))`` with ``h`` recorded in the manifest.
    """
    images = [as_image(im) for im in images]
    if not images:
        raise ValueError("no images to distort")
    n = len(images)
    order = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,))).permutation(n)
    keep = set(order[:unmodified_count(n, cfg.keep_fraction)].tolist())
    outputs, manifest = [], []
    for i, im in enumerate(images):
        if i in keep:
            outputs.append(im.copy())
            manifest.append(ManifestEntry(i, False, Homography.identity()))
            continue
        h = random_homography(cfg, im.shape[2], im.shape[1], image_stream(cfg.seed, i))
        outputs.append(warp(im, h, kernel))
        manifest.append(ManifestEntry(i, True, h))
    return outputs, manifest


def format_manifest(manifest, extra_columns=None) -> str:
    """Manifest CSV: index, transformed, eight parameters, then any extra columns.

    ``extra_columns`` maps column name to a per-entry list of strings.
    """
    extra_columns = extra_columns or {}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER + list(extra_columns))
    for k, e in enumerate(manifest):
        row = [e.index, int(e.transformed)] + [f"{v:.17g}" for v in e.homography.params()]
        writer.writerow(row + [col[k] for col in extra_columns.values()])
    return buf.getvalue()


def parse_manifest(text: str):
    """Inverse of :func:`format_manifest`; returns ``(entries, extra_rows)``."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("empty manifest") from None
    if header[:10] != MANIFEST_HEADER:
        raise ValueError("manifest header does not match")
    extra_names = header[10:]
    entries, extras = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"manifest line {lineno}: expected {len(header)} fields")
        try:
            entries.append(ManifestEntry(int(row[0]), row[1] == "1",
                                         Homography.from_params([float(v) for v in row[2:10]])))
        except ValueError as exc:
            raise ValueError(f"manifest line {lineno}: {exc}") from None
        extras.append(dict(zip(extra_names, row[10:])))
    return entries, extras
