import math

import numpy as np
import pytest


def smooth_image(height=32, width=32, phase=0.0, channels=1):
    """Windowed low-frequency texture that fades to zero at the border."""
    yy, xx = np.mgrid[0:height, 0:width].astype(float)
    win = np.sin(np.pi * xx / (width - 1)) ** 2 * np.sin(np.pi * yy / (height - 1)) ** 2
    planes = []
    for c in range(channels):
        tex = (0.5 + 0.25 * np.sin(xx / 3.1 + 0.4 + phase + c) * np.cos(yy / 2.7)
               + 0.2 * np.sin((xx + 2 * yy) / 4.3 + 0.7 * c))
        planes.append(win * tex)
    return np.stack(planes, axis=-1)[None]


def ref_k1(kind, alpha, u):
    # scalar transcription of the kernel, same operation order as the library
    a = abs(u)
    if kind == "bilinear":
        return 1.0 - a if a < 1.0 else 0.0
    a2 = a * a
    a3 = a2 * a
    if a <= 1.0:
        return (alpha + 2.0) * a3 - (alpha + 3.0) * a2 + 1.0
    if a < 2.0:
        return alpha * a3 - 5.0 * alpha * a2 + 8.0 * alpha * a - 4.0 * alpha
    return 0.0


def reference_warp(image, mats, kind="bilinear", alpha=-0.5):
    """Naive loop implementation of the multi-TM gather warp."""
    n, height, width, ch = image.shape
    offsets = (0, 1) if kind == "bilinear" else (-1, 0, 1, 2)
    out = np.zeros((n, height, width, ch * len(mats)))
    for m, mat in enumerate(mats):
        for b in range(n):
            for yo in range(height):
                for xo in range(width):
                    w = mat[2, 0] * xo + mat[2, 1] * yo + 1.0
                    if abs(w) < 1e-8:
                        continue
                    xs = (mat[0, 0] * xo + mat[0, 1] * yo + mat[0, 2]) / w
                    ys = (mat[1, 0] * xo + mat[1, 1] * yo + mat[1, 2]) / w
                    if not (abs(xs) < 1e6 and abs(ys) < 1e6):
                        continue
                    x0, y0 = math.floor(xs), math.floor(ys)
                    for c in range(ch):
                        acc = 0.0
                        for oy in offsets:
                            ty = y0 + oy
                            for ox in offsets:
                                tx = x0 + ox
                                if 0 <= tx < width and 0 <= ty < height:
                                    wt = ref_k1(kind, alpha, xs - tx) * ref_k1(kind, alpha, ys - ty)
                                    acc += image[b, ty, tx, c] * wt
                        out[b, yo, xo, m * ch + c] = acc
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rectification_instance(seed=0, rho=0.1, kernel=None):
    """Smooth 32x32 image, a seeded rho-strength homography and the distorted image."""
    from ptlayer.distort import DistortConfig, image_stream, random_homography
    from ptlayer.layer import warp

    image = smooth_image(32, 32)
    h = random_homography(DistortConfig(rho=rho), 32, 32, image_stream(seed, 0))
    return warp(image, h, kernel), image, h


AFFINE_DISTORTION = (0.97, -0.05, 1.3, 0.04, 1.02, -0.8, 0.0, 0.0)
