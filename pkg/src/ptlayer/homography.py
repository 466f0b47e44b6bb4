"""Normalized 3x3 homographies (bottom-right entry pinned to 1)."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DET_EPS = 1e-12
OMEGA_EPS = 1e-8


class DegenerateHomographyError(ValueError):
    """Singular matrix, degenerate camera or degenerate correspondence."""


class HorizonError(ValueError):
    """The point maps onto (or too close to) the line at infinity."""


@dataclass(frozen=True)
class CameraIntrinsics:
    f: float = 1.0
    s_x: float = 1.0
    s_y: float = 1.0
    sh: float = 0.0
    tr_x: float = 0.0
    tr_y: float = 0.0

    def __post_init__(self):
        if self.s_x * self.f == 0 or self.s_y * self.f == 0:
            raise ValueError("s_x*f and s_y*f must be nonzero")

    def matrix(self) -> np.ndarray:
        """The 3x4 internal camera matrix."""
        return np.array([
            [self.s_x * self.f, self.sh, self.tr_x, 0.0],
            [0.0, self.s_y * self.f, self.tr_y, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ])


@dataclass(frozen=True)
class CameraExtrinsics:
    r: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    tr: tuple = (0.0, 0.0, 0.0)

    def matrix(self) -> np.ndarray:
        """The 4x4 external camera matrix. Rotation is not checked for orthonormality."""
        ex = np.eye(4)
        ex[:3, :3] = np.asarray(self.r, dtype=np.float64)
        ex[:3, 3] = np.asarray(self.tr, dtype=np.float64)
        return ex


class Homography:
    """Projective map ``(x, y) -> (x'/w, y'/w)`` with ``m[2, 2] == 1``.

    The eight free parameters are the remaining entries in row-major order
    (see :meth:`params`).
    """

    __slots__ = ("_m",)

    def __init__(self, m):
        m = np.array(m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise DegenerateHomographyError("non-finite matrix entry")
        if abs(m[2, 2]) < DET_EPS:
            raise DegenerateHomographyError("bottom-right entry is zero; cannot normalize")
        m = m / m[2, 2]
        m[2, 2] = 1.0
        if abs(np.linalg.det(m)) <= DET_EPS:
            raise DegenerateHomographyError("matrix is singular")
        m.setflags(write=False)
        self._m = m

    @property
    def m(self) -> np.ndarray:
        return self._m

    # -- constructors -----------------------------------------------------

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def from_params(cls, p) -> "Homography":
        p = np.asarray(p, dtype=np.float64).ravel()
        if p.size != 8:
            raise ValueError(f"expected 8 parameters, got {p.size}")
        return cls(np.append(p, 1.0).reshape(3, 3))

    @classmethod
    def from_camera(cls, intrinsics: CameraIntrinsics, extrinsics: CameraExtrinsics) -> "Homography":
        """Homography induced by the camera on the world plane ``z = 0``."""
        c = intrinsics.matrix() @ extrinsics.matrix()
        h = c[:, [0, 1, 3]]
        if abs(h[2, 2]) < DET_EPS:
            raise DegenerateHomographyError(
                "degenerate camera: the z=0 plane passes through the camera centre")
        return cls(h)

    @classmethod
    def from_point_pairs(cls, src, dst) -> "Homography":
        """Four-point DLT with Hartley normalization.

        Returns ``h`` with ``h.apply(src[i]) == dst[i]``.
        """
        src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
        dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
        if src.shape != (4, 2) or dst.shape != (4, 2):
            raise ValueError("need exactly four source and four destination points")
        for pts, label in ((src, "source"), (dst, "destination")):
            if not np.all(np.isfinite(pts)):
                raise ValueError(f"{label} points must be finite")
            if _has_collinear_triple(pts):
                raise DegenerateHomographyError(f"three {label} points are collinear")
        t_src = _hartley(src)
        t_dst = _hartley(dst)
        s = _transform(t_src, src)
        d = _transform(t_dst, dst)
        a = np.zeros((8, 8))
        b = np.zeros(8)
        for i, ((x, y), (u, v)) in enumerate(zip(s, d)):
            a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]
            a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]
            b[2 * i] = u
            b[2 * i + 1] = v
        # LAPACK gesv: LU with partial pivoting
        try:
            sol = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            raise DegenerateHomographyError("rank-deficient correspondence system") from None
        hn = np.append(sol, 1.0).reshape(3, 3)
        return cls(np.linalg.inv(t_dst) @ hn @ t_src)

    # -- operations -------------------------------------------------------

    def params(self) -> np.ndarray:
        """The eight free parameters, row-major."""
        return self._m.ravel()[:8].copy()

    def apply(self, x, y=None):
        """Map a point. Accepts ``apply((x, y))`` or ``apply(x, y)``."""
        if y is None:
            x, y = x
        m = self._m
        w = m[2, 0] * x + m[2, 1] * y + 1.0
        if abs(w) < OMEGA_EPS:
            raise HorizonError(f"point ({x}, {y}) maps to the horizon (w={w:g})")
        xp = m[0, 0] * x + m[0, 1] * y + m[0, 2]
        yp = m[1, 0] * x + m[1, 1] * y + m[1, 2]
        return (xp / w, yp / w)

    def apply_points(self, pts) -> np.ndarray:
        """Vectorized :meth:`apply` over an ``(n, 2)`` array."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return np.array([self.apply(p) for p in pts]).reshape(-1, 2)

    def inverse(self) -> "Homography":
        if abs(np.linalg.det(self._m)) <= DET_EPS:
            raise DegenerateHomographyError("matrix is near-singular")
        return Homography(np.linalg.inv(self._m))

    def __matmul__(self, inner: "Homography") -> "Homography":
        return compose(self, inner)

    def __eq__(self, other):
        return isinstance(other, Homography) and np.array_equal(self._m, other._m)

    def __hash__(self):
        return hash(self._m.tobytes())

    def __repr__(self):
        return f"Homography({self._m.tolist()!r})"

    def allclose(self, other: "Homography", atol=1e-12) -> bool:
        return bool(np.allclose(self._m, other._m, rtol=0.0, atol=atol))


def identity() -> Homography:
    return Homography.identity()


def from_params(p) -> Homography:
    return Homography.from_params(p)


def from_camera(intrinsics: CameraIntrinsics, extrinsics: CameraExtrinsics) -> Homography:
    return Homography.from_camera(intrinsics, extrinsics)


def from_point_pairs(src, dst) -> Homography:
    return Homography.from_point_pairs(src, dst)


def apply(h: Homography, p):
    return h.apply(p)


def compose(outer: Homography, inner: Homography) -> Homography:
    """``compose(a, b).apply(p) == a.apply(b.apply(p))``."""
    prod = outer.m @ inner.m
    if abs(prod[2, 2]) < DET_EPS:
        raise DegenerateHomographyError("composition has a zero bottom-right entry")
    return Homography(prod)


def invert(h: Homography) -> Homography:
    return h.inverse()


def translation(dx: float, dy: float) -> Homography:
    return Homography([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]])


def image_corners(width: int, height: int) -> np.ndarray:
    """Pixel-centre corners of a ``width`` x ``height`` image, clockwise from the origin."""
    return np.array([[0.0, 0.0], [width - 1.0, 0.0],
                     [width - 1.0, height - 1.0], [0.0, height - 1.0]])


def _has_collinear_triple(pts, rel_tol=1e-9) -> bool:
    scale = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-300)
    for i, j, k in itertools.combinations(range(len(pts)), 3):
        d1 = pts[j] - pts[i]
        d2 = pts[k] - pts[i]
        if abs(d1[0] * d2[1] - d1[1] * d2[0]) <= rel_tol * scale * scale:
            return True
    return False


def _hartley(pts) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.mean(np.hypot(*(pts - c).T))
    s = np.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _transform(t, pts) -> np.ndarray:
    h = np.column_stack([pts, np.ones(len(pts))]) @ t.T
    return h[:, :2] / h[:, 2:]


# -- text format ------------------------------------------------------------

def format_homography(h: Homography) -> str:
    """Three lines of three numbers, 17 significant digits."""
    return "".join(" ".join(f"{v:.17g}" for v in row) + "\n" for row in h.m)


def parse_homography(text: str) -> Homography:
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
    if len(rows) != 3 or any(len(r) != 3 for r in rows):
        raise ValueError("homography file must hold 3 lines of 3 numbers")
    try:
        m = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise ValueError(f"bad number in homography file: {exc}") from None
    return Homography(m)


def read_homography(path) -> Homography:
    return parse_homography(Path(path).read_text())


def write_homography(h: Homography, path) -> None:
    from .image import atomic_write

    atomic_write(path, format_homography(h).encode())
