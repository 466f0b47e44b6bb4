"""Image tensors, portable graymap/pixmap I/O and the MSE loss.

Images are plain ``float64`` numpy arrays laid out as ``(n, y, x, ch)``.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

_MAGIC = {b"P2": (1, False), b"P3": (3, False), b"P5": (1, True), b"P6": (3, True)}


class ImageFormatError(ValueError):
    """Raised for malformed or unsupported image files."""


def as_image(data, *, name="image") -> np.ndarray:
    """Validate and return ``data`` as a 4-D float64 ``(n, y, x, ch)`` array.

    Accepts 2-D ``(y, x)`` and 3-D ``(y, x, ch)`` arrays as a convenience
    and promotes them to a batch of one.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :, None]
    elif arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"{name} must have 4 dimensions (n, y, x, ch), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} extents must all be >= 1, got shape {arr.shape}")
    return arr


def _tokens(buf: bytes, pos: int, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
            if buf[pos:pos + 1] == b"#":
                while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated header")
        out.append(buf[start:pos])
    return out, pos


def decode_pnm(buf: bytes) -> tuple[np.ndarray, int]:
    """Decode P2/P3/P5/P6 bytes into ``(array (1,H,W,Ch), maxval)``."""
    magic = buf[:2]
    if magic not in _MAGIC:
        raise ImageFormatError(f"unsupported magic number {magic!r}")
    channels, binary = _MAGIC[magic]
    try:
        (w, h, mv), pos = _tokens(buf, 2, 3)
        width, height, maxval = int(w), int(h), int(mv)
    except ValueError as exc:
        raise ImageFormatError(f"malformed header: {exc}") from None
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad dimensions {width}x{height}")
    if not 0 < maxval <= 65535:
        raise ImageFormatError(f"maxval {maxval} outside [1, 65535]")
    count = width * height * channels
    if binary:
        # exactly one whitespace byte separates header and raster
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = buf[pos:pos + count * dtype.itemsize]
        if len(raw) < count * dtype.itemsize:
            raise ImageFormatError("truncated raster")
        values = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    else:
        fields = buf[pos:].split()
        if len(fields) < count:
            raise ImageFormatError("truncated raster")
        try:
            values = np.array([int(f) for f in fields[:count]], dtype=np.float64)
        except ValueError:
            raise ImageFormatError("non-integer sample in raster") from None
    if np.any(values > maxval):
        raise ImageFormatError("sample exceeds maxval")
    return (values / maxval).reshape(1, height, width, channels), maxval


def encode_pnm(image, maxval: int = 255) -> bytes:
    """Encode a single image as binary P5 (1 channel) or P6 (3 channels)."""
    t = as_image(image)
    if t.shape[0] != 1:
        raise ValueError("only a batch of one image can be saved")
    channels = t.shape[3]
    if channels not in (1, 3):
        raise ValueError(f"cannot save {channels}-channel image; need 1 or 3")
    maxval = int(maxval)
    if not 1 <= maxval <= 65535:
        raise ValueError(f"maxval {maxval} outside [1, 65535]")
    q = np.floor(np.clip(t[0], 0.0, 1.0) * maxval + 0.5)
    dtype = ">u2" if maxval > 255 else "u1"
    magic = b"P5" if channels == 1 else b"P6"
    header = b"%s\n%d %d\n%d\n" % (magic, t.shape[2], t.shape[1], maxval)
    return header + q.astype(dtype).tobytes()


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_image(path) -> tuple[np.ndarray, int]:
    """Load an image and also return the file's maxval."""
    return decode_pnm(Path(path).read_bytes())


def load_image(path) -> np.ndarray:
    """Load a portable graymap/pixmap as a ``(1, H, W, Ch)`` tensor in [0, 1]."""
    return read_image(path)[0]


def save_image(image, path, maxval: int = 255) -> None:
    """Save as binary P5/P6; values are clamped to [0, 1] and rounded half-up."""
    atomic_write(path, encode_pnm(image, maxval))


def mse(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n
