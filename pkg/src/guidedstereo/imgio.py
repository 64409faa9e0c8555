"""Readers and writers for images, disparity maps and sparse cue files.

Disparity maps are float32 arrays with NaN marking invalid pixels. Sparse
cues are kept as a float64 point list so CSV round trips are lossless.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

INVALID = np.float32(np.nan)

# Named PRNG used for every seeded draw in the package.
PRNG_NAME = "numpy.PCG64"


class ImageFormatError(ValueError):
    """Raised when an input file cannot be decoded exactly."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class ImagePair:
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        for name in ("left", "right"):
            img = getattr(self, name)
            if img.ndim != 3 or img.shape[2] not in (1, 3):
                raise ValueError(f"{name} image must be HxWx1 or HxWx3, got {img.shape}")
            if img.shape[0] < 1 or img.shape[1] < 1:
                raise ValueError(f"{name} image is empty")
        if self.left.shape != self.right.shape:
            raise ValueError(
                f"left/right shape mismatch: {self.left.shape} vs {self.right.shape}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.left.shape[:2]


@dataclass
class DisparityMap:
    """Dense disparity map; NaN is the invalid marker."""

    values: np.ndarray
    d_max: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError("disparity map must be 2-D")
        valid = self.valid
        v = self.values[valid]
        if np.any(v < 0):
            raise ValueError("negative disparity in map")
        if self.d_max is not None and np.any(v >= self.d_max):
            raise ValueError(f"disparity >= d_max={self.d_max}")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def empty(cls, height: int, width: int, d_max: float | None = None) -> DisparityMap:
        return cls(np.full((height, width), INVALID, dtype=np.float32), d_max)


@dataclass
class SparseCueSet:
    """Sparse (x, y, d) guidance points.

    ``points`` is an ``(N, 3)`` float64 array of column, row, disparity.
    """

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    d_max: float = math.inf

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.points = pts
        if pts.size:
            xy = pts[:, :2]
            if np.any(xy != np.round(xy)) or np.any(xy < 0):
                raise ValueError("cue coordinates must be non-negative integers")
            d = pts[:, 2]
            if not np.all(np.isfinite(d)) or np.any(d < 0) or np.any(d >= self.d_max):
                raise ValueError(f"cue disparity outside [0, {self.d_max})")
            keys = pts[:, 1].astype(np.int64) * (1 << 32) + pts[:, 0].astype(np.int64)
            if np.unique(keys).size != keys.size:
                raise ValueError("duplicate cue at the same pixel")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xs(self) -> np.ndarray:
        return self.points[:, 0].astype(np.int64)

    @property
    def ys(self) -> np.ndarray:
        return self.points[:, 1].astype(np.int64)

    @property
    def ds(self) -> np.ndarray:
        return self.points[:, 2]

    def check_bounds(self, height: int, width: int) -> None:
        if len(self) and (self.xs.max() >= width or self.ys.max() >= height):
            raise ValueError(f"cue outside {width}x{height} image")

    def to_disparity(self, height: int, width: int) -> DisparityMap:
        self.check_bounds(height, width)
        out = np.full((height, width), INVALID, dtype=np.float32)
        out[self.ys, self.xs] = self.ds
        return DisparityMap(out, None if math.isinf(self.d_max) else self.d_max)


# ---------------------------------------------------------------------------
# images


def _read_pnm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated PNM header")
    return buf[start:pos], pos


def _load_pnm(buf: bytes) -> np.ndarray:
    magic = buf[:2]
    channels = {b"P5": 1, b"P6": 3}[magic]
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_pnm_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise ImageFormatError(f"bad PNM header field {tok!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError("PNM image has zero size")
    if maxval > 255:
        raise ImageFormatError(f"bit depth != 8 (maxval {maxval})")
    if maxval < 1:
        raise ImageFormatError(f"invalid maxval {maxval}")
    # exactly one whitespace byte separates header and raster
    pos += 1
    need = width * height * channels
    raster = buf[pos : pos + need]
    if len(raster) < need:
        raise ImageFormatError(f"truncated raster: {len(raster)} of {need} bytes")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels).copy()


def load_image(path) -> np.ndarray:
    """Load an 8-bit PGM/PPM/PNG image as an ``HxWxC`` uint8 array.

    Samples are returned exactly as stored. 16-bit and palette images are
    rejected rather than converted.
    """
    buf = Path(path).read_bytes()
    if buf[:2] in (b"P5", b"P6"):
        return _load_pnm(buf)
    if buf[:8] != b"\x89PNG\r\n\x1a\n":
        raise ImageFormatError(f"{path}: unsupported image format")
    try:
        with PILImage.open(io.BytesIO(buf)) as im:
            mode = im.mode
            if mode in ("I;16", "I;16B", "I", "I;16L"):
                raise ImageFormatError(f"{path}: bit depth != 8 (mode {mode})")
            if mode == "1":
                raise ImageFormatError(f"{path}: bit depth != 8 (1-bit)")
            if mode not in ("L", "RGB"):
                raise ImageFormatError(f"{path}: unsupported PNG mode {mode}")
            im.load()
            arr = np.asarray(im, dtype=np.uint8)
    except ImageFormatError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"{path}: cannot decode PNG ({exc})") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.copy()


def save_image(image: np.ndarray, path) -> None:
    """Write uint8 image as PGM/PPM (by suffix) or PNG."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise ValueError("only uint8 images can be written")
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    suffix = Path(path).suffix.lower()
    if suffix in (".pgm", ".ppm", ".pnm"):
        magic = b"P5" if c == 1 else b"P6"
        data = magic + f"\n{w} {h}\n255\n".encode() + image.tobytes()
        Path(path).write_bytes(data)
    else:
        PILImage.fromarray(image[:, :, 0] if c == 1 else image).save(path, format="PNG")


# ---------------------------------------------------------------------------
# disparity maps


def _load_pfm(path, zero_invalid: bool) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().rstrip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ImageFormatError(f"{path}: not a PFM file")
        dims = f.readline().split()
        try:
            width, height = int(dims[0]), int(dims[1])
            scale = float(f.readline().strip())
        except (IndexError, ValueError):
            raise ImageFormatError(f"{path}: malformed PFM header") from None
        if scale == 0 or width < 1 or height < 1:
            raise ImageFormatError(f"{path}: malformed PFM header")
        endian = "<" if scale < 0 else ">"
        count = width * height * channels
        data = np.fromfile(f, dtype=endian + "f4", count=count)
    if data.size != count:
        raise ImageFormatError(f"{path}: truncated PFM raster")
    data = data.reshape(height, width, channels)[:, :, 0]
    # PFM rows are stored bottom-to-top
    values = np.flipud(data).astype(np.float32)
    bad = ~np.isfinite(values)
    bad |= values <= 0 if zero_invalid else values < 0
    values[bad] = INVALID
    return values


def _load_kitti_png(path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            if im.format != "PNG" or im.mode not in ("I;16", "I;16B", "I"):
                raise ImageFormatError(f"{path}: expected 16-bit grayscale PNG, got {im.mode}")
            raw = np.asarray(im).astype(np.int64)
    except ImageFormatError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"{path}: cannot decode PNG ({exc})") from exc
    if raw.min(initial=0) < 0 or raw.max(initial=0) > 65535:
        raise ImageFormatError(f"{path}: values outside 16-bit range")
    values = (raw / 256.0).astype(np.float32)
    values[raw == 0] = INVALID
    return values


def read_cue_points(path) -> np.ndarray:
    """Parse an ``x,y,d`` CSV file into an ``(N, 3)`` float64 array."""
    rows = []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 3:
                raise ImageFormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                x, y, d = (float(v) for v in row)
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ImageFormatError(f"{path}:{lineno}: non-numeric field") from None
            if x != int(x) or y != int(y):
                raise ImageFormatError(f"{path}:{lineno}: non-integer coordinate")
            rows.append((x, y, d))
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def load_disparity(path, format: str, shape: tuple[int, int] | None = None,
                   zero_invalid: bool = True) -> DisparityMap:
    """Load a disparity map stored as ``pfm``, ``kitti_png`` or ``csv``.

    ``shape`` (height, width) is required for CSV, which only lists valid
    pixels. For PFM, non-finite and non-positive values become invalid;
    pass ``zero_invalid=False`` to keep exact zeros.
    """
    if format == "pfm":
        return DisparityMap(_load_pfm(path, zero_invalid))
    if format == "kitti_png":
        return DisparityMap(_load_kitti_png(path))
    if format == "csv":
        if shape is None:
            raise ValueError("csv disparity needs an explicit (height, width)")
        h, w = shape
        pts = read_cue_points(path)
        out = np.full((h, w), INVALID, dtype=np.float32)
        if len(pts):
            xs, ys = pts[:, 0].astype(np.int64), pts[:, 1].astype(np.int64)
            if xs.min() < 0 or ys.min() < 0 or xs.max() >= w or ys.max() >= h:
                raise ImageFormatError(f"{path}: coordinate outside {w}x{h} grid")
            if np.any(pts[:, 2] < 0) or not np.all(np.isfinite(pts[:, 2])):
                raise ImageFormatError(f"{path}: invalid disparity value")
            out[ys, xs] = pts[:, 2]
        return DisparityMap(out)
    raise ValueError(f"unknown disparity format {format!r}")


def save_disparity(disp: DisparityMap, path, format: str) -> None:
    """Write a disparity map as PFM (invalid -> +inf) or KITTI 16-bit PNG."""
    values = disp.values
    if format == "pfm":
        h, w = values.shape
        out = np.where(np.isfinite(values), values, np.float32(np.inf)).astype("<f4")
        with open(path, "wb") as f:
            f.write(f"Pf\n{w} {h}\n-1.0\n".encode())
            f.write(np.flipud(out).tobytes())
        return
    if format == "kitti_png":
        valid = disp.valid
        scaled = np.zeros(values.shape, dtype=np.float64)
        scaled[valid] = np.round(values[valid].astype(np.float64) * 256.0)
        if scaled.max(initial=0) > 65535:
            raise OverflowError("disparity too large for 16-bit KITTI PNG (max 255.996)")
        # a tiny positive disparity must not collapse onto the invalid code
        scaled[valid & (scaled == 0)] = 1
        PILImage.fromarray(scaled.astype(np.uint16)).save(path, format="PNG")
        return
    raise ValueError(f"unknown disparity format {format!r}")


# ---------------------------------------------------------------------------
# cues


def load_cues(path, d_max: float = math.inf, shape: tuple[int, int] | None = None) -> SparseCueSet:
    """Load a cue CSV, or a KITTI PNG/PFM treated as a sparse map."""
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        return cues_from_map(load_disparity(path, "kitti_png"), d_max)
    if suffix == ".pfm":
        return cues_from_map(load_disparity(path, "pfm"), d_max)
    cues = SparseCueSet(read_cue_points(path), d_max)
    if shape is not None:
        cues.check_bounds(*shape)
    return cues


def save_cues(cues: SparseCueSet, path) -> None:
    with open(path, "w", newline="") as f:
        f.write("x,y,d\n")
        for x, y, d in cues.points:
            f.write(f"{int(x)},{int(y)},{float(d)!r}\n")


def cues_from_map(disp: DisparityMap, d_max: float = math.inf) -> SparseCueSet:
    ys, xs = np.nonzero(disp.valid)
    d = disp.values[ys, xs].astype(np.float64)
    return SparseCueSet(np.column_stack([xs, ys, d]), d_max)


def cues_from_disparity(disp: DisparityMap, rate: float, seed: int,
                        d_max: float | None = None) -> SparseCueSet:
    """Draw ``round(rate * n_valid)`` cues uniformly from the valid pixels.

    Indices are drawn with :data:`PRNG_NAME` and returned in row-major order,
    so the result only depends on ``(disp, rate, seed)``.
    """
    if not 0 < rate <= 1:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    flat = np.flatnonzero(disp.valid.ravel())
    if flat.size == 0:
        raise ValueError("disparity map has no valid pixel")
    k = int(math.floor(rate * flat.size + 0.5))
    pick = np.sort(make_rng(seed).choice(flat.size, size=k, replace=False))
    idx = flat[pick]
    h, w = disp.shape
    ys, xs = np.divmod(idx, w)
    d = disp.values.ravel()[idx].astype(np.float64)
    if d_max is None:
        d_max = disp.d_max if disp.d_max is not None else math.inf
    return SparseCueSet(np.column_stack([xs, ys, d]), d_max)


def sample_cues_by_coverage(disp: DisparityMap, coverage: float, seed: int,
                            d_max: float | None = None) -> SparseCueSet:
    """Draw cues so that they cover ``coverage`` of *all* pixels."""
    n_valid = int(disp.valid.sum())
    rate = min(1.0, coverage * disp.values.size / max(n_valid, 1))
    return cues_from_disparity(disp, rate, seed, d_max)


def to_gray(image: np.ndarray) -> np.ndarray:
    """Integer luminance round(0.299R + 0.587G + 0.114B) as ``HxW`` int32."""
    if image.ndim == 2:
        return image.astype(np.int32)
    if image.shape[2] == 1:
        return image[:, :, 0].astype(np.int32)
    # integer arithmetic avoids float rounding differences across platforms
    r, g, b = (image[:, :, i].astype(np.int64) for i in range(3))
    return ((299 * r + 587 * g + 114 * b + 500) // 1000).astype(np.int32)
