"""Growing sparse cues into image-aligned regions.

Each cue is expanded with a cross-shaped greedy search: first up and down
from the cue, then left and right from every pixel of that vertical arm.
An arm stops before the first pixel whose intensity differs from its anchor
by more than ``tau``, at the image border, or after ``L`` pixels. Where
regions overlap, the pixel goes to the nearest cue (Euclidean), ties to the
lowest cue index.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .imgio import DisparityMap, SparseCueSet

REGIONS = ("cross", "square")
ANCHORS = ("arm", "center")

_NO_SRC = np.iinfo(np.int64).max


@dataclass(frozen=True)
class ExpansionParams:
    tau: float = 15.0
    L: int = 30
    region: str = "cross"
    # "arm": horizontal arms compare against their vertical-arm pixel;
    # "center": every comparison is against the cue pixel itself.
    anchor: str = "arm"

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.L < 0 or int(self.L) != self.L:
            raise ValueError("L must be a non-negative integer")
        if self.region not in REGIONS:
            raise ValueError(f"region must be one of {REGIONS}")
        if self.anchor not in ANCHORS:
            raise ValueError(f"anchor must be one of {ANCHORS}")


@dataclass
class GuidanceField:
    """Per-pixel governing cue: its disparity, distance to it and index.

    Empty pixels have ``src == -1``, ``disparity`` NaN and ``dist`` inf.
    """

    disparity: np.ndarray
    dist: np.ndarray
    src: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.src.shape

    @property
    def mask(self) -> np.ndarray:
        return self.src >= 0

    def to_disparity(self) -> DisparityMap:
        return DisparityMap(self.disparity.astype(np.float32))

    def distance_map(self) -> DisparityMap:
        d = np.where(self.mask, self.dist, np.nan)
        return DisparityMap(d.astype(np.float32))


def _as_hwc(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[:, :, None]
    return np.ascontiguousarray(img, dtype=np.int32)


@numba.njit(cache=True, nogil=True)
def _diff(img, y0, x0, y1, x1):
    m = 0
    for c in range(img.shape[2]):
        v = abs(img[y0, x0, c] - img[y1, x1, c])
        if v > m:
            m = v
    return m


@numba.njit(cache=True, nogil=True)
def _arm(img, y, x, ay, ax, cy, cx, step_y, step_x, tau, L, anchor_center):
    """Number of pixels the arm from (y, x) extends in direction (step_y, step_x)."""
    h, w = img.shape[0], img.shape[1]
    n = 0
    ry, rx = (cy, cx) if anchor_center else (ay, ax)
    while n < L:
        py = y + (n + 1) * step_y
        px = x + (n + 1) * step_x
        if py < 0 or py >= h or px < 0 or px >= w:
            break
        if _diff(img, py, px, ry, rx) > tau:
            break
        n += 1
    return n


@numba.njit(cache=True, nogil=True)
def _claim_span(dist2, src, y, x0, x1, cx, cy, i):
    """Offer pixels x0..x1 of row y to cue i at (cx, cy)."""
    dy2 = (y - cy) * (y - cy)
    for x in range(x0, x1 + 1):
        d2 = dy2 + (x - cx) * (x - cx)
        cur = dist2[y, x]
        if d2 < cur or (d2 == cur and i < src[y, x]):
            dist2[y, x] = d2
            src[y, x] = i


@numba.njit(cache=True, nogil=True)
def _expand_kernel(img, xs, ys, ids, tau, L, square, anchor_center, dist2, src):
    h, w = img.shape[0], img.shape[1]
    for k in range(xs.shape[0]):
        cx, cy, i = xs[k], ys[k], ids[k]
        if square:
            r = L // 2
            for y in range(max(0, cy - r), min(h, cy + r + 1)):
                _claim_span(dist2, src, y, max(0, cx - r), min(w - 1, cx + r), cx, cy, i)
            continue
        up = _arm(img, cy, cx, cy, cx, cy, cx, -1, 0, tau, L, anchor_center)
        down = _arm(img, cy, cx, cy, cx, cy, cx, 1, 0, tau, L, anchor_center)
        for y in range(cy - up, cy + down + 1):
            left = _arm(img, y, cx, y, cx, cy, cx, 0, -1, tau, L, anchor_center)
            right = _arm(img, y, cx, y, cx, cy, cx, 0, 1, tau, L, anchor_center)
            _claim_span(dist2, src, y, cx - left, cx + right, cx, cy, i)


def _run_kernel(img, cues: SparseCueSet, ids: np.ndarray, params: ExpansionParams):
    h, w = img.shape[:2]
    dist2 = np.full((h, w), _NO_SRC, dtype=np.int64)
    src = np.full((h, w), _NO_SRC, dtype=np.int64)
    _expand_kernel(
        img,
        np.ascontiguousarray(cues.xs[ids]),
        np.ascontiguousarray(cues.ys[ids]),
        np.ascontiguousarray(ids, dtype=np.int64),
        float(params.tau),
        int(params.L),
        params.region == "square",
        params.anchor == "center",
        dist2,
        src,
    )
    return dist2, src


def _check_cue(image: np.ndarray, x: int, y: int) -> None:
    h, w = image.shape[:2]
    if not (0 <= x < w and 0 <= y < h):
        raise ValueError(f"cue ({x}, {y}) outside {w}x{h} image")


def cross_region(image: np.ndarray, cue: tuple[int, int], params: ExpansionParams) -> set:
    """Pixels ``(x, y)`` of the cross-based region grown from ``cue``."""
    img = _as_hwc(image)
    x, y = int(cue[0]), int(cue[1])
    _check_cue(img, x, y)
    cues = SparseCueSet(np.array([[x, y, 0.0]]))
    p = ExpansionParams(params.tau, params.L, "cross", params.anchor)
    _, src = _run_kernel(img, cues, np.array([0]), p)
    ys, xs = np.nonzero(src == 0)
    return set(zip(xs.tolist(), ys.tolist()))


def square_region(shape: tuple[int, int], cue: tuple[int, int], params: ExpansionParams) -> set:
    """In-bounds pixels within Chebyshev distance ``L // 2`` of ``cue``."""
    h, w = shape[:2]
    x, y = int(cue[0]), int(cue[1])
    if not (0 <= x < w and 0 <= y < h):
        raise ValueError(f"cue ({x}, {y}) outside {w}x{h} image")
    r = params.L // 2
    return {
        (px, py)
        for py in range(max(0, y - r), min(h, y + r + 1))
        for px in range(max(0, x - r), min(w, x + r + 1))
    }


def expand(image: np.ndarray, cues: SparseCueSet, params: ExpansionParams,
           workers: int = 1) -> GuidanceField:
    """Expand every cue and merge overlapping regions nearest-cue-first.

    Cues are split into ``workers`` chunks that are expanded independently
    and reduced by (distance, index); the reduction is order-free, so the
    field does not depend on the worker count.
    """
    img = _as_hwc(image)
    h, w = img.shape[:2]
    cues.check_bounds(h, w)
    n = len(cues)
    if n == 0:
        dist2 = np.full((h, w), _NO_SRC, dtype=np.int64)
        src = dist2.copy()
    elif workers <= 1:
        dist2, src = _run_kernel(img, cues, np.arange(n), params)
    else:
        chunks = [c for c in np.array_split(np.arange(n), workers) if c.size]
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda ids: _run_kernel(img, cues, ids, params), chunks))
        dist2, src = parts[0]
        for d2, s in parts[1:]:
            take = (d2 < dist2) | ((d2 == dist2) & (s < src))
            dist2 = np.where(take, d2, dist2)
            src = np.where(take, s, src)
    return _field(dist2, src, cues)


def _field(dist2: np.ndarray, src: np.ndarray, cues: SparseCueSet) -> GuidanceField:
    mask = src != _NO_SRC
    out_src = np.where(mask, src, -1)
    dist = np.full(src.shape, math.inf)
    dist[mask] = np.sqrt(dist2[mask].astype(np.float64))
    disp = np.full(src.shape, np.nan)
    disp[mask] = cues.ds[out_src[mask]]
    return GuidanceField(disp, dist, out_src)


def cue_field(cues: SparseCueSet, shape: tuple[int, int]) -> GuidanceField:
    """Field without expansion: each cue governs only its own pixel."""
    h, w = shape
    cues.check_bounds(h, w)
    src = np.full((h, w), _NO_SRC, dtype=np.int64)
    dist2 = src.copy()
    src[cues.ys, cues.xs] = np.arange(len(cues))
    dist2[cues.ys, cues.xs] = 0
    return _field(dist2, src, cues)
