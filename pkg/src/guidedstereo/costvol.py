"""Matching cost volumes, semi-global aggregation and disparity extraction.

Volumes are stored as ``(H, W, D)`` float64 arrays. Every volume carries an
orientation flag: ``COST`` (lower is better) or ``SCORE`` (higher is better).
Pixels whose matching window leaves either image get the maximum cost, so
volumes stay rectangular and finite.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .imgio import DisparityMap, ImagePair, to_gray


class Orientation(enum.Enum):
    COST = "cost"
    SCORE = "score"


class OrientationError(ValueError):
    pass


@dataclass
class CostVolume:
    values: np.ndarray
    orientation: Orientation

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError("cost volume must be HxWxD")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def d_max(self) -> int:
        return self.values.shape[2]

    def require(self, orientation: Orientation) -> None:
        if self.orientation is not orientation:
            raise OrientationError(
                f"expected {orientation.value} volume, got {self.orientation.value}"
            )

    def copy(self) -> CostVolume:
        return CostVolume(self.values.copy(), self.orientation)


def _check_window(pair: ImagePair, d_max: int, window: int) -> None:
    if d_max < 1:
        raise ValueError("d_max must be >= 1")
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    h, w = pair.shape
    if window > min(h, w):
        raise ValueError(f"window {window} larger than image {w}x{h}")


def _support_mask(h: int, w: int, d_max: int, radius: int) -> np.ndarray:
    """(H, W, D) mask of entries whose windows fit in both images."""
    rows = np.zeros(h, dtype=bool)
    rows[radius : h - radius] = True
    xs = np.arange(w)
    cols = (xs[:, None] - np.arange(d_max)[None, :] >= radius) & (xs[:, None] < w - radius)
    return rows[:, None, None] & cols[None, :, :]


def census_transform(gray: np.ndarray, window: int) -> np.ndarray:
    """Census bit strings (``neighbour < centre``) packed into uint64.

    Only meaningful where the full window lies inside the image; other
    pixels hold partial codes and must be masked by the caller.
    """
    r = window // 2
    h, w = gray.shape
    if window * window - 1 > 64:
        raise ValueError("census window larger than 8x8 bits is not supported")
    padded = np.pad(gray, r, mode="edge")
    code = np.zeros((h, w), dtype=np.uint64)
    bit = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            code |= (nb < gray).astype(np.uint64) << np.uint64(bit)
            bit += 1
    return code


def census_cost(pair: ImagePair, d_max: int, window: int = 5, workers: int = 1) -> CostVolume:
    """Hamming distance between census codes of left (x, y) and right (x-d, y)."""
    _check_window(pair, d_max, window)
    h, w = pair.shape
    r = window // 2
    cl = census_transform(to_gray(pair.left), window)
    cr = census_transform(to_gray(pair.right), window)
    max_cost = float(window * window - 1)
    vol = np.full((h, w, d_max), max_cost)

    def fill(d: int) -> None:
        if d < w:
            vol[:, d:, d] = np.bitwise_count(cl[:, d:] ^ cr[:, : w - d])

    _map(fill, range(d_max), workers)
    vol[~_support_mask(h, w, d_max, r)] = max_cost
    return CostVolume(vol, Orientation.COST)


def _box_sum(img: np.ndarray, r: int) -> np.ndarray:
    """Exact integer window sums; only the interior is meaningful."""
    ii = np.pad(img.astype(np.int64), ((1, 0), (1, 0))).cumsum(0).cumsum(1)
    k = 2 * r + 1
    h, w = img.shape
    out = np.zeros((h, w), dtype=np.int64)
    out[r : h - r, r : w - r] = (
        ii[k:, k:] - ii[:-k, k:] - ii[k:, :-k] + ii[:-k, :-k]
    )
    return out


def sad_cost(pair: ImagePair, d_max: int, window: int = 5, workers: int = 1) -> CostVolume:
    """Window sum of absolute differences, averaged over channels."""
    _check_window(pair, d_max, window)
    h, w = pair.shape
    r = window // 2
    left = pair.left.astype(np.int64)
    right = pair.right.astype(np.int64)
    channels = left.shape[2]
    max_cost = 255.0 * window * window
    vol = np.full((h, w, d_max), max_cost)

    def fill(d: int) -> None:
        if d >= w:
            return
        diff = np.abs(left[:, d:, :] - right[:, : w - d, :]).sum(axis=2)
        vol[:, d:, d] = _box_sum(diff, r) / channels

    _map(fill, range(d_max), workers)
    vol[~_support_mask(h, w, d_max, r)] = max_cost
    return CostVolume(vol, Orientation.COST)


# (dy, dx) scan directions; 4-path set first so "paths=4" is a prefix
DIRECTIONS = [(0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1)]


def _aggregate_path(cost: np.ndarray, p1: float, p2: float, dy: int, dx: int) -> np.ndarray:
    """Path cost L_r for one direction.

    The volume is flipped so the scan always runs towards increasing row
    and/or column, then the recurrence advances one step at a time over a
    whole front (a row, a column, or an anti-diagonal band) at once.
    """
    c = cost
    if dy < 0:
        c = c[::-1]
    if dx < 0:
        c = c[:, ::-1]
    h, w, d = c.shape
    out = np.empty_like(c)
    if dy == 0:
        out[:, 0] = c[:, 0]
        for x in range(1, w):
            out[:, x] = _step(out[:, x - 1], c[:, x], p1, p2)
    elif dx == 0:
        out[0] = c[0]
        for y in range(1, h):
            out[y] = _step(out[y - 1], c[y], p1, p2)
    else:
        # diagonal: row y depends on row y-1 shifted right by one column
        out[0] = c[0]
        for y in range(1, h):
            out[y, 0] = c[y, 0]
            out[y, 1:] = _step(out[y - 1, :-1], c[y, 1:], p1, p2)
    if dx < 0:
        out = out[:, ::-1]
    if dy < 0:
        out = out[::-1]
    return out


def _step(prev: np.ndarray, cur: np.ndarray, p1: float, p2: float) -> np.ndarray:
    prev_min = prev.min(axis=-1, keepdims=True)
    best = prev.copy()
    np.minimum(best[..., 1:], prev[..., :-1] + p1, out=best[..., 1:])
    np.minimum(best[..., :-1], prev[..., 1:] + p1, out=best[..., :-1])
    np.minimum(best, prev_min + p2, out=best)
    return cur + best - prev_min


def sgm_aggregate(vol: CostVolume, p1: float, p2: float, paths: int = 4,
                  workers: int = 1) -> CostVolume:
    """Semi-global aggregation summed over 4 or 8 scan directions.

    Path sums are accumulated in a fixed direction order, so the result is
    identical for any ``workers`` count.
    """
    vol.require(Orientation.COST)
    if paths not in (4, 8):
        raise ValueError("paths must be 4 or 8")
    if not 0 <= p1 <= p2:
        raise ValueError(f"need 0 <= p1 <= p2, got p1={p1}, p2={p2}")
    dirs = DIRECTIONS[:paths]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda dd: _aggregate_path(vol.values, p1, p2, *dd), dirs))
        total = parts[0].copy()
        for part in parts[1:]:
            total += part
    else:
        total = _aggregate_path(vol.values, p1, p2, *dirs[0])
        for dd in dirs[1:]:
            total += _aggregate_path(vol.values, p1, p2, *dd)
    return CostVolume(total, Orientation.COST)


def to_score(vol: CostVolume) -> CostVolume:
    """score(d) = max_d' cost(d') - cost(d), per pixel."""
    vol.require(Orientation.COST)
    v = vol.values
    return CostVolume(v.max(axis=2, keepdims=True) - v, Orientation.SCORE)


def wta(vol: CostVolume) -> DisparityMap:
    """Winner-take-all; ties go to the smallest disparity."""
    if vol.orientation is Orientation.COST:
        d = np.argmin(vol.values, axis=2)
    else:
        d = np.argmax(vol.values, axis=2)
    return DisparityMap(d.astype(np.float32))


def subpixel_refine(vol: CostVolume, disp: DisparityMap) -> DisparityMap:
    """Parabolic interpolation around each integer WTA minimum."""
    vol.require(Orientation.COST)
    h, w, dmax = vol.shape
    if disp.shape != (h, w):
        raise ValueError(f"map shape {disp.shape} does not match volume {(h, w)}")
    out = disp.values.copy()
    valid = disp.valid
    d = np.zeros((h, w), dtype=np.int64)
    d[valid] = out[valid].astype(np.int64)
    interior = valid & (d >= 1) & (d <= dmax - 2)
    yy, xx = np.nonzero(interior)
    di = d[yy, xx]
    v = vol.values
    cm, c0, cp = v[yy, xx, di - 1], v[yy, xx, di], v[yy, xx, di + 1]
    denom = 2.0 * (cm - 2.0 * c0 + cp)
    ok = denom > 0
    offset = np.zeros_like(c0)
    offset[ok] = np.clip((cm[ok] - cp[ok]) / denom[ok], -0.5, 0.5)
    out[yy, xx] = (di + offset).astype(np.float32)
    return DisparityMap(out)


def _map(fn, items, workers: int) -> None:
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(fn, items))
    else:
        for it in items:
            fn(it)
