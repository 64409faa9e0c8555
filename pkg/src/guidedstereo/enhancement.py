"""Multiplicative cue enhancement of score volumes.

Variants:

``none``
    identity.
``gsm``
    Gaussian peak at the cue disparity, applied only at the cue pixels.
``f``
    Gaussian faded linearly towards 1 with distance from the cue.
``fs``
    base height plus a Gaussian in both disparity and distance.
``hard``
    diagnostic: the bin nearest the cue disparity is forced to win at cue
    pixels, the equivalent of zeroing its matching cost.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .costvol import CostVolume, Orientation
from .expansion import GuidanceField

VARIANTS = ("none", "gsm", "f", "fs", "hard")


@dataclass(frozen=True)
class EnhanceParams:
    variant: str = "fs"
    h: float = 20.0
    w: float = 1.0
    v: float = 1.0
    b: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (self.h > 0 and self.w > 0 and self.v > 0 and self.b >= 0):
            raise ValueError("need h > 0, w > 0, v > 0, b >= 0")
        if self.variant == "fs" and self.b == 0:
            warnings.warn("fs with b = 0 can underflow scores to zero far from the cue",
                          stacklevel=2)


def gauss_g(d, d_i, h: float, w: float):
    """h * exp(-(d - d_i)^2 / (2 w^2))."""
    return h * np.exp(-((np.asarray(d, dtype=np.float64) - d_i) ** 2) / (2.0 * w * w))


def fade_alpha(dist, v: float):
    """min(1, dist / v); an infinite ``v`` disables the fade."""
    return np.minimum(1.0, np.asarray(dist, dtype=np.float64) / v)


def weight_f(d, d_i, dist, params: EnhanceParams):
    alpha = fade_alpha(dist, params.v)
    return (1.0 - alpha) * gauss_g(d, d_i, params.h, params.w) + alpha * 1.0


def weight_fs(d, d_i, dist, params: EnhanceParams):
    d = np.asarray(d, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    expo = (d - d_i) ** 2 / (2.0 * params.w**2) + dist**2 / (2.0 * params.v**2)
    return params.b + params.h * np.exp(-expo)


def multipliers(d_src: np.ndarray, dist: np.ndarray, n_bins: int,
                params: EnhanceParams) -> np.ndarray:
    """``(M, D)`` multiplier table for M guided pixels."""
    bins = np.arange(n_bins, dtype=np.float64)[None, :]
    d_i = np.asarray(d_src, dtype=np.float64)[:, None]
    dist = np.asarray(dist, dtype=np.float64)[:, None]
    if params.variant == "gsm":
        return gauss_g(bins, d_i, params.h, params.w)
    if params.variant == "f":
        return weight_f(bins, d_i, dist, params)
    if params.variant == "fs":
        return weight_fs(bins, d_i, dist, params)
    raise ValueError(f"no multiplier for variant {params.variant!r}")


def apply_enhancement(vol: CostVolume, field: GuidanceField,
                      params: EnhanceParams) -> CostVolume:
    """Multiply the score volume by the variant's weight at guided pixels.

    ``gsm`` and ``hard`` only act where ``dist == 0`` (the cue pixels
    themselves). Pixels outside the field are copied unchanged.
    """
    vol.require(Orientation.SCORE)
    h, w, dmax = vol.shape
    if field.shape != (h, w):
        raise ValueError(f"field shape {field.shape} does not match volume {(h, w)}")
    out = vol.values.copy()
    if params.variant == "none":
        return CostVolume(out, Orientation.SCORE)
    mask = field.mask
    if params.variant in ("gsm", "hard"):
        mask = mask & (field.dist == 0)
    yy, xx = np.nonzero(mask)
    if yy.size == 0:
        return CostVolume(out, Orientation.SCORE)
    d_src = field.disparity[yy, xx]
    if params.variant == "hard":
        target = np.clip(np.floor(d_src + 0.5).astype(np.int64), 0, dmax - 1)
        out[yy, xx, target] = out[yy, xx].max(axis=1) + 1.0
        return CostVolume(out, Orientation.SCORE)
    m = multipliers(d_src, field.dist[yy, xx], dmax, params)
    out[yy, xx] = out[yy, xx] * m
    return CostVolume(out, Orientation.SCORE)


def no_fade(params: EnhanceParams) -> EnhanceParams:
    """Variant ``f`` with the distance fade switched off (alpha = 0)."""
    return EnhanceParams("f", params.h, params.w, math.inf, params.b)
