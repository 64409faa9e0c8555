"""Disparity error measures over valid ground-truth pixels."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .imgio import DisparityMap

THRESHOLDS = (2, 3, 4, 5)


@dataclass
class EvalReport:
    avg_px: float
    err_rate: dict = field(default_factory=dict)
    n_valid: int = 0

    def as_row(self) -> dict:
        row = {"avg_px": self.avg_px, "n_valid": self.n_valid}
        for n, r in sorted(self.err_rate.items()):
            row[f"err>{n}"] = r
        return row

    def to_json(self) -> str:
        return json.dumps(self.as_row())


def evaluate(pred: DisparityMap, gt: DisparityMap, thresholds=THRESHOLDS) -> EvalReport:
    """Mean absolute error and n-pixel error rates on gt-valid pixels.

    A pixel is wrong at threshold n when ``|pred - gt| >= n``.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    mask = gt.valid
    n_valid = int(mask.sum())
    if n_valid == 0:
        raise ValueError("ground truth has no valid pixel")
    if not pred.valid[mask].all():
        raise ValueError("prediction is invalid at a pixel with valid ground truth")
    err = np.abs(pred.values[mask].astype(np.float64) - gt.values[mask].astype(np.float64))
    # sort first so the sum does not depend on pixel order
    err = np.sort(err)
    avg = float(np.sum(err) / n_valid)
    rates = {int(n): float(np.count_nonzero(err >= n) / n_valid) for n in sorted(thresholds)}
    return EvalReport(avg, rates, n_valid)


def format_table(rows: dict) -> str:
    """Aligned text table for ``{name: EvalReport}``."""
    if not rows:
        return ""
    names = list(rows)
    ns = sorted(next(iter(rows.values())).err_rate)
    width = max(len("model"), *(len(k) for k in names))
    head = f"{'model':<{width}}  {'avg_px':>8}" + "".join(f"  {'>' + str(n):>6}" for n in ns)
    lines = [head]
    for name in names:
        r = rows[name]
        lines.append(
            f"{name:<{width}}  {r.avg_px:8.3f}" + "".join(f"  {r.err_rate[n]:6.3f}" for n in ns)
        )
    return "\n".join(lines)
