"""Error metrics between a measured and a ground-truth series."""

from __future__ import annotations

import math

import numpy as np


def rmse(measured, truth) -> float:
    """Root-mean-square error of two equal-length finite series."""
    m = np.asarray(measured, dtype=float).reshape(-1)
    t = np.asarray(truth, dtype=float).reshape(-1)
    if m.shape != t.shape:
        raise ValueError(f"series lengths differ: {m.size} vs {t.size}")
    if m.size == 0:
        raise ValueError("rmse of an empty series is undefined")
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(t))):
        raise ValueError("series contain non-finite values")
    err = np.abs(m - t)
    scale = float(err.max())
    if scale == 0.0:
        return 0.0
    # scaling keeps tiny differences from underflowing to an exact zero
    return scale * math.sqrt(float(np.mean((err / scale) ** 2)))
