"""Log-log rate fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    residuals: tuple
    floor_detected: bool
    local_slopes: tuple

    def within(self, target: float, tol: float) -> bool:
        return abs(self.slope - target) <= tol


def fit_rate(pairs, floor_drop: float = 0.5) -> RateFit:
    """Least squares of log(error) against log(h).

    A floor is flagged when the last local slope (finest pair) falls below
    ``floor_drop`` times the median of the others, which is the signature of
    errors saturating at round-off or discretisation level.
    """
    pts = [(float(h), float(e)) for h, e in pairs]
    if len(pts) < 3:
        raise InsufficientData(f"need at least 3 (h, error) pairs, got {len(pts)}")
    if any(h <= 0 or e <= 0 or not np.isfinite(e) for h, e in pts):
        raise InsufficientData("all h and errors must be positive and finite")
    pts.sort()
    lh = np.log([p[0] for p in pts])
    le = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(lh, le, 1)
    res = le - (slope * lh + intercept)
    local = np.diff(le) / np.diff(lh)
    floor = False
    if local.size >= 2:
        ref = float(np.median(local[1:]))
        floor = bool(ref > 0 and local[0] < floor_drop * ref)
    return RateFit(float(slope), float(intercept), tuple(float(r) for r in res), floor,
                   tuple(float(s) for s in local))
