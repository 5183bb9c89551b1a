"""Exponential-rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..errors import InsufficientPoints


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    ci: tuple[float, float]
    slope_se: float
    n_used: int
    weighted: bool
    excluded: tuple = field(default=())
    level: float = 0.95

    def contains(self, value: float) -> bool:
        return self.ci[0] <= value <= self.ci[1]

    def as_dict(self):
        return {"slope": self.slope, "intercept": self.intercept, "ci": list(self.ci), "slope_se": self.slope_se,
                "n_used": self.n_used, "weighted": self.weighted, "excluded": list(self.excluded)}


def fit_rate(points, level: float = 0.95, log_input: bool = False) -> RateFit:
    """Least-squares slope of log y against t.

    ``points`` holds ``(t, y, se)`` triples (``se`` may be None).  With
    ``log_input`` the second entry is already log y and ``se`` is its
    standard error.  Positive standard errors give weighted least squares with
    weights (y/se)^2 and a normal-theory interval from the known variances;
    otherwise ordinary least squares with a Student-t interval.  Points with
    y = 0 are dropped and listed in ``excluded``.
    """
    ts, ly, sl, excluded = [], [], [], []
    for pt in points:
        t, y = float(pt[0]), float(pt[1])
        se = None if len(pt) < 3 or pt[2] is None else float(pt[2])
        if log_input:
            if not math.isfinite(y):
                excluded.append(t)
                continue
            ts.append(t)
            ly.append(y)
            sl.append(se)
            continue
        if y == 0.0:
            excluded.append(t)
            continue
        if not (math.isfinite(y) and y > 0):
            raise ValueError(f"estimate at t={t} must be positive and finite, got {y}")
        ts.append(t)
        ly.append(math.log(y))
        sl.append(None if se is None else se / y)
    if len(ts) < 3:
        raise InsufficientPoints(f"need at least 3 usable points, have {len(ts)}")
    t = np.array(ts)
    y = np.array(ly)
    x = np.column_stack([t, np.ones_like(t)])
    weighted = all(s is not None and s > 0 for s in sl)
    z = stats.norm.ppf(0.5 + level / 2)
    if weighted:
        w = 1.0 / np.array(sl) ** 2
        xtw = x.T * w
        cov = np.linalg.inv(xtw @ x)
        beta = cov @ (xtw @ y)
        half = z * math.sqrt(cov[0, 0])
    else:
        beta, *_ = np.linalg.lstsq(x, y, rcond=None)
        resid = y - x @ beta
        dof = len(t) - 2
        s2 = float(resid @ resid) / dof if dof > 0 else 0.0
        cov = s2 * np.linalg.inv(x.T @ x)
        half = stats.t.ppf(0.5 + level / 2, dof) * math.sqrt(cov[0, 0]) if dof > 0 else math.inf
    slope, icpt = float(beta[0]), float(beta[1])
    return RateFit(slope, icpt, (slope - half, slope + half), float(math.sqrt(cov[0, 0])), len(t), weighted,
                   tuple(excluded), level)
