"""Spreading statistics and log-log slope fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats as _st

from ..sections import AXES

COORD_NAMES = ("x", "y", "z")


class InsufficientData(ValueError):
    """Too few usable samples for the requested statistic."""


def _exact_mean_std(v: np.ndarray):
    # exactly rounded sums make the result independent of sample order
    v = np.sort(np.asarray(v, dtype=float))
    n = v.size
    mean = math.fsum(v) / n
    var = math.fsum((v - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var)


@dataclass
class SpreadStats:
    """Per-coordinate spread of stochastic hits around the deterministic hit."""

    std: dict
    mean: dict
    n_eff: int
    n: int
    escapes: int = 0
    timeouts: int = 0
    coords: tuple = ()

    def __post_init__(self):
        if self.n_eff > self.n:
            raise ValueError("n_eff cannot exceed n")


def spread_from_deviations(dev, coords: Sequence[str] = COORD_NAMES, n: Optional[int] = None,
                           escapes: int = 0, timeouts: int = 0) -> SpreadStats:
    """Unbiased std per coordinate of deviation vectors ``dev`` (3, N).

    Columns containing NaN (failed runs) are excluded.
    """
    dev = np.asarray(dev, dtype=float)
    if dev.ndim == 1:
        dev = dev[None, :]
    good = np.all(np.isfinite(dev), axis=0)
    n_eff = int(np.count_nonzero(good))
    n = dev.shape[1] if n is None else n
    if n_eff < 2:
        raise InsufficientData(f"need at least 2 usable realizations, have {n_eff}")
    std, mean = {}, {}
    for c in coords:
        row = dev[AXES[c]] if dev.shape[0] == 3 else dev[coords.index(c)]
        m, s = _exact_mean_std(row[good])
        std[c], mean[c] = s, m
    return SpreadStats(std=std, mean=mean, n_eff=n_eff, n=n, escapes=escapes, timeouts=timeouts,
                       coords=tuple(coords))


def spreading_stats(ensemble, coords: Optional[Sequence[str]] = None) -> SpreadStats:
    """Spread of an `EnsembleResult` in the in-plane coordinates of its target."""
    coords = tuple(coords) if coords is not None else ensemble.coords
    return spread_from_deviations(ensemble.deviations, coords, n=ensemble.ok.size,
                                  escapes=int(ensemble.escaped.sum()),
                                  timeouts=int(ensemble.timed_out.sum()))


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    coord: str
    grid_range: tuple
    points_used: int

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r_squared,
                "points_used": self.points_used}


def fit_slope(grid, values, coord: str = "") -> SlopeFit:
    """Least squares of log10(values) on log10(grid); non-positive points are skipped."""
    g = np.asarray(grid, dtype=float)
    v = np.asarray(values, dtype=float)
    m = np.isfinite(g) & np.isfinite(v) & (g > 0) & (v > 0)
    if np.count_nonzero(m) < 3:
        raise InsufficientData("need at least 3 positive points for a slope fit")
    lg, lv = np.log10(g[m]), np.log10(v[m])
    r = _st.linregress(lg, lv)
    r2 = float(min(1.0, max(0.0, r.rvalue ** 2)))
    return SlopeFit(slope=float(r.slope), intercept=float(r.intercept), r_squared=r2,
                    coord=coord, grid_range=(float(g[m].min()), float(g[m].max())),
                    points_used=int(np.count_nonzero(m)))
