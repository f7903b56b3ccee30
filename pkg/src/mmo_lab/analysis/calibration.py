"""Empirical exceedance probabilities and calibration of the bound constants.

The bounds only assert Gaussian-type tails ``P{dev > h} <~ C exp(-kappa h^2/v)``
for an unspecified ``kappa``.  These tools measure ``P{|dev| > h}`` on a
level grid, regress its logarithm on ``h^2 / scale`` and report the fitted
``kappa_hat`` together with the linearity of the relation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats as _st

from .._params import ParamsMixin
from .stats import InsufficientData


def exceedance_curve(deviations, h_grid):
    d = np.abs(np.asarray(deviations, dtype=float))
    d = np.sort(d[np.isfinite(d)])
    if d.size == 0:
        raise InsufficientData("no finite deviations")
    h = np.asarray(h_grid, dtype=float)
    # fraction strictly above each level
    p = 1.0 - np.searchsorted(d, h, side="right") / d.size
    return h, p


class ExceedanceCalibrator(ParamsMixin):
    """Fit ``log P{|dev| > h} = log C - kappa h^2 / scale``.

    Parameters
    ----------
    h_grid : explicit levels; default is quantiles of ``|dev|``.
    q_lo, q_hi : quantile range of the default levels.
    n_levels : number of default levels.
    scale : predicted variance scale (for instance a squared spreading
        order); kappa is measured in these units.
    """

    def __init__(self, h_grid=None, q_lo: float = 0.5, q_hi: float = 0.98, n_levels: int = 12,
                 scale: float = 1.0):
        self.h_grid = h_grid
        self.q_lo = q_lo
        self.q_hi = q_hi
        self.n_levels = n_levels
        self.scale = scale

    def fit(self, deviations, y=None):
        d = np.abs(np.asarray(deviations, dtype=float))
        d = d[np.isfinite(d)]
        if self.h_grid is None:
            levels = np.quantile(d, np.linspace(self.q_lo, self.q_hi, self.n_levels))
        else:
            levels = np.asarray(self.h_grid, dtype=float)
        h, p = exceedance_curve(d, levels)
        m = p > 0
        if np.count_nonzero(m) < 3:
            raise InsufficientData("fewer than 3 levels with nonzero exceedance")
        x = h[m] ** 2 / self.scale
        if np.ptp(x) == 0:
            raise InsufficientData("levels are degenerate")
        r = _st.linregress(x, np.log(p[m]))
        self.levels_ = h
        self.p_hat_ = p
        self.slope_ = float(r.slope)
        self.intercept_ = float(r.intercept)
        self.kappa_ = float(-r.slope)
        self.r2_ = float(r.rvalue ** 2)
        self.variance_scale_ = (self.scale / (2.0 * self.kappa_)) if self.kappa_ > 0 else math.inf
        # prefactor that makes the bound tight at the median level
        med = h[m][len(h[m]) // 2]
        pm = p[m][len(h[m]) // 2]
        self.C_ = float(pm * math.exp(self.kappa_ * med ** 2 / self.scale))
        return self

    def report(self) -> dict:
        self._check_fitted("kappa_")
        return {"kappa_hat": self.kappa_, "slope": self.slope_, "intercept": self.intercept_,
                "r2": self.r2_, "variance_scale": self.variance_scale_, "C_tight_at_median": self.C_,
                "levels": self.levels_.tolist(), "p_hat": self.p_hat_.tolist(), "scale": self.scale}


def exceedance_calibration(deviations, h_grid=None, scale: float = 1.0) -> dict:
    """Convenience wrapper returning the calibration report."""
    return ExceedanceCalibrator(h_grid=h_grid, scale=scale).fit(deviations).report()
