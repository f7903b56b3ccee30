"""Noise- and eps-sweeps of the stochastic spreading with log-log slope fits."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..io import csv_text, json_text, write_csv, write_json
from ..sde_core import NoiseIntensities
from .ensemble import EnsembleSpec, point_seed, reference_hit, run_ensemble
from .stats import InsufficientData, SlopeFit, SpreadStats, fit_slope, spreading_stats


@dataclass
class SweepPoint:
    value: float
    stats: Optional[SpreadStats]
    degraded: bool
    n_failed: int


@dataclass
class SweepResult:
    variable: str                 # "sigma" or "eps"
    points: list
    fits: dict                    # coord -> SlopeFit
    coords: tuple
    excluded: list = field(default_factory=list)

    def rows(self):
        for p in self.points:
            for c in self.coords:
                std = p.stats.std[c] if p.stats is not None else float("nan")
                n_eff = p.stats.n_eff if p.stats is not None else 0
                yield [p.value, c, std, n_eff]

    def csv(self) -> str:
        return csv_text(["sigma_or_eps", "coord", "std", "n_eff"], self.rows())

    def fit_document(self) -> dict:
        return {c: f.to_dict() for c, f in self.fits.items()}

    def write(self, csv_path, json_path):
        write_csv(csv_path, ["sigma_or_eps", "coord", "std", "n_eff"], list(self.rows()))
        write_json(json_path, self.fit_document())


def log_grid(lo: float, hi: float, n: int) -> np.ndarray:
    if not (0 < lo < hi) or n < 2:
        raise ValueError("grid needs 0 < lo < hi and at least 2 points")
    return np.logspace(np.log10(lo), np.log10(hi), int(n))


def _check_grid(grid):
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 2 or np.any(g <= 0) or np.any(np.diff(g) <= 0):
        raise ValueError("grid must be positive and strictly increasing")
    return g


def _finish(variable, grid, ensembles, coords) -> SweepResult:
    points, excluded = [], []
    for v, ens in zip(grid, ensembles):
        try:
            st = spreading_stats(ens, coords)
        except InsufficientData:
            st = None
        bad = ens.degraded or st is None
        if bad:
            excluded.append(float(v))
        points.append(SweepPoint(float(v), st, bool(ens.degraded), ens.n_failed))
    fits = {}
    use = [p for p in points if not (p.degraded or p.stats is None)]
    for c in coords:
        fits[c] = fit_slope([p.value for p in use], [p.stats.std[c] for p in use], coord=c)
    return SweepResult(variable=variable, points=points, fits=fits, coords=tuple(coords),
                       excluded=excluded)


def sweep_noise(spec: EnsembleSpec, sigma_grid, ratio: float = 1.0,
                coords: Optional[Sequence[str]] = None, threads: Optional[int] = None) -> SweepResult:
    """Spreading vs sigma with ``sigma_p = ratio * sigma``.

    Grid point `j` uses the seed ``base_seed + j``; the deterministic
    reference hit is shared by all points.
    """
    grid = _check_grid(sigma_grid)
    coords = tuple(coords) if coords is not None else tuple("xyz"[i] for i in spec.target.others)
    ref = reference_hit(spec)
    ens = []
    for j, s in enumerate(grid):
        sj = spec.with_(noise=NoiseIntensities(float(s), float(ratio * s)),
                        base_seed=point_seed(spec.base_seed, j))
        ens.append(run_ensemble(sj, threads=threads, reference=ref))
    return _finish("sigma", grid, ens, coords)


def sweep_epsilon(spec: EnsembleSpec, eps_grid, model_factory: Callable, dt_factor: float = 1 / 20,
                  coords: Optional[Sequence[str]] = None, threads: Optional[int] = None) -> SweepResult:
    """Spreading vs eps at fixed noise; ``model_factory(eps)`` rebuilds the model.

    The step is ``dt_factor * eps`` at every grid point.
    """
    grid = _check_grid(eps_grid)
    coords = tuple(coords) if coords is not None else tuple("xyz"[i] for i in spec.target.others)
    ens = []
    for j, e in enumerate(grid):
        sj = spec.with_(model=model_factory(float(e)), dt=float(dt_factor * e),
                        base_seed=point_seed(spec.base_seed, j))
        ens.append(run_ensemble(sj, threads=threads))
    return _finish("eps", grid, ens, coords)
