"""Rotation sectors of the Koper return map on the section y = -1.8, x > 0.

Canard orbits separate the sectors.  On the return map ``z -> z'`` they
show up as jumps, so the sector boundaries are located as discontinuities of
the deterministic return map and refined by bisection.  Sector ``k`` is the
interval between the ``(k-1)``-th and ``k``-th boundary, counted from the
primary strong canard.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .._params import ParamsMixin
from ..folded_node import CanardInfo, count_half_turns, k_star_window, sector_from_half_turns
from ..koper import KoperParams, folded_node, slow_flow_matrix
from ..sde_core import FastSlowModel, NoiseIntensities, SolverConfig, march
from ..sections import koper_sections, route_hits
from .ensemble import MASK64, point_seed

Y_SECTION = -1.8


def section_start(z, y_level: float = Y_SECTION) -> np.ndarray:
    """States on the attracting sheet x > 1 of the section at the given z values."""
    roots = np.roots([1.0, 0.0, -3.0, -y_level])
    x0 = float(max(r.real for r in roots if abs(r.imag) < 1e-12))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    return np.vstack([np.full(z.size, x0), np.full(z.size, y_level), z])


def return_route():
    sec = koper_sections()
    return [sec["S2"], sec["S4"], sec["S1"]]


def deterministic_returns(model: FastSlowModel, X0, dt: Optional[float] = None, t_max: float = 10.0):
    """Noise-free global returns from the columns of ``X0`` (3, n)."""
    cfg = SolverConfig(dt=dt or model.eps / 20, t_max=t_max, scheme="rk4_deterministic")
    rh = route_hits(model, X0, return_route(), NoiseIntensities(), cfg)
    if not rh.ok.all():
        raise RuntimeError(f"{int((~rh.ok).sum())} deterministic returns failed")
    return rh.X


def stochastic_returns(model: FastSlowModel, X0, noise: NoiseIntensities, seed: int,
                       dt: Optional[float] = None, t_max: float = 10.0, indices=None):
    """One stochastic global return per column; failed paths are NaN."""
    cfg = SolverConfig(dt=dt or model.eps / 20, t_max=t_max, scheme="euler_maruyama",
                       seed=int(seed) & MASK64)
    rh = route_hits(model, X0, return_route(), noise, cfg, indices=indices)
    return np.where(rh.ok[None, :], rh.X, np.nan)


class SectorBoundaries(ParamsMixin):
    """Locate canard-induced discontinuities of the deterministic return map.

    Parameters
    ----------
    z_lo, z_hi : scanned range of z on the section.
    n_grid : number of scan points.
    jump_tol : candidate threshold for the jump of z' between neighbouring
        scan points.
    keep_tol : a refined bracket is a boundary when z' still jumps by more
        than this across it; steep but smooth stretches fall below.
    refine_tol : bisection stops when brackets are narrower than this.
    dt : integration step (default eps/20).
    """

    def __init__(self, z_lo: float = -9.25, z_hi: float = -8.37, n_grid: int = 361,
                 jump_tol: float = 1.5e-3, keep_tol: float = 1e-3, refine_tol: float = 1e-4,
                 dt: Optional[float] = None):
        self.z_lo = z_lo
        self.z_hi = z_hi
        self.n_grid = n_grid
        self.jump_tol = jump_tol
        self.keep_tol = keep_tol
        self.refine_tol = refine_tol
        self.dt = dt

    def _map(self, model, z):
        return deterministic_returns(model, section_start(z), dt=self.dt)[2]

    def fit(self, model: FastSlowModel, y=None):
        Z = np.linspace(self.z_lo, self.z_hi, self.n_grid)
        Z1 = self._map(model, Z)
        jumps = np.flatnonzero(np.abs(np.diff(Z1)) > self.jump_tol)
        lo, hi = Z[jumps].copy(), Z[jumps + 1].copy()
        flo, fhi = Z1[jumps].copy(), Z1[jumps + 1].copy()
        while lo.size and np.max(hi - lo) > self.refine_tol:
            mid = 0.5 * (lo + hi)
            fm = self._map(model, mid)
            left = np.abs(fm - flo) <= np.abs(fm - fhi)
            lo = np.where(left, mid, lo)
            flo = np.where(left, fm, flo)
            hi = np.where(left, hi, mid)
            fhi = np.where(left, fhi, fm)
        keep = np.abs(fhi - flo) > self.keep_tol
        self.boundaries_ = 0.5 * (lo + hi)[keep]
        self.jumps_ = (fhi - flo)[keep]
        self.z_grid_ = Z
        self.return_grid_ = Z1
        return self

    @property
    def n_sectors(self) -> int:
        self._check_fitted("boundaries_")
        return len(self.boundaries_) + 1

    def sector_of(self, z):
        """Number of boundaries below z (sector 0 lies below the strong canard)."""
        self._check_fitted("boundaries_")
        return np.searchsorted(self.boundaries_, np.asarray(z, dtype=float), side="left")

    def midpoint(self, k: int) -> float:
        b = self.boundaries_
        if k <= 0:
            return float(b[0] - 0.5 * (b[1] - b[0]))
        if k >= len(b):
            return float(b[-1] + 0.5 * (b[-1] - b[-2]))
        return float(0.5 * (b[k - 1] + b[k]))

    def sector_map(self, model: FastSlowModel, sectors=None) -> dict:
        """Deterministic sector map k -> sector of the return from the sector midpoint."""
        self._check_fitted("boundaries_")
        ks = list(range(1, len(self.boundaries_) + 1)) if sectors is None else list(sectors)
        z1 = self._map(model, [self.midpoint(k) for k in ks])
        return {k: int(s) for k, s in zip(ks, self.sector_of(z1))}

    def deterministic_fixed_point(self, model: FastSlowModel, z0: float, n_returns: int = 30,
                                  tol: float = 1e-7) -> float:
        z = float(z0)
        for _ in range(n_returns):
            zn = float(self._map(model, [z])[0])
            if abs(zn - z) < tol:
                return zn
            z = zn
        return z


@dataclass
class SectorStats:
    sector: int
    z0: float
    mean: float
    std: float
    n_eff: int


def sector_return_stats(model: FastSlowModel, boundaries: SectorBoundaries, sectors,
                        noise: NoiseIntensities, N: int = 200, base_seed: int = 0,
                        dt: Optional[float] = None) -> list:
    """Mean and std of the stochastic return z' from each sector midpoint."""
    out = []
    for j, k in enumerate(sectors):
        z0 = boundaries.midpoint(k)
        X0 = section_start(np.full(N, z0))
        Z = stochastic_returns(model, X0, noise, point_seed(base_seed, j), dt=dt)[2]
        Z = Z[np.isfinite(Z)]
        out.append(SectorStats(sector=int(k), z0=z0, mean=float(np.mean(Z)),
                               std=float(np.std(Z, ddof=1)), n_eff=int(Z.size)))
    return out


def saturation_onset(stats: list) -> int:
    """Smallest sector from which every return distribution matches the last one.

    Two sectors match when their means differ by less than the pooled std.
    """
    ref = stats[-1]
    onset = ref.sector
    for st in reversed(stats):
        pooled = math.sqrt(0.5 * (st.std ** 2 + ref.std ** 2))
        if abs(st.mean - ref.mean) < pooled:
            onset = st.sector
        else:
            break
    return onset


def iterate_stochastic_returns(model: FastSlowModel, z0: float, n_returns: int,
                               noise: NoiseIntensities, n_chains: int = 20, base_seed: int = 0,
                               dt: Optional[float] = None) -> np.ndarray:
    """z on the section after each of `n_returns` returns, for `n_chains` chains.

    Return ``n`` of chain ``i`` uses the stream ``(base_seed + n, i)``.
    Chains that fail are NaN from then on.
    """
    X = section_start(np.full(n_chains, float(z0)))
    out = np.full((n_chains, n_returns + 1), np.nan)
    out[:, 0] = X[2]
    for n in range(n_returns):
        alive = np.flatnonzero(np.all(np.isfinite(X), axis=0))
        if alive.size == 0:
            break
        Xn = np.full_like(X, np.nan)
        Xn[:, alive] = stochastic_returns(model, X[:, alive], noise, point_seed(base_seed, n),
                                          dt=dt, indices=alive)
        X = Xn
        out[:, n + 1] = X[2]
    return out


def weak_direction_slope(params: KoperParams) -> float:
    """dx/dz along the weak eigendirection of the slow flow at the folded node."""
    ev, V = np.linalg.eig(slow_flow_matrix(params))
    v = V[:, int(np.argmin(np.abs(ev)))].real
    return float(v[0] / v[1])


def koper_half_turns(model: FastSlowModel, params: KoperParams, z_values,
                     dt: Optional[float] = None, window: float = 0.5, band: float = 1e-9,
                     t_max: float = 6.0) -> np.ndarray:
    """Half-turns near the folded node of the deterministic orbits from `z_values`.

    The weak canard is approximated by the straight line through the node
    along the weak eigendirection, so ``u1 = (x - x_n) - slope (z - z_n)``
    on the stretch with ``|x - x_n| < window`` before the first jump to
    x < 0.  The approximation resolves the twists of the first dozen
    sectors; deeper sectors twist with amplitudes far below its error.
    """
    fn = folded_node(params)
    xn, zn = fn.location
    slope = weak_direction_slope(params)
    cfg = SolverConfig(dt=dt or model.eps / 20, t_max=t_max, scheme="rk4_deterministic")
    res = march(model, section_start(z_values), cfg, record=True)
    S = res.states                       # (n_steps + 1, 3, n)
    out = np.empty(S.shape[2], dtype=int)
    for j in range(S.shape[2]):
        x, z = S[:, 0, j], S[:, 2, j]
        jump = np.flatnonzero(x < 0)
        if jump.size == 0:
            raise RuntimeError("orbit did not reach the left sheet")
        x, z = x[: jump[0]], z[: jump[0]]
        near = np.abs(x - xn) < window
        out[j] = count_half_turns((x[near] - xn) - slope * (z[near] - zn), band)
    return out


def koper_rotation_sector(model: FastSlowModel, params: KoperParams, z0: float,
                          dt: Optional[float] = None, sigma_total: Optional[float] = None,
                          **kw) -> CanardInfo:
    """`CanardInfo` from `koper_half_turns` for a single start."""
    n = int(koper_half_turns(model, params, [z0], dt=dt, **kw)[0])
    k = sector_from_half_turns(n) if n >= 1 else 0
    low, high = k_star_window(folded_node(params).mu, sigma_total)
    return CanardInfo(k=k, classification="inner" if k <= low else "outer", k_star_low=low,
                      k_star_high=high, halfturns=n)
