"""Order checks on the principal solution of the linearization along slow segments."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..koper import KoperParams, koper_model
from ..sde_core import SolverConfig, _step_matrices, integrate_det, linearize


@dataclass
class CouplingReport:
    eps: list
    sup_ratio: list            # sup_r |U_etaxi(s_end, r)| / eps
    s_end: list
    n_steps: list
    start: tuple = (-2.0, -1.8, -8.0)
    y_end: float = 1.8
    extra: dict = field(default_factory=dict)

    @property
    def band_ratio(self) -> float:
        v = np.asarray(self.sup_ratio, dtype=float)
        return float(v.max() / v.min())

    def to_dict(self) -> dict:
        return {"eps": self.eps, "sup_ratio": self.sup_ratio, "s_end": self.s_end,
                "n_steps": self.n_steps, "band_ratio": self.band_ratio,
                "start": list(self.start), "y_end": self.y_end}


def slow_segment(model, start, y_end: float, dt: Optional[float] = None, t_max: float = 5.0):
    """Deterministic RK4 trajectory from `start`, cut at the first step with ``y >= y_end``."""
    cfg = SolverConfig(dt=dt or model.eps / 20, t_max=t_max, scheme="rk4_deterministic")
    tr = integrate_det(model, np.asarray(start, dtype=float), cfg)
    hit = np.flatnonzero(tr.y >= y_end)
    if hit.size == 0:
        raise RuntimeError(f"segment did not reach y = {y_end}")
    n = hit[0] + 1
    tr.times, tr.states = tr.times[:n], tr.states[:n]
    return tr


def coupling_sup(series) -> float:
    """sup over r of |U_etaxi(s_end, r)| where U(s_end, r) runs to the last sample.

    Accumulated backward as ``P_r = P_{r+1} M_r`` from the RK4 one-step maps.
    """
    steps = _step_matrices(series)
    P = np.eye(3)
    best = 0.0
    for M in steps[::-1]:
        P = P @ M
        best = max(best, float(np.linalg.norm(P[1:, 0])))
    return best


def slow_coupling_study(eps_grid=(1e-2, 5e-3, 2.5e-3), params: Optional[KoperParams] = None,
                        start=(-2.0, -1.8, -8.0), y_end: float = 1.8,
                        dt_factor: float = 1 / 20) -> CouplingReport:
    """Fast-to-slow coupling of the linearization along the left attracting sheet.

    On a normally attracting slow segment the slow-from-fast block of the
    principal solution is O(eps) uniformly in the start time, so the ratio
    ``sup_r |U_etaxi| / eps`` should stay in a band as eps is halved.
    """
    params = params or KoperParams(k=-10.0, lam=-7.0, eps2=1.0)
    rep = CouplingReport([], [], [], [], start=tuple(start), y_end=y_end)
    for e in eps_grid:
        m = koper_model(params.with_(eps1=float(e)))
        tr = slow_segment(m, start, y_end, dt=float(e) * dt_factor)
        rep.eps.append(float(e))
        rep.sup_ratio.append(coupling_sup(linearize(m, tr)) / float(e))
        rep.s_end.append(float(tr.times[-1]))
        rep.n_steps.append(len(tr) - 1)
    return rep
