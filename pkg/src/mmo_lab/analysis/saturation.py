"""Sector-map saturation model for noisy returns near a folded node.

Beyond a sector ``k*`` noise makes paths leave the weak-canard neighbourhood
at a ``k``-independent place, so the stochastic sector map is
``Pi(k) = Pi_det(k)`` for ``k < k*`` and ``Pi_det(k*)`` otherwise.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

from ..folded_node import k_star_window


@dataclass
class SaturationModel:
    Pi_det: dict
    k_star: int
    window: tuple
    k_det: int
    fixed_point: int
    n_det: float
    n_stoch: float
    masking: Optional[bool]
    cycle: tuple = ()
    warnings: list = field(default_factory=list)

    def saturated(self, k: int) -> int:
        return saturated_map(self.Pi_det, self.k_star, k)

    @property
    def fixed_point_formula(self) -> int:
        return max(self.k_det, self.Pi_det[self.k_star])

    def to_dict(self) -> dict:
        return {"Pi_det": {str(k): v for k, v in sorted(self.Pi_det.items())},
                "k_star": self.k_star, "window": list(self.window), "k_det": self.k_det,
                "fixed_point": self.fixed_point, "n_det": self.n_det, "n_stoch": self.n_stoch,
                "masking": self.masking, "warnings": list(self.warnings)}


def saturated_map(Pi_det: dict, k_star: int, k: int) -> int:
    return Pi_det[k] if k < k_star else Pi_det[k_star]


def deterministic_fixed_point(Pi_det: dict) -> int:
    """Smallest k with Pi_det(k) <= k (the crossing of the identity)."""
    ks = sorted(Pi_det)
    for k in ks:
        if Pi_det[k] == k:
            return k
    for k in ks:
        if Pi_det[k] <= k:
            return k
    raise ValueError("the tabulated map does not cross the identity")


def is_nonincreasing(Pi_det: dict) -> bool:
    ks = sorted(Pi_det)
    return all(Pi_det[a] >= Pi_det[b] for a, b in zip(ks[:-1], ks[1:]))


def masking_condition(k: int, mu: float, eps: float, sigma: float) -> bool:
    """Noise masks the small oscillations when ``k^2 mu >= log(mu^(1/4) eps^(3/4)/sigma)``."""
    if sigma <= 0:
        return False
    return k * k * mu >= math.log(mu ** 0.25 * eps ** 0.75 / sigma)


def _iterate(Pi_det, k_star, k0, max_iter=1000):
    seen = [k0]
    k = k0
    for _ in range(max_iter):
        if k not in Pi_det or (k >= k_star and k_star not in Pi_det):
            raise ValueError(f"sector {k} is outside the tabulated map")
        kn = saturated_map(Pi_det, k_star, k)
        if kn == k:
            return k, ()
        if kn in seen:
            cyc = tuple(seen[seen.index(kn):])
            return max(cyc), cyc
        seen.append(kn)
        k = kn
    raise RuntimeError("sector iteration did not settle")


def saturation_predict(Pi_det: dict, mu: float, sigma: float, sigma_p: float,
                       eps: Optional[float] = None,
                       k_star: Union[str, int] = "midpoint",
                       calibrated: Optional[int] = None) -> SaturationModel:
    """Saturated sector dynamics for a tabulated deterministic sector map.

    `k_star` is ``"midpoint"`` (default), ``"low"``, ``"high"``,
    ``"calibrated"`` (uses `calibrated`, clipped to the window) or an
    integer inside the window ``[ceil(1/sqrt(mu)), ceil(sqrt(|log(sigma+sigma_p)|/mu))]``.
    The operating sector is the fixed point reached by iterating the
    saturated map from the deterministic fixed point.
    """
    Pi = {int(k): int(v) for k, v in Pi_det.items()}
    notes = []
    if not is_nonincreasing(Pi):
        msg = "Pi_det is not monotone decreasing; the saturation picture assumes it is"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    total = sigma + sigma_p
    if not 0 < total < 1:
        raise ValueError("saturation needs 0 < sigma + sigma_p < 1")
    low, high = k_star_window(mu, total)
    if high < low:
        high = low
    if k_star == "midpoint":
        ks = (low + high) // 2
    elif k_star == "low":
        ks = low
    elif k_star == "high":
        ks = high
    elif k_star == "calibrated":
        if calibrated is None:
            raise ValueError("k_star='calibrated' needs a calibrated value")
        ks = min(max(int(calibrated), low), high)
        if ks != int(calibrated):
            notes.append(f"calibrated k* = {calibrated} clipped to the window [{low}, {high}]")
    else:
        ks = int(k_star)
        if not low <= ks <= high:
            raise ValueError(f"k* = {ks} outside the window [{low}, {high}]")
    if ks not in Pi:
        raise ValueError(f"k* = {ks} is not tabulated")
    k_det = deterministic_fixed_point(Pi)
    fp, cyc = _iterate(Pi, ks, k_det)
    n_det = float(k_det)
    n_stoch = 0.5 * (Pi[ks] + ks) if k_det >= ks else float(k_det)
    mask = masking_condition(fp, mu, eps, sigma) if eps is not None else None
    return SaturationModel(Pi_det=Pi, k_star=ks, window=(low, high), k_det=k_det, fixed_point=fp,
                           n_det=n_det, n_stoch=n_stoch, masking=mask, cycle=cyc, warnings=notes)
