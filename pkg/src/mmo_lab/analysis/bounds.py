"""Literal evaluation of the probability bounds and spreading orders.

Every bound is a sum of Gaussian-type terms ``exp(-kappa * a / b)``
multiplied by a prefactor.  Values are returned as computed, even when they
exceed 1.  ``kappa``, ``C``, ``h0`` (and ``C0``, ``gamma`` for the
outer-sector bound) are free constants supplied through `BoundParams`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


class MissingArgument(KeyError):
    pass


@dataclass(frozen=True)
class BoundParams:
    kappa: float = 1.0
    C: float = 1.0
    h0: float = 1.0
    C0: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("kappa", "C", "h0", "C0", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def _g(kappa, num, den) -> float:
    """exp(-kappa*num/den) with the limits 0 (den -> 0, num > 0) and 1 (0/0)."""
    if den == 0:
        return 1.0 if num == 0 else 0.0
    if math.isinf(num):
        return 0.0
    return math.exp(-kappa * num / den)


def _ceil(v) -> float:
    return float(max(1, math.ceil(v - 1e-12)))


def _abslog(v) -> float:
    return abs(math.log(v))


def _prop33(a, p):
    e, s2, sp2 = a["eps"], a["sigma"] ** 2, a["sigma_p"] ** 2
    h, h1, k = a["h"], a["h1"], p.kappa
    return _ceil(a["s"] / e) * (_g(k, h * h, s2) + _g(k, h * h, sp2) + _g(k, h1 * h1, sp2)
                                + _g(k, h1 * h1, e * s2))


def _prop44(a, p):
    e, s2, sp2 = a["eps"], a["sigma"] ** 2, a["sigma_p"] ** 2
    h, h1, k = a["h"], a["h1"], p.kappa
    return _ceil(1.0 / e) * (_g(k, h * h, s2 * e ** (-1 / 3)) + _g(k, h * h, sp2 * e ** (-2 / 3))
                             + _g(k, h1 * h1, sp2) + _g(k, h1 * h1, e * _abslog(e) * s2))


def _prop47(a, p):
    e, s2, sp2 = a["eps"], a["sigma"] ** 2, a["sigma_p"] ** 2
    h1, k = a["h1"], p.kappa
    return p.C * _abslog(e) * (_g(k, h1 * h1, s2 * e + sp2 * e ** (1 / 3))
                               + _g(k, e, s2 + sp2 * e))


def _prop52(a, p):
    e, s2, sp2 = a["eps"], a["sigma"] ** 2, a["sigma_p"] ** 2
    s, s0, k = a["s"], a["s0"], p.kappa
    h, h1, h2 = a["h"], a["h1"], a["h2"]
    sa = abs(s)
    return _ceil((s - s0) / e) * (_g(k, h * h, (s2 + sp2) / sa)
                                  + _g(k, h1 * h1, s2 * e / sa + sp2 * sa)
                                  + _g(k, h2 * h2, sp2))


def _prop54(a, p):
    mu, e, k = a["mu"], a["eps"], p.kappa
    sb2, sbp2 = a["sigma_bar"] ** 2, a["sigma_bar_p"] ** 2
    h, h1, dth = a["h"], a["h1"], a["theta"] - a["theta0"]
    # the bracket is a remaining deviation budget and is clipped at zero
    lead = max(0.0, h - (h * h + h1 * h1) / math.sqrt(mu))
    w = e * dth / mu
    return _ceil(dth / mu) * (_g(k, lead * lead, (sb2 + sbp2) / math.sqrt(mu))
                              + _g(k, h * h, (sb2 + sbp2) * w) + _g(k, h1 * h1, sbp2 * w))


def _prop57(a, p):
    e, s2, sp2 = a["eps"], a["sigma"] ** 2, a["sigma_p"] ** 2
    h1, h2, k = a["h1"], a["h2"], p.kappa
    r = math.sqrt(e)
    return p.C * _abslog(e) * (_g(k, h1 * h1, (s2 + sp2) * r) + _g(k, h2 * h2, sp2 * r)
                               + _g(k, e ** 1.5, s2 + sp2 * e))


def _thm61(a, p):
    e, s2, sp2 = a["eps"], a["sigma"] ** 2, a["sigma_p"] ** 2
    h, h1, k = a["h"], a["h1"], p.kappa
    return p.C / e * (_g(k, h * h, s2 + sp2) + _g(k, h1 * h1, s2 * e * _abslog(e) + sp2)
                      + _g(k, e, s2 + sp2 * e ** (-1 / 3)))


def _thm62(a, p):
    e, mu, s2, sp2 = a["eps"], a["mu"], a["sigma"] ** 2, a["sigma_p"] ** 2
    h1, h2, k = a["h1"], a["h2"], p.kappa
    return p.C / e * (_g(k, h1 * h1 * math.sqrt(mu), (s2 + sp2) * math.sqrt(e))
                      + _g(k, h2 * h2, sp2) + _g(k, e ** 1.5, s2 + sp2))


def _thm63a(a, p):
    e, mu, s2, sp2 = a["eps"], a["mu"], a["sigma"] ** 2, a["sigma_p"] ** 2
    return p.C / e * _g(p.kappa, math.sqrt(mu) * e ** 1.5, s2 + sp2)


def _thm63b(a, p):
    e, mu, z = a["eps"], a["mu"], a["z"]
    s, sp = a["sigma"], a["sigma_p"]
    if z < math.sqrt(e * mu) * (1 - 1e-12):
        raise ValueError("the outer-sector z bound holds for z >= sqrt(eps*mu)")
    num = max(0.0, z * z - e * mu)
    return p.C0 * _abslog(s) ** p.gamma * _g(p.kappa, num, e * mu * _abslog(s + sp))


def _thm63c(a, p):
    e, s2, sp2 = a["eps"], a["sigma"] ** 2, a["sigma_p"] ** 2
    h1, k = a["h1"], p.kappa
    return p.C / e * (_g(k, h1 * h1, (s2 + sp2) * math.sqrt(e)) + _g(k, e ** 1.5, s2 + sp2 * e))


@dataclass(frozen=True)
class BoundFormula:
    fn: Callable
    args: tuple
    description: str
    h_args: tuple           # deviation thresholds the bound should decrease in
    noise_args: tuple


BOUNDS = {
    "prop3.3": BoundFormula(_prop33, ("s", "eps", "h", "h1", "sigma", "sigma_p"),
                            "slow-manifold neighbourhood, fast and slow deviations",
                            ("h", "h1"), ("sigma", "sigma_p")),
    "prop4.4": BoundFormula(_prop44, ("eps", "h", "h1", "sigma", "sigma_p"),
                            "regular-fold approach up to y = c1 eps^(2/3)",
                            ("h", "h1"), ("sigma", "sigma_p")),
    "prop4.7": BoundFormula(_prop47, ("eps", "h1", "sigma", "sigma_p"),
                            "jump after the regular fold, first hit of the next section",
                            ("h1",), ("sigma", "sigma_p")),
    "prop5.2": BoundFormula(_prop52, ("s", "s0", "eps", "h", "h1", "h2", "sigma", "sigma_p"),
                            "approach of the folded node along the attracting sheet",
                            ("h", "h1", "h2"), ("sigma", "sigma_p")),
    "prop5.4": BoundFormula(_prop54, ("theta", "theta0", "mu", "eps", "h", "h1",
                                      "sigma_bar", "sigma_bar_p"),
                            "zoomed folded-node neighbourhood (noise in zoomed units)",
                            ("h", "h1"), ("sigma_bar", "sigma_bar_p")),
    "prop5.7": BoundFormula(_prop57, ("eps", "h1", "h2", "sigma", "sigma_p"),
                            "exit from the folded node, first hit of the next section",
                            ("h1", "h2"), ("sigma", "sigma_p")),
    "thm6.1": BoundFormula(_thm61, ("eps", "h", "h1", "sigma", "sigma_p"),
                           "global return map", ("h", "h1"), ("sigma", "sigma_p")),
    "thm6.2": BoundFormula(_thm62, ("eps", "mu", "h1", "h2", "sigma", "sigma_p"),
                           "local return map, inner sectors", ("h1", "h2"), ("sigma", "sigma_p")),
    "thm6.3a": BoundFormula(_thm63a, ("eps", "mu", "sigma", "sigma_p"),
                            "outer sectors: landing below sqrt(eps mu)", (), ("sigma", "sigma_p")),
    "thm6.3b": BoundFormula(_thm63b, ("eps", "mu", "z", "sigma", "sigma_p"),
                            "outer sectors: landing above z (uses C0, gamma)", ("z",),
                            ("sigma", "sigma_p")),
    "thm6.3c": BoundFormula(_thm63c, ("eps", "h1", "sigma", "sigma_p"),
                            "outer sectors: y distance from the saturation interval", ("h1",),
                            ("sigma", "sigma_p")),
}


def eval_bound(theorem_id: str, args: dict, params: BoundParams = BoundParams()) -> float:
    """Right-hand side of the bound `theorem_id` for the given arguments."""
    try:
        form = BOUNDS[theorem_id]
    except KeyError:
        raise KeyError(f"unknown bound {theorem_id!r}; known: {sorted(BOUNDS)}") from None
    missing = [k for k in form.args if k not in args]
    if missing:
        raise MissingArgument(f"{theorem_id} requires {missing}")
    a = {k: float(args[k]) for k in form.args}
    for k in form.noise_args:
        if a[k] < 0:
            raise ValueError(f"{k} must be non-negative")
    if a["eps"] <= 0:
        raise ValueError("eps must be positive")
    return float(form.fn(a, params))


# -- spreading orders -----------------------------------------------------
def _norm_transition(tid: str) -> str:
    t = tid.replace("Σ", "S").replace("″", "''").replace("′", "'").replace("→", "-")
    t = t.replace("->", "-").replace(" ", "")
    return t


def _row(sx=None, sy=None, sz=None):
    return {"x": sx, "y": sy, "z": sz}


def _table():
    r = math.sqrt
    return {
        "S2-S3": lambda s, sp, e, mu: _row(s + sp, None, s * r(e) + sp),
        "S3-S4": lambda s, sp, e, mu: _row(s + sp, None, s * r(e) + sp),
        "S4-S4'": lambda s, sp, e, mu: _row(s / e ** (1 / 6) + sp / e ** (1 / 3), None,
                                            s * r(e * abs(math.log(e))) + sp),
        "S4'-S5": lambda s, sp, e, mu: _row(None, s * r(e) + sp * e ** (1 / 6),
                                            s * r(e) + sp * e ** (1 / 6)),
        "S5-S6": lambda s, sp, e, mu: _row(s + sp, None, s * r(e) + sp),
        "S6-S1": lambda s, sp, e, mu: _row(s + sp, None, s * r(e) + sp),
        "S1-S1'": lambda s, sp, e, mu: _row(None, (s + sp) * e ** 0.25, sp),
        "S1'-S1''": lambda s, sp, e, mu: _row(None, (s + sp) * (e / _need_mu(mu)) ** 0.25,
                                              sp * (e / _need_mu(mu)) ** 0.25),
        "S1''-S2": lambda s, sp, e, mu: _row(None, (s + sp) * e ** 0.25, sp * e ** 0.25),
    }


def _need_mu(mu):
    if mu is None:
        raise MissingArgument("this transition requires mu")
    return mu


TABLE1 = _table()


def table1_order(transition: str, sigma: float, sigma_p: float, eps: float, mu=None) -> dict:
    """Predicted fluctuation size per coordinate (None where no entry)."""
    t = _norm_transition(transition)
    if t not in TABLE1:
        raise KeyError(f"unknown transition {transition!r}; known: {list(TABLE1)}")
    if sigma < 0 or sigma_p < 0 or not eps > 0:
        raise ValueError("need sigma, sigma_p >= 0 and eps > 0")
    return TABLE1[t](float(sigma), float(sigma_p), float(eps), mu)


# -- Bernstein-type bound -------------------------------------------------
def bernstein_bound(h: float, V_list, gamma_list, tol: float = 1e-12) -> float:
    """``2 sum_i exp(-gamma_i h^2 / (2 V_i))`` for martingales with variance bounds V_i."""
    V = np.atleast_1d(np.asarray(V_list, dtype=float))
    g = np.atleast_1d(np.asarray(gamma_list, dtype=float))
    if V.shape != g.shape:
        raise ValueError("V_list and gamma_list must have equal length")
    if np.any(g < 0) or np.any(g > 1):
        raise ValueError("gamma values must lie in [0, 1]")
    if abs(math.fsum(g) - 1.0) > tol:
        raise ValueError(f"gamma values must sum to 1 (sum = {math.fsum(g)!r})")
    if np.any(V <= 0):
        raise ValueError("variance bounds must be positive")
    terms = [math.exp(-gi * h * h / (2.0 * Vi)) for gi, Vi in zip(g, V)]
    return 2.0 * math.fsum(terms)
