"""Local passage through a regular fold.

In blown-up coordinates ``x = eps^(1/3) xt``, ``y = eps^(2/3) theta`` the
fold reduces to the Riccati equation ``dxt/dtheta = theta + xt^2``.  The
solution that tracks the attracting branch ``xt ~ -sqrt(-theta)`` has a
horizontal asymptote ``theta*`` in the ``(xt, theta)`` plane; it equals the
first positive zero of ``Ai(-t)``.

The noise-free fold normal form ``eps dx/ds = y + x^2``, ``dy/ds = 1`` is
instantiated directly as a model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .sde_core import FastSlowModel

BLOWUP = 1e6


class AccuracyError(ArithmeticError):
    """Extrapolated asymptote disagrees across seeding points."""


@dataclass(frozen=True)
class RiccatiState:
    x_t: float
    theta: float


@dataclass
class RiccatiPath:
    theta: np.ndarray
    x_t: np.ndarray
    blown_up: bool = False

    def final(self) -> RiccatiState:
        return RiccatiState(float(self.x_t[-1]), float(self.theta[-1]))


def _riccati_rhs(theta, x):
    return theta + x * x


def riccati_flow(x0: float, theta0: float, theta_end: float, h: float = 1e-3) -> RiccatiPath:
    """RK4 for ``dxt/dtheta = theta + xt^2`` with blow-up stop at ``|xt| > 1e6``."""
    if h <= 0:
        raise ValueError("h must be positive")
    n = max(1, int(math.ceil(abs(theta_end - theta0) / h - 1e-9)))
    hh = (theta_end - theta0) / n
    th = np.empty(n + 1)
    xs = np.empty(n + 1)
    th[0], xs[0] = theta0, x0
    t, x = float(theta0), float(x0)
    for i in range(1, n + 1):
        k1 = _riccati_rhs(t, x)
        k2 = _riccati_rhs(t + hh / 2, x + hh / 2 * k1)
        k3 = _riccati_rhs(t + hh / 2, x + hh / 2 * k2)
        k4 = _riccati_rhs(t + hh, x + hh * k3)
        x = x + hh / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = theta0 + i * hh
        if not math.isfinite(x) or abs(x) > BLOWUP:
            return RiccatiPath(th[:i], xs[:i], blown_up=True)
        th[i], xs[i] = t, x
    return RiccatiPath(th, xs)


def asymptotic_seed(x_t):
    """Two-term expansion ``theta = -xt^2 - 1/(2 xt)`` of the distinguished solution."""
    x_t = np.asarray(x_t, dtype=float)
    return -x_t ** 2 - 1.0 / (2.0 * x_t)


def distinguished_solution(X: float, x_end=None, rtol: float = 1e-12, max_step: float = np.inf,
                           dense: bool = False):
    """theta(xt) of the distinguished solution from ``xt = -X`` to `x_end` (default +X).

    Written as ``dtheta/dxt = 1/(theta + xt^2)``, which is stiff near the
    seed (relaxation rate about ``4 X^2``), so LSODA with an analytic
    Jacobian is used.
    """
    x_end = X if x_end is None else x_end
    th0 = float(asymptotic_seed(-X))

    def rhs(x, th):
        return 1.0 / (th + x * x)

    def jac(x, th):
        return [[-1.0 / (th[0] + x * x) ** 2]]

    sol = solve_ivp(rhs, (-X, x_end), [th0], method="LSODA", rtol=rtol, atol=rtol * 1e-2,
                    jac=jac, max_step=max_step, dense_output=dense)
    if not sol.success:
        raise AccuracyError(sol.message)
    return sol


@dataclass
class AsymptoteResult:
    theta_star: float
    estimates: dict            # X -> theta(X) + 1/X
    richardson: float
    spread: float

    def __float__(self):
        return self.theta_star


def riccati_asymptote(seeds=(10.0, 20.0, 40.0), rtol: float = 1e-12, max_step: float = np.inf,
                      tol: float = 1e-3) -> AsymptoteResult:
    """theta* from ``theta(X) + 1/X`` at several X, Richardson-extrapolated.

    The remainder of ``theta(X) + 1/X`` is O(X^-3), so the two largest
    seeds are combined as ``(8 v(2X) - v(X)) / 7``.
    """
    seeds = sorted(float(s) for s in seeds)
    est = {}
    for X in seeds:
        sol = distinguished_solution(X, rtol=rtol, max_step=max_step)
        est[X] = float(sol.y[0, -1] + 1.0 / X)
    vals = np.array(list(est.values()))
    spread = float(vals.max() - vals.min())
    if spread > tol:
        raise AccuracyError(f"asymptote estimates spread {spread:.3g} > {tol}")
    a, b = seeds[-2], seeds[-1]
    r = (b / a) ** 3
    rich = (r * est[b] - est[a]) / (r - 1.0)
    return AsymptoteResult(theta_star=float(rich), estimates=est, richardson=float(rich),
                           spread=spread)


def seeding_residual(X: float, lead: float = 8.0) -> float:
    """|theta_seed(-X) - theta(-X)| with theta from a run seeded at -lead*X.

    The forward flow contracts onto the distinguished solution, so the
    early-seeded run is a reference whose own seeding error has decayed.
    """
    sol = distinguished_solution(lead * X, x_end=-X)
    return float(abs(asymptotic_seed(-X) - sol.y[0, -1]))


# -- independent Airy oracle ----------------------------------------------
def airy_ai_series(x: float, tol: float = 1e-17, max_terms: int = 400) -> float:
    """Ai(x) from its Maclaurin series (adequate for |x| <~ 5)."""
    c1 = 1.0 / (3 ** (2.0 / 3.0) * math.gamma(2.0 / 3.0))
    c2 = 1.0 / (3 ** (1.0 / 3.0) * math.gamma(1.0 / 3.0))
    f_term, g_term = 1.0, x
    f, g = f_term, g_term
    x3 = x ** 3
    for k in range(1, max_terms):
        f_term *= x3 / ((3 * k - 1) * (3 * k))
        g_term *= x3 / ((3 * k) * (3 * k + 1))
        f += f_term
        g += g_term
        if abs(f_term) + abs(g_term) < tol * (abs(f) + abs(g)):
            break
    return c1 * f - c2 * g


def airy_first_zero(lo: float = 2.0, hi: float = 2.6, tol: float = 1e-14) -> float:
    """First positive t with Ai(-t) = 0, by bisection on the series."""
    flo = airy_ai_series(-lo)
    if flo * airy_ai_series(-hi) > 0:
        raise ValueError("bracket does not contain a sign change")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = airy_ai_series(-mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- fold normal form -----------------------------------------------------
@dataclass(frozen=True)
class FoldNormalFormParams:
    eps: float
    sigma: float = 0.0
    sigma_p: float = 0.0
    g1: float = 1.0
    g2: float = 0.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.sigma < 0 or self.sigma_p < 0:
            raise ValueError("noise intensities must be non-negative")


def fold_normal_form_model(p: FoldNormalFormParams) -> FastSlowModel:
    """``eps dx/ds = y + x^2``, ``dy/ds = g1``, ``dz/ds = g2`` with identity noise rows."""
    g1, g2 = p.g1, p.g2

    def fld(x, y, z):
        return y + x * x, g1 + 0.0 * x, g2 + 0.0 * x

    def jac(x, y, z):
        one = np.ones_like(np.asarray(x, dtype=float))
        zero = 0.0 * one
        return ((2 * x, one, zero), (zero, zero, zero), (zero, zero, zero))

    return FastSlowModel(eps=p.eps, field=fld, diffusion=np.eye(3), k_bm=3, jacobian=jac,
                         name=f"fold-normal-form(eps={p.eps:.17g})",
                         params={"eps": p.eps, "g1": g1, "g2": g2})


def attracting_branch(s):
    """Critical manifold branch x = -sqrt(-s) for s <= 0."""
    return -np.sqrt(-np.asarray(s, dtype=float))


def manifold_correction(s, eps):
    """Leading slow-manifold offset -eps/(4|s|) from the attracting branch."""
    return -eps / (4.0 * np.abs(np.asarray(s, dtype=float)))


def fold_passage(eps: float, s0: float = -1.0, s_end: float = 0.0, rtol: float = 1e-11):
    """Noise-free passage ``eps dx/ds = s + x^2`` from the branch point at `s0`."""
    def rhs(s, x):
        return (s + x * x) / eps

    def jac(s, x):
        return [[2 * x[0] / eps]]

    sol = solve_ivp(rhs, (s0, s_end), [float(attracting_branch(s0))], method="Radau",
                    rtol=rtol, atol=1e-14, jac=jac, dense_output=True)
    if not sol.success:
        raise ArithmeticError(sol.message)
    return sol


@dataclass
class FoldScalingReport:
    eps: list
    x0_ratio: list               # x(0) / eps^(1/3)
    band_sqrt: list              # sup |x - x_c| |s|^(1/2) / eps on [-0.5, -eps^(2/3)]
    band_linear: list            # sup |x - x_c| |s| / eps on the same window
    offset_quarter: list         # |x - x_c| / eps at s = -0.25
    s0: float = -1.0
    window: tuple = (-0.5, "-eps^(2/3)")

    @staticmethod
    def spread(values) -> float:
        v = np.abs(np.asarray(values, dtype=float))
        return float(v.max() / v.min())

    def to_dict(self) -> dict:
        return {"eps": self.eps, "x0_ratio": self.x0_ratio, "band_sqrt": self.band_sqrt,
                "band_linear": self.band_linear, "offset_quarter": self.offset_quarter,
                "s0": self.s0}


def fold_passage_scaling(eps_grid, s0: float = -1.0, n_window: int = 4000) -> FoldScalingReport:
    """x(0)/eps^(1/3) and slow-manifold offset ratios for each eps."""
    eps_grid = [float(e) for e in eps_grid]
    if max(eps_grid) / min(eps_grid) < 100:
        raise ValueError("eps grid must span at least two decades")
    rep = FoldScalingReport([], [], [], [], [], s0=s0)
    for e in eps_grid:
        sol = fold_passage(e, s0)
        x0 = float(sol.y[0, -1])
        s_hi = -e ** (2.0 / 3.0)
        s = -np.geomspace(0.5, -s_hi, n_window)
        dev = np.abs(sol.sol(s)[0] - attracting_branch(s))
        rep.eps.append(e)
        rep.x0_ratio.append(x0 / e ** (1.0 / 3.0))
        rep.band_sqrt.append(float(np.max(dev * np.sqrt(-s) / e)))
        rep.band_linear.append(float(np.max(dev * (-s) / e)))
        rep.offset_quarter.append(float(abs(sol.sol(-0.25)[0] - attracting_branch(-0.25)) / e))
    return rep


def fold_report(eps_grid=(1e-2, 1e-3, 1e-4)) -> dict:
    """JSON-ready summary: theta*, per-seed estimates and passage ratios."""
    a = riccati_asymptote()
    sc = fold_passage_scaling(eps_grid)
    return {"theta_star": a.theta_star, "seeds": {str(k): v for k, v in a.estimates.items()},
            "ratios_by_eps": sc.to_dict()}
