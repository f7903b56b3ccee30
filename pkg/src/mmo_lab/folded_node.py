"""Folded-node normal form in zoomed coordinates.

After the zoom ``x = sqrt(eps) xb``, ``y = eps yb``, ``z = sqrt(eps) zb`` the
noise-free normal form reads, with zb as the clock,

    mu dxb/dzb = 2 yb - 2 xb^2
    mu dyb/dzb = -2(1+mu) xb - 2 zb

The weak canard is ``xb = -zb, yb = zb^2 - mu/2``.  Deviations ``u`` from it
obey a variational system with the first integral ``K`` at ``zb = 0``; the
level curves of ``K`` are parametrized by ``(K, phi)`` through the implicit
function ``log(1 + f) = f - 2 t^2``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import erf

from .sde_core import State

BLOWUP = 1e6
HYSTERESIS = 1e-9


# -- parameters and zoom --------------------------------------------------
@dataclass(frozen=True)
class FnParams:
    mu: float
    eps: float
    sigma_bar: float = 0.0
    sigma_bar_p: float = 0.0

    def __post_init__(self):
        if not 0 < self.mu < 1:
            raise ValueError("mu must lie in (0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.sigma_bar < 0 or self.sigma_bar_p < 0:
            raise ValueError("noise intensities must be non-negative")

    @classmethod
    def from_intensities(cls, mu, eps, sigma=0.0, sigma_p=0.0) -> "FnParams":
        return cls(mu=mu, eps=eps, sigma_bar=zoom_intensity(sigma, eps),
                   sigma_bar_p=zoom_intensity(sigma_p, eps))


def zoom_intensity(sigma, eps):
    """Noise intensity in zoomed coordinates: eps^(-3/4) sigma."""
    return sigma * eps ** -0.75


@dataclass(frozen=True)
class ZoomedState:
    xb: float
    yb: float
    zb: float

    def as_array(self):
        return np.array([self.xb, self.yb, self.zb], dtype=float)


def zoom_in(state, eps: float) -> ZoomedState:
    x, y, z = state
    r = math.sqrt(eps)
    return ZoomedState(x / r, y / eps, z / r)


def zoom_out(zoomed, eps: float) -> State:
    xb, yb, zb = zoomed.xb, zoomed.yb, zoomed.zb
    r = math.sqrt(eps)
    return State(xb * r, yb * eps, zb * r)


# -- canards --------------------------------------------------------------
def weak_canard(zb, mu):
    zb = np.asarray(zb, dtype=float)
    return -zb, zb ** 2 - mu / 2.0


def strong_canard(zb, mu):
    zb = np.asarray(zb, dtype=float)
    xb = -zb / mu
    return xb, xb ** 2 - 0.5


def fn_field(xb, yb, zb, mu):
    """Right-hand side ``(dxb/dzb, dyb/dzb)`` of the zoomed normal form."""
    return (2 * yb - 2 * xb * xb) / mu, (-2 * (1 + mu) * xb - 2 * zb) / mu


@dataclass
class FnPath:
    zb: np.ndarray
    xb: np.ndarray
    yb: np.ndarray
    mu: float = 0.0
    blown_up: bool = False

    @property
    def u1(self):
        return self.xb + self.zb

    @property
    def u2(self):
        return self.yb - self.zb ** 2 + self.mu / 2


def _rk4_zb(rhs, Y0, z0, z1, h):
    n = max(1, int(math.ceil(abs(z1 - z0) / h - 1e-9)))
    hh = (z1 - z0) / n
    Y = np.array(Y0, dtype=float)
    zs = z0 + hh * np.arange(n + 1)
    out = np.empty((n + 1,) + Y.shape)
    out[0] = Y
    for i in range(n):
        z = zs[i]
        k1 = rhs(z, Y)
        k2 = rhs(z + hh / 2, Y + hh / 2 * k1)
        k3 = rhs(z + hh / 2, Y + hh / 2 * k2)
        k4 = rhs(z + hh, Y + hh * k3)
        Y = Y + hh / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(Y)) or np.max(np.abs(Y)) > BLOWUP:
            return zs[: i + 1], out[: i + 1], True
        out[i + 1] = Y
    return zs, out, False


def fn_flow(zoomed0, mu: float, zb_end: float, h: Optional[float] = None,
            correction: Optional[Callable] = None, eps: float = 0.0) -> FnPath:
    """RK4 in zb for the zoomed normal form, step ``mu/50`` by default.

    `correction`, if given, is a callable ``(xb, yb, zb) -> (cx, cy)`` added
    as ``sqrt(eps) * (cx, cy) / mu`` to the two rates.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    h = mu / 50 if h is None else h
    z0 = zoomed0.zb if isinstance(zoomed0, ZoomedState) else float(zoomed0[2])
    x0, y0 = (zoomed0.xb, zoomed0.yb) if isinstance(zoomed0, ZoomedState) else zoomed0[:2]
    r = math.sqrt(eps)

    def rhs(z, Y):
        dx, dy = fn_field(Y[0], Y[1], z, mu)
        if correction is not None and r > 0:
            cx, cy = correction(Y[0], Y[1], z)
            dx, dy = dx + r * cx / mu, dy + r * cy / mu
        return np.array([dx, dy])

    zs, Y, blown = _rk4_zb(rhs, (x0, y0), z0, zb_end, h)
    return FnPath(zb=zs, xb=Y[:, 0], yb=Y[:, 1], mu=mu, blown_up=blown)


# -- rectified coordinate -------------------------------------------------
def rectified_eta(xb, yb, mu):
    """eta = yb - xb^2 + (1+mu)/2."""
    return np.asarray(yb, dtype=float) - np.asarray(xb, dtype=float) ** 2 + (1 + mu) / 2.0


def gauss_integral(a):
    """int_0^a exp(-u^2/2) du = sqrt(pi/2) erf(a/sqrt(2))."""
    return math.sqrt(math.pi / 2) * erf(np.asarray(a, dtype=float) / math.sqrt(2))


@dataclass
class EtaMap:
    eta: np.ndarray
    zb: np.ndarray
    precondition_ok: bool


def eta_transition_map(eta_star, zb_star, xb, mu, alpha: float = 1.0, beta: float = 0.5) -> EtaMap:
    """Leading-order orbit through ``(xb, eta, zb) = (0, eta*, zb*)`` as a function of xb.

    ``eta(xb) = exp(2 xb^2) [eta* + zb* int_0^{2xb} exp(-u^2/2) du]`` and
    ``zb(xb) = zb* - mu xb`` (zb grows as xb decreases along the flow).
    A precondition outside ``|eta*| <= mu^alpha, |zb*| <= mu^beta`` only
    sets the flag and warns.
    """
    xb = np.asarray(xb, dtype=float)
    ok = abs(eta_star) <= mu ** alpha and abs(zb_star) <= mu ** beta
    if not ok:
        warnings.warn("eta map evaluated outside its validity window", RuntimeWarning)
    eta = np.exp(2 * xb ** 2) * (eta_star + zb_star * gauss_integral(2 * xb))
    return EtaMap(eta=eta, zb=zb_star - mu * xb, precondition_ok=ok)


def rectified_flow(eta_star, zb_star, xb_grid, mu, rtol=1e-11):
    """Integrate the rectified system with xb as the clock (oracle for the eta map).

    ``(mu dxb/dzb, mu deta/dzb) = (2 eta - (1+mu), -4 xb eta - 2 zb)``.
    """
    xb_grid = np.asarray(xb_grid, dtype=float)

    def rhs(x, Y):
        eta, zb = Y
        den = 2 * eta - (1 + mu)
        return [(-4 * x * eta - 2 * zb) / den, mu / den]

    out = np.empty((2, xb_grid.size))
    for sgn in (1, -1):
        m = (xb_grid >= 0) if sgn > 0 else (xb_grid < 0)
        if not m.any():
            continue
        xs = xb_grid[m]
        order = np.argsort(sgn * xs)
        end = xs[order][-1]
        sol = solve_ivp(rhs, (0.0, end), [eta_star, zb_star], method="DOP853", rtol=rtol,
                        atol=1e-14, dense_output=True)
        out[:, np.flatnonzero(m)] = sol.sol(xs)
    return out[0], out[1]


# -- variational system and first integral --------------------------------
def variational_rhs(zb, u, mu, freeze_zb: Optional[float] = None):
    u1, u2 = u[0], u[1]
    zc = zb if freeze_zb is None else freeze_zb
    return np.array([(4 * zc * u1 + 2 * u2 - 2 * u1 * u1) / mu, -2 * (1 + mu) * u1 / mu])


@dataclass
class VariationalPath:
    zb: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    blown_up: bool = False


def variational_flow(u0, zb0: float, zb_end: float, mu: float, h: Optional[float] = None,
                     freeze_zb: Optional[float] = None) -> VariationalPath:
    """RK4 for the deviation ``u`` from the weak canard; `freeze_zb` fixes the zb-coefficient."""
    h = mu / 100 if h is None else h
    zs, Y, blown = _rk4_zb(lambda z, u: variational_rhs(z, u, mu, freeze_zb), u0, zb0, zb_end, h)
    return VariationalPath(zb=zs, u1=Y[:, 0], u2=Y[:, 1], blown_up=blown)


def first_integral_K(u1, u2, mu):
    """K = [1 + 2(u2 - u1^2)/(1+mu)] exp(-2 u2/(1+mu))."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    return (1 + 2 * (u2 - u1 ** 2) / (1 + mu)) * np.exp(-2 * u2 / (1 + mu))


def dK_dzbar(u1, u2, zb, mu):
    """dK/dzb along the variational flow: -16 zb u1^2 exp(-2u2/(1+mu)) / ((1+mu) mu)."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    return -16 * zb * u1 ** 2 * np.exp(-2 * u2 / (1 + mu)) / ((1 + mu) * mu)


# -- level-curve parametrization ------------------------------------------
class ConvergenceError(ArithmeticError):
    pass


def _expm1_minus(q):
    """e^q - 1 - q without cancellation."""
    if abs(q) < 1e-3:
        return q * q * (0.5 + q * (1 / 6 + q * (1 / 24 + q * (1 / 120 + q / 720))))
    return math.expm1(q) - q


def f_solver_log(t: float, tol: float = 1e-12, max_iter: int = 100) -> float:
    """q = log(1 + f(t)), solving ``e^q - 1 - q = 2 t^2`` with ``sign q = sign t``.

    Working in q keeps f representable when 1 + f underflows (t << 0).
    The residual is measured relative to ``max(1, 2 t^2)``.
    """
    t = float(t)
    if t == 0.0:
        return 0.0
    rhs = 2 * t * t
    if abs(t) < 0.1 or 0 < t < 1.0:
        q = math.log1p(2 * t)
    elif t >= 1.0:
        q = math.log1p(rhs)
    else:
        q = -1.0 - rhs
    # the residual is convex with its minimum at q = 0: one root per branch
    lo, hi = (0.0, math.inf) if t > 0 else (-math.inf, 0.0)
    scale = max(1.0, rhs)
    for _ in range(max_iter):
        r = _expm1_minus(q) - rhs
        if abs(r) <= 1e-3 * tol * scale:
            return q
        # residual increases with |q| on both branches
        if (r > 0) == (t > 0):
            hi = min(hi, q)
        else:
            lo = max(lo, q)
        d = math.expm1(q)
        qn = q - r / d if d != 0 else q
        if not (lo < qn < hi and math.isfinite(qn)):
            if math.isfinite(lo) and math.isfinite(hi):
                qn = 0.5 * (lo + hi)
            else:
                qn = 2 * q if abs(q) > 0 else math.copysign(1e-3, t)
        if qn == q:
            break
        q = qn
    if abs(_expm1_minus(q) - rhs) > tol * scale:
        raise ConvergenceError(f"f_solver did not converge at t={t}")
    return q


def f_solver(t: float) -> float:
    """f(t) with ``log(1+f) = f - 2t^2`` and ``sign f = sign t``."""
    return math.expm1(f_solver_log(t))


def f_residual(t: float) -> float:
    q = f_solver_log(t)
    return abs(_expm1_minus(q) - 2 * t * t) / max(1.0, 2 * t * t)


def _f_minus_log1p(f):
    if abs(f) < 1e-3:
        return f * f * (0.5 - f * (1 / 3 - f * (0.25 - f / 5)))
    return f - math.log1p(f)


def f_inverse(f: float) -> float:
    """t with f(t) = f, i.e. ``t = sign(f) sqrt((f - log(1+f))/2)``; requires f > -1."""
    if not f > -1:
        raise ValueError("f must exceed -1")
    return math.copysign(math.sqrt(_f_minus_log1p(f) / 2.0), f)


@dataclass(frozen=True)
class LevelCoords:
    K: float
    phi: float
    degenerate: bool = False


def level_to_uv(K, phi, mu):
    """(u1, u2) on the level curve K at angle phi."""
    if not 0 < K <= 1:
        raise ValueError("K must lie in (0, 1]")
    L = abs(math.log(K))
    u1 = math.sqrt((1 + mu) / 2 * L) * math.sin(phi)
    X = math.sqrt(L / 2) * math.cos(phi)
    u2 = u1 * u1 + (1 + mu) / 2 * f_solver(X)
    return u1, u2


def uv_to_level(u1, u2, mu) -> LevelCoords:
    """Inverse of `level_to_uv`: solve for X in closed form, then K and phi."""
    F = 2 * (u2 - u1 * u1) / (1 + mu)
    if not F > -1:
        raise ValueError("point lies outside {K > 0}")
    X = f_inverse(F)
    L = 2 * X * X + 2 * u1 * u1 / (1 + mu)
    if L == 0.0:
        return LevelCoords(K=1.0, phi=math.nan, degenerate=True)
    phi = math.atan2(u1 / math.sqrt((1 + mu) * L / 2), X / math.sqrt(L / 2))
    return LevelCoords(K=math.exp(-L), phi=phi)


def level_log_K(u1, u2, mu) -> float:
    """log K from the parametrization, accurate also when K underflows."""
    F = 2 * (u2 - u1 * u1) / (1 + mu)
    X = f_inverse(F)
    return -(2 * X * X + 2 * u1 * u1 / (1 + mu))


# -- rotation sectors -----------------------------------------------------
@dataclass(frozen=True)
class CanardInfo:
    k: int
    classification: str
    k_star_low: int
    k_star_high: Optional[int]
    halfturns: int


def k_star_window(mu: float, sigma_total: Optional[float]):
    low = int(math.ceil(1.0 / math.sqrt(mu)))
    high = None
    if sigma_total:
        high = int(math.ceil(math.sqrt(abs(math.log(sigma_total)) / mu)))
    return low, high


def count_half_turns(u1, band: float = HYSTERESIS) -> int:
    """Sign changes of `u1`, ignoring excursions inside ``|u1| <= band``."""
    u1 = np.asarray(u1, dtype=float)
    sgn = np.where(u1 > band, 1, np.where(u1 < -band, -1, 0))
    sgn = sgn[sgn != 0]
    if sgn.size < 2:
        return 0
    return int(np.count_nonzero(sgn[1:] != sgn[:-1]))


def sector_from_half_turns(n: int) -> int:
    return max(0, (n - 1) // 2)


def rotation_sector(segment, mu: float, eps: Optional[float] = None,
                    sigma_total: Optional[float] = None, c0: float = 1.0,
                    band: float = HYSTERESIS) -> CanardInfo:
    """Sector index from half-turns around the weak canard.

    `segment` is an `FnPath`, a `Trajectory` in original normal-form
    coordinates (zoomed with `eps`), or an array ``(n, 3)`` of zoomed states.
    """
    if isinstance(segment, FnPath):
        u1 = segment.u1
    elif hasattr(segment, "states"):
        if eps is None:
            raise ValueError("eps is required to zoom a trajectory")
        S = np.asarray(segment.states, dtype=float)
        u1 = (S[:, 0] + S[:, 2]) / math.sqrt(eps)
    else:
        S = np.asarray(segment, dtype=float)
        u1 = S[:, 0] + S[:, 2]
    n = count_half_turns(u1, band)
    k = sector_from_half_turns(n) if n >= 1 else 0
    low, high = k_star_window(mu, sigma_total)
    cls = "inner" if k <= c0 * low else "outer"
    return CanardInfo(k=k, classification=cls, k_star_low=low, k_star_high=high, halfturns=n)


# -- averaging-level checks -----------------------------------------------
def k_delay(u0, zb0: float, mu: float, zb_max: Optional[float] = None, h: Optional[float] = None):
    """First zb > 0 where K returns to its value at `zb0` < 0.

    Compared against ``-zb0``: K grows while zb < 0 and decays after, with a
    delay symmetric to leading order.
    """
    if not zb0 < 0:
        raise ValueError("zb0 must be negative")
    zb_max = 3 * abs(zb0) if zb_max is None else zb_max
    p = variational_flow(u0, zb0, zb_max, mu, h)
    K = first_integral_K(p.u1, p.u2, mu)
    K0 = K[0]
    idx = np.flatnonzero((p.zb > 0) & (K <= K0))
    if idx.size == 0:
        return math.nan
    i = idx[0]
    # interpolate the crossing of K0 within the step
    z0, z1, k0, k1 = p.zb[i - 1], p.zb[i], K[i - 1], K[i]
    return float(z0 + (K0 - k0) * (z1 - z0) / (k1 - k0)) if k1 != k0 else float(z1)


def phi_rate_check(path: VariationalPath, mu: float, c: float = 10.0) -> dict:
    """mu dphi/dzb along a path where ``K >= c |zb|``, with calibrated c_minus/c_plus.

    Returns the fraction of positive rates and the tightest constants for
    ``c_- / (1 + |log K|^1/2) <= mu dphi/dzb <= c_+ (1 + |log K|^1/2)``.
    """
    lv = [uv_to_level(a, b, mu) for a, b in zip(path.u1, path.u2)]
    K = np.array([v.K for v in lv])
    phi = np.unwrap(np.array([v.phi for v in lv]))
    rate = mu * np.gradient(phi, path.zb)
    m = K >= c * np.abs(path.zb)
    if not m.any():
        return {"n": 0}
    w = 1 + np.sqrt(np.abs(np.log(K[m])))
    r = rate[m]
    return {"n": int(m.sum()), "positive_fraction": float(np.mean(r > 0)),
            "c_minus": float(np.min(r * w)), "c_plus": float(np.max(r / w)),
            "rate_min": float(r.min()), "rate_max": float(r.max())}
