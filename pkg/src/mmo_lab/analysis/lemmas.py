"""Numerical checks of the scaling lemma and of the Bernstein-type inequality."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .bounds import bernstein_bound


class QuadratureError(ArithmeticError):
    pass


def _G(u):
    # antiderivative of |u|^(1/2)
    return math.copysign(2.0 / 3.0 * abs(u) ** 1.5, u)


def fold_rate(u, eps):
    """a(u) = -(|u|^(1/2) + eps^(1/3))."""
    return -(math.sqrt(abs(u)) + eps ** (1.0 / 3.0))


def alpha(s, r, eps):
    """Integral of a(u) from r to s."""
    return -(_G(s) - _G(r)) - eps ** (1.0 / 3.0) * (s - r)


def scaling_integral(nu: float, s: float, eps: float, s0: float = -1.0, rtol: float = 1e-10):
    """Quadrature of ``int_{s0}^{s} exp(alpha(s,r)/eps) |a(r)|^nu dr``.

    The kernel decays on the scale ``eps/|a(s)|`` below `s`; the interval is
    split geometrically on that scale and at the kink ``r = 0``.
    """
    if nu < -1:
        raise ValueError("nu must be >= -1")
    if not s0 < s:
        raise ValueError("need s0 < s")

    def f(r):
        return math.exp(alpha(s, r, eps) / eps) * abs(fold_rate(r, eps)) ** nu

    w = eps / abs(fold_rate(s, eps))
    pts = {s0, s}
    j = 1.0
    while s - j * w > s0:
        pts.add(s - j * w)
        j *= 3.0
    if s0 < 0 < s:
        pts.add(0.0)
    pts = sorted(pts)
    total, err = [], 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        v, e = integrate.quad(f, a, b, epsabs=0.0, epsrel=rtol, limit=200)
        total.append(v)
        err += e
    val = math.fsum(total)
    if not val > 0 or err > 1e-7 * val:
        raise QuadratureError(f"quadrature did not converge (value {val}, error {err})")
    return val, err


def s_points(eps: float, c: float = 1.0) -> dict:
    e23 = eps ** (2.0 / 3.0)
    return {"-0.5": -0.5, "-eps^(2/3)": -e23, "0": 0.0, "c*eps^(2/3)": c * e23}


@dataclass
class ScalingReport:
    nus: tuple
    eps_grid: tuple
    s_labels: tuple
    ratio: dict          # (s_label, nu, eps) -> integral / (eps |a(s)|^(2nu-1))
    ratio_diag: dict     # (s_label, nu, eps) -> integral / (eps |a(s)|^(nu-1))
    c: float = 1.0

    def _spread(self, table, s_label, nu=None):
        vals = [v for (sl, n, e), v in table.items() if sl == s_label and (nu is None or n == nu)]
        return max(vals) / min(vals)

    def spread(self, s_label, nu=None) -> float:
        """max/min of the literal ratio over eps (and over nu unless given)."""
        return self._spread(self.ratio, s_label, nu)

    def spread_diag(self, s_label, nu=None) -> float:
        return self._spread(self.ratio_diag, s_label, nu)

    def worst_spread(self) -> float:
        return max(self.spread(sl) for sl in self.s_labels)

    def passed(self, bound: float = 5.0) -> bool:
        return self.worst_spread() < bound

    def to_dict(self) -> dict:
        rows = []
        for (sl, nu, e), v in sorted(self.ratio.items(), key=lambda t: (t[0][0], t[0][1], -t[0][2])):
            rows.append({"s": sl, "nu": nu, "eps": e, "ratio": v,
                         "ratio_diag": self.ratio_diag[(sl, nu, e)]})
        return {"rows": rows, "spread": {sl: self.spread(sl) for sl in self.s_labels},
                "spread_diag": {sl: self.spread_diag(sl) for sl in self.s_labels}, "c": self.c}


def scaling_lemma_check(nus=(-1, 0, 1, 2), eps_grid=(1e-2, 1e-3, 1e-4, 1e-5), c: float = 1.0,
                        s0: float = -1.0) -> ScalingReport:
    """Ratio of the kernel integral to ``eps |a(s)|^(2 nu - 1)`` on a grid.

    The companion ratio to ``eps |a(s)|^(nu - 1)`` (the Laplace-type
    leading order of the same integral) is reported as a diagnostic.
    """
    if c > 1:
        raise ValueError("s = c eps^(2/3) must not exceed eps^(2/3)")
    ratio, diag = {}, {}
    labels = tuple(s_points(1.0, c))
    for e in eps_grid:
        for sl, s in s_points(e, c).items():
            a = abs(fold_rate(s, e))
            for nu in nus:
                val, _ = scaling_integral(nu, s, e, s0)
                ratio[(sl, nu, e)] = val / (e * a ** (2 * nu - 1))
                diag[(sl, nu, e)] = val / (e * a ** (nu - 1))
    return ScalingReport(nus=tuple(nus), eps_grid=tuple(eps_grid), s_labels=labels,
                         ratio=ratio, ratio_diag=diag, c=c)


# -- Bernstein Monte Carlo -----------------------------------------------
@dataclass
class BernsteinReport:
    t: float
    n_paths: int
    n_steps: int
    rows: list = field(default_factory=list)   # dicts h, p_hat, se, bound, ok

    @property
    def ok(self) -> bool:
        return all(r["ok"] for r in self.rows)


def bernstein_mc_check(n_paths: int = 10_000, t: float = 1.0, h_factors=None, n_steps: int = 1000,
                       n_mart: int = 1, G=None, gammas=None, seed: int = 0,
                       chunk: int = 100) -> BernsteinReport:
    """Empirical ``P{sup_s |M_s| >= h}`` against the Bernstein bound.

    With one martingale, ``M = G W`` for a standard Brownian motion. With
    ``n_mart >= 2`` the integrands are adapted rotations
    ``g_i = G_i (cos W1, sin W1)`` driven by two Brownian motions, which
    satisfy ``sum_j g_ij^2 = G_i^2`` exactly.  The supremum is taken on the
    time grid, which can only underestimate the continuous supremum.
    """
    if h_factors is None:
        h_factors = np.arange(1, 9) * 0.5
    G = np.ones(n_mart) if G is None else np.asarray(G, dtype=float)
    gam = np.full(n_mart, 1.0 / n_mart) if gammas is None else np.asarray(gammas, dtype=float)
    V = G ** 2 * t
    h = np.asarray(h_factors, dtype=float) * math.sqrt(t)
    dt = t / n_steps
    rng = np.random.Generator(np.random.Philox(seed))
    k = 1 if n_mart == 1 else 2
    M = np.zeros((n_mart, n_paths))
    W1 = np.zeros(n_paths)
    sup = np.zeros(n_paths)
    done = 0
    while done < n_steps:
        m = min(chunk, n_steps - done)
        dW = rng.standard_normal((m, k, n_paths)) * math.sqrt(dt)
        for i in range(m):
            if n_mart == 1:
                M[0] += G[0] * dW[i, 0]
            else:
                c, s = np.cos(W1), np.sin(W1)
                M += G[:, None] * (c * dW[i, 0] + s * dW[i, 1])[None, :]
                W1 = W1 + dW[i, 0]
            np.maximum(sup, np.sqrt(np.sum(M * M, axis=0)), out=sup)
        done += m
    rep = BernsteinReport(t=t, n_paths=n_paths, n_steps=n_steps)
    for hv in h:
        p = float(np.mean(sup >= hv))
        se = math.sqrt(p * (1 - p) / n_paths)
        b = bernstein_bound(hv, V, gam)
        rep.rows.append({"h": float(hv), "p_hat": p, "se": se, "bound": b, "ok": p <= b + 3 * se})
    return rep
