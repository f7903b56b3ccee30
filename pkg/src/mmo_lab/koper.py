"""The Koper model: field, noise matrix, slow-manifold geometry and folded singularities.

    eps dx/ds = y - x^3 + 3x
        dy/ds = k x - 2(y + lambda) + z
        dz/ds = eps2 (lambda + y - z)

with correlated additive noise whose rows are taken from a constant 3x3
matrix ``M``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .sde_core import Box, FastSlowModel, NoiseIntensities, SolverConfig, integrate_det

DEFAULT_M = np.array([[1.0, 0.5, 0.2],
                      [0.5, 1.0, 0.3],
                      [0.2, 0.3, 1.0]])

KOPER_BOX = Box(lo=(-4.0, -10.0, -20.0), hi=(4.0, 10.0, 10.0))

EIG_REAL_TOL = 1e-10


@dataclass(frozen=True)
class KoperParams:
    k: float = -10.0
    lam: float = -7.0
    eps1: float = 0.01
    eps2: float = 1.0

    def __post_init__(self):
        if not self.eps1 > 0:
            raise ValueError("eps1 must be positive")
        if not self.eps2 > 0:
            raise ValueError("eps2 must be positive")

    def with_(self, **kw) -> "KoperParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {"k": self.k, "lambda": self.lam, "eps1": self.eps1, "eps2": self.eps2}

    @classmethod
    def from_dict(cls, d) -> "KoperParams":
        return cls(k=float(d["k"]), lam=float(d["lambda"]), eps1=float(d["eps1"]),
                   eps2=float(d.get("eps2", 1.0)))


@dataclass(frozen=True)
class NoiseMatrix:
    """Rows ``F, G1, G2`` of the additive noise before intensity scaling."""

    M: np.ndarray = field(default_factory=lambda: DEFAULT_M.copy())

    def __post_init__(self):
        M = np.array(self.M, dtype=float)
        if M.shape != (3, 3) or not np.all(np.isfinite(M)):
            raise ValueError("noise matrix must be a finite 3x3 array")
        M.setflags(write=False)
        object.__setattr__(self, "M", M)

    @classmethod
    def default(cls) -> "NoiseMatrix":
        return cls(DEFAULT_M.copy())

    @property
    def is_default(self) -> bool:
        return bool(np.array_equal(self.M, DEFAULT_M))


def load_params(path):
    """Read ``{"k", "lambda", "eps1", "eps2", "M"}``; returns (KoperParams, NoiseMatrix)."""
    with open(path) as fh:
        d = json.load(fh)
    M = NoiseMatrix(d["M"]) if "M" in d else NoiseMatrix.default()
    return KoperParams.from_dict(d), M


def params_document(params: KoperParams, M: Optional[NoiseMatrix] = None) -> dict:
    d = params.to_dict()
    d["M"] = (M or NoiseMatrix.default()).M.tolist()
    return d


# -- field ----------------------------------------------------------------
def critical_manifold(x):
    """y = c(x) = x^3 - 3x."""
    x = np.asarray(x, dtype=float)
    return x ** 3 - 3 * x


def fold_lines():
    """The fold lines as ``(x, y)`` pairs, each a line parallel to the z-axis.

    Returns ``(L_plus, L_minus) = ((1, -2), (-1, 2))``.
    """
    return (1.0, -2.0), (-1.0, 2.0)


def fast_linearization(x):
    """df/dx = 3 - 3x^2: negative on the attracting branches |x| > 1."""
    x = np.asarray(x, dtype=float)
    return 3.0 - 3.0 * x ** 2


def _field(p: KoperParams):
    k, lam, e2 = p.k, p.lam, p.eps2

    def fun(x, y, z):
        f = y - x ** 3 + 3 * x
        g1 = k * x - 2 * (y + lam) + z
        g2 = e2 * (lam + y - z)
        return f, g1, g2

    return fun


def _jacobian(p: KoperParams):
    k, e2 = p.k, p.eps2

    def jac(x, y, z):
        one = np.ones_like(np.asarray(x, dtype=float))
        zero = 0.0 * one
        return ((3 - 3 * x ** 2, one, zero),
                (k * one, -2 * one, one),
                (zero, e2 * one, -e2 * one))

    return jac


def koper_model(params: KoperParams, M: Optional[NoiseMatrix] = None,
                noise: Optional[NoiseIntensities] = None, box: Box = KOPER_BOX) -> FastSlowModel:
    """Koper model as a `FastSlowModel`.

    The rows of `M` are ``F, G1, G2``; the engine multiplies ``F`` by
    ``sigma/sqrt(eps1)`` and ``G1, G2`` by ``sigma_p``.  `noise` is only
    stored as metadata here, intensities are passed at integration time.
    """
    M = M if M is not None else NoiseMatrix.default()
    D = M.M @ M.M.T
    w = np.linalg.eigvalsh(D)
    meta = {**params.to_dict(), "M": M.M.tolist()}
    if noise is not None:
        meta["sigma"], meta["sigma_p"] = noise.sigma, noise.sigma_p
    ell = (float(w[0]), float(w[-1])) if w[0] > 0 else None
    return FastSlowModel(eps=params.eps1, field=_field(params), diffusion=M.M.copy(), k_bm=3,
                         jacobian=_jacobian(params), name=_model_id(params), box=box,
                         ellipticity=ell, params=meta)


def _model_id(p: KoperParams) -> str:
    return f"koper(k={p.k:.17g},lambda={p.lam:.17g},eps1={p.eps1:.17g},eps2={p.eps2:.17g})"


# -- symmetry -------------------------------------------------------------
def symmetry_map(X):
    """The point reflection (x, y, z) -> (-x, -y, -z)."""
    return -np.asarray(X, dtype=float)


def symmetric_params(params: KoperParams) -> KoperParams:
    """Parameters conjugate to `params` under the reflection (lambda -> -lambda)."""
    return params.with_(lam=-params.lam)


# -- slow flow ------------------------------------------------------------
def slow_flow(params: KoperParams, x, z, scale_eps2: bool = False):
    """Desingularized slow subsystem on the critical manifold.

    ``dx = kx - 2(c(x)+lambda) + z``, ``dz = (3x^2-3)(lambda + c(x) - z)``.
    Time runs backwards on the repelling branch |x| < 1.  With
    `scale_eps2` the second component carries the ``eps2`` factor of the
    full model; by default it is omitted (``eps2 = 1`` normalization).
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    c = critical_manifold(x)
    dx = params.k * x - 2 * (c + params.lam) + z
    dz = (3 * x ** 2 - 3) * (params.lam + c - z)
    if scale_eps2:
        dz = params.eps2 * dz
    return dx, dz


@dataclass(frozen=True)
class FoldedSingularity:
    location: tuple            # (x, z)
    fold: str                  # "L+" or "L-"
    eigenvalues: tuple         # (strong, weak) for real pairs, complex pair otherwise
    kind: str                  # node | focus | saddle | degenerate
    mu: Optional[float] = None
    k_mu: Optional[int] = None
    on_boundary: bool = False  # 1/mu within tolerance of an odd integer

    @property
    def is_node(self) -> bool:
        return self.kind == "node"


def secondary_canard_count(mu: float, tol: float = 1e-9):
    """k with ``2k+1 < 1/mu < 2k+3``; returns (k, on_boundary)."""
    r = 1.0 / mu
    k = int(math.floor((r - 1.0) / 2.0))
    nearest_odd = 2 * round((r - 1.0) / 2.0) + 1
    boundary = abs(r - nearest_odd) <= tol * r
    return max(k, 0), bool(boundary)


def slow_flow_matrix(params: KoperParams, fold: str = "L+", scale_eps2: bool = False) -> np.ndarray:
    sgn = 1.0 if fold == "L+" else -1.0
    A = np.array([[params.k, 1.0], [6.0 * (2.0 + params.k - sgn * params.lam), 0.0]])
    if scale_eps2:
        A[1] *= params.eps2
    return A


def classify_matrix(A: np.ndarray):
    """Return (kind, eigenvalues, mu) of a 2x2 linearization."""
    ev = np.linalg.eigvals(np.asarray(A, dtype=float))
    if np.max(np.abs(ev.imag)) > EIG_REAL_TOL * max(1.0, np.max(np.abs(ev))):
        return "focus", tuple(complex(v) for v in ev), None
    ev = np.sort(ev.real)
    a, b = float(ev[0]), float(ev[1])
    if a == 0.0 or b == 0.0:
        return "degenerate", (a, b), None
    if a * b < 0:
        return "saddle", (a, b), None
    # strong eigenvalue has the larger modulus
    strong, weak = (a, b) if abs(a) >= abs(b) else (b, a)
    return "node", (strong, weak), weak / strong


def folded_singularities(params: KoperParams, scale_eps2: bool = False) -> list:
    """Folded equilibria on L+ and L- with their classification."""
    out = []
    for fold, x, z in (("L+", 1.0, 2 * params.lam - 4 - params.k),
                       ("L-", -1.0, 2 * params.lam + 4 + params.k)):
        kind, ev, mu = classify_matrix(slow_flow_matrix(params, fold, scale_eps2))
        k_mu, edge = (None, False)
        if kind == "node" and 0 < mu < 1:
            k_mu, edge = secondary_canard_count(mu)
        out.append(FoldedSingularity(location=(x, z), fold=fold, eigenvalues=ev, kind=kind,
                                     mu=mu, k_mu=k_mu, on_boundary=edge))
    return out


def folded_node(params: KoperParams) -> FoldedSingularity:
    """The folded singularity on L+ (raises if it is not a node)."""
    fs = folded_singularities(params)[0]
    if not fs.is_node:
        raise ValueError(f"L+ singularity is a {fs.kind}, not a node")
    return fs


# -- assumption checks ----------------------------------------------------
@dataclass
class AssumptionReport:
    min_hyperbolicity: float            # min |df/dx| on C0 away from the folds
    normal_switching_min: float         # min |g1| sampled on L- (must be > 0)
    switching_failure_residual: float   # |g1| at the L+ folded singularity (should be 0)
    fold_curvature: tuple               # d2f/dx2 at x = +1, -1
    transversality_min: Optional[float]  # min |dx/ds| at drop-curve crossings along an orbit
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_assumptions(params: KoperParams, box: Box = KOPER_BOX, margin: float = 0.1,
                      n_grid: int = 801, orbit_time: float = 0.0) -> AssumptionReport:
    """Grid checks of normal hyperbolicity, normal switching and fold genericity.

    With ``orbit_time > 0`` a deterministic orbit from ``(0.5, -2.1, -8)`` is
    integrated and the fast drift is sampled where it crosses ``x = +-0.5``.
    """
    viol = []
    xs = np.linspace(box.lo[0], box.hi[0], n_grid)
    away = np.abs(np.abs(xs) - 1.0) >= margin
    a = np.abs(fast_linearization(xs[away]))
    hyper = float(a.min())
    if hyper <= 0:
        viol.append("normal hyperbolicity fails away from folds")

    zs = np.linspace(box.lo[2], box.hi[2], n_grid)
    _, g1, _ = _field(params)(-1.0, 2.0, zs)
    g1 = np.asarray(g1)
    # on L-, (df/dy, df/dz) = (1, 0), so the switching quantity is g1
    sw = float(np.min(np.abs(g1)))
    zero_at = 2 * params.lam + 4 + params.k
    if box.lo[2] <= zero_at <= box.hi[2]:
        viol.append(f"normal switching on L- fails at z={zero_at:.6g}")

    zn = 2 * params.lam - 4 - params.k
    g1_node = float(_field(params)(1.0, -2.0, zn)[1])
    if abs(g1_node) > 1e-12:
        viol.append("g1 does not vanish at the L+ folded singularity")

    curv = (-6.0, 6.0)

    trans = None
    if orbit_time > 0:
        model = koper_model(params, box=box)
        cfg = SolverConfig(dt=params.eps1 / 20, t_max=orbit_time)
        tr = integrate_det(model, (0.5, -2.1, -8.0), cfg)
        vals = []
        for lev in (0.5, -0.5):
            u = tr.x - lev
            idx = np.flatnonzero(np.sign(u[:-1]) != np.sign(u[1:]))
            if idx.size:
                f = model.components(tr.states[idx].T)[0]
                vals.append(np.abs(f) / params.eps1)
        if vals:
            trans = float(np.min(np.concatenate(vals)))
            if trans <= 0:
                viol.append("fast flow tangent to a drop curve")
    return AssumptionReport(min_hyperbolicity=hyper, normal_switching_min=sw,
                            switching_failure_residual=abs(g1_node), fold_curvature=curv,
                            transversality_min=trans, violations=viol)
