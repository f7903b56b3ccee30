"""Fixed-step integration engine for 3D fast-slow SDEs and ODEs.

The integration clock is the slow time ``s``.  A model supplies the three
drift components ``(f, g1, g2)``; the fast component is divided by ``eps``
inside the engine, so that

    dx = f/eps ds + sigma/sqrt(eps) F dW
    dy = g1 ds    + sigma_p G1 dW
    dz = g2 ds    + sigma_p G2 dW

with one Brownian vector ``dW`` shared by the three rows.

All path arrays have shape ``(3, n)``: one column per path.  Arithmetic is
purely elementwise across columns, so a path's numbers never depend on which
other paths are integrated alongside it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from ._streams import NormalBlocks, ensemble_generators

SCHEMES = ("euler_maruyama", "rk4_deterministic")


class ModelEvaluationError(ArithmeticError):
    """Raised when a drift evaluation returns non-finite values."""


class State(NamedTuple):
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box bounding valid states."""

    lo: tuple = (-np.inf, -np.inf, -np.inf)
    hi: tuple = (np.inf, np.inf, np.inf)

    def contains(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        lo = np.asarray(self.lo, dtype=float).reshape((3,) + (1,) * (X.ndim - 1))
        hi = np.asarray(self.hi, dtype=float).reshape((3,) + (1,) * (X.ndim - 1))
        # NaN compares False, so non-finite states count as escaped
        return np.all((X >= lo) & (X <= hi), axis=0)


@dataclass(frozen=True)
class NoiseIntensities:
    sigma: float = 0.0
    sigma_p: float = 0.0

    def __post_init__(self):
        if not (self.sigma >= 0 and self.sigma_p >= 0):
            raise ValueError("noise intensities must be non-negative")

    @property
    def silent(self) -> bool:
        return self.sigma == 0.0 and self.sigma_p == 0.0


@dataclass(frozen=True)
class FastSlowModel:
    """A fast-slow system with one fast and two slow variables.

    Parameters
    ----------
    eps : timescale separation.
    field : callable ``(x, y, z) -> (f, g1, g2)``, vectorized over arrays.
    diffusion : constant ``(3, k_bm)`` array with rows ``F, G1, G2`` or a
        callable ``(x, y, z) -> array (3, k_bm, ...)``.
    jacobian : optional callable ``(x, y, z) -> (3, 3, ...)`` Jacobian of
        ``(f, g1, g2)`` with respect to ``(x, y, z)``.
    ellipticity : optional declared bounds ``(c_minus, c_plus)`` on the
        eigenvalues of ``D = (F;G)(F;G)^T``.
    """

    eps: float
    field: Callable
    diffusion: object
    k_bm: int = 3
    jacobian: Optional[Callable] = None
    name: str = "model"
    box: Box = Box()
    ellipticity: Optional[tuple] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.k_bm < 1:
            raise ValueError("Brownian dimension must be >= 1")
        if not callable(self.diffusion):
            D = np.asarray(self.diffusion, dtype=float)
            if D.shape != (3, self.k_bm):
                raise ValueError(f"diffusion must have shape (3, {self.k_bm})")
            object.__setattr__(self, "diffusion", D)

    # -- evaluation -------------------------------------------------------
    def components(self, X) -> np.ndarray:
        x, y, z = X
        f, g1, g2 = self.field(x, y, z)
        return np.array(np.broadcast_arrays(f, g1, g2), dtype=float)

    def drift_vector(self, X) -> np.ndarray:
        """Slow-time drift ``(f/eps, g1, g2)``."""
        x, y, z = X
        f, g1, g2 = self.field(x, y, z)
        f, g1, g2 = np.broadcast_arrays(f, g1, g2)
        return np.array([f / self.eps, g1, g2], dtype=float)

    def diffusion_at(self, X) -> np.ndarray:
        if callable(self.diffusion):
            x, y, z = X
            return np.asarray(self.diffusion(x, y, z), dtype=float)
        return self.diffusion

    def diffusion_matrix(self, X) -> np.ndarray:
        """D = (F;G)(F;G)^T, shape (3, 3, ...)."""
        R = self.diffusion_at(X)
        return np.einsum("ik...,jk...->ij...", R, R)

    def jacobian_components(self, X) -> np.ndarray:
        """Jacobian of (f, g1, g2); analytic when available."""
        X = np.asarray(X, dtype=float)
        if self.jacobian is not None:
            x, y, z = X
            J = self.jacobian(x, y, z)
            return np.array([np.broadcast_arrays(*row) for row in J], dtype=float)
        return fd_jacobian(self.components, X)

    def describe(self) -> str:
        return self.name


def fd_jacobian(fun, X) -> np.ndarray:
    """Central differences with step ``1e-6 (1 + |x_j|)`` per coordinate."""
    X = np.asarray(X, dtype=float)
    cols = []
    for j in range(3):
        h = 1e-6 * (1.0 + np.abs(X[j]))
        Xp = X.copy()
        Xm = X.copy()
        Xp[j] = Xp[j] + h
        Xm[j] = Xm[j] - h
        cols.append((fun(Xp) - fun(Xm)) / (2 * h))
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_max: float
    scheme: str = "euler_maruyama"
    seed: int = 0
    domain_box: Optional[Box] = None
    block: int = 2048

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def check_resolution(self, model: FastSlowModel):
        # the 1/eps stiffness of the fast drift must be resolved
        if self.dt > model.eps / 10 * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds eps/10={model.eps / 10}")

    def box_for(self, model: FastSlowModel) -> Box:
        return self.domain_box if self.domain_box is not None else model.box


@dataclass
class Trajectory:
    """Time-stamped states on the slow timescale.

    ``states`` has shape (n, 3).  ``escaped`` is set when the path left the
    domain box; the last stored state is then the last valid one.
    """

    times: np.ndarray
    states: np.ndarray
    seed: Optional[int] = None
    dt: Optional[float] = None
    model_id: str = ""
    escaped: bool = False
    timed_out: bool = False

    def __len__(self):
        return len(self.times)

    @property
    def x(self):
        return self.states[:, 0]

    @property
    def y(self):
        return self.states[:, 1]

    @property
    def z(self):
        return self.states[:, 2]

    def to_csv(self, path):
        from .io import write_csv

        rows = np.column_stack([self.times, self.states])
        write_csv(path, ["s", "x", "y", "z"], rows)


# -- single steps ----------------------------------------------------------
def drift(model: FastSlowModel, state) -> tuple:
    """Slow-time drift ``(dx_ds, dy_ds, dz_ds)`` at `state`."""
    X = np.asarray(state, dtype=float)
    v = model.drift_vector(X)
    if not np.all(np.isfinite(v)):
        raise ModelEvaluationError(f"non-finite drift at {X}")
    return tuple(v) if v.ndim == 1 else v


def _noise_scale(model, noise: NoiseIntensities) -> np.ndarray:
    return np.array([noise.sigma / math.sqrt(model.eps), noise.sigma_p, noise.sigma_p])


def _noise_increment(model, X, scale, dW) -> np.ndarray:
    R = model.diffusion_at(X)
    # explicit sum over Brownian components: elementwise, no BLAS reductions
    acc = None
    for j in range(model.k_bm):
        Rj = R[:, j]
        if Rj.ndim == 1 and dW.ndim > 1:
            Rj = Rj[:, None]
        term = Rj * dW[j]
        acc = term if acc is None else acc + term
    sc = scale if dW.ndim == 1 else scale[:, None]
    return sc * acc


def em_step(model: FastSlowModel, state, noise: NoiseIntensities, dt: float, rng_stream):
    """One Euler-Maruyama step.

    `rng_stream` is either a numpy Generator or an array of standard
    normals of shape ``(k_bm,)`` / ``(k_bm, n)`` (scaled by sqrt(dt) here).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    X = np.asarray(state, dtype=float)
    if isinstance(rng_stream, np.random.Generator):
        shape = (model.k_bm,) + X.shape[1:]
        xi = rng_stream.standard_normal(shape)
    else:
        xi = np.asarray(rng_stream, dtype=float)
    Xn = X + dt * model.drift_vector(X)
    if not noise.silent:
        Xn = Xn + _noise_increment(model, X, _noise_scale(model, noise), math.sqrt(dt) * xi)
    return Xn


def rk4_step(model: FastSlowModel, state, dt: float):
    X = np.asarray(state, dtype=float)
    F = model.drift_vector
    k1 = F(X)
    k2 = F(X + 0.5 * dt * k1)
    k3 = F(X + 0.5 * dt * k2)
    k4 = F(X + dt * k3)
    return X + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


# -- multi-path marching ---------------------------------------------------
@dataclass
class MarchResult:
    X: np.ndarray              # final (or last valid) states, (3, n)
    s: np.ndarray              # slow time reached per path
    done: np.ndarray           # monitor reported completion
    escaped: np.ndarray        # left the domain box
    steps: int
    times: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None  # (n_steps+1, 3, n) when recorded


def march(model: FastSlowModel, X0, config: SolverConfig, *, noise=None,
          indices=None, monitor=None, record=False, s0: float = 0.0) -> MarchResult:
    """Advance a group of paths with fixed steps until `t_max` or completion.

    Paths integrated with Euler-Maruyama draw from the streams
    ``(config.seed, indices[j])``; `indices` defaults to ``0..n-1``.
    `monitor`, if given, is called as ``monitor.update(s0, X0, s1, X1, idx)``
    with the active columns and returns a boolean mask of finished ones.
    """
    X = np.array(X0, dtype=float, copy=True)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[1]
    noise = noise or NoiseIntensities()
    stochastic = config.scheme == "euler_maruyama" and not noise.silent
    if model.eps is not None and config.scheme == "euler_maruyama":
        config.check_resolution(model)
    box = config.box_for(model)

    if indices is None:
        indices = np.arange(n)
    normals = None
    if stochastic:
        normals = NormalBlocks(ensemble_generators(config.seed, indices), model.k_bm, config.block)
        scale = _noise_scale(model, noise)
        sq = math.sqrt(config.dt)

    s = np.full(n, float(s0))
    done = np.zeros(n, bool)
    escaped = ~box.contains(X)
    active = np.flatnonzero(~escaped)
    n_steps = int(math.ceil(config.t_max / config.dt - 1e-9))
    rec_t, rec_X = ([s0], [X.copy()]) if record else (None, None)

    step = 0
    for step in range(1, n_steps + 1):
        if active.size == 0:
            break
        h = min(config.dt, s0 + config.t_max - (s0 + (step - 1) * config.dt))
        Xa = X[:, active]
        if config.scheme == "rk4_deterministic":
            Xn = rk4_step(model, Xa, h)
        else:
            Xn = Xa + h * model.drift_vector(Xa)
            if stochastic:
                xi = normals.next()[:, active]
                Xn = Xn + _noise_increment(model, Xa, scale, (sq if h == config.dt else math.sqrt(h)) * xi)
        sa = s[active]
        sn = sa + h
        inside = box.contains(Xn)
        if not inside.all():
            escaped[active[~inside]] = True
        fin = np.zeros(active.size, bool)
        if monitor is not None:
            fin = np.asarray(monitor.update(sa, Xa, sn, Xn, active), bool) & inside
        keep = inside
        X[:, active[keep]] = Xn[:, keep]
        s[active[keep]] = sn[keep]
        done[active[fin]] = True
        active = active[keep & ~fin]
        if record:
            rec_t.append(s0 + step * config.dt if h == config.dt else s0 + config.t_max)
            rec_X.append(X.copy())
    res = MarchResult(X=X, s=s, done=done, escaped=escaped, steps=step)
    if record:
        res.times = np.asarray(rec_t)
        res.states = np.asarray(rec_X)
    return res


def _to_trajectory(res: MarchResult, config, model, timed_out_ok=True) -> Trajectory:
    t = res.times
    S = res.states[:, :, 0]
    if res.escaped[0]:
        # drop the frames repeated after the escape
        n_valid = int(np.searchsorted(t, res.s[0], side="right"))
        t, S = t[:n_valid], S[:n_valid]
    return Trajectory(times=t, states=S, seed=config.seed, dt=config.dt,
                      model_id=model.name, escaped=bool(res.escaped[0]))


def integrate_det(model: FastSlowModel, state0, config: SolverConfig) -> Trajectory:
    """Classical RK4 on the noise-free field up to `t_max` or escape."""
    cfg = SolverConfig(dt=config.dt, t_max=config.t_max, scheme="rk4_deterministic",
                       seed=config.seed, domain_box=config.domain_box)
    res = march(model, np.asarray(state0, float), cfg, record=True)
    return _to_trajectory(res, cfg, model)


def integrate_sde(model: FastSlowModel, state0, noise: NoiseIntensities,
                  config: SolverConfig, index: int = 0) -> Trajectory:
    """Euler-Maruyama path, reproducible from ``(seed, index, dt, t_max)``."""
    cfg = SolverConfig(dt=config.dt, t_max=config.t_max, scheme="euler_maruyama",
                       seed=config.seed, domain_box=config.domain_box, block=config.block)
    res = march(model, np.asarray(state0, float), cfg, noise=noise,
                indices=np.array([index]), record=True)
    return _to_trajectory(res, cfg, model)


# -- linearization and principal solutions ---------------------------------
@dataclass
class ASeries:
    """Samples of the linearization in the block normalization eps*zeta' = A zeta."""

    times: np.ndarray
    A: np.ndarray   # (n, 3, 3)
    eps: float


def linearize(model: FastSlowModel, trajectory: Trajectory) -> ASeries:
    """Jacobian of ``(f, eps g1, eps g2)`` along a deterministic trajectory."""
    X = trajectory.states.T
    J = model.jacobian_components(X)  # (3, 3, n)
    J = np.moveaxis(J, -1, 0).copy()
    J[:, 1:, :] *= model.eps
    return ASeries(times=np.asarray(trajectory.times, float), A=J, eps=model.eps)


def _step_matrices(series: ASeries) -> np.ndarray:
    t = series.times
    h = np.diff(t)[:, None, None]
    B = series.A / series.eps
    B0, B1 = B[:-1], B[1:]
    Bm = 0.5 * (B0 + B1)
    eye = np.eye(3)[None]
    K1 = B0
    K2 = Bm @ (eye + 0.5 * h * K1)
    K3 = Bm @ (eye + 0.5 * h * K2)
    K4 = B1 @ (eye + h * K3)
    return eye + (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4)


OVERFLOW = 1e300


@dataclass
class PrincipalSolution:
    """U(s, r_anchor) sampled on a grid, plus arbitrary-pair evaluation.

    Forward in time, U is the ordered product of RK4 one-step propagators of
    ``U' = (A/eps) U``; backward, the inverse of that product.  Composition
    and inversion therefore hold to rounding error.
    """

    series: ASeries
    r_anchor: float
    s_grid: np.ndarray
    U: np.ndarray              # (len(s_grid), 3, 3)
    overflow: bool = False
    _steps: Optional[np.ndarray] = None

    def index(self, s: float) -> int:
        return self.series_index(self.series, s)

    @staticmethod
    def series_index(series, s):
        t = series.times
        i = int(np.argmin(np.abs(t - s)))
        tol = 1e-9 * max(1.0, abs(s)) + 0.5 * (t[1] - t[0] if len(t) > 1 else 0.0)
        if abs(t[i] - s) > tol:
            raise ValueError(f"time {s} outside the trajectory span")
        return i

    def between(self, s: float, r: float) -> np.ndarray:
        """U(s, r) for any two times of the base trajectory."""
        i = self.index(r)
        j = self.index(s)
        return _product(self._steps, i, j)[0]

    @staticmethod
    def blocks(U: np.ndarray) -> dict:
        return {"xixi": U[0, 0], "xieta": U[0, 1:], "etaxi": U[1:, 0], "etaeta": U[1:, 1:]}


def _product(steps, i, j):
    U = np.eye(3)
    over = False
    if j >= i:
        for k in range(i, j):
            U = steps[k] @ U
            if not np.all(np.abs(U) < OVERFLOW):
                over = True
                break
    else:
        for k in range(i - 1, j - 1, -1):
            U = np.linalg.inv(steps[k]) @ U
            if not np.all(np.abs(U) < OVERFLOW):
                over = True
                break
    return U, over


def principal_solution(A_series: ASeries, r: float, s_grid) -> PrincipalSolution:
    """Principal solution of ``eps U' = A(s) U`` with ``U(r, r) = I``.

    Entries beyond 1e300 stop the propagation; the affected samples are NaN
    and `overflow` is set.
    """
    steps = _step_matrices(A_series)
    s_grid = np.atleast_1d(np.asarray(s_grid, dtype=float))
    i = PrincipalSolution.series_index(A_series, r)
    idx = np.array([PrincipalSolution.series_index(A_series, s) for s in s_grid])
    out = np.full((len(s_grid), 3, 3), np.nan)
    overflow = False
    # forward sweep
    fwd = np.flatnonzero(idx >= i)
    if fwd.size:
        order = fwd[np.argsort(idx[fwd])]
        U = np.eye(3)
        k = i
        for m in order:
            while k < idx[m] and not overflow:
                U = steps[k] @ U
                k += 1
                if not np.all(np.abs(U) < OVERFLOW):
                    overflow = True
            if overflow:
                break
            out[m] = U
    bwd = np.flatnonzero(idx < i)
    if bwd.size:
        order = bwd[np.argsort(-idx[bwd])]
        U = np.eye(3)
        k = i
        stop = False
        for m in order:
            while k > idx[m] and not stop:
                U = np.linalg.inv(steps[k - 1]) @ U
                k -= 1
                if not np.all(np.abs(U) < OVERFLOW):
                    stop = True
            if stop:
                overflow = True
                break
            out[m] = U
    return PrincipalSolution(series=A_series, r_anchor=float(A_series.times[i]),
                             s_grid=s_grid, U=out, overflow=overflow, _steps=steps)


# -- convergence-order checks ----------------------------------------------
@dataclass
class OrderFit:
    dts: np.ndarray
    errors: np.ndarray
    order: float

    def to_dict(self) -> dict:
        return {"dts": self.dts.tolist(), "errors": self.errors.tolist(), "order": self.order}


def _log_slope(dts, errs) -> float:
    return float(np.polyfit(np.log(dts), np.log(errs), 1)[0])


def _pendulum_model() -> FastSlowModel:
    # smooth nonlinear test field, eps = 1
    return FastSlowModel(eps=1.0, field=lambda x, y, z: (y, -np.sin(x), 0.3 * np.cos(z) - 0.1 * x),
                         diffusion=np.zeros((3, 1)), k_bm=1, name="rk4-test")


def rk4_order(dt0: float = 0.2, halvings: int = 4, t_end: float = 2.0,
              X0=(1.0, 0.0, 0.5)) -> OrderFit:
    """Endpoint-error slope of the RK4 engine against a step-dt0/256 reference."""
    model = _pendulum_model()
    X0 = np.asarray(X0, dtype=float)[:, None]

    def endpoint(dt):
        cfg = SolverConfig(dt=dt, t_max=t_end, scheme="rk4_deterministic")
        return march(model, X0, cfg).X[:, 0]

    ref = endpoint(dt0 / 256)
    dts = dt0 / 2.0 ** np.arange(halvings + 1)
    errs = np.array([np.linalg.norm(endpoint(h) - ref) for h in dts])
    return OrderFit(dts=dts, errors=errs, order=_log_slope(dts, errs))


def em_strong_order(a: float = 1.0, b: float = 1.0, x0: float = 1.0, t_end: float = 1.0,
                    n_paths: int = 5000, n_fine: int = 2 ** 12,
                    levels=(2 ** 6, 2 ** 7, 2 ** 8, 2 ** 9, 2 ** 10),
                    seed: int = 0) -> OrderFit:
    """RMS endpoint error of Euler-Maruyama on geometric Brownian motion.

    ``dX = a X ds + b X dW`` has the exact solution
    ``X_t = x0 exp((a - b^2/2) t + b W_t)``; every step size is driven by the
    same fine Brownian path so that the errors are pathwise.
    """
    model = FastSlowModel(eps=1.0, field=lambda x, y, z: (a * x, 0.0 * x, 0.0 * x),
                          diffusion=lambda x, y, z: np.array([[b * x], [0.0 * x], [0.0 * x]]),
                          k_bm=1, name="gbm")
    noise = NoiseIntensities(1.0, 0.0)
    rng = np.random.Generator(np.random.Philox(seed))
    dW = rng.standard_normal((n_fine, n_paths)) * math.sqrt(t_end / n_fine)
    exact = x0 * np.exp((a - 0.5 * b * b) * t_end + b * dW.sum(axis=0))
    dts, errs = [], []
    for n in levels:
        dt = t_end / n
        inc = dW.reshape(n, n_fine // n, n_paths).sum(axis=1)
        X = np.vstack([np.full(n_paths, x0), np.zeros(n_paths), np.zeros(n_paths)])
        for k in range(n):
            X = em_step(model, X, noise, dt, inc[k][None, :] / math.sqrt(dt))
        dts.append(dt)
        errs.append(math.sqrt(float(np.mean((X[0] - exact) ** 2))))
    dts, errs = np.asarray(dts), np.asarray(errs)
    return OrderFit(dts=dts, errors=errs, order=_log_slope(dts, errs))
