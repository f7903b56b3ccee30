"""Monte-Carlo ensembles of section-to-section transitions.

Realization ``i`` of an ensemble always integrates with the random stream
keyed by ``(base_seed, i)``.  Realizations are grouped into chunks that may
run on several threads; since the arithmetic is columnwise, the numbers do
not depend on the chunking or on the thread count.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from ..sde_core import FastSlowModel, NoiseIntensities, SolverConfig
from ..sections import Section, route_hits

DEGRADED_FRACTION = 0.20
MASK64 = (1 << 64) - 1


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("MMO_LAB_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class EnsembleSpec:
    """What to simulate: N stochastic realizations of one transition.

    Parameters
    ----------
    model : the fast-slow model.
    start : initial state shared by all realizations.
    route : sections to cross in order; the last one is the target.
    N : number of realizations.
    noise : noise intensities.
    base_seed : seed of the realization streams.
    dt, t_max : step size and time budget; `dt` defaults to ``eps/20``.
    chunk : realizations per work unit.
    """

    model: FastSlowModel
    start: tuple
    route: tuple
    N: int = 100
    noise: NoiseIntensities = field(default_factory=NoiseIntensities)
    base_seed: int = 0
    dt: Optional[float] = None
    t_max: float = 10.0
    chunk: int = 128

    def __post_init__(self):
        if int(self.N) < 1:
            raise ValueError("N must be >= 1")
        if not self.route:
            raise ValueError("route must contain the target section")
        object.__setattr__(self, "route", tuple(self.route))
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))

    @property
    def target(self) -> Section:
        return self.route[-1]

    @property
    def step(self) -> float:
        return self.dt if self.dt is not None else self.model.eps / 20.0

    def config(self, scheme: str = "euler_maruyama") -> SolverConfig:
        return SolverConfig(dt=self.step, t_max=self.t_max, scheme=scheme,
                            seed=int(self.base_seed) & MASK64)

    def with_(self, **kw) -> "EnsembleSpec":
        return replace(self, **kw)


@dataclass
class EnsembleResult:
    spec: EnsembleSpec
    hits: np.ndarray            # (3, N), NaN where no hit
    times: np.ndarray           # (N,)
    reference: np.ndarray       # (3,) deterministic hit
    reference_time: float
    ok: np.ndarray
    escaped: np.ndarray
    timed_out: np.ndarray

    @property
    def deviations(self) -> np.ndarray:
        return self.hits - self.reference[:, None]

    @property
    def n_failed(self) -> int:
        return int(np.count_nonzero(~self.ok))

    @property
    def degraded(self) -> bool:
        return self.n_failed > DEGRADED_FRACTION * self.ok.size

    @property
    def coords(self) -> tuple:
        return tuple("xyz"[i] for i in self.spec.target.others)


class ReferenceTransitionError(RuntimeError):
    """The deterministic reference transition could not be computed."""


def reference_hit(spec: EnsembleSpec):
    """Deterministic RK4 hit of the target with the ensemble's step size."""
    rh = route_hits(spec.model, np.array(spec.start), spec.route, NoiseIntensities(),
                    spec.config("rk4_deterministic"), indices=np.array([0]))
    if not rh.ok[0]:
        raise ReferenceTransitionError(f"deterministic path does not reach {spec.target.id}")
    return rh.X[:, 0].copy(), float(rh.s[0])


def _chunks(N: int, size: int):
    size = max(1, int(size))
    return [np.arange(a, min(N, a + size)) for a in range(0, N, size)]


def run_ensemble(spec: EnsembleSpec, threads: Optional[int] = None,
                 reference: Optional[tuple] = None) -> EnsembleResult:
    """Simulate ``spec.N`` realizations and collect their target hits.

    Noise-free ensembles are integrated with RK4, so that every realization
    coincides with the reference.  The result is flagged ``degraded`` when
    more than 20% of the runs escape or time out.
    """
    ref, ref_s = reference if reference is not None else reference_hit(spec)
    N = int(spec.N)
    silent = spec.noise.silent
    cfg = spec.config("rk4_deterministic" if silent else "euler_maruyama")
    X0 = np.array(spec.start, dtype=float)
    hits = np.full((3, N), np.nan)
    times = np.full(N, np.nan)
    ok = np.zeros(N, bool)
    esc = np.zeros(N, bool)
    tmo = np.zeros(N, bool)

    def work(idx):
        start = np.repeat(X0[:, None], idx.size, axis=1)
        return idx, route_hits(spec.model, start, spec.route, spec.noise, cfg, indices=idx)

    chunks = _chunks(N, spec.chunk)
    threads = threads or default_threads()
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]
    for idx, rh in results:
        hits[:, idx] = np.where(rh.ok[None, :], rh.X, np.nan)
        times[idx] = np.where(rh.ok, rh.s, np.nan)
        ok[idx], esc[idx], tmo[idx] = rh.ok, rh.escaped, rh.timed_out
    return EnsembleResult(spec=spec, hits=hits, times=times, reference=ref, reference_time=ref_s,
                          ok=ok, escaped=esc, timed_out=tmo)


def point_seed(base_seed: int, j: int) -> int:
    """Seed of grid point `j` in a sweep: the base seed offset by the index."""
    return (int(base_seed) + int(j)) & MASK64
