"""Poincare sections, crossing detection and section-to-section maps.

A section is an axis-aligned plane ``{coord = level}`` restricted to a
rectangle in the two remaining coordinates and to one crossing direction.
Crossings are located by linear interpolation in the step followed by one
Newton step along the drift, clamped to the step interval.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .io import atomic_write_text, write_csv
from .sde_core import (FastSlowModel, NoiseIntensities, SolverConfig, Trajectory,
                       march, _to_trajectory)

AXES = {"x": 0, "y": 1, "z": 2}
DIRECTIONS = ("increasing", "decreasing", "either")
EDGE_FRACTION = 0.01


class SectionTimeout(RuntimeError):
    """No qualifying crossing before ``t_max``."""

    def __init__(self, msg, trajectory: Optional[Trajectory] = None):
        super().__init__(msg)
        self.trajectory = trajectory


class DomainEscape(RuntimeError):
    """The path left the domain box before reaching the section."""

    def __init__(self, msg, trajectory: Optional[Trajectory] = None):
        super().__init__(msg)
        self.trajectory = trajectory


def crossing_tolerance(level: float) -> float:
    return 1e-9 * (1.0 + abs(level))


@dataclass(frozen=True)
class Section:
    """Oriented bounded plane section.

    Parameters
    ----------
    axis : "x" or "y" (any coordinate name is accepted).
    level : plane position.
    bounds : ((lo, hi), (lo, hi)) for the two remaining coordinates in
        (x, y, z) order.
    direction : required sign of the crossing.
    """

    axis: str
    level: float
    bounds: tuple = ((-np.inf, np.inf), (-np.inf, np.inf))
    direction: str = "either"
    id: str = "S"

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown axis {self.axis!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(b) != 2 or any(not hi > lo for lo, hi in b):
            raise ValueError("section bounds must be two non-degenerate intervals")
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "level", float(self.level))

    @property
    def index(self) -> int:
        return AXES[self.axis]

    @property
    def others(self) -> tuple:
        return tuple(i for i in range(3) if i != self.index)

    def in_bounds(self, P) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        ok = np.ones(P.shape[1:], bool)
        for (lo, hi), i in zip(self.bounds, self.others):
            ok &= (P[i] >= lo) & (P[i] <= hi)
        return ok

    def near_edge(self, P) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        out = np.zeros(P.shape[1:], bool)
        for (lo, hi), i in zip(self.bounds, self.others):
            if np.isfinite(lo) and np.isfinite(hi):
                w = EDGE_FRACTION * (hi - lo)
                out |= (P[i] - lo < w) | (hi - P[i] < w)
        return out

    def crosses(self, u0, u1) -> np.ndarray:
        """Sign-change test on ``coord - level`` at both step ends."""
        if self.direction == "increasing":
            return (u0 < 0) & (u1 >= 0)
        if self.direction == "decreasing":
            return (u0 > 0) & (u1 <= 0)
        return ((u0 < 0) & (u1 >= 0)) | ((u0 > 0) & (u1 <= 0))

    def to_dict(self) -> dict:
        return {"id": self.id, "axis": self.axis, "level": self.level,
                "bounds": [list(b) for b in self.bounds], "direction": self.direction}

    @classmethod
    def from_dict(cls, d) -> "Section":
        return cls(axis=d["axis"], level=d["level"], bounds=tuple(tuple(b) for b in d["bounds"]),
                   direction=d.get("direction", "either"), id=d.get("id", "S"))


def save_sections(path, sections):
    atomic_write_text(path, json.dumps([s.to_dict() for s in sections], indent=2) + "\n")


def load_sections(path) -> list:
    with open(path) as fh:
        return [Section.from_dict(d) for d in json.load(fh)]


def koper_sections(box=None) -> dict:
    """Default Koper sections S1..S6; rectangles are slices of the domain box."""
    from .koper import KOPER_BOX

    box = box or KOPER_BOX
    (xl, yl, zl), (xh, yh, zh) = box.lo, box.hi
    return {
        # S1 and S3 share y = -1.8; the x-branch tells them apart
        "S1": Section("y", -1.8, ((0.0, xh), (zl, zh)), "decreasing", "S1"),
        "S2": Section("x", 0.5, ((yl, yh), (zl, zh)), "decreasing", "S2"),
        "S3": Section("y", -1.8, ((xl, 0.0), (zl, zh)), "increasing", "S3"),
        "S4": Section("y", 1.8, ((xl, 0.0), (zl, zh)), "increasing", "S4"),
        "S5": Section("x", -0.5, ((yl, yh), (zl, zh)), "increasing", "S5"),
        "S6": Section("y", 1.8, ((0.0, xh), (zl, zh)), "decreasing", "S6"),
    }


@dataclass
class HitRecord:
    section: str
    s: float
    state: np.ndarray
    steps: tuple            # indices of the bracketing integration states
    residual: float
    near_edge: bool = False
    deviation: Optional[np.ndarray] = None

    @property
    def x(self):
        return float(self.state[0])

    @property
    def y(self):
        return float(self.state[1])

    @property
    def z(self):
        return float(self.state[2])


def _refine(section: Section, s0, P0, s1, P1, model: Optional[FastSlowModel]):
    """Interpolate-then-Newton location of the crossing, vectorized over columns."""
    c = section.index
    u0 = P0[c] - section.level
    u1 = P1[c] - section.level
    den = u0 - u1
    with np.errstate(divide="ignore", invalid="ignore"):
        th = np.where(den != 0, u0 / np.where(den != 0, den, 1.0), 1.0)
    th = np.clip(th, 0.0, 1.0)
    h = s1 - s0
    P = P0 + th * (P1 - P0)
    s = s0 + th * h
    if model is not None:
        v = model.drift_vector(P)
        vc = v[c]
        with np.errstate(divide="ignore", invalid="ignore"):
            ds = np.where(vc != 0, -(P[c] - section.level) / np.where(vc != 0, vc, 1.0), 0.0)
        # keep the correction inside the bracketing step
        ds = np.clip(ds, -th * h, (1.0 - th) * h)
        ok = np.isfinite(ds)
        ds = np.where(ok, ds, 0.0)
        P = P + ds * v
        s = s + ds
    # the remaining offset is rounding; the point lies on the plane
    res = np.abs(P[c] - section.level)
    P[c] = np.where(res < crossing_tolerance(section.level), section.level, P[c])
    res = np.abs(P[c] - section.level)
    return s, P, res


def detect_hit(step_pair, section: Section, model: Optional[FastSlowModel] = None,
               counter: Optional[dict] = None, step_index: int = 0) -> Optional[HitRecord]:
    """Crossing of `section` within one integration step.

    `step_pair` is ``((s0, P0), (s1, P1))``.  Without a `model` only the
    linear interpolation is applied.  Crossings outside the rectangle return
    None and increment ``counter["out_of_bounds"]``.
    """
    (s0, P0), (s1, P1) = step_pair
    P0 = np.asarray(P0, dtype=float).reshape(3, 1)
    P1 = np.asarray(P1, dtype=float).reshape(3, 1)
    c = section.index
    if not section.crosses(P0[c] - section.level, P1[c] - section.level)[0]:
        return None
    s, P, res = _refine(section, np.array([s0], float), P0, np.array([s1], float), P1, model)
    if not section.in_bounds(P)[0]:
        if counter is not None:
            counter["out_of_bounds"] = counter.get("out_of_bounds", 0) + 1
        return None
    return HitRecord(section=section.id, s=float(s[0]), state=P[:, 0].copy(),
                     steps=(step_index, step_index + 1), residual=float(res[0]),
                     near_edge=bool(section.near_edge(P)[0]))


class RouteMonitor:
    """Tracks, per path, progress along an ordered list of sections.

    A path is finished when it crosses the last section after having crossed
    all previous ones in order.
    """

    def __init__(self, route: Sequence[Section], n: int, model: FastSlowModel,
                 dt: float, s_start: float = 0.0):
        self.route = list(route)
        if not self.route:
            raise ValueError("route must contain at least one section")
        self.model = model
        self.dt = dt
        self.s_start = s_start
        m = len(self.route)
        self.stage = np.zeros(n, int)
        self.hit_s = np.full((m, n), np.nan)
        self.hit_X = np.full((m, 3, n), np.nan)
        self.residual = np.full((m, n), np.nan)
        self.step = np.full((m, n), -1, int)
        self.out_of_bounds = np.zeros(n, int)

    def update(self, s0, X0, s1, X1, idx):
        fin = np.zeros(idx.size, bool)
        st = self.stage[idx]
        last = len(self.route) - 1
        for k, sec in enumerate(self.route):
            m = np.flatnonzero(st == k)
            if m.size == 0:
                continue
            c = sec.index
            cr = sec.crosses(X0[c, m] - sec.level, X1[c, m] - sec.level)
            if not cr.any():
                continue
            m = m[cr]
            s, P, res = _refine(sec, s0[m], X0[:, m], s1[m], X1[:, m], self.model)
            inb = sec.in_bounds(P)
            g = idx[m]
            self.out_of_bounds[g[~inb]] += 1
            m, g, s, P, res = m[inb], g[inb], s[inb], P[:, inb], res[inb]
            self.hit_s[k, g] = s
            self.hit_X[k, :, g] = P.T
            self.residual[k, g] = res
            self.step[k, g] = np.rint((s0[m] - self.s_start) / self.dt).astype(int)
            self.stage[g] = k + 1
            if k == last:
                fin[m] = True
        return fin

    def record(self, k: int, j: int) -> HitRecord:
        sec = self.route[k]
        P = self.hit_X[k, :, j].copy()
        i = int(self.step[k, j])
        return HitRecord(section=sec.id, s=float(self.hit_s[k, j]), state=P, steps=(i, i + 1),
                         residual=float(self.residual[k, j]),
                         near_edge=bool(sec.near_edge(P[:, None])[0]))


@dataclass
class RouteHits:
    """Vectorized outcome of `route_hits`: final-section hits per path."""

    X: np.ndarray            # (3, n) hit states on the last section (NaN if none)
    s: np.ndarray
    ok: np.ndarray
    escaped: np.ndarray
    timed_out: np.ndarray
    residual: np.ndarray
    monitor: RouteMonitor = field(repr=False, default=None)


def route_hits(model: FastSlowModel, X0, route: Sequence[Section], noise: NoiseIntensities,
               config: SolverConfig, indices=None) -> RouteHits:
    """Integrate a group of paths until each crosses the whole route."""
    X0 = np.asarray(X0, dtype=float)
    if X0.ndim == 1:
        X0 = X0[:, None]
    n = X0.shape[1]
    mon = RouteMonitor(route, n, model, config.dt)
    res = march(model, X0, config, noise=noise, indices=indices, monitor=mon)
    last = len(route) - 1
    ok = res.done.copy()
    escaped = res.escaped & ~ok
    return RouteHits(X=mon.hit_X[last], s=mon.hit_s[last], ok=ok, escaped=escaped,
                     timed_out=~ok & ~escaped, residual=mon.residual[last], monitor=mon)


def _single(model, state0, noise, route, config, index) -> HitRecord:
    noise = noise or NoiseIntensities()
    cfg = config
    if noise.silent and config.scheme == "euler_maruyama":
        # deterministic mode integrates with RK4
        cfg = SolverConfig(dt=config.dt, t_max=config.t_max, scheme="rk4_deterministic",
                           seed=config.seed, domain_box=config.domain_box, block=config.block)
    rh = route_hits(model, state0, route, noise, cfg, indices=np.array([index]))
    if rh.ok[0]:
        return rh.monitor.record(len(route) - 1, 0)
    # rerun with recording to attach the partial path (same streams, same numbers)
    full = march(model, np.asarray(state0, float), cfg, noise=noise,
                 indices=np.array([index]), record=True)
    traj = _to_trajectory(full, cfg, model)
    if rh.escaped[0]:
        raise DomainEscape(f"escaped before reaching {route[-1].id}", traj)
    raise SectionTimeout(f"no crossing of {route[-1].id} within t_max={config.t_max}", traj)


def first_hit(model: FastSlowModel, state0, noise: Optional[NoiseIntensities], section: Section,
              config: SolverConfig, index: int = 0) -> HitRecord:
    """First qualifying crossing of `section` from `state0`.

    Noise-free runs use RK4; otherwise Euler-Maruyama with the stream of
    realization `index`.  Raises `SectionTimeout` or `DomainEscape`.
    """
    return _single(model, state0, noise, [section], config, index)


def transition_map(model: FastSlowModel, start, target_section: Section,
                   noise: Optional[NoiseIntensities], config: SolverConfig,
                   reference: Optional[HitRecord] = None, index: int = 0) -> HitRecord:
    """`first_hit` plus the deviation from a deterministic reference hit."""
    hit = first_hit(model, start, noise, target_section, config, index=index)
    if reference is None:
        reference = first_hit(model, start, None, target_section, config)
    hit.deviation = hit.state - reference.state
    return hit


def global_return(model: FastSlowModel, start, guard: Sequence[Section],
                  noise: Optional[NoiseIntensities], config: SolverConfig,
                  start_section: Optional[Section] = None, index: int = 0) -> HitRecord:
    """Return to the start section after all guard sections were crossed in order."""
    if not guard:
        raise ValueError("guard must be non-empty")
    if start_section is None:
        start_section = koper_sections()["S1"]
    P = np.asarray(start, dtype=float)
    if not start_section.in_bounds(P[:, None])[0]:
        raise ValueError("start is outside the section rectangle")
    return _single(model, P, noise, list(guard) + [start_section], config, index)


def default_guard(sections: Optional[dict] = None) -> list:
    sections = sections or koper_sections()
    return [sections["S2"], sections["S4"]]


def iterate_returns(model, start, n_returns: int, config: SolverConfig, noise=None,
                    guard=None, start_section=None, index: int = 0) -> list:
    """Iterated global returns; realization `index` advances its seed per return."""
    sec = koper_sections()
    guard = guard if guard is not None else default_guard(sec)
    start_section = start_section or sec["S1"]
    out = []
    P = np.asarray(start, dtype=float)
    s_off = 0.0
    for n in range(n_returns):
        cfg = SolverConfig(dt=config.dt, t_max=config.t_max, scheme=config.scheme,
                           seed=(config.seed + n) & ((1 << 64) - 1),
                           domain_box=config.domain_box, block=config.block)
        h = global_return(model, P, guard, noise, cfg, start_section, index=index)
        h.s += s_off
        s_off = h.s
        out.append(h)
        P = h.state
    return out


def write_hit_log(path, hits):
    rows = [[h.section, h.s, *h.state, h.residual] for h in hits]
    write_csv(path, ["section", "s", "x", "y", "z", "residual"], rows)
