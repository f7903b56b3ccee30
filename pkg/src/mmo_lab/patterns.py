"""Mixed-mode oscillation words and sector-to-sector Markov chains.

An oscillation is the stretch of ``x(s)`` between two consecutive maxima that
pass the prominence filter.  It is a large oscillation (LAO) when ``x``
crosses both fold lines ``x = -1`` and ``x = +1`` inside it, and a small one
(SAO) otherwise.  Runs of LAOs followed by runs of SAOs give symbols
``L^s``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.signal import find_peaks
from scipy.sparse.csgraph import connected_components

from ._params import ParamsMixin
from .io import csv_text, json_text, write_csv

DEFAULT_PROMINENCE = 1e-3


# -- oscillation events -----------------------------------------------------
@dataclass(frozen=True)
class MmoSymbol:
    L: int
    s: int

    def __post_init__(self):
        if self.L < 0 or self.s < 0:
            raise ValueError("counts must be non-negative")
        if self.L == 0 and self.s == 0:
            raise ValueError("a symbol needs at least one oscillation")

    def __str__(self):
        return f"{self.L}^{self.s}"


@dataclass(frozen=True)
class OscillationClassifier:
    """Prominence filter and fold levels for LAO/SAO labelling.

    Parameters
    ----------
    prominence : minimum prominence of an accepted extremum of x.
    fold_low, fold_high : the two fold lines an LAO has to cross.
    split : cut the record at maxima (``"max"``), minima (``"min"``) or
        at whichever of the two yields fewer LAOs (``"auto"``).  Cutting
        on the wrong side turns the jump next to the SAOs into an extra
        LAO, so ``"auto"`` makes the labels reflection invariant.
    """

    prominence: float = DEFAULT_PROMINENCE
    fold_low: float = -1.0
    fold_high: float = 1.0
    split: str = "auto"

    def __post_init__(self):
        if not self.prominence > 0:
            raise ValueError("prominence must be positive")
        if self.split not in ("auto", "max", "min"):
            raise ValueError(f"unknown split {self.split!r}")

    @classmethod
    def from_noise(cls, sigma: float, sigma_p: float = 0.0, factor: float = 3.0,
                   floor: float = DEFAULT_PROMINENCE, **kw) -> "OscillationClassifier":
        """Prominence ``max(floor, factor * (sigma + sigma_p) / 2)``.

        The mean intensity sets the size of noise-induced wiggles of x, so
        oscillations smaller than a few times that are treated as masked.
        """
        return cls(prominence=max(floor, factor * 0.5 * (sigma + sigma_p)), **kw)


@dataclass(frozen=True)
class OscillationEvent:
    kind: str             # "L" or "S"
    s_start: float
    s_end: float
    x_max: float
    x_min: float
    prominence: float

    def to_dict(self) -> dict:
        return {"kind": self.kind, "s_start": self.s_start, "s_end": self.s_end,
                "x_max": self.x_max, "x_min": self.x_min, "prominence": self.prominence}


def _series(trajectory):
    if hasattr(trajectory, "states"):
        return np.asarray(trajectory.times, float), np.asarray(trajectory.states, float)[:, 0]
    t, x = trajectory
    return np.asarray(t, float), np.asarray(x, float)


def _split_events(t, x, clf, sign: float) -> list:
    peaks, props = find_peaks(sign * x, prominence=clf.prominence)
    events = []
    for a, b, pr in zip(peaks[:-1], peaks[1:], props["prominences"][1:]):
        seg = x[a:b + 1]
        lo, hi = float(seg.min()), float(seg.max())
        kind = "L" if (lo < clf.fold_low and hi > clf.fold_high) else "S"
        events.append(OscillationEvent(kind, float(t[a]), float(t[b]), hi, lo, float(pr)))
    return events


def classify_oscillations(trajectory, classifier: Optional[OscillationClassifier] = None) -> list:
    """Split x(s) at prominent extrema and label each stretch LAO or SAO.

    `trajectory` is a `Trajectory` or a pair ``(times, x)``.
    """
    clf = classifier or OscillationClassifier()
    t, x = _series(trajectory)
    if x.size < 3:
        return []
    if clf.split == "max":
        return _split_events(t, x, clf, 1.0)
    if clf.split == "min":
        return _split_events(t, x, clf, -1.0)
    up, down = _split_events(t, x, clf, 1.0), _split_events(t, x, clf, -1.0)
    n_up = sum(e.kind == "L" for e in up)
    n_down = sum(e.kind == "L" for e in down)
    if n_up != n_down:
        return up if n_up < n_down else down
    # tie: cut where the small oscillations live, i.e. on the side with more SAOs
    return up if len(up) - n_up >= len(down) - n_down else down


# -- words --------------------------------------------------------------------
@dataclass
class Pattern:
    symbols: list
    word: Optional[list] = None      # minimal repeating word, canonical rotation
    transient: Optional[int] = None  # symbols before the periodic tail
    repetitions: Optional[int] = None
    mode: str = "rle"

    @property
    def word_text(self) -> str:
        return " ".join(str(w) for w in self.word) if self.word else ""

    @property
    def symbol_set(self) -> set:
        return {str(s) for s in self.symbols}

    def to_dict(self) -> dict:
        return {"symbols": [str(s) for s in self.symbols], "word": self.word_text or None,
                "transient": self.transient, "repetitions": self.repetitions, "mode": self.mode}


def _kinds(events) -> list:
    return [e.kind if isinstance(e, OscillationEvent) else str(e) for e in events]


def run_length_symbols(events) -> list:
    """``L^a S^b`` blocks; SAOs before the first LAO give ``0^b``."""
    out, L, s = [], 0, 0
    for k in _kinds(events):
        if k == "L":
            if s > 0:
                out.append(MmoSymbol(L, s))
                L, s = 0, 0
            L += 1
        elif k == "S":
            s += 1
        else:
            raise ValueError(f"unknown event kind {k!r}")
    if L or s:
        out.append(MmoSymbol(L, s))
    return out


def per_lao_symbols(events) -> list:
    """One symbol ``1^s`` per LAO, s being the SAOs that follow it."""
    out, s, started = [], 0, False
    lead = 0
    for k in _kinds(events):
        if k == "L":
            if started:
                out.append(MmoSymbol(1, s))
            elif lead:
                out.append(MmoSymbol(0, lead))
            started, s = True, 0
        elif k == "S":
            if started:
                s += 1
            else:
                lead += 1
        else:
            raise ValueError(f"unknown event kind {k!r}")
    if started:
        out.append(MmoSymbol(1, s))
    elif lead:
        out.append(MmoSymbol(0, lead))
    return out


def _key(sym: MmoSymbol):
    return (sym.L, sym.s)


def canonical_rotation(word: Sequence[MmoSymbol]) -> list:
    rots = [list(word[i:]) + list(word[:i]) for i in range(len(word))]
    return min(rots, key=lambda r: [_key(v) for v in r])


def minimal_period(seq: Sequence, min_reps: int = 3):
    """Smallest (period, transient) such that the tail repeats at least `min_reps` times.

    For each period the shortest transient is used; returns None when no
    period qualifies.
    """
    keys = [_key(v) if isinstance(v, MmoSymbol) else v for v in seq]
    n = len(keys)
    for p in range(1, n // min_reps + 1):
        # last index whose tail fails p-periodicity
        bad = -1
        for i in range(n - p - 1, -1, -1):
            if keys[i] != keys[i + p]:
                bad = i
                break
        t = bad + 1
        if n - t >= min_reps * p:
            return p, t
    return None


def extract_pattern(events, mode: str = "rle", min_reps: int = 3,
                    drop_last: bool = True) -> Pattern:
    """Symbols of an event list and their minimal periodic word.

    ``mode="rle"`` groups consecutive LAOs into one symbol; ``mode="per_lao"``
    starts a new symbol at every LAO, so that back-to-back LAOs show up as
    ``1^0``.  The last symbol may be cut by the end of the record and is left
    out of the periodicity search unless `drop_last` is false.
    """
    if mode == "rle":
        syms = run_length_symbols(events)
    elif mode == "per_lao":
        syms = per_lao_symbols(events)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    pat = Pattern(symbols=syms, mode=mode)
    body = syms[:-1] if drop_last and len(syms) > 1 else syms
    found = minimal_period(body, min_reps)
    if found is not None:
        p, t = found
        pat.word = canonical_rotation(body[t:t + p])
        pat.transient = t
        pat.repetitions = (len(body) - t) // p
    return pat


def pattern_document(events, pattern: Pattern) -> dict:
    return {"pattern": pattern.to_dict(), "events": [e.to_dict() for e in events]}


def write_pattern(path_txt, path_json, events, pattern: Pattern):
    from .io import atomic_write_text

    atomic_write_text(path_txt, pattern.word_text + "\n")
    atomic_write_text(path_json, json_text(pattern_document(events, pattern)))


# -- sector chains --------------------------------------------------------------
class SectorChain(ParamsMixin):
    """Empirical transition matrix between sectors.

    Parameters
    ----------
    states : sector labels to include; default is every label seen.
    """

    def __init__(self, states: Optional[Sequence[int]] = None):
        self.states = states

    @staticmethod
    def _rows(data):
        if isinstance(data, np.ndarray) and data.ndim == 2:
            return [r for r in data]
        if isinstance(data, np.ndarray) and data.ndim == 1:
            return [data]
        data = list(data)
        if data and np.ndim(data[0]) == 0:
            return [np.asarray(data)]
        return [np.asarray(r) for r in data]

    def fit(self, sequences, y=None):
        """Count transitions ``k_n -> k_{n+1}`` along each sequence.

        Sequences may contain NaN or negative entries for unknown sectors;
        transitions touching them are skipped.
        """
        rows = []
        for r in self._rows(sequences):
            r = np.asarray(r, dtype=float)
            rows.append(r)
        seen = sorted({int(v) for r in rows for v in r if np.isfinite(v) and v >= 0})
        labels = list(self.states) if self.states is not None else seen
        pos = {k: i for i, k in enumerate(labels)}
        n = len(labels)
        C = np.zeros((n, n), dtype=np.int64)
        visits = np.zeros(n, dtype=np.int64)
        for r in rows:
            for a in r:
                if np.isfinite(a) and int(a) in pos:
                    visits[pos[int(a)]] += 1
            for a, b in zip(r[:-1], r[1:]):
                if not (np.isfinite(a) and np.isfinite(b)):
                    continue
                a, b = int(a), int(b)
                if a in pos and b in pos:
                    C[pos[a], pos[b]] += 1
        tot = C.sum(axis=1)
        P = np.zeros((n, n))
        has = tot > 0
        P[has] = C[has] / tot[has, None]
        # rows without data become self-loops so that P stays stochastic
        P[~has, :] = 0.0
        P[np.flatnonzero(~has), np.flatnonzero(~has)] = 1.0
        self.labels_ = labels
        self.counts_ = C
        self.visits_ = visits
        self.matrix_ = P
        self.unknown_rows_ = ~has
        self.absorbing_ = np.array([P[i, i] == 1.0 for i in range(n)], dtype=bool)
        return self

    @property
    def modal_state(self) -> int:
        self._check_fitted("counts_")
        return self.labels_[int(np.argmax(self.visits_))]

    def row(self, label: int) -> np.ndarray:
        self._check_fitted("matrix_")
        return self.matrix_[self.labels_.index(label)]

    def to_csv_text(self) -> str:
        self._check_fitted("matrix_")
        header = ["sector"] + [str(k) for k in self.labels_]
        return csv_text(header, [[k] + list(r) for k, r in zip(self.labels_, self.matrix_)])

    def write_csv(self, path):
        self._check_fitted("matrix_")
        header = ["sector"] + [str(k) for k in self.labels_]
        write_csv(path, header, [[k] + list(r) for k, r in zip(self.labels_, self.matrix_)])


def sector_chain(data, boundaries=None, states=None) -> SectorChain:
    """Chain from iterated returns.

    `data` holds z values on the section (one row per chain) when
    `boundaries` is given, either a fitted `SectorBoundaries` or a sorted
    array; otherwise it already holds sector labels.
    """
    if boundaries is None:
        return SectorChain(states).fit(data)
    b = getattr(boundaries, "boundaries_", boundaries)
    b = np.asarray(b, dtype=float)
    Z = np.atleast_2d(np.asarray(data, dtype=float))
    K = np.where(np.isfinite(Z), np.searchsorted(b, np.nan_to_num(Z), side="left"), np.nan)
    return SectorChain(states).fit(K)


class StationaryConvergenceError(ArithmeticError):
    pass


@dataclass
class StationaryResult:
    pi: np.ndarray
    reducible: bool
    iterations: int
    residual: float
    start: Optional[int] = None


def stationary_distribution(chain, start: Optional[int] = None, tol: float = 1e-12,
                            max_iter: int = 10 ** 6) -> StationaryResult:
    """Power iteration on the lazy chain ``(I + P)/2``.

    The lazy chain has the same invariant vectors as P and is aperiodic.
    Irreducible chains start from the uniform vector.  Reducible chains
    start from a point mass at `start` (the modal state of a fitted chain,
    else index 0), which converges onto the closed classes reachable from it.
    """
    if isinstance(chain, SectorChain):
        P = chain.matrix_
        if start is None:
            start = int(np.argmax(chain.visits_))
    else:
        P = np.asarray(chain, dtype=float)
    n = P.shape[0]
    if P.ndim != 2 or P.shape[1] != n:
        raise ValueError("transition matrix must be square")
    if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-10:
        raise ValueError("matrix is not row-stochastic")
    n_comp, _ = connected_components(P > 0, directed=True, connection="strong")
    reducible = n_comp > 1
    if reducible:
        start = 0 if start is None else int(start)
        pi = np.zeros(n)
        pi[start] = 1.0
    else:
        pi = np.full(n, 1.0 / n)
    lazy = 0.5 * (np.eye(n) + P)
    res = math.inf
    for it in range(1, int(max_iter) + 1):
        nxt = pi @ lazy
        nxt /= nxt.sum()
        res = float(np.max(np.abs(nxt @ P - nxt)))
        pi = nxt
        if res < tol:
            return StationaryResult(pi=pi, reducible=reducible, iterations=it, residual=res,
                                    start=start if reducible else None)
    raise StationaryConvergenceError(f"no convergence after {max_iter} iterations "
                                     f"(residual {res:.3g})")
