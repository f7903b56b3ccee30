"""Registry of recipe operations.

Every operation takes a validated argument dict, a staging directory for its
files, a thread count and a base seed, and returns a JSON-ready summary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .io import write_csv, write_json
from .koper import KoperParams, NoiseMatrix, folded_node, koper_model
from .sde_core import NoiseIntensities, SolverConfig, integrate_det, integrate_sde
from .sections import koper_sections, route_hits

DEFAULT_MODEL = {"k": -10.0, "lambda": -7.0, "eps1": 0.01, "eps2": 1.0}


class RecipeError(ValueError):
    """Invalid recipe: unknown operation, missing or unknown arguments."""


@dataclass
class OpSpec:
    fn: Callable
    description: str
    required: dict                      # name -> help text
    optional: dict = field(default_factory=dict)   # name -> default
    outputs: tuple = ()

    def validate(self, args: dict) -> dict:
        if not isinstance(args, dict):
            raise RecipeError("'args' must be an object")
        missing = [k for k in self.required if k not in args]
        if missing:
            raise RecipeError(f"missing required args: {', '.join(missing)}")
        unknown = [k for k in args if k not in self.required and k not in self.optional]
        if unknown:
            raise RecipeError(f"unknown args: {', '.join(unknown)}")
        full = dict(self.optional)
        full.update(args)
        return full

    def describe(self, name: str) -> str:
        lines = [f"{name}: {self.description}", "required:"]
        lines += [f"  {k}: {v}" for k, v in self.required.items()] or ["  (none)"]
        lines.append("optional:")
        lines += [f"  {k} = {v!r}" for k, v in self.optional.items()] or ["  (none)"]
        if self.outputs:
            lines.append("outputs: " + ", ".join(self.outputs))
        return "\n".join(lines)


# -- shared argument handling -------------------------------------------------
def _params(d: Optional[dict]) -> KoperParams:
    d = {**DEFAULT_MODEL, **(d or {})}
    return KoperParams(k=float(d["k"]), lam=float(d["lambda"]), eps1=float(d["eps1"]),
                       eps2=float(d["eps2"]))


def _model(d: Optional[dict]):
    M = NoiseMatrix((d or {})["M"]) if d and "M" in d else None
    return koper_model(_params(d), M)


def _grid(g) -> np.ndarray:
    from .analysis.sweeps import log_grid

    if isinstance(g, dict):
        if g.get("log", True):
            return log_grid(float(g["lo"]), float(g["hi"]), int(g["n"]))
        return np.linspace(float(g["lo"]), float(g["hi"]), int(g["n"]))
    return np.asarray(g, dtype=float)


def _route(ids):
    sec = koper_sections()
    try:
        return tuple(sec[i] for i in ids)
    except KeyError as exc:
        raise RecipeError(f"unknown section {exc.args[0]!r}") from None


def _spec(a, base_seed, model=None):
    from .analysis.ensemble import EnsembleSpec

    return EnsembleSpec(model=model or _model(a["model"]), start=tuple(a["start"]),
                        route=_route(a["route"]), N=int(a["N"]),
                        noise=NoiseIntensities(float(a.get("sigma", 0.0)),
                                               float(a.get("sigma_p", 0.0))),
                        base_seed=int(base_seed), dt=a.get("dt"), t_max=float(a["t_max"]))


# -- operations ---------------------------------------------------------------
def op_transition(a, out: Path, threads, base_seed):
    from .analysis import run_ensemble, spreading_stats

    ens = run_ensemble(_spec(a, base_seed), threads=threads)
    rows = [[i, *ens.hits[:, i], int(ens.ok[i])] for i in range(ens.hits.shape[1])]
    write_csv(out / "hits.csv", ["index", "x", "y", "z", "ok"], rows)
    st = spreading_stats(ens)
    summary = {"reference": ens.reference, "std": st.std, "mean": st.mean, "n_eff": st.n_eff,
               "escapes": st.escapes, "timeouts": st.timeouts, "degraded": ens.degraded}
    write_json(out / "stats.json", summary)
    return summary


def op_sweep_noise(a, out, threads, base_seed):
    from .analysis import sweep_noise

    res = sweep_noise(_spec(a, base_seed), _grid(a["sigma_grid"]), ratio=float(a["ratio"]),
                      coords=a.get("coords"), threads=threads)
    res.write(out / "sweep.csv", out / "fit.json")
    return {"fits": res.fit_document(), "excluded": res.excluded}


def op_sweep_epsilon(a, out, threads, base_seed):
    from .analysis import sweep_epsilon

    base = _params(a["model"])
    M = NoiseMatrix(a["model"]["M"]) if "M" in a["model"] else None
    res = sweep_epsilon(_spec(a, base_seed), _grid(a["eps_grid"]),
                        lambda e: koper_model(base.with_(eps1=e), M),
                        dt_factor=float(a["dt_factor"]), coords=a.get("coords"), threads=threads)
    res.write(out / "sweep.csv", out / "fit.json")
    return {"fits": res.fit_document(), "excluded": res.excluded}


def op_return_map(a, out, threads, base_seed):
    """z -> z' on the section y = -1.8 for a grid of starts, N realizations each."""
    from .analysis.sectors import return_route, section_start

    model = _model(a["model"])
    z = _grid(a["z_grid"])
    N = int(a["N"])
    noise = NoiseIntensities(float(a["sigma"]), float(a["sigma_p"]))
    dt = a.get("dt") or model.eps / 20
    X0 = section_start(np.repeat(z, N))
    scheme = "rk4_deterministic" if noise.silent else "euler_maruyama"
    cfg = SolverConfig(dt=dt, t_max=float(a["t_max"]), scheme=scheme, seed=int(base_seed))
    rh = route_hits(model, X0, return_route(), noise, cfg)
    z1 = np.where(rh.ok, rh.X[2], np.nan)
    rows = [[zz, i % N, v] for i, (zz, v) in enumerate(zip(np.repeat(z, N), z1))]
    write_csv(out / "return_map.csv", ["z0", "realization", "z1"], rows)
    return {"n": len(rows), "failed": int(np.count_nonzero(~rh.ok))}


def _boundaries(a, model):
    from .analysis import SectorBoundaries

    kw = {k: a[k] for k in ("z_lo", "z_hi", "n_grid") if a.get(k) is not None}
    return SectorBoundaries(**kw).fit(model)


def op_sector_scan(a, out, threads, base_seed):
    from .analysis.sectors import koper_half_turns
    from .folded_node import k_star_window

    params = _params(a["model"])
    model = koper_model(params)
    sb = _boundaries(a, model)
    z = _grid(a["z_scan"])
    ht = koper_half_turns(model, params, z)
    sec = sb.sector_of(z)
    low, _ = k_star_window(folded_node(params).mu, None)
    rows = [[zz, int(k), int(h), "inner" if k <= low else "outer"] for zz, k, h in zip(z, sec, ht)]
    write_csv(out / "sector_scan.csv", ["z_start", "sector", "halfturns", "classification"], rows)
    write_csv(out / "boundaries.csv", ["index", "z", "jump"],
              [[i + 1, b, j] for i, (b, j) in enumerate(zip(sb.boundaries_, sb.jumps_))])
    return {"n_boundaries": len(sb.boundaries_), "max_sector": int(sec.max()),
            "max_halfturn_sector": int(max(0, (int(ht.max()) - 1) // 2)), "k_star_low": low}


def op_sector_chain(a, out, threads, base_seed):
    from .analysis import iterate_stochastic_returns
    from .patterns import sector_chain, stationary_distribution

    model = _model(a["model"])
    sb = _boundaries(a, model)
    noise = NoiseIntensities(float(a["sigma"]), float(a["sigma_p"]))
    Z = iterate_stochastic_returns(model, float(a["z0"]), int(a["n_returns"]), noise,
                                   n_chains=int(a["n_chains"]), base_seed=int(base_seed))
    ch = sector_chain(Z[:, int(a["burn_in"]):], sb)
    ch.write_csv(out / "chain.csv")
    st = stationary_distribution(ch)
    rows = [[i, n, v] for i in range(Z.shape[0]) for n, v in enumerate(Z[i])]
    write_csv(out / "returns.csv", ["chain", "return", "z"], rows)
    modal = ch.modal_state
    summary = {"labels": ch.labels_, "modal_sector": modal,
               "modal_row_nonzeros": int(np.count_nonzero(ch.row(modal))),
               "stationary": st.pi, "reducible": st.reducible}
    write_json(out / "stationary.json", summary)
    return summary


def op_pattern(a, out, threads, base_seed):
    from .patterns import OscillationClassifier, classify_oscillations, extract_pattern, write_pattern

    model = _model(a["model"])
    noise = NoiseIntensities(float(a["sigma"]), float(a["sigma_p"]))
    cfg = SolverConfig(dt=a.get("dt") or model.eps / 20, t_max=float(a["t_max"]),
                       seed=int(base_seed))
    if noise.silent:
        tr = integrate_det(model, a["start"], cfg)
        clf = OscillationClassifier(prominence=float(a["prominence"] or 1e-3))
    else:
        tr = integrate_sde(model, a["start"], noise, cfg, index=int(a["index"]))
        clf = (OscillationClassifier(prominence=float(a["prominence"])) if a["prominence"]
               else OscillationClassifier.from_noise(noise.sigma, noise.sigma_p))
    ev = classify_oscillations(tr, clf)
    pat = extract_pattern(ev, mode=a["mode"])
    write_pattern(out / "pattern.txt", out / "events.json", ev, pat)
    if a.get("write_trajectory"):
        tr.to_csv(out / "trajectory.csv")
    return {"word": pat.word_text or None, "transient": pat.transient,
            "symbols": sorted(pat.symbol_set), "n_lao": sum(e.kind == "L" for e in ev)}


def op_saturation(a, out, threads, base_seed):
    from .analysis import (deterministic_fixed_point, saturation_onset, saturation_predict,
                           sector_return_stats)

    params = _params(a["model"])
    model = koper_model(params)
    sb = _boundaries(a, model)
    Pi = sb.sector_map(model)
    write_csv(out / "sector_map.csv", ["sector", "image"], sorted(Pi.items()))
    sig, sigp = float(a["sigma"]), float(a["sigma_p"])
    summary = {"Pi_det": Pi}
    calibrated = None
    if a["stochastic_sectors"]:
        stats = sector_return_stats(model, sb, a["stochastic_sectors"],
                                    NoiseIntensities(sig, sigp), N=int(a["N"]),
                                    base_seed=int(base_seed))
        write_csv(out / "sector_stats.csv", ["sector", "z0", "mean", "std", "n_eff"],
                  [[s.sector, s.z0, s.mean, s.std, s.n_eff] for s in stats])
        calibrated = saturation_onset(stats)
        summary["onset"] = calibrated
    k_star = a["k_star"] if calibrated is not None or a["k_star"] != "calibrated" else "midpoint"
    sm = saturation_predict(Pi, folded_node(params).mu, sig, sigp, eps=params.eps1,
                            k_star=k_star, calibrated=calibrated)
    summary["model"] = sm.to_dict()
    write_json(out / "saturation.json", summary)
    return summary


def op_fold(a, out, threads, base_seed):
    from .fold_local import fold_report

    rep = fold_report(tuple(a["eps_grid"]))
    write_json(out / "fold.json", rep)
    return {"theta_star": rep["theta_star"]}


def op_scaling_lemma(a, out, threads, base_seed):
    from .analysis import scaling_lemma_check

    rep = scaling_lemma_check(nus=tuple(a["nus"]), eps_grid=tuple(a["eps_grid"]))
    write_json(out / "scaling_lemma.json", rep.to_dict())
    return {"worst_spread": rep.worst_spread(), "passed": rep.passed()}


def op_bernstein(a, out, threads, base_seed):
    from .analysis import bernstein_mc_check

    rep = bernstein_mc_check(n_paths=int(a["n_paths"]), n_steps=int(a["n_steps"]),
                             seed=int(base_seed))
    rows = [[r["h"], r["bound"], r["p_hat"], r["se"]] for r in rep.rows]
    write_csv(out / "bernstein.csv", ["h", "bound", "p_hat", "se"], rows)
    return {"ok": rep.ok}


def op_coupling(a, out, threads, base_seed):
    from .analysis import slow_coupling_study

    rep = slow_coupling_study(tuple(a["eps_grid"]), _params(a["model"]), start=tuple(a["start"]),
                              y_end=float(a["y_end"]))
    write_json(out / "coupling.json", rep.to_dict())
    return {"band_ratio": rep.band_ratio, "sup_ratio": rep.sup_ratio}


_ENS = {"model": DEFAULT_MODEL, "sigma": 0.0, "sigma_p": 0.0, "dt": None, "t_max": 10.0}
_SECT = {"z_lo": None, "z_hi": None, "n_grid": None}

OPS = {
    "transition": OpSpec(op_transition, "Monte-Carlo ensemble of one section-to-section transition",
                         {"start": "initial state [x, y, z]", "route": "section ids, last is the target",
                          "N": "number of realizations"}, dict(_ENS), ("hits.csv", "stats.json")),
    "sweep_noise": OpSpec(op_sweep_noise, "spreading versus sigma (sigma_p = ratio * sigma) with log-log fits",
                          {"start": "initial state", "route": "section ids", "N": "realizations per point",
                           "sigma_grid": "{lo, hi, n} log grid or explicit list"},
                          {**{k: v for k, v in _ENS.items() if k not in ("sigma", "sigma_p")}, "ratio": 1.0,
                           "coords": None}, ("sweep.csv", "fit.json")),
    "sweep_epsilon": OpSpec(op_sweep_epsilon, "spreading versus eps1 at fixed noise with log-log fits",
                            {"start": "initial state", "route": "section ids", "N": "realizations per point",
                             "eps_grid": "{lo, hi, n} log grid or explicit list",
                             "sigma": "fast noise intensity", "sigma_p": "slow noise intensity"},
                            {**{k: v for k, v in _ENS.items() if k not in ("sigma", "sigma_p")},
                             "dt_factor": 0.05, "coords": None}, ("sweep.csv", "fit.json")),
    "return_map": OpSpec(op_return_map, "first-return map z -> z' on the section y = -1.8, x > 0",
                         {"z_grid": "{lo, hi, n, log: false} or list"},
                         {"model": DEFAULT_MODEL, "N": 1, "sigma": 0.0, "sigma_p": 0.0, "dt": None,
                          "t_max": 10.0}, ("return_map.csv",)),
    "sector_scan": OpSpec(op_sector_scan, "rotation sectors of deterministic starts on the section",
                          {"z_scan": "{lo, hi, n, log: false} or list"},
                          {"model": DEFAULT_MODEL, **_SECT}, ("sector_scan.csv", "boundaries.csv")),
    "sector_chain": OpSpec(op_sector_chain, "empirical sector Markov chain from iterated stochastic returns",
                           {"z0": "start z on the section", "sigma": "fast noise", "sigma_p": "slow noise"},
                           {"model": DEFAULT_MODEL, "n_returns": 15, "n_chains": 20, "burn_in": 3, **_SECT},
                           ("chain.csv", "returns.csv", "stationary.json")),
    "pattern": OpSpec(op_pattern, "MMO word of a deterministic or stochastic orbit",
                      {"start": "initial state", "t_max": "integration time"},
                      {"model": DEFAULT_MODEL, "sigma": 0.0, "sigma_p": 0.0, "dt": None, "index": 0,
                       "mode": "rle", "prominence": None, "write_trajectory": False},
                      ("pattern.txt", "events.json")),
    "saturation": OpSpec(op_saturation, "deterministic sector map and saturated-map prediction",
                         {"sigma": "fast noise", "sigma_p": "slow noise"},
                         {"model": DEFAULT_MODEL, "k_star": "calibrated", "stochastic_sectors": [],
                          "N": 200, **_SECT}, ("sector_map.csv", "saturation.json")),
    "fold": OpSpec(op_fold, "Riccati asymptote and fold-passage scaling", {},
                   {"eps_grid": [1e-2, 1e-3, 1e-4]}, ("fold.json",)),
    "scaling_lemma": OpSpec(op_scaling_lemma, "quadrature check of the exponential-integral scaling", {},
                            {"nus": [-1, 0, 1, 2], "eps_grid": [1e-2, 1e-3, 1e-4, 1e-5]},
                            ("scaling_lemma.json",)),
    "bernstein_mc": OpSpec(op_bernstein, "Monte-Carlo check of the martingale sup bound", {},
                           {"n_paths": 10000, "n_steps": 1000}, ("bernstein.csv",)),
    "coupling": OpSpec(op_coupling, "fast-to-slow block of the principal solution along a slow segment", {},
                       {"model": DEFAULT_MODEL, "eps_grid": [1e-2, 5e-3, 2.5e-3],
                        "start": [-2.0, -1.8, -8.0], "y_end": 1.8}, ("coupling.json",)),
}
