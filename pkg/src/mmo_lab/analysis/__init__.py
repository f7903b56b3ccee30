"""Ensembles, scaling sweeps, probability bounds, calibration and sector analysis."""
from .bounds import (BOUNDS, TABLE1, BoundParams, MissingArgument, bernstein_bound, eval_bound,
                     table1_order)
from .calibration import ExceedanceCalibrator, exceedance_calibration, exceedance_curve
from .ensemble import (EnsembleResult, EnsembleSpec, ReferenceTransitionError, default_threads,
                       point_seed, reference_hit, run_ensemble)
from .lemmas import (BernsteinReport, QuadratureError, ScalingReport, bernstein_mc_check,
                     scaling_integral, scaling_lemma_check)
from .linear import CouplingReport, coupling_sup, slow_coupling_study, slow_segment
from .saturation import SaturationModel, deterministic_fixed_point, saturation_predict
from .sectors import (SectorBoundaries, deterministic_returns, iterate_stochastic_returns,
                      koper_rotation_sector, saturation_onset, section_start,
                      sector_return_stats, stochastic_returns)
from .stats import InsufficientData, SlopeFit, SpreadStats, fit_slope, spreading_stats
from .sweeps import SweepResult, log_grid, sweep_epsilon, sweep_noise
