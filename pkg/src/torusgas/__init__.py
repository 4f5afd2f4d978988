"""Event-driven simulator and verification suite for a one-dimensional
tracer in a light gas and a microscopic periodic potential.

The package has five parts: closed forms and a sampler for the collision
kernel (:mod:`torusgas.kernel`), the periodic potential and its symplectic
flow (:mod:`torusgas.potential`), the event-driven path simulator
(:mod:`torusgas.sim`), a finite regenerative-chain surrogate with exact
splitting diagnostics (:mod:`torusgas.grid`), and the diffusive-limit
reference process with its statistical experiments (:mod:`torusgas.limits`).
"""

from .kernel import (ETA, ModelParams, escape_rate, jump_drift, jump_moment,
                     jump_rate, idealized_rate, q_variance, sample_jump,
                     energy_functionals)
from .potential import PotentialSpec, State, flow
from .sim import (SimConfig, TrackFlags, TrajectoryResult, EnsembleResult,
                  simulate, run_ensemble, next_event, companion_path)
from .grid import (GridSpec, GridModel, build_grid_chain, split_cycle_stats,
                   split_cycle_pairs, chain_reduced_resolvent,
                   state_modulated_resolvent, lifecycle_martingale_check,
                   fractional_moment_report, ergodicity_report,
                   save_grid, load_grid)
from .limits import (OUParams, ou_marginal, smoothing_map, ks_statistic,
                     rescale, run_experiment, ExperimentReport, loglog_slope)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
