"""Large-deviations toolkit for subcritical generalized Jackson networks.

Exact event-driven simulation, renewal-stream rate costs, face-dependent
local rate functions, piecewise-linear path action, quasipotentials, and
Monte Carlo verification that stationary tail probabilities decay at the
quasipotential rate.
"""

from .distributions import DistributionFamily, Exponential, Gamma, HyperExponential
from .errors import (GJNetError, InvalidInputError, ModelError, SolverError,
                     UnsupportedError)
from .network import (NetworkSpec, ValidationReport, effective_rates, load_spec,
                      save_spec, spec_from_dict, spec_to_dict, spectral_radius,
                      validate)
from .cramer import (counting_cumulant, counting_cumulant_deriv, local_cost,
                     local_cost_delayed, renewal_rate_cost,
                     renewal_rate_cost_detail, routing_cost, unit_rate_kl)
from .local_rates import (GatingWindow, LocalRateProblem, LocalRateSolution,
                         local_rate, local_rate_delayed, local_rate_grid_search,
                         solve_local_rate, zero_face)
from .path_action import (PiecewiseLinearPath, action, action_delayed,
                          path_from_rows, path_to_rows, segment_face)
from .quasipotentials import (HoldTime, QuasipotentialResult, best_segment_duration,
                             fluid_drain_path, quasipotential,
                             quasipotential_finite_horizon)
from .simulator import (SimResult, SimState, StateSamples, TailEstimate,
                        default_burn_in, default_spacing, estimate_tail,
                        scaled_trajectory, simulate, stationary_sample)
from .cli import VerificationReport, run_verify

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
