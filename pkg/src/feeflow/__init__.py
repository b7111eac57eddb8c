"""Dynamic pricing of multiple blockchain resources.

A latent demand/sensitivity model drives block usage; this package tracks
that state with a Kalman filter, prices blocks with closed-form and
receding-horizon controllers, fits the model from historical data with EM,
and benchmarks policies against the multiplicative base-fee heuristics.
"""

from ._backend import backend_name, kernels_enabled
from .errors import (DegenerateDenominator, EmptyTrajectory, MonotonicityError,
                     MonotonicityViolation, NearSingularF, NoConvergence,
                     NonStationaryUpdateWarning, NumericalError, ParseError,
                     SeriesTooShort, SingularB, SingularMoment,
                     ValidationError, ZeroBeta)
from .estimation import (EmStructure, EmTrace, ThetaEstimate, e_step,
                         expected_complete_loglik, fit_em, initial_theta,
                         m_step)
from .evaluation import (MetricsReport, PolicySpec, RegimeLabels,
                         classify_regimes, compute_metrics, make_policy,
                         run_headtohead)
from .kalman import (BeliefState, FilterResult, Prediction, SmoothedTrajectory,
                     filter_trajectory, log_likelihood, predict, predict_multi,
                     predict_observation, smooth, update)
from .params import (BlockRecord, HiddenState, LinearStateModel, ModelParams,
                     StackedParams, observation_matrix, stack_params,
                     stationary_state_prior, unvec, vec)
from .policies import (AimDecomposition, EigenModel, RiccatiSolution,
                       aim_price, deterministic_b_path, eigen_price,
                       eip1559_update, eip4844_update, finite_horizon_rollout,
                       gamma_opt, lindy0_price, lqg_price, mpc_price,
                       riccati_backward, riccati_finite, unidim_update)
from .simulate import PriceRule, Trajectory, simulate_truth

__version__ = "0.1.0"
