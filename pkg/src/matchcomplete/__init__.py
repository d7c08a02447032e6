"""Low-rank reward estimation and learning in matching markets."""
from .bandits import (
    MatchingEnvironment,
    RegretTrace,
    run_cts,
    run_cucb,
    run_comblrb,
    run_compb,
    run_complrb,
)
from .enhancement import EnhanceConfig, double_enhance
from .errors import ConfigError, DataError, MatchCompleteError, NumericalError
from .estimators import EstimatorReport, NuclearSolverConfig, default_lambda, error_metrics, fit_naive, fit_nuclear
from .harness import AggregateResult, ExperimentConfig, run_offline_experiment, run_online_experiment
from .matching import FactorPair, Matching, RewardMatrix, observe_operator, total_reward, validate_matching
from .rng import RandomSource
from .sampling import ObservationLog, generate_synthetic_truth, simulate_observations
from .solvers import PreferenceProfile, blocking_pairs, gale_shapley, max_weight_matching

__version__ = "0.1.0"
