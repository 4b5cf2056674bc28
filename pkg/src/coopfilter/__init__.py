"""Cooperative filtering with delayed external observations.

Model-based Kalman benchmarks (local, centralized, delay-optimal) and
co-Filter, a model-free online ridge learner over an asynchronous
autoregressive model.
"""

from .analysis import (
    RegretTrace,
    check_improvement,
    check_orthogonality,
    check_persistent_excitation,
    regret,
    run_invariant_suite,
)
from .cofilter import (
    CoFilter,
    DelayEmbedding,
    OnlineRidge,
    PredictionTrace,
    WindowConfig,
    make_regressor,
    run_cofilter,
    run_ensemble,
)
from .exceptions import (
    ConvergenceError,
    CoopFilterError,
    DimensionError,
    FactorizationError,
    InsufficientHistoryError,
    ModelFreeOnlyError,
    NumericalError,
    StreamHorizonError,
)
from .model import SystemModel, augment, example1, example2, load_model, save_model, validate
from .predictors import (
    DelayedPredictor,
    build_ar_coefficients,
    innovations,
    predict_centralized,
    predict_delayed,
    predict_local,
)
from .riccati import DelayChain, delayed_chain, solve_centralized, solve_dare, solve_local
from .simulate import (
    ObservationStream,
    Trajectory,
    gen_consensus_system,
    gen_trajectory,
    load_trajectory_csv,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
