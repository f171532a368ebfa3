"""Two-state hidden Markov models with a shared random effect for joint
binary and count longitudinal outcomes."""
from .model import (
    MEAN_MONTHLY_MILES,
    PARAM_NAMES,
    SIMULATION_TRUTH,
    TEEN_DRIVING_ESTIMATES,
    Dataset,
    ModelParams,
    SubjectSeries,
    ValidationError,
    cnc_prob,
    count_mean,
    emission_loglik,
    initial_dist,
    transition_probs,
)
from .forward_backward import (
    backward_pass,
    forward_backward,
    forward_pass,
    state_posterior_given_u,
    viterbi_given_u,
)
from .quadrature import QuadratureRule, adapt, find_adaptation, gh_rule
from .estimation import (
    FitConfig,
    FitResult,
    NumericalError,
    aic,
    fit,
    marginal_loglik,
    random_effect_mode,
    std_errors,
)
from .simulation import (
    CorrelatedTruth,
    SimStudyConfig,
    StudyReport,
    lognormal_miles,
    run_study,
    simulate_correlated,
    simulate_shared,
)
from .prediction import (
    History,
    RocCurve,
    decode,
    loso_cv,
    one_step_ahead,
    permutation_null,
    posterior_state,
    predict_series,
    roc,
)
from .io import ingest, write_dataset

__version__ = "0.1.0"
