"""Cross-fitted doubly robust estimation of pairwise treatment effects for J >= 2 arms."""

from .crossfit import (FoldPlan, NuisancePredictions, fit_full_sample, fit_out_of_fold, fold_of,
                       make_folds)
from .data import (ArmSummary, Dataset, EmptyArmError, EstimationError, PairIndex,
                   PositivityReport, ValidationError, arm_counts, canonical_pairs,
                   positivity_diagnostic, validate_dataset)
from .estimators import (AteEstimate, dif_estimate, gaipw_estimate, gcf_estimate, oracle_gaipw,
                         pseudo_outcome, simultaneous_ci, variance_estimate)
from .nuisance import (LearnerSpec, OutcomeModel, PropensityModel, SingularSystemError,
                       clip_propensity, fit_multinomial_logit, fit_ols, fit_outcome_model,
                       predict_propensity, register_learner)
from .simulation import (DESIGNS, MetricsReport, SimulationDesign, efficiency_bound,
                         generate_dataset, get_design, run_monte_carlo, run_replication, true_ate)

__version__ = "0.1.0"
