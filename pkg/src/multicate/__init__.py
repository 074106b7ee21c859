"""multicate: heterogeneous treatment effect estimation across multiple RCTs.

Three single-study learners (S-learner, X-learner, causal forest) crossed
with five aggregation strategies (complete pooling, trial-indicator pooling,
and tree/forest/lasso ensembles over the augmented dataset), plus a one-stage
mixed-effects IPD meta-analysis, and a Monte Carlo harness that benchmarks
all sixteen combinations against closed-form ground truth.
"""

__version__ = "0.1.0"

from .aggregate import (
    AugmentedDataset,
    EnsembleModel,
    build_augmented_dataset,
    fit_complete_pooling,
    fit_ensemble,
    fit_indicator_pooling,
    fit_local_models,
)
from .dataset import (
    MultiTrialDataset,
    ValidationReport,
    load_dataset,
    validate_assumptions,
    write_csv,
)
from .errors import DataError, NumericalError
from .interpret import (
    ImportanceTable,
    best_linear_projection,
    doubly_robust_scores,
    fit_interpretation_tree,
    render_tree_text,
    variable_importance,
)
from .lasso import LassoModel, fit_lasso
from .linear import OlsFit, fit_ols
from .mixed_model import MetaAnalysisModel, fit_ipd_meta
from .serialize import load_model, model_from_dict, model_to_dict, save_model
from .simulate import (
    ALL_METHODS,
    SD_PAIR_ORDER,
    SD_PAIRS,
    BenchmarkReport,
    ScenarioConfig,
    TrueEffectOracle,
    compute_mse,
    g_expit,
    generate_trials,
    regress_mse,
    run_benchmark,
    true_cate,
)
from .single_study import (
    CateModel,
    CausalForestModel,
    SLearnerModel,
    XLearnerModel,
    estimate_cate_variance,
    fit_causal_forest,
    fit_s_learner,
    fit_x_learner,
)
from .trees import (
    ForestModel,
    ForestParams,
    TreeModel,
    TreeParams,
    fit_regression_forest,
    fit_regression_tree,
)
