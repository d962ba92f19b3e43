"""Statistically valid single- and group-level variable importance.

Groups of correlated variables are scored by conditional permutation: a lean
forest models each group from the remaining columns, only the independent
residual part is shuffled, and per-sample loss deltas from a 2-fold
cross-fitted learner feed a Wald statistic with a one-sided p-value. An
optional trainable projection sub-layer inside the network (internal
stacking) collapses each group to a low-dimensional summary, cutting the
conditional-modeling cost for high-cardinality groups.
"""

from .baselines import (
    BaselineScore,
    run_gopfi,
    run_gpfi,
    run_logi,
    run_logo,
    run_marginal,
)
from .benchmark import (
    ExperimentConfig,
    MethodSpec,
    MetricsRow,
    auc_ranking,
    power,
    run_experiment,
    type_one_error,
)
from .conditional import (
    ConditionalSampler,
    fit_conditional,
    permute_standard,
    reconstruct,
)
from .inference import (
    CrossFitBundle,
    GroupImportance,
    ImportanceReport,
    LossDeltaMatrix,
    fit_crossfit,
    importance_statistics,
    loss_delta,
    normal_cdf,
    run_importance,
)
from .learners import (
    FittedLearner,
    ForestConfig,
    LinearConfig,
    MlpConfig,
    StackingConfig,
    fit,
    load_learner,
    predict,
    project_groups,
    save_learner,
)
from .simulation import (
    BlockCovarianceConfig,
    OutcomeConfig,
    SimulatedTruth,
    build_block_covariance,
    draw_beta,
    sample_design,
    simulate_dataset,
    simulate_outcome,
)
from .types import (
    Dataset,
    GroupSpec,
    ProjectionSet,
    SplitPlan,
    derive_seed,
    load_dataset_csv,
    load_groups_json,
    save_dataset_csv,
    save_groups_json,
    validate_group_spec,
)

__version__ = "0.1.0"
