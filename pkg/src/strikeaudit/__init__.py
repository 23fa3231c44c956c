"""strikeaudit: bias-audit toolkit for jury strike records.

Two-stage analysis: certified-optimal feature selection for a logistic
strike model (with race ablation), and optimal-tree segmentation of the
juror population with per-segment disparity testing.
"""

from .audit import (
    AuditConfig,
    AuditReport,
    DisparityFinding,
    ablation_auc,
    leaf_disparity,
    run_audit,
)
from .dataset import (
    FeatureMatrix,
    JurorRecord,
    JurorTable,
    SplitSpec,
    SynthConfig,
    build_matrix,
    filter_eligible,
    load_csv,
    split,
    synth_generate,
    write_csv,
)
from .errors import (
    CollinearityError,
    ContractViolationError,
    DegenerateDataError,
    ParseError,
    SchemaError,
    StageError,
    StratificationError,
    StrikeAuditError,
    UndefinedMetricError,
    UndefinedTestError,
)
from .logreg import FitSettings, LogisticModel, fit, gradient, nll, predict_proba, wald_pvalues
from .stats import ContingencyTable, RocCurve, auc, fisher_exact, holm_adjust, roc_points
from .subset import (
    ImportanceProfile,
    SubsetPath,
    SubsetResult,
    backward_stepwise,
    best_subset,
    importance_profile,
    subset_path,
)
from .tree import Tree, TreeSettings, describe_path, fit_tree, predict_leaf, tune_alpha

__version__ = "0.1.0"
