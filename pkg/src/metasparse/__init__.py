"""Pooled l1 support recovery across few-sample tasks, support-constrained
novel-task estimation, multi-task baselines, and the Monte-Carlo harness
reproducing the phase-transition experiments."""

from .model import (
    GroundTruth,
    MetaDataset,
    SolverResult,
    SupportSet,
    TaskData,
    SUPPORT_TOL,
    extract_support,
    support_equal,
)
from .synth import (
    CovarianceSpec,
    GenConfig,
    XKind,
    build_covariance,
    generate,
    make_true_weights,
    mutual_incoherence,
    random_orthonormal,
    sample_delta,
    substream,
)
from .solvers import (
    MultiTaskResult,
    SolverOptions,
    dirty_model,
    group_lasso,
    kkt_residual,
    lasso,
    lasso_dual,
    ols_refit,
    project_l1_ball,
    prox_linf_row,
    restricted_lasso,
    soft_threshold,
)
from .meta import (
    MetaFitReport,
    NovelFitReport,
    fit_novel_task,
    lambda_schedule,
    novel_lambda,
    pool,
    recover_common_support,
)
from .bench import (
    ExperimentSpec,
    PhaseRecord,
    Sweep,
    T_for_C,
    dirty_lambda_inf,
    read_csv,
    rescale_C,
    run_compare,
    run_phase,
    write_csv,
)
from .realdata import (
    ExpressionTable,
    RealRecord,
    RealSpec,
    build_tasks,
    evaluate_novel,
    load_expression_csv,
    permute_cells,
    run_real_compare,
    synthetic_expression_table,
    tune_lambda,
)

__version__ = "0.1.0"
