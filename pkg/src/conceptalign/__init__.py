"""conceptalign: Group-Lasso alignment of machine representations with
interpretable concepts, with a kernelized variant, permutation recovery by
weighted matching, synthetic benchmarks, and Monte Carlo verification of the
finite-sample recovery guarantee."""

from .align import (
    AlignmentModel,
    ConceptRegressor,
    NaiveAssignment,
    Permutation,
    build_alignment_model,
    build_kernel_alignment_model,
    correlation_matching,
    match_permutation,
    naive_assignment,
    predict_concepts,
)
from .bench import (
    EstimatorSpec,
    ExperimentConfig,
    TheoryReport,
    run_experiment,
    sweep,
    verify_theory,
)
from .data import SampleMatrix
from .features import (
    FeatureExpansion,
    FeatureSpec,
    GroupStructure,
    IncoherenceReport,
    check_incoherence,
    expand,
    rff_features,
    spline_features,
    standardize_groups,
)
from .glasso import (
    ConvergenceError,
    GroupLassoFit,
    GroupLassoProblem,
    SolverOptions,
    fit_all_concepts,
    fit_group_lasso,
    fit_logistic_group_lasso,
    group_soft_threshold,
    kkt_residual,
    lambda0,
)
from .kernels import (
    KernelFit,
    KernelSpec,
    chol_psd,
    fit_kernel_concepts,
    fit_kernel_group_lasso,
    gram,
    nystrom_landmarks,
)
from .metrics import MetricReport, accuracies, mpe, nis, ois, r2_diagonal
from .synthgen import (
    DIFFEOMORPHISMS,
    ToyConfig,
    ToyDataset,
    binarize_midpoint,
    gen_misspecified,
    gen_wellspecified,
    make_downstream_labels,
    make_toy_dataset,
    sample_correlated_gaussian,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
