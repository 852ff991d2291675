"""Sparse Wasserstein-barycentric approximation on 2D grids.

The package provides entropy-regularized optimal transport on grid-supported
measures, debiased divergences and barycenters, sparse-simplex descent
solvers for best n-term barycentric approximation, local metric learning,
measure-valued regression strategies, a viscous conservation-law data
generator, and an experiment harness with a command line front end.
"""

from sparsebary._kernels import BACKEND
from sparsebary.grid import (
    EmptySupportError,
    Grid2D,
    GridMeasure,
    NegativeMassError,
    ZeroMassError,
    default_grid,
    new_normalized,
    uniform_square,
)
from sparsebary.sinkhorn import (
    ConvergenceWarning,
    DualPotentials,
    EntropicConfig,
    OtResult,
    ot_eps,
    pairwise_distance_matrix,
    sinkhorn_divergence,
)
from sparsebary.sparse_simplex import SparseWeights, gssp, project_simplex
from sparsebary.barycenter import (
    BarycenterProblem,
    StepTooLargeError,
    barycentric_loss,
    loss_gradient,
    sinkhorn_barycenter,
)
from sparsebary.descent import (
    DescentConfig,
    DescentTrace,
    DivergedError,
    gas,
    pg,
    rgsp,
)
from sparsebary.metric import (
    DegenerateDesignError,
    LocalMetric,
    MetricField,
    learn_local_metrics,
    mahalanobis_sq,
    metric_knn,
)
from sparsebary.regression import (
    BgaModel,
    Prediction,
    TrainingSet,
    as_bench_predict,
    as_predict,
    best_benchmark,
    bga_predict,
    bga_train,
    kernel_weights,
    nn_predict,
)
from sparsebary.burgers import (
    BoundaryTouchWarning,
    BurgersParams,
    CflViolationError,
    SolverSpec,
    generate_dataset,
    sample_parameters,
    solve_burgers,
)
from sparsebary.harness import (
    DatasetIOError,
    ErrorReport,
    ExperimentConfig,
    FormatVersionError,
    load_dataset,
    run_experiment,
    save_dataset,
    summarize,
)

__version__ = "0.1.0"
