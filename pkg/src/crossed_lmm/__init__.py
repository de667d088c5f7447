"""Streaming moment-based estimation for crossed random-effects linear models.

Fits response = fixed effects + row effect + column effect + noise on large
sparse observation patterns in O(N) time and O(R+C) space, with coefficient
covariance estimates that account for both random effects.
"""

__version__ = "0.1.0"

from .errors import (
    CrossedLmmError,
    DuplicateCellError,
    EmptyDatasetError,
    MalformedHeaderError,
    MissingInterceptError,
    NonFiniteError,
    ParseError,
    SingularCovarianceError,
    SingularDesignError,
    SingularMomentSystemError,
    TooLargeError,
    WidthMismatchError,
)
from .gls import (
    GlsMode,
    NormalEquations,
    cls_fit,
    efficiency_lower_bounds,
    ols_fit,
    reweight_normal_equations,
    rls_fit,
    select_gls_mode,
)
from .inference import (
    Diagnostics,
    clt_diagnostics,
    upsilon_diagnostic,
    var_beta_cls,
    var_beta_ols_sandwich,
    var_beta_rls,
)
from .ingest import (
    CsvSource,
    DedupPolicy,
    IndexedDataset,
    MemorySource,
    dataset_from_arrays,
    index_dataset,
    materialize,
    open_source,
)
from .model import (
    DatasetProfile,
    FitResult,
    Observation,
    VarianceComponents,
    build_profile,
    validate_observation,
)
from .moments import (
    MomentMatrix,
    UStatistics,
    build_moment_matrix,
    compute_u_statistics,
    residual_moments,
    solve_moment_system,
    solve_variance_components,
    u_statistics_from_moments,
)
from .oracle import (
    DenseDesign,
    dense_covariance,
    dense_gls,
    dense_gls_sandwich,
    exact_efficiency,
    naive_u_statistics,
    single_factor_covariance,
)
from .pipeline import FitOptions, fit
from .simulator import (
    SimConfig,
    StudyRow,
    TruthRecord,
    draw_effects,
    mc_study,
    mse_loglog_slopes,
    simulate_crossed,
    write_study_csv,
)

__all__ = [name for name in dir() if not name.startswith("_")]
