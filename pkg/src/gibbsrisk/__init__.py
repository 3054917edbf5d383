"""Gibbs posteriors for entropy-regularized empirical risk minimization on
atomized model spaces, with optimality and sensitivity certification."""

from .errors import (
    BaseMismatch,
    BudgetExceeded,
    ConfigError,
    DimensionMismatch,
    EmptySupport,
    GibbsriskError,
    InvalidC,
    NegativeDensity,
    NonConvergence,
    NonFiniteLoss,
)
from .measures import (
    AtomizedMeasure,
    MeasureKind,
    MeasureOnAtoms,
    atomize_density,
    make_discrete,
    relative_entropy,
)
from .risk import (
    Dataset,
    ProblemSpec,
    RiskTable,
    empirical_risk,
    linear_01_problem,
    linear_squared_problem,
    risk_table,
    table_problem,
    threshold_01_problem,
)
from .gibbs import (
    FinitenessDomain,
    GibbsPosterior,
    cumulant,
    erm_rer_objective,
    expected_risk,
    finiteness_domain,
    gibbs_posterior,
    log_partition,
    sample,
)
from .optimality import (
    NotAchievable,
    OptimalityReport,
    check_delta_eps,
    classify_reference,
    delta_star,
    find_lambda,
    lambda_search_report,
    sublevel_probability,
)
from .sensitivity import (
    BSquaredEstimate,
    ConstrainedMinResult,
    GammaGrid,
    SensitivityReport,
    b_squared,
    certify_bound,
    constrained_min,
    minimal_risk_conditional,
    sensitivity,
)
from .datadist import (
    DatasetDistribution,
    LautumReport,
    enumerate_datasets,
    global_b_squared,
    lautum_information,
    mixture_posterior,
    verify_expected_sensitivity_bounds,
)

__version__ = "0.1.0"
