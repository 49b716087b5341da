"""Zero-squares drift estimation for SDEs with additive fractional noise.

The pipeline: exact fractional Gaussian noise (`fgn`), gradient-type drift
families with hypothesis checkers (`models`), fine-grid Euler simulation with
burn-in (`simulate`), the Q_n statistic and its decomposition (`statistic`),
the zero-squares and closed-form estimators (`estimate`), Monte Carlo
experiment campaigns (`harness`), and a command-line front end (`cli`).
"""

from .fgn import (
    CirculantNotPSD,
    FgnSpec,
    HurstIndex,
    cumulate,
    fbm_covariance,
    fgn_autocovariance,
    sample_fgn,
)
from .models import (
    DriftModel,
    NoiseModel,
    ParameterBox,
    UnknownModelName,
    builtin_models,
    check_dissipativity,
    check_gradient_type,
    check_jacobians,
    get_model,
)
from .simulate import (
    NonFinite,
    ObservationScheme,
    PathRecord,
    SimulationPlan,
    default_burn_in,
    load_path_csv,
    save_path,
    simulate_batch,
    simulate_path,
    stationary_moment,
    stationary_moments,
)
from .statistic import (
    MissingFineGrid,
    StatisticDecomposition,
    StatisticInput,
    decompose,
    q_n,
    qv_statistic,
    residual_terms,
)
from .estimate import (
    DegeneratePath,
    EmptyBox,
    EstimationResult,
    FouClosedForm,
    HSigmaEstimate,
    NonFiniteStatistic,
    ZeroVariation,
    brownian_limit_curve,
    closed_form_fou,
    estimate_h_sigma,
    limit_curve,
    zero_squares,
)
from .seeding import derive_seed

__version__ = "0.1.0"
