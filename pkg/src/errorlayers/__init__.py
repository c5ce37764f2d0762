"""Fat tails from nested errors on a Normal's scale parameter."""

from .mixture import (
    CapacityError,
    ErrorSchedule,
    GaussianSpec,
    ScaleMixture,
    binomial_multipliers,
    density,
    enumerate_multipliers,
    log_density_curve,
    mixture_from,
    sign_matrix,
)
from .moments import (
    ClosedFormUnavailable,
    DecaySchedule,
    DivergenceError,
    MomentSet,
    constant_eps_moments,
    decaying_eps_fourth_central,
    decaying_eps_variance,
    layered_moments,
    mixture_moments_oracle,
    q_pochhammer,
)
from .tail_risk import RatioTable, TailQuery, erfc, exceedance, ratio_table
from .compound import (
    ErrorChain,
    PrecisionPrior,
    QuadratureError,
    StudentTSpec,
    cnl_density,
    compose_s2,
    failure_rate_gamma,
    failure_rate_lognormal,
    gamma_log_sf,
    log_survival_ratio,
    lomax_from,
    match_gamma,
    negbin_from,
    student_t_density,
)
from .sampler import SimConfig, sample_cnl, sample_layered, sample_precision_chain

__version__ = "0.1.0"
