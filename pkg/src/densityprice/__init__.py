"""Risk-neutral option pricing from prices-densities, without a price model."""

from .diagnostics import (
    DiagnosticsConfig,
    DiagnosticsReport,
    contiguity_report,
    diagnose,
    hellinger_profile,
    lindeberg_curve,
    lindeberg_sum,
    uan_check,
    yu_sandwich_check,
)
from .experiment import (
    BUYER,
    TRADER,
    DensityExperiment,
    StrategyTag,
    empirical_cdf,
    finite_n_price,
    forward_expect,
    lambda_direct,
    lambda_per_path,
    martingale_check,
    to_densities,
)
from .limit_law import (
    Atom,
    CompoundPoissonLaw,
    LimitLaw,
    TranslationSpec,
    estimate_limit_law,
    limit_cdf,
    mgf_lambda,
    normal_tilt,
    poisson_component_law,
    sigma2_geometric,
    translation_spec,
)
from .market_sim import Mesh, PathEnsemble, gen_gbm, gen_jump_diffusion, load_ensemble, make_mesh
from .pricing import (
    Quote,
    mc_price,
    oracle_bsm,
    oracle_quadrature_price,
    price_calm,
    price_noncalm,
    pricing_pipeline,
    strike_probabilities,
)

__version__ = "0.1.0"
