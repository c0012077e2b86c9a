"""Statistical matching of two files that share only a common variable block.

File A observes (X, Y), file B observes (X, Z). The package fits Gaussian,
skew-normal and mixture models under the identification restriction
Sigma_YZ = Sigma_YX Sigma_XX^{-1} Sigma_XZ, imputes the missing blocks from the
fitted conditionals, and contrasts the result with nearest-neighbour hot-deck
matching.
"""

from .data_model import BlockSpec, ImputedDataset, StackedDataset, emit_csv, load_csv, stack
from .em import EMConfig, FitReport
from .errors import DataError, FusionError, NumericalError
from .gaussian import fit_gaussian
from .imputation import (
    ImputationRequest,
    NNConfig,
    asymptotic_nn_sample_mixture,
    asymptotic_nn_sample_sn,
    impute,
    impute_nn,
    impute_parametric,
    summarize,
)
from .mixtures import (
    MixtureParams,
    fit_gmm_matching,
    fit_snmix_matching,
    observed_loglik,
    posterior_class_probs,
)
from .params import EtaParams, GaussianParams, SkewNormalParams, eta_to_theta, theta_to_eta
from .skew_normal import conditional_sn, fit_sn_em, sn_density, sn_sample
from .truncnorm import TruncatedNormalSpec, tn_moments, tn_sample

__version__ = "0.1.0"

__all__ = [
    "BlockSpec",
    "StackedDataset",
    "ImputedDataset",
    "stack",
    "load_csv",
    "emit_csv",
    "EMConfig",
    "FitReport",
    "FusionError",
    "DataError",
    "NumericalError",
    "GaussianParams",
    "SkewNormalParams",
    "EtaParams",
    "MixtureParams",
    "theta_to_eta",
    "eta_to_theta",
    "fit_gaussian",
    "fit_sn_em",
    "fit_gmm_matching",
    "fit_snmix_matching",
    "observed_loglik",
    "posterior_class_probs",
    "sn_density",
    "sn_sample",
    "conditional_sn",
    "TruncatedNormalSpec",
    "tn_moments",
    "tn_sample",
    "NNConfig",
    "ImputationRequest",
    "impute",
    "impute_nn",
    "impute_parametric",
    "asymptotic_nn_sample_sn",
    "asymptotic_nn_sample_mixture",
    "summarize",
]
