"""Locally differentially private ERM via Bernstein surrogates, and private query release."""

from .constraints import ConstraintSet
from .erm import ERMResult, oracle_minimize, private_erm, private_erm_regularized, resolve_config
from .errors import (ConstructionError, ContractViolationError, DegenerateInputError, InfeasibleError,
                     InputDomainError, ResourceError)
from .highdim import GLMLoss, ProjectionMatrix, dr_erm, gaussian_width_mc, gen_projection, jl_check, recover_minkowski
from .losses import LossSpec, get_loss, synthetic_dataset
from .mechanisms import PrivacyParams, ldp_avg_1d, ldp_avg_pd
from .polyapprox import BernsteinSurrogate, SurrogateConfig, chebyshev_disjunction, iterated_bernstein_fit
from .protocol import ProtocolConfig, Transcript, run_protocol
from .queries import (answer_marginal, answer_smooth, gaussian_kernel_query, release_marginals,
                      release_smooth)

__version__ = "0.1.0"

__all__ = [
    "BernsteinSurrogate", "ConstraintSet", "ConstructionError", "ContractViolationError",
    "DegenerateInputError", "ERMResult", "GLMLoss", "InfeasibleError", "InputDomainError", "LossSpec",
    "PrivacyParams", "ProjectionMatrix", "ProtocolConfig", "ResourceError", "SurrogateConfig",
    "Transcript", "answer_marginal", "answer_smooth", "chebyshev_disjunction", "dr_erm",
    "gaussian_kernel_query", "gaussian_width_mc", "gen_projection", "get_loss", "iterated_bernstein_fit",
    "jl_check", "ldp_avg_1d", "ldp_avg_pd", "oracle_minimize", "private_erm", "private_erm_regularized",
    "recover_minkowski", "release_marginals", "release_smooth", "resolve_config", "run_protocol",
    "synthetic_dataset",
]
