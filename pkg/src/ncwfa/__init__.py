"""Sequential density estimation with nonlinear continuous weighted automata.

Library layout:

* tensor_core -- dense tensor algebra and tensor trains
* prob_core   -- log-domain probability kernels
* ghmm        -- Gaussian HMMs: sampling, exact densities, EM
* model       -- linear automata and the autoregressive density automaton
* autodiff    -- minimal reverse-mode tape over numpy
* training    -- density losses, Adam, gradient-descent fits
* spectral    -- Hankel construction and spectral parameter recovery
* experiment  -- synthetic benchmark pipeline (also behind the `ncwfa` CLI)
"""

__version__ = "0.1.0"

from .ghmm import (
    EmConfig,
    GaussianHmm,
    em_fit,
    log_density_factored,
    log_density_forward,
    random_hmm,
    sample,
    sample_dataset,
    shifting_hmm_log_density,
)
from .model import (
    ConstantFeatureMap,
    LinearCwfa,
    MixtureDensityHead,
    RnadeNcwfa,
    StateWeightedGaussianHead,
    TanhFeatureMap,
    from_gaussian_hmm,
    linear_cwfa_apply,
    shifting_construction,
)
from .prob_core import (
    DiagGaussian,
    FullGaussian,
    MixtureParams,
    log_density_diag,
    log_density_full,
    log_mixture_density,
    log_sum_exp,
    softmax,
)
from .serialize import load_model, save_model
from .spectral import (
    HankelSet,
    exact_hankel_trains,
    hankel_from_linear_cwfa,
    recover_density_model,
    recover_linear_cwfa,
    spectral_learn,
)
from .tensor_core import (
    TTTrain,
    matricize,
    mode_product,
    rank_factorize,
    tt_contract_features,
    tt_to_dense,
)
from .training import (
    ParamGraph,
    TrainConfig,
    adam_step,
    fit_hankel,
    fit_sgd,
    grad_check,
    loss_direct,
    loss_hankel,
)

__all__ = [name for name in dir() if not name.startswith("_")]
