"""Barycentric posterior aggregation for multimodal VAEs.

Gaussian aggregation through a common barycenter lens (product / mixture of
experts, Bures-Wasserstein barycenters and their powerset mixtures), a small
dependency-free autodiff trainer, a synthetic multimodal dataset, and the
standard evaluation protocols (latent probe, coherence, log-likelihood).
"""

from .barycenter import (
    SubsetIndex,
    WeightedFamily,
    barycenter_objective,
    moe,
    mopoe,
    mwb,
    poe,
    subsets,
    wb_diag,
    wb_full,
)
from .data import MultimodalDataset, ToyConfig, gen_toy, load_idx, split
from .diffgraph import ParamStore, Value, adam_step, forward_backward, grad_check
from .errors import (
    CheckpointFormatError,
    ConfigError,
    IdxFormatError,
    NotPsdError,
    NumericError,
    OracleError,
)
from .evaluation import (
    EvalReport,
    LinearProbe,
    coherence,
    evaluate_model,
    fit_linear_probe,
    latent_accuracy,
    test_log_likelihood,
)
from .gaussian import (
    DiagGaussian,
    FullGaussian,
    GaussianMixture,
    entropy_diag,
    kl_diag,
    log_density,
    sample,
    w2sq_1d_quantile,
    w2sq_diag,
    w2sq_full,
)
from .linalg import SymMatrix, sqrtm_psd, sym_eig
from .mmvae import (
    ModelConfig,
    MultimodalVae,
    aggregate,
    conditional_generate,
    elbo,
    encode,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointFormatError",
    "ConfigError",
    "DiagGaussian",
    "EvalReport",
    "FullGaussian",
    "GaussianMixture",
    "IdxFormatError",
    "LinearProbe",
    "ModelConfig",
    "MultimodalDataset",
    "MultimodalVae",
    "NotPsdError",
    "NumericError",
    "OracleError",
    "ParamStore",
    "SubsetIndex",
    "SymMatrix",
    "ToyConfig",
    "Value",
    "WeightedFamily",
    "adam_step",
    "aggregate",
    "barycenter_objective",
    "coherence",
    "conditional_generate",
    "elbo",
    "encode",
    "entropy_diag",
    "evaluate_model",
    "fit_linear_probe",
    "forward_backward",
    "gen_toy",
    "grad_check",
    "kl_diag",
    "latent_accuracy",
    "load_idx",
    "log_density",
    "moe",
    "mopoe",
    "mwb",
    "poe",
    "sample",
    "split",
    "sqrtm_psd",
    "subsets",
    "sym_eig",
    "test_log_likelihood",
    "train",
    "w2sq_1d_quantile",
    "w2sq_diag",
    "w2sq_full",
    "wb_diag",
    "wb_full",
]
