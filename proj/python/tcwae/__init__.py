"""Total-correlation Wasserstein autoencoders on factorized sprite data."""

from ._core import (
    ConfigError,
    __version__,
    density_ratio_kl,
    evaluate,
    generate_sprites,
    gradcheck,
    mig,
    mmd_unbiased,
    mws_log_qz,
    mws_terms,
    sap_score,
    train,
)

__all__ = [
    "ConfigError",
    "__version__",
    "density_ratio_kl",
    "evaluate",
    "generate_sprites",
    "gradcheck",
    "mig",
    "mmd_unbiased",
    "mws_log_qz",
    "mws_terms",
    "sap_score",
    "train",
]
