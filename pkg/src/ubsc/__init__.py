"""Universal background sparse coding for text-independent speaker verification."""

__version__ = "0.1.0"

from .core import UbscModel, encode_frame, supervector, train_ubsc
from .gmm import DiagonalGmm, em_fit, gmm_supervector, init_gmm, posteriors
from .scoring import cosine, inner_product
from .supervector import Supervector

__all__ = [
    "DiagonalGmm",
    "Supervector",
    "UbscModel",
    "cosine",
    "em_fit",
    "encode_frame",
    "gmm_supervector",
    "init_gmm",
    "inner_product",
    "posteriors",
    "supervector",
    "train_ubsc",
]
