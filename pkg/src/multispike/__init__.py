"""Likelihood-ratio and classical tests for multiple spikes in high-dimensional covariance."""

__version__ = "0.1.0"

from .errors import DataFormatError, DomainError, NumericalError
from .mp_law import MPLaw
from .spiked_sim import EigenData, SpikedParams, eigen_data, generate_data, read_matrix, write_matrix

__all__ = [
    "DataFormatError",
    "DomainError",
    "EigenData",
    "MPLaw",
    "NumericalError",
    "SpikedParams",
    "__version__",
    "eigen_data",
    "generate_data",
    "read_matrix",
    "write_matrix",
]
