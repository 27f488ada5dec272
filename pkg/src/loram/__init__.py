"""Low-rank adapter initialization and magnitude-dynamics toolkit."""
from .linalg import SvdResult, dst_basis, matmul, qr, svd
from .magnitude import gain_log, gain_q, nu, rho, spectral_report
from .rng import Rng, gaussian_matrix

__version__ = "0.1.0"
