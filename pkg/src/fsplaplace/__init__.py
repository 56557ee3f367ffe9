"""Neural networks with Gaussian-process function-space priors and a matrix-free linearized Laplace posterior."""

from .errors import ConfigError, NumericalError, ShapeError, TrainingError
from .gp import GpPrior
from .kernels import MultiOutputKernel, parse_kernel
from .laplace import LanczosConfig, PosteriorFactors, fsp_laplace
from .nn import MlpSpec, forward, init_params, jacobian, jvp, vjp

__all__ = [
    "ConfigError", "GpPrior", "LanczosConfig", "MlpSpec", "MultiOutputKernel", "NumericalError",
    "PosteriorFactors", "ShapeError", "TrainingError", "fsp_laplace", "forward", "init_params",
    "jacobian", "jvp", "parse_kernel", "vjp",
]
