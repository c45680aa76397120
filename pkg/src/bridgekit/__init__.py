"""bridgekit: diffusion bridges for healthy-counterfactual generation.

The pipeline: synthetic paired phantoms (synthdata), Gaussian noise
schedules and bridge kernels (schedules, sde), data-prediction networks
trained by bridge or plain score matching (network, training), bridge
and ancestral samplers (sampling), and anomaly-detection metrics
(evaluation). Hot kernels run on numba or pure numpy, selected by the
BRIDGEKIT_BACKEND environment variable (backend, kernels).
"""

from .backend import active_backend, set_backend
from .errors import (
    BridgekitError,
    ConfigError,
    ContractError,
    DataMismatchError,
    DomainError,
    FormatError,
    TrainingError,
)
from .schedules import BridgeCoefficients, NoiseSchedule

__version__ = "0.1.0"

__all__ = [
    "BridgekitError",
    "BridgeCoefficients",
    "ConfigError",
    "ContractError",
    "DataMismatchError",
    "DomainError",
    "FormatError",
    "NoiseSchedule",
    "TrainingError",
    "active_backend",
    "set_backend",
    "__version__",
]
