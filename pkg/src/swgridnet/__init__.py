"""Grid-topology convolutional networks on a small numpy autograd kernel."""

from .model import NetworkConfig, SwGridNetwork, build_network, init_msra, network_forward
from .tensor import Tensor, backward, no_grad
from .topology import GridSpec, enumerate_paths

__all__ = [
    "GridSpec",
    "NetworkConfig",
    "SwGridNetwork",
    "Tensor",
    "backward",
    "build_network",
    "enumerate_paths",
    "init_msra",
    "network_forward",
    "no_grad",
]
