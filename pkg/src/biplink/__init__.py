"""Link prediction for bipartite meta-networks compiled from biased studies."""

from .estimator import COILLinkPredictor, check_network_data
from .gibbs import ChainConfig, ChainOutput, run_chain, run_chains
from .model import Hyperparams
from .netdata import NetworkData, assemble, load_dataset

__version__ = "0.1.0"

__all__ = [
    "COILLinkPredictor", "ChainConfig", "ChainOutput", "Hyperparams", "NetworkData",
    "assemble", "check_network_data", "load_dataset", "run_chain", "run_chains",
]
