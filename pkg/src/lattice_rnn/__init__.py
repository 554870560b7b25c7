"""Lattice Recurrent Units and baseline recurrent cells for character-level language modeling."""
from .cells import CellKind, CellParams, count_cell_params
from .lattice import NetworkConfig, NetworkParams, count_network_params, init_network
from .numkit import BACKEND

__all__ = [
    "BACKEND",
    "CellKind",
    "CellParams",
    "NetworkConfig",
    "NetworkParams",
    "count_cell_params",
    "count_network_params",
    "init_network",
]
__version__ = "0.1.0"
