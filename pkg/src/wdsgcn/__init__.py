"""Graph emulator for steady-state water distribution networks.

Modules: :mod:`~wdsgcn.inp` (EPANET INP files), :mod:`~wdsgcn.network`,
:mod:`~wdsgcn.oracle` (Newton reference solver), :mod:`~wdsgcn.fixpoint`
(head propagation), :mod:`~wdsgcn.gcn` (learnable flow estimator),
:mod:`~wdsgcn.train`, :mod:`~wdsgcn.evaluate` and :mod:`~wdsgcn.cli`.
"""
from .inp import read_inp
from .network import WaterNetwork
from .oracle import solve_steady_state

__version__ = "0.1.0"

__all__ = ["WaterNetwork", "read_inp", "solve_steady_state", "__version__"]
