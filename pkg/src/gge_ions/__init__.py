"""Generalized Gibbs ensembles in weakly driven, weakly open spin chains,
and the trapped-ion dissipation-engineering scheme that realizes them.

Modules: ``pauli_algebra`` (symbolic Pauli strings and conserved charges),
``lattice_ops`` (ring operators), ``liouville`` (superoperators and steady
states), ``ensembles`` (block-diagonal and truncated GGE states),
``observables``, ``ion_model``, ``eff_ops`` and the ``cli``.
"""

from .errors import ConfigError, GgeIonsError, NumericalError
from .ion_model import IonSystemParams
from .params import SpinChainParams

__all__ = ["ConfigError", "GgeIonsError", "NumericalError", "IonSystemParams", "SpinChainParams"]
__version__ = "0.1.0"
