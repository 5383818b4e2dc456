"""Simulation of driven-dissipative photon-pair condensation.

Modules:

- :mod:`pairsim.fock` - truncated bosonic lattices, operators and jump builders
- :mod:`pairsim.darkstate` - pair-condensate dark states and their correlators
- :mod:`pairsim.lindblad` - exact master-equation evolution
- :mod:`pairsim.trajectory` - quantum-trajectory ensembles (dense or MPS)
- :mod:`pairsim.mps` - matrix product states and Trotterized non-Hermitian steps
- :mod:`pairsim.glauber` - kinetic Monte Carlo of defect annihilation
- :mod:`pairsim.cqed` - circuit-QED realisation and its adiabatic elimination
- :mod:`pairsim.cli` - batch experiments and recipes
"""

__version__ = "0.1.0"
