"""Master-equation dynamics of a qubit coupled to a finite chaotic spin-chain bath.

The package derives a Lindblad description of a two-level system from the
eigenstate-thermalization structure of a pure bath state and checks it against
exact unitary evolution of the full system-plus-bath Hamiltonian.
"""

__version__ = "0.1.0"

from . import dynamics, eth, hamiltonian, spectra, states, thermo  # noqa: F401
