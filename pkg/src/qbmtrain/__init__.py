"""Classical simulator for relative-entropy training of quantum Boltzmann machines."""

__version__ = "0.1.0"
