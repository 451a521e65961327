"""Re-excitation of a phonon-assisted driven emitter: simulation and analysis."""

__version__ = "0.1.0"
