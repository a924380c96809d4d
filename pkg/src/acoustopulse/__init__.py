"""Coupled piezoelectric elastodynamics of pulsed surface gates on GaAs.

Simulates the acoustoelectric waves launched by nanosecond gate-voltage
pulses (structured-brick finite elements, operator-split explicit stepping)
and their effect on a remote double-dot two-level system.
"""

__version__ = "0.1.0"

from .backend import backend_name

__all__ = ["backend_name", "__version__"]
