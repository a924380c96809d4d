"""Trapezoidal gate-voltage waveform and time-dependent gate potentials."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrapezoidalPulse:
    """Piecewise-linear pulse: ramp up over t_r, hold A for t_d, ramp down over t_r.

    t_r = 0 degenerates to an ideal step applied at the first time >= t0.
    """

    amplitude: float  # V
    t_rise: float  # s
    t_duration: float  # s, time at full amplitude
    t_start: float = 0.0

    def __post_init__(self):
        if self.t_rise < 0.0 or self.t_duration < 0.0:
            raise ValueError("pulse times must be nonnegative")


@dataclass(frozen=True)
class GateLayout:
    """Three-gate geometry: width a, edge-to-edge gap d, centered in x.

    The pulse is applied to the center gate; the outer gates are held at 0 V
    and double as the potential ground reference.
    """

    width: float  # m
    gap: float  # m

    def __post_init__(self):
        if self.width <= 0.0 or self.gap <= 0.0:
            raise ValueError("gate width and gap must be positive")


def pulse_value(p: TrapezoidalPulse, t) -> float | np.ndarray:
    """Voltage at time t (scalar or array)."""
    t = np.asarray(t, dtype=float)
    tau = t - p.t_start
    if p.t_rise == 0.0:
        up = np.where(tau < 0.0, 0.0, 1.0)
        down = np.where(tau <= p.t_duration, 1.0, 0.0)
        out = p.amplitude * up * down
    else:
        ramp_up = tau / p.t_rise
        ramp_down = (p.t_duration + 2.0 * p.t_rise - tau) / p.t_rise
        out = p.amplitude * np.clip(np.minimum(np.minimum(ramp_up, 1.0), ramp_down), 0.0, 1.0)
    return out if out.ndim else float(out)


def pulse_support(p: TrapezoidalPulse) -> tuple[float, float]:
    """Interval outside which the pulse is identically zero."""
    return p.t_start, p.t_start + 2.0 * p.t_rise + p.t_duration


def gate_values(layout: GateLayout, regions, p: TrapezoidalPulse, t: float):
    """Potential Dirichlet values (phi DOF, volts) for all gate nodes at time t.

    Center-gate nodes follow the pulse; outer-gate nodes stay grounded.  The
    set of constrained DOFs is time-independent.
    """
    v = pulse_value(p, t)
    out = []
    for name, nodes in regions.items():
        value = v if name == "center" else 0.0
        out.extend((int(n), value) for n in nodes)
    return out
