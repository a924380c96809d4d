"""Charge-qubit (two-level) evolution driven by simulated potential traces.

State evolution follows d/dt psi = -i/2 (eps(t) sz + delta sx) psi with eps
the detuning between the two dot-localized states and delta the (constant)
tunnel coupling, both in rad/s.  Integration is classical RK4; the norm is
monitored, not renormalized, so norm drift doubles as the error signal.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .probes import ProbeTrace

QE = 1.602176634e-19  # elementary charge magnitude, C
HBAR = 1.054571817e-34  # J s


class QubitError(RuntimeError):
    pass


@dataclass
class DetuningTrace:
    """Detuning samples (rad/s) on a uniform time grid, linearly interpolated."""

    times: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        e = np.asarray(self.eps, dtype=float)
        if t.ndim != 1 or t.shape != e.shape:
            raise QubitError("times and eps must be matching 1-D arrays")
        if t.shape[0] >= 2:
            dt = np.diff(t)
            if np.any(dt <= 0.0):
                raise QubitError("times must be strictly increasing")
            if not np.allclose(dt, dt[0], rtol=1e-9, atol=0.0):
                raise QubitError("detuning trace must be uniformly sampled")
        self.times = t
        self.eps = e

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.shape[0] > 1 else np.inf

    def max_abs(self) -> float:
        return float(np.abs(self.eps).max()) if self.eps.size else 0.0


@dataclass
class QubitRunConfig:
    delta: float  # rad/s, constant tunnel coupling
    dot_separation: float = 200e-9  # m
    dot_offset: float = 5e-6  # m, lateral distance from the wave source
    total_time: float = 2.0e-9  # s
    dt: float | None = None  # s; None picks a resolution-safe default

    def __post_init__(self):
        if self.dot_separation <= 0.0:
            raise QubitError("dot separation must be positive")
        if self.dt is not None and self.dt <= 0.0:
            raise QubitError("dt must be positive")


def detuning_from_potentials(
    trace1: ProbeTrace, trace2: ProbeTrace, charge_sign: int = -1
) -> DetuningTrace:
    """Detuning eps(t) = q (phi1 - phi2) / hbar from two potential traces.

    The bias is zero whenever the two dots see equal potentials, matching a
    device tuned to zero static detuning.
    """
    if trace1.times.shape != trace2.times.shape or not np.allclose(
        trace1.times, trace2.times, rtol=1e-12, atol=0.0
    ):
        raise QubitError("potential traces must share a time base")
    if charge_sign not in (-1, 1):
        raise QubitError("charge sign must be +1 or -1")
    q = charge_sign * QE
    eps = q * (np.asarray(trace1.values) - np.asarray(trace2.values)) / HBAR
    return DetuningTrace(trace1.times.copy(), eps)


def split_dot_trace(dot_trace: ProbeTrace) -> tuple[ProbeTrace, ProbeTrace]:
    """Split a two-column dot trace into per-dot traces."""
    v = np.asarray(dot_trace.values)
    if v.ndim != 2 or v.shape[1] != 2:
        raise QubitError("dot trace must have two value columns")
    return (
        ProbeTrace(dot_trace.times, v[:, 0]),
        ProbeTrace(dot_trace.times, v[:, 1]),
    )


def _resolution_dt(eps: DetuningTrace, delta: float) -> float:
    omega = max(eps.max_abs(), abs(delta), 1.0)
    # RK4 norm drift scales like (omega dt)^6/144 per step; 0.02 rad/step keeps
    # accumulated drift comfortably below 1e-8 over ~10^4 steps
    return min(0.02 / omega, eps.dt if np.isfinite(eps.dt) else np.inf)


def max_resolved_dt(eps: DetuningTrace, delta: float) -> float:
    """Largest step that still resolves the dynamics (50 steps per cycle)."""
    omega = max(eps.max_abs(), abs(delta))
    return np.inf if omega == 0.0 else 2.0 * np.pi / (50.0 * omega)


def evolve(
    psi0: np.ndarray,
    eps: DetuningTrace,
    delta: float,
    dt: float | None,
    total_time: float,
) -> np.ndarray:
    """RK4-evolve psi0 over [0, total_time].

    Aborts if the accumulated norm drift exceeds 1e-8 per step taken; the
    dynamics are unitary, so drift means dt is too large.
    """
    psi0 = np.asarray(psi0, dtype=np.complex128)
    if psi0.shape != (2,):
        raise QubitError("state must be a 2-vector")
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-10:
        raise QubitError("initial state must be normalized")
    if dt is None:
        dt = _resolution_dt(eps, delta)
    if dt > max_resolved_dt(eps, delta):
        raise QubitError(
            f"dt = {dt:g} s does not resolve the dynamics "
            f"(need <= {max_resolved_dt(eps, delta):g} s)"
        )
    nsteps = max(1, int(round(total_time / dt)))
    dt = total_time / nsteps

    t_start = float(eps.times[0]) if eps.times.size else 0.0
    dt_trace = eps.dt if np.isfinite(eps.dt) else total_time
    eps_vals = eps.eps if eps.eps.size else np.zeros(1)

    psi = psi0.copy()
    done = 0
    chunk = 256
    while done < nsteps:
        take = min(chunk, nsteps - done)
        psi = backend.tls_rk4(psi, eps_vals, t_start - done * dt, dt_trace, delta, dt, take)
        done += take
        drift = abs(np.linalg.norm(psi) - 1.0)
        if drift > 1e-8 * done:
            raise QubitError(
                f"norm drift {drift:g} after {done} steps exceeds 1e-8 per step; reduce dt"
            )
    return psi


def infidelity(psi_p: np.ndarray, psi_0: np.ndarray) -> float:
    """1 - |<psi_p|psi_0>|^2; invariant under global phases of either state."""
    psi_p = np.asarray(psi_p, dtype=np.complex128)
    psi_0 = np.asarray(psi_0, dtype=np.complex128)
    for psi in (psi_p, psi_0):
        if abs(np.linalg.norm(psi) - 1.0) > 1e-6:
            raise QubitError("states must be normalized")
    return float(1.0 - abs(np.vdot(psi_p, psi_0)) ** 2)


def sweep_delta(
    eps: DetuningTrace,
    deltas: np.ndarray,
    psi0: np.ndarray = (1.0, 0.0),
    total_time: float | None = None,
    dt: float | None = None,
) -> np.ndarray:
    """Infidelity between perturbed and unperturbed evolution for each delta.

    The unperturbed reference evolves the same psi0 under the same delta with
    eps = 0; each sweep point is independent.
    """
    psi0 = np.asarray(psi0, dtype=np.complex128)
    if total_time is None:
        total_time = float(eps.times[-1] - eps.times[0])
    zero = DetuningTrace(eps.times, np.zeros_like(eps.eps))
    out = np.empty(len(deltas))
    for i, delta in enumerate(np.asarray(deltas, dtype=float)):
        psi_p = evolve(psi0, eps, delta, dt, total_time)
        psi_ref = evolve(psi0, zero, delta, dt, total_time)
        out[i] = infidelity(psi_p, psi_ref)
    return out
