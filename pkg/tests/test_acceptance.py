"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Expected values are re-derived through independent routes (closed forms,
brute-force rotation, manufactured solutions, synthetic oracles); device-run
checks use the band tolerances appropriate for desk resolution.  Run with
``pytest tests/test_acceptance.py -s`` to see the per-criterion lines.

The desk-scale run (16 x 4 um at 50 nm, ~10 minutes) is shared by several
criteria through a module-scoped fixture.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from acoustopulse import verification
from acoustopulse.io import RunConfig
from acoustopulse.materials import christoffel_velocities, gaas_constants
from acoustopulse.probes import (
    ProbeTrace,
    amplitude_metrics,
    line_from_field,
    response_time,
    surface_localization,
    wavefront_speed,
)
from acoustopulse.qubit import (
    HBAR,
    QE,
    DetuningTrace,
    detuning_from_potentials,
    evolve,
    infidelity,
    split_dot_trace,
    sweep_delta,
)
from acoustopulse.timeloop import build_system, run

C11, C12, C44, RHO = 11.88e10, 5.38e10, 5.94e10, 5.36e3


def report(name: str, ok: bool, detail: str) -> bool:
    print(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok


# --------------------------------------------------------------------------
# Shared desk-scale run (the standard device at 50 nm resolution)
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk_run():
    config = replace(
        RunConfig(),
        t_end=2.7e-9,
        dt_override=1e-10 / 22,  # aligns the 0.1 ns record cadence exactly
        snapshot_times=(1.0e-9, 1.4e-9, 1.5e-9, 2.0e-9),
    )
    return run(config)


def snapshots_by_time(result):
    return {round(s.time * 1e9, 3): s for s in result.snapshots}


class TestChristoffelOracle:
    def test_closed_form_speeds(self):
        m = gaas_constants()
        v100 = christoffel_velocities(m, [1.0, 0.0, 0.0])
        s = 1 / np.sqrt(2)
        v011 = christoffel_velocities(m, [0.0, s, s])
        targets = (
            (v100[0], math.sqrt(C11 / RHO), 4708.0),
            (v100[1], math.sqrt(C44 / RHO), 3329.0),
            (v011[0], math.sqrt((C11 + C12 + 2 * C44) / (2 * RHO)), 5214.0),
        )
        ok = all(abs(got - exact) < 1e-6 and abs(got - rounded) <= 1.0
                 for got, exact, rounded in targets)
        assert report(
            "christoffel closed forms",
            ok,
            f"{v100[0]:.1f}/{v100[1]:.1f}/{v011[0]:.1f} m/s vs 4708/3329/5214 +-1",
        )


class TestBondEquivalence:
    def test_bond_vs_brute_force(self):
        name, ok, detail = verification.check_bond_equivalence(n_rotations=20)
        assert report("bond rotation vs 4th-rank oracle (20 rotations, 1e-10)", ok, detail)


class TestConvergenceOrder:
    def test_manufactured_solution_orders(self):
        h_order, dt_order, detail = verification.convergence_orders()
        ok = h_order >= 1.8 and dt_order >= 1.8
        assert report("convergence order >= 1.8 in h and dt", ok,
                      f"h {h_order:.2f}, dt {dt_order:.2f}")


class TestPlaneWaveSpeed:
    def test_periodic_strip_speeds(self):
        name, ok, detail = verification.check_plane_wave_speeds()
        assert report("plane-wave speed within 3% of Christoffel", ok, detail)


class TestEnergyDrift:
    def test_post_pulse_drift(self):
        name, ok, detail = verification.check_energy_drift()
        assert report("post-pulse energy drift < 1% over 1 ns", ok, detail)


class TestDeskScaleWave:
    def test_outward_propagation(self, desk_run):
        snaps = snapshots_by_time(desk_run)
        tracked = wavefront_speed(snaps[1.0], snaps[1.4], depth=100e-9)
        outward = [t for t in tracked if t.speed > 500.0]
        ok = len(outward) >= 2
        assert report("outward-propagating wave", ok,
                      f"{len(outward)} outward extrema tracked between 1.0 and 1.4 ns")

    def test_amplitude_band_at_2ns(self, desk_run):
        idx = int(np.argmin(np.abs(desk_run.phi_line.times - 2.0e-9)))
        line = desk_run.phi_line.values[idx]
        m = amplitude_metrics(desk_run.phi_line.x, line)
        ok = 0.5e-3 <= m.max_modulus <= 5.0e-3
        assert report(
            "max |phi| at 100 nm depth, t = 2.0 ns in [0.5, 5] mV",
            ok,
            f"{m.max_modulus * 1e3:.3f} mV (t = {desk_run.phi_line.times[idx] * 1e9:.2f} ns)",
        )

    def test_saw_speed_band(self, desk_run):
        snaps = snapshots_by_time(desk_run)
        tracked = wavefront_speed(snaps[1.5], snaps[2.0], depth=100e-9)
        speeds = np.array([t.speed for t in tracked if t.speed > 500.0])
        slowest = speeds.min()
        ok = 2750.0 * 0.9 <= slowest <= 2750.0 * 1.1
        assert report("slowest tracked mode = SAW, 2750 m/s +-10%", ok,
                      f"slowest {slowest:.0f} m/s of {len(speeds)} outward extrema")

    def test_fastest_mode_bound(self, desk_run):
        snaps = snapshots_by_time(desk_run)
        tracked = wavefront_speed(snaps[1.0], snaps[1.4], depth=100e-9)
        fastest = max(t.speed for t in tracked)
        ok = fastest <= 5214.0 * 1.05
        assert report("fastest tracked mode <= 5214 * 1.05 m/s", ok, f"{fastest:.0f} m/s")

    def test_surface_localization(self, desk_run):
        snaps = snapshots_by_time(desk_run)
        saw_wavelength = 2870.0 / 3.0e9  # SAW speed over the ~3 GHz content
        ratio = surface_localization(snaps[2.0], saw_wavelength)
        ok = ratio <= 0.05
        assert report("surface localization |phi(2 lambda)| / |phi(surface)| <= 0.05",
                      ok, f"ratio {ratio:.4f} (lambda = {saw_wavelength * 1e6:.2f} um)")


class TestPulseDurationSweep:
    @pytest.fixture(scope="class")
    def sweep(self):
        # reduced resolution (100 nm) per the stated runtime budget
        base = replace(
            RunConfig(),
            divisions=(160, 2, 40),
            amplitude=1.0e-3,
            snapshot_times=(),
            qubit=None,
            phi_interval=1.0,
            uz_interval=1.0,
        )
        system, _, _ = build_system(base)
        t_ds = np.linspace(0.0, 1.0e-9, 11)
        rms, mx = [], []
        for t_d in t_ds:
            t_meas = base.t_start + 2 * base.t_rise + t_d + 0.5e-9
            cfg = replace(base, t_duration=t_d, t_end=t_meas)
            result = run(cfg, system=system)
            x, line = line_from_field(result.mesh, result.final_state.phi, 100e-9)
            m = amplitude_metrics(x, line)
            rms.append(m.rms)
            mx.append(m.max_modulus)
        return t_ds, np.array(rms), np.array(mx)

    @staticmethod
    def knee_location(t_ds, values):
        plateau = values[-3:].mean()
        target = 0.8 * plateau
        above = np.nonzero(values >= target)[0]
        i = above[0]
        if i == 0:
            return t_ds[0]
        f = (target - values[i - 1]) / (values[i] - values[i - 1])
        return t_ds[i - 1] + f * (t_ds[i] - t_ds[i - 1])

    def test_rise_then_plateau(self, sweep):
        t_ds, rms, mx = sweep
        plateau = rms[-3:].mean()
        ok = (
            rms[0] < 0.35 * plateau
            and np.all(rms[-3:] > 0.75 * plateau)
            and np.all(np.diff(rms[:4]) > -0.05 * plateau)
        )
        assert report("t_d sweep: rms rises then plateaus", ok,
                      f"rms {rms[0] * 1e3:.4f} -> {plateau * 1e3:.4f} mV")

    def test_knee_location(self, sweep):
        t_ds, rms, mx = sweep
        knee = self.knee_location(t_ds, rms)
        ok = 0.09e-9 <= knee <= 0.27e-9
        assert report("t_d sweep knee at 0.18 ns +-50%", ok, f"knee {knee * 1e9:.3f} ns")

    def test_plateau_ratio(self, sweep):
        t_ds, rms, mx = sweep
        ratio = mx[-3:].mean() / rms[-3:].mean()
        ok = 2.0 <= ratio <= 6.0
        assert report("plateau max_modulus/rms in [2, 6]", ok, f"ratio {ratio:.2f}")


class TestResponseTime:
    def test_synthetic_exponential_band(self):
        tau = 0.1e-9
        t = np.linspace(0.0, 12 * tau, 12001)
        trace = ProbeTrace(t, 1.0 - np.exp(-t / tau))
        r = response_time(trace, window=(0.0, t[-1]))
        expected = math.log(5.0) * tau
        ok = abs(r.t_band - expected) <= 0.02 * expected
        assert report("response-time band oracle = 1.6 tau +- 2%", ok,
                      f"{r.t_band / tau:.4f} tau vs {expected / tau:.4f} tau")

    def test_device_response_time(self):
        config = replace(
            RunConfig(),
            divisions=(160, 2, 40),  # 100 nm resolution keeps this minutes-fast
            t_duration=1.0e-9,
            t_end=1.06e-9,
            snapshot_times=(),
            qubit=None,
            phi_interval=1.0,
            uz_interval=1.0,
        )
        result = run(config)
        window = (0.0, config.t_start + config.t_rise + config.t_duration)
        r = response_time(result.uz_center, window=window)
        ok = 0.09e-9 <= r.t_c <= 0.27e-9
        assert report("lattice response time t_c = 0.18 ns +-50%", ok,
                      f"t_c {r.t_c * 1e9:.3f} ns (band {r.t_band * 1e9:.3f} ns, "
                      f"equilibrium {r.equilibrium * 1e12:.3f} pm)")


class TestQubit:
    def test_rabi_closed_form(self):
        delta = 2 * np.pi * 1.0e9
        t = np.linspace(0.0, 2e-9, 21)
        zero = DetuningTrace(t, np.zeros_like(t))
        worst = 0.0
        for frac in (0.5, 1.0, 1.5):
            T = frac * np.pi / delta
            psi = evolve(np.array([1.0, 0.0]), zero, delta, None, T)
            worst = max(worst, abs(abs(psi[1]) ** 2 - math.sin(delta * T / 2) ** 2))
        ok = worst < 1e-8
        assert report("Rabi population matches sin^2(dT/2) to 1e-8", ok, f"max err {worst:.2e}")

    def test_norm_drift(self):
        t = np.linspace(0.0, 3e-9, 3001)
        eps = DetuningTrace(t, 2e10 * np.sin(2 * np.pi * 3e9 * t))
        psi = evolve(np.array([1.0, 0.0]), eps, 1.8e10, None, 3e-9)
        drift = abs(np.linalg.norm(psi) - 1.0)
        ok = drift < 1e-8
        assert report("norm drift < 1e-8", ok, f"drift {drift:.2e}")

    def test_global_phase_invariance(self):
        psi = np.array([0.6, 0.8j])
        base = infidelity(psi, psi)
        shifted = infidelity(psi * np.exp(1.7j), psi)
        ok = base == 0.0 and shifted == pytest.approx(0.0, abs=1e-15)
        assert report("infidelity global-phase invariance", ok,
                      f"|identical| {base:.1e}, |phase-shifted| {shifted:.1e}")

    def test_coupled_run_infidelity_band(self, desk_run):
        # the reported double-dot scenario drives ~5 mV pulses; the linear
        # solver scales exactly, so the 1 V trace is scaled by 0.005
        tr1, tr2 = split_dot_trace(desk_run.dot_trace)
        scale = 0.005
        eps = detuning_from_potentials(
            ProbeTrace(tr1.times, scale * tr1.values),
            ProbeTrace(tr2.times, scale * tr2.values),
        )
        deltas = np.linspace(0.1e-6, 30e-6, 60) * QE / HBAR
        curve = sweep_delta(eps, deltas)
        lo, hi = curve.min(), curve.max()
        ok = lo <= 0.2 and 0.4 <= hi <= 0.8
        assert report("coupled-run infidelity extremes in [0, 0.6] +-0.2", ok,
                      f"min {lo:.3f}, max {hi:.3f} over 60 tunnel couplings")


class TestLinearity:
    def test_amplitude_doubling(self):
        base = replace(
            RunConfig(),
            extents=(4e-6, 0.2e-6, 1e-6),
            divisions=(40, 2, 10),
            t_end=0.4e-9,
            snapshot_times=(),
            qubit=None,
            phi_interval=0.05e-9,
            uz_interval=0.05e-9,
        )
        r1 = run(base)
        r2 = run(replace(base, amplitude=2.0))
        scale = np.abs(r1.phi_line.values).max()
        err = np.abs(r2.phi_line.values - 2.0 * r1.phi_line.values).max()
        ok = err <= 1e-6 * 2.0 * scale
        assert report("doubling A doubles phi to 1e-6 relative", ok,
                      f"max rel deviation {err / (2 * scale):.2e}")
