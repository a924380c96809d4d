"""Command-line interface: simulations, sweeps, oracles, and summaries."""

import argparse
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import backend, io, qubit as qubit_mod, verification
from .materials import (
    bond_rotate,
    christoffel_velocities,
    device_frame_orientation,
    gaas_constants,
)
from .mesh import build_box_mesh, tag_gates
from .probes import ProbeTrace, amplitude_metrics, line_from_field
from .pulse import GateLayout, pulse_support
from .timeloop import run, stable_dt


def _load_config(path: str) -> io.RunConfig:
    if path == "-":
        return io.parse_config(sys.stdin.read())
    return io.load_config(path)


def cmd_run(args) -> int:
    config = _load_config(args.config)
    if args.step_log:
        config = replace(config, report_interval_steps=1)
    result = run(config)
    files = io.write_outputs(result, args.out)
    if args.dump_matrices:
        system = result.final_state.system
        for name, op in (
            ("K_uu", system.k_uu),
            ("K_uphi", system.k_uphi),
            ("K_phiphi", system.k_phiphi),
        ):
            path = os.path.join(args.out, f"{name}.mtx")
            io.write_matrix_market(op, path, comment=name)
            files.append(path)
    x, line = line_from_field(result.mesh, result.final_state.phi, config.probe_depth)
    metrics = amplitude_metrics(x, line)
    print(f"steps: {result.steps}  dt: {result.dt:.6e} s  t_end: {result.final_state.t:.6e} s")
    if result.dt_clamped:
        print("warning: requested dt exceeded the stability bound and was clamped")
    print(
        f"phi line at depth {config.probe_depth * 1e9:.0f} nm: "
        f"rms {metrics.rms * 1e3:.4f} mV, max|phi| {metrics.max_modulus * 1e3:.4f} mV"
    )
    for path in files:
        print(f"wrote {path}")
    return 0


_SWEEP_CTX: dict = {}


def _sweep_point(i_td):
    i, t_d = i_td
    base = _SWEEP_CTX["config"]
    system = _SWEEP_CTX["system"]
    t_meas = base.t_start + 2.0 * base.t_rise + t_d + _SWEEP_CTX["settle"]
    config = replace(
        base,
        t_duration=t_d,
        t_end=t_meas,
        snapshot_times=(),
        qubit=None,
        phi_interval=1.0,
        uz_interval=1.0,
        report_interval_steps=0,
    )
    result = run(config, system=system)
    x, line = line_from_field(result.mesh, result.final_state.phi, config.probe_depth)
    m = amplitude_metrics(x, line)
    return i, m.rms, m.max_modulus


def cmd_sweep_td(args) -> int:
    config = _load_config(args.config)
    t_from = io.parse_quantity(args.t_from, "time", "--from")
    t_to = io.parse_quantity(args.t_to, "time", "--to")
    if args.steps < 2 or t_to <= t_from:
        print("error: need --steps >= 2 and --to > --from", file=sys.stderr)
        return 1
    t_ds = np.linspace(t_from, t_to, args.steps)

    from .timeloop import build_system

    system, _, _ = build_system(config)
    _SWEEP_CTX.update(config=config, system=system, settle=0.5e-9)
    points = list(enumerate(t_ds))
    if args.jobs > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(args.jobs) as pool:
            rows = pool.map(_sweep_point, points)
    else:
        rows = [_sweep_point(p) for p in points]
    rows.sort()
    rms = np.array([r[1] for r in rows])
    mx = np.array([r[2] for r in rows])
    io.write_metrics_csv(args.out, {"t_d_s": t_ds, "rms_V": rms, "max_modulus_V": mx})
    for t_d, r, m in zip(t_ds, rms, mx):
        print(f"t_d {t_d * 1e9:6.3f} ns  rms {r * 1e3:.5f} mV  max|phi| {m * 1e3:.5f} mV")
    print(f"wrote {args.out}")
    return 0


def _print_matrix(name, m, unit):
    print(f"{name} ({unit}):")
    for row in np.atleast_2d(m):
        print("  " + "  ".join(f"{v: .6e}" for v in row))


def cmd_materials(args) -> int:
    mat = gaas_constants()
    frame = "crystal"
    if not args.crystal:
        mat = bond_rotate(mat, device_frame_orientation())
        frame = "device (x || [011], z || [100])"
    direction = np.array([float(v) for v in args.direction.split(",")])
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        print("error: direction must be nonzero", file=sys.stderr)
        return 1
    direction = direction / norm
    vels = christoffel_velocities(mat, direction, stiffened=args.stiffened)

    print(f"frame: {frame}")
    _print_matrix("elastic stiffness (Voigt)", mat.elastic.voigt, "N/m^2")
    _print_matrix("piezoelectric matrix", mat.piezo.matrix, "C/m^2")
    _print_matrix("permittivity", mat.permittivity.matrix, "F/m")
    print(f"density (kg/m^3): {mat.density:.6e}")
    tag = "stiffened" if args.stiffened else "elastic-only"
    print(f"phase velocities along {np.round(direction, 6)} ({tag}, m/s):")
    print("  " + "  ".join(f"{v:.2f}" for v in vels))

    if args.csv:
        rows = {"name": [], "i": [], "j": [], "value": []}

        def add(name, matrix):
            m2 = np.atleast_2d(matrix)
            for i in range(m2.shape[0]):
                for j in range(m2.shape[1]):
                    rows["name"].append(name)
                    rows["i"].append(i)
                    rows["j"].append(j)
                    rows["value"].append(m2[i, j])

        add("elastic_N_per_m2", mat.elastic.voigt)
        add("piezo_C_per_m2", mat.piezo.matrix)
        add("permittivity_F_per_m", mat.permittivity.matrix)
        add("density_kg_per_m3", [[mat.density]])
        add("direction", direction[None, :])
        add("velocity_m_per_s", vels[None, :])
        _write_named_csv(args.csv, rows)
        print(f"wrote {args.csv}")
    return 0


def _write_named_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("name,i,j,value\n")
        for name, i, j, v in zip(rows["name"], rows["i"], rows["j"], rows["value"]):
            fh.write(f"{name},{i},{j},{float(v):.17g}\n")


def cmd_qubit(args) -> int:
    cols = io.read_csv(args.trace)
    for need in ("t_s", "phi1_V", "phi2_V"):
        if need not in cols:
            print(f"error: {args.trace} lacks column {need!r}", file=sys.stderr)
            return 1
    scale = args.scale
    t1 = ProbeTrace(cols["t_s"], scale * cols["phi1_V"])
    t2 = ProbeTrace(cols["t_s"], scale * cols["phi2_V"])
    eps = qubit_mod.detuning_from_potentials(t1, t2, charge_sign=args.charge_sign)

    d_min = io.parse_quantity(args.delta_min, "energy", "--delta-min")
    d_max = io.parse_quantity(args.delta_max, "energy", "--delta-max")
    deltas = np.linspace(d_min, d_max, args.delta_steps)
    infid = qubit_mod.sweep_delta(eps, deltas, psi0=(1.0, 0.0))
    delta_uev = deltas * qubit_mod.HBAR / qubit_mod.QE * 1e6
    io.write_metrics_csv(
        args.out, {"delta_rad_per_s": deltas, "delta_ueV": delta_uev, "infidelity": infid}
    )
    print(
        f"infidelity over {len(deltas)} tunnel couplings: "
        f"min {infid.min():.4f}, max {infid.max():.4f}"
    )
    print(f"wrote {args.out}")
    return 0


def cmd_verify(args) -> int:
    checks = list(verification.STANDARD_CHECKS)
    results = []
    ok_all = True
    for fn in checks:
        name, ok, detail = fn()
        results.append((name, ok, detail))
        ok_all &= ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 0 if ok_all else 1


def cmd_describe(args) -> int:
    config = _load_config(args.config)
    mat = config.material_set()
    mesh = build_box_mesh(config.extents, config.divisions)
    layout = GateLayout(config.gate_width, config.gate_gap)
    regions = tag_gates(mesh, layout)
    dt = stable_dt(mesh, mat, config.safety)
    nsteps = max(1, int(math.ceil(config.t_end / dt - 1e-12)))
    Lx, Ly, Lz = mesh.extents
    print(f"backend: {backend.backend_name()}")
    print(
        f"domain: {Lx * 1e6:g} x {Ly * 1e6:g} x {Lz * 1e6:g} um, "
        f"divisions {mesh.divisions}, spacing "
        f"{tuple(round(h * 1e9, 3) for h in mesh.spacing)} nm"
    )
    print(f"nodes: {mesh.node_count}  elements: {mesh.element_count}  "
          f"u DOFs: {3 * mesh.node_count}  phi DOFs: {mesh.node_count}")
    for name, nodes in regions.items():
        print(f"gate region {name}: {len(nodes)} nodes")
    print(
        f"pulse: A {config.amplitude} V, rise {config.t_rise * 1e9:g} ns, "
        f"duration {config.t_duration * 1e9:g} ns, support "
        f"{tuple(round(t * 1e9, 4) for t in pulse_support_tuple(config))} ns"
    )
    print(f"stable dt (safety {config.safety:g}): {dt:.6e} s -> {nsteps} steps to "
          f"{config.t_end * 1e9:g} ns")
    if config.dt_override is not None:
        clamped = min(config.dt_override, dt)
        note = " (clamped)" if config.dt_override > dt else ""
        print(f"dt override: {config.dt_override:.6e} s -> using {clamped:.6e} s{note}")
    return 0


def pulse_support_tuple(config):
    from .pulse import TrapezoidalPulse

    p = TrapezoidalPulse(config.amplitude, config.t_rise, config.t_duration, config.t_start)
    return pulse_support(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acoustopulse",
        description="Coupled piezoelectric elastodynamics of pulsed surface gates",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a full simulation from a config file")
    p_run.add_argument("config", help="config path, or - for stdin")
    p_run.add_argument("--out", default="out", help="output directory (default: out)")
    p_run.add_argument("--step-log", action="store_true", help="record per-step reports")
    p_run.add_argument("--dump-matrices", action="store_true",
                       help="export assembled operators as MatrixMarket files")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep-td", help="sweep the pulse duration and record metrics")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--from", dest="t_from", required=True, help="e.g. '0 ns'")
    p_sweep.add_argument("--to", dest="t_to", required=True, help="e.g. '1 ns'")
    p_sweep.add_argument("--steps", type=int, required=True)
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument("--out", default="sweep.csv")
    p_sweep.set_defaults(func=cmd_sweep_td)

    p_mat = sub.add_parser("materials", help="print rotated tensors and phase velocities")
    p_mat.add_argument("--direction", default="1,0,0", help="comma-separated, any norm")
    p_mat.add_argument("--crystal", action="store_true", help="skip the device-frame rotation")
    p_mat.add_argument("--stiffened", action="store_true",
                       help="include piezoelectric stiffening")
    p_mat.add_argument("--csv", default=None, help="also write a CSV table")
    p_mat.set_defaults(func=cmd_materials)

    p_q = sub.add_parser("qubit", help="infidelity sweep from a two-dot potential trace CSV")
    p_q.add_argument("trace", help="CSV with columns t_s, phi1_V, phi2_V")
    p_q.add_argument("--delta-min", default="0.1 ueV")
    p_q.add_argument("--delta-max", default="30 ueV")
    p_q.add_argument("--delta-steps", type=int, default=60)
    p_q.add_argument("--scale", type=float, default=1.0,
                     help="scale factor applied to the potentials first")
    p_q.add_argument("--charge-sign", type=int, choices=(-1, 1), default=-1)
    p_q.add_argument("--out", default="infidelity.csv")
    p_q.set_defaults(func=cmd_qubit)

    p_ver = sub.add_parser("verify", help="run the self-contained oracle/invariant suite")
    p_ver.set_defaults(func=cmd_verify)

    p_desc = sub.add_parser("describe", help="mesh, pulse, and time-step summary")
    p_desc.add_argument("config")
    p_desc.set_defaults(func=cmd_describe)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except Exception as exc:  # surfaced as a diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
