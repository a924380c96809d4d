"""Run-configuration parsing and deterministic CSV / legacy-VTK writers.

Config grammar (plain text):

    # comment lines start with '#' or ';'
    [section]
    key = value

    # or equivalently, dotted keys without a section header:
    section.key = value

Dimensioned values require an explicit unit suffix (``250 nm``, ``0.025 ns``,
``1 V``, ``12 ueV``); bare numbers are only accepted for dimensionless keys.
Unknown sections or keys are errors; missing keys take the documented
defaults, which reproduce the standard device (a = d = 250 nm gates on a
16 x 0.1 x 4 um slab, 1 V pulse with 0.025 ns rise and 0.3 ns duration).

All writers emit full double precision (17 significant digits) and contain
no timestamps, so identical inputs give byte-identical files.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .materials import MaterialSet, bond_rotate, device_frame_orientation, gaas_constants
from .probes import FieldSnapshot, LineTrace, ProbeTrace
from .qubit import HBAR, QE


class ConfigError(ValueError):
    pass


UNIT_SCALES = {
    "length": {"nm": 1e-9, "um": 1e-6, "mm": 1e-3, "m": 1.0},
    "time": {"fs": 1e-15, "ps": 1e-12, "ns": 1e-9, "us": 1e-6, "ms": 1e-3, "s": 1.0},
    "voltage": {"uV": 1e-6, "mV": 1e-3, "V": 1.0},
    # energies are stored as angular frequencies E/hbar
    "energy": {"ueV": 1e-6 * QE / HBAR, "meV": 1e-3 * QE / HBAR, "eV": QE / HBAR},
}


def parse_quantity(text: str, kind: str, key: str = "value") -> float:
    """Parse ``<number> <unit>`` with the unit table for `kind`.

    kind == "none" accepts a bare number (and rejects units).
    """
    parts = text.strip().split()
    if kind == "none":
        if len(parts) != 1:
            raise ConfigError(f"{key}: expected a bare number, got {text!r}")
        try:
            return float(parts[0])
        except ValueError as exc:
            raise ConfigError(f"{key}: not a number: {text!r}") from exc
    scales = UNIT_SCALES[kind]
    if len(parts) == 1:
        # allow "250nm" without a space
        num, unit = _split_suffix(parts[0], scales)
        if unit is None:
            raise ConfigError(
                f"{key}: missing unit suffix (expected one of {sorted(scales)}): {text!r}"
            )
    elif len(parts) == 2:
        num, unit = parts
        if unit not in scales:
            raise ConfigError(
                f"{key}: unknown {kind} unit {unit!r} (expected one of {sorted(scales)})"
            )
    else:
        raise ConfigError(f"{key}: cannot parse quantity {text!r}")
    try:
        return float(num) * scales[unit]
    except ValueError as exc:
        raise ConfigError(f"{key}: not a number: {text!r}") from exc


def _split_suffix(token: str, scales: dict):
    for unit in sorted(scales, key=len, reverse=True):
        if token.endswith(unit):
            head = token[: -len(unit)]
            if head and (head[-1].isdigit() or head[-1] == "."):
                return head, unit
    return token, None


@dataclass(frozen=True)
class QubitConfig:
    dot_offset: float = 5e-6  # m, lateral distance of dot 1 from the domain center
    dot_separation: float = 200e-9  # m
    delta_min: float = 0.1e-6 * QE / HBAR  # rad/s
    delta_max: float = 30e-6 * QE / HBAR  # rad/s
    delta_steps: int = 60
    charge_sign: int = -1
    scale: float = 1.0  # multiplies the potential traces before detuning


@dataclass(frozen=True)
class RunConfig:
    extents: tuple = (16e-6, 0.1e-6, 4e-6)
    divisions: tuple = (320, 2, 80)
    orientation: str = "device"  # "device" | "crystal"
    gate_width: float = 250e-9
    gate_gap: float = 250e-9
    amplitude: float = 1.0
    t_rise: float = 0.025e-9
    t_duration: float = 0.3e-9
    t_start: float = 0.0
    t_end: float = 2.0e-9
    safety: float = 0.5
    dt_override: float | None = None
    cg_tol: float = 1e-9
    cg_max_iter: int = 10000
    cg_preconditioner: str = "jacobi"
    probe_depth: float = 100e-9
    phi_interval: float = 0.1e-9
    uz_interval: float = 0.025e-9
    report_interval_steps: int = 0
    snapshot_times: tuple = (2.0e-9,)
    qubit: QubitConfig | None = field(default_factory=QubitConfig)

    def material_set(self) -> MaterialSet:
        base = gaas_constants()
        if self.orientation == "crystal":
            return base
        return bond_rotate(base, device_frame_orientation())

    def validate(self):
        def positive(name, value):
            if not value > 0.0:
                raise ConfigError(f"{name} must be positive (got {value:g})")

        for name, val in (
            ("geometry.Lx", self.extents[0]),
            ("geometry.Ly", self.extents[1]),
            ("geometry.Lz", self.extents[2]),
            ("gates.width", self.gate_width),
            ("gates.gap", self.gate_gap),
            ("time.end", self.t_end),
            ("probes.depth", self.probe_depth),
            ("probes.phi_interval", self.phi_interval),
            ("probes.uz_interval", self.uz_interval),
        ):
            positive(name, val)
        for name, val in (("pulse.rise", self.t_rise), ("pulse.duration", self.t_duration)):
            if val < 0.0:
                raise ConfigError(f"{name} must be nonnegative (got {val:g})")
        if any(int(n) < 1 for n in self.divisions):
            raise ConfigError("geometry divisions must be >= 1")
        if not 0.0 < self.safety <= 1.0:
            raise ConfigError("time.safety must lie in (0, 1]")
        if self.dt_override is not None and self.dt_override <= 0.0:
            raise ConfigError("time.dt must be positive")
        if self.orientation not in ("device", "crystal"):
            raise ConfigError(f"material.orientation must be device|crystal")
        if self.qubit is not None and self.qubit.delta_steps < 1:
            raise ConfigError("qubit.delta_steps must be >= 1")
        return self


# (section, key) -> (kind, target field); "none" kinds are parsed as numbers
_SCHEMA = {
    ("geometry", "Lx"): ("length", "Lx"),
    ("geometry", "Ly"): ("length", "Ly"),
    ("geometry", "Lz"): ("length", "Lz"),
    ("geometry", "nx"): ("int", "nx"),
    ("geometry", "ny"): ("int", "ny"),
    ("geometry", "nz"): ("int", "nz"),
    ("material", "orientation"): ("str", "orientation"),
    ("gates", "width"): ("length", "gate_width"),
    ("gates", "gap"): ("length", "gate_gap"),
    ("pulse", "amplitude"): ("voltage", "amplitude"),
    ("pulse", "rise"): ("time", "t_rise"),
    ("pulse", "duration"): ("time", "t_duration"),
    ("pulse", "start"): ("time", "t_start"),
    ("time", "end"): ("time", "t_end"),
    ("time", "safety"): ("none", "safety"),
    ("time", "dt"): ("time", "dt_override"),
    ("solver", "tol"): ("none", "cg_tol"),
    ("solver", "max_iter"): ("int", "cg_max_iter"),
    ("solver", "preconditioner"): ("str", "cg_preconditioner"),
    ("probes", "depth"): ("length", "probe_depth"),
    ("probes", "phi_interval"): ("time", "phi_interval"),
    ("probes", "uz_interval"): ("time", "uz_interval"),
    ("probes", "report_interval"): ("int", "report_interval_steps"),
    ("output", "snapshots"): ("time_list", "snapshot_times"),
    ("qubit", "enabled"): ("bool", "qubit_enabled"),
    ("qubit", "dot_offset"): ("length", "dot_offset"),
    ("qubit", "dot_separation"): ("length", "dot_separation"),
    ("qubit", "delta_min"): ("energy", "delta_min"),
    ("qubit", "delta_max"): ("energy", "delta_max"),
    ("qubit", "delta_steps"): ("int", "delta_steps"),
    ("qubit", "charge_sign"): ("int", "charge_sign"),
    ("qubit", "scale"): ("none", "scale"),
}


def parse_config(text: str) -> RunConfig:
    """Parse the sectioned key-value grammar into a validated RunConfig."""
    raw = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if "." in key:
            sec, key = key.split(".", 1)
            sec, key = sec.strip(), key.strip()
        elif section is None:
            raise ConfigError(f"line {lineno}: key {key!r} appears before any [section]")
        else:
            sec = section
        if (sec, key) not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {sec}.{key}")
        if (sec, key) in raw:
            raise ConfigError(f"line {lineno}: duplicate key {sec}.{key}")
        raw[(sec, key)] = (value, lineno)

    values = {}
    for (sec, key), (value, lineno) in raw.items():
        kind, target = _SCHEMA[(sec, key)]
        label = f"{sec}.{key}"
        try:
            if kind == "int":
                values[target] = int(parse_quantity(value, "none", label))
            elif kind == "str":
                values[target] = value
            elif kind == "bool":
                low = value.strip().lower()
                if low not in ("yes", "no", "true", "false", "on", "off", "1", "0"):
                    raise ConfigError(f"{label}: expected a boolean, got {value!r}")
                values[target] = low in ("yes", "true", "on", "1")
            elif kind == "time_list":
                values[target] = tuple(
                    parse_quantity(part, "time", label) for part in value.split(",") if part.strip()
                )
            elif kind == "none":
                values[target] = parse_quantity(value, "none", label)
            else:
                values[target] = parse_quantity(value, kind, label)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None

    cfg = RunConfig()
    geom = dict(zip(("Lx", "Ly", "Lz"), cfg.extents)) | dict(
        zip(("nx", "ny", "nz"), cfg.divisions)
    )
    qubit_kwargs = {}
    qubit_enabled = True
    updates = {}
    for target, val in values.items():
        if target in geom:
            geom[target] = val
        elif target == "qubit_enabled":
            qubit_enabled = val
        elif target in ("dot_offset", "dot_separation", "delta_min", "delta_max",
                        "delta_steps", "charge_sign", "scale"):
            qubit_kwargs[target] = val
        else:
            updates[target] = val
    updates["extents"] = (geom["Lx"], geom["Ly"], geom["Lz"])
    updates["divisions"] = (int(geom["nx"]), int(geom["ny"]), int(geom["nz"]))
    updates["qubit"] = QubitConfig(**qubit_kwargs) if qubit_enabled else None
    return replace(cfg, **updates).validate()


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_csv(path: str, columns: dict) -> None:
    """Write named columns of equal length as CSV with a header row."""
    names = list(columns)
    arrays = [np.atleast_1d(np.asarray(columns[name])) for name in names]
    length = arrays[0].shape[0] if arrays else 0
    for name, arr in zip(names, arrays):
        if arr.shape[0] != length:
            raise ValueError(f"column {name} has length {arr.shape[0]}, expected {length}")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(names) + "\n")
            for i in range(length):
                fh.write(",".join(_fmt(float(arr[i])) for arr in arrays) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write CSV {path}: {exc}") from exc


def read_csv(path: str) -> dict:
    """Read a header-row CSV back into named float columns."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header:
                raise ValueError(f"{path}: empty CSV")
            names = header.split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
    except OSError as exc:
        raise OSError(f"cannot read CSV {path}: {exc}") from exc
    data = np.array(rows, dtype=float) if rows else np.empty((0, len(names)))
    return {name: data[:, i] for i, name in enumerate(names)}


def write_trace_csv(trace, path: str, value_names=None) -> None:
    """Write a ProbeTrace (wide) or LineTrace (long format: t_s, x_m, value)."""
    if isinstance(trace, LineTrace):
        nt, nx = trace.values.shape
        write_csv(
            path,
            {
                "t_s": np.repeat(trace.times, nx),
                "x_m": np.tile(trace.x, nt),
                (value_names[0] if value_names else "value"): trace.values.ravel(),
            },
        )
        return
    values = np.atleast_1d(np.asarray(trace.values))
    if values.ndim == 1:
        names = value_names or ("value",)
        write_csv(path, {"t_s": trace.times, names[0]: values})
    else:
        names = value_names or tuple(f"value{i}" for i in range(values.shape[1]))
        cols = {"t_s": trace.times}
        for i, name in enumerate(names):
            cols[name] = values[:, i]
        write_csv(path, cols)


def write_metrics_csv(path: str, columns: dict) -> None:
    write_csv(path, columns)


# --------------------------------------------------------------------------
# Legacy-ASCII VTK (STRUCTURED_POINTS)
# --------------------------------------------------------------------------

def write_vtk_snapshot(snap: FieldSnapshot, path: str) -> None:
    """Potential (scalar) and displacement (3-vector) on the structured grid."""
    mesh = snap.mesh
    nxn, nyn, nzn = mesh.node_dims
    hx, hy, hz = mesh.spacing
    n = mesh.node_count
    u = snap.u.reshape(n, 3)
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write(f"acoustopulse snapshot t = {_fmt(snap.time)} s\n")
            fh.write("ASCII\n")
            fh.write("DATASET STRUCTURED_POINTS\n")
            fh.write(f"DIMENSIONS {nxn} {nyn} {nzn}\n")
            fh.write("ORIGIN 0 0 0\n")
            fh.write(f"SPACING {_fmt(hx)} {_fmt(hy)} {_fmt(hz)}\n")
            fh.write(f"POINT_DATA {n}\n")
            fh.write("SCALARS phi double 1\n")
            fh.write("LOOKUP_TABLE default\n")
            for value in snap.phi:
                fh.write(_fmt(float(value)) + "\n")
            fh.write("VECTORS displacement double\n")
            for row in u:
                fh.write(f"{_fmt(row[0])} {_fmt(row[1])} {_fmt(row[2])}\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK {path}: {exc}") from exc


# --------------------------------------------------------------------------
# Matrix Market export (offline inspection of assembled operators)
# --------------------------------------------------------------------------

def write_matrix_market(A, path: str, comment: str = "") -> None:
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("%%MatrixMarket matrix coordinate real general\n")
            if comment:
                fh.write(f"% {comment}\n")
            fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
            for i in range(A.shape[0]):
                for k in range(A.indptr[i], A.indptr[i + 1]):
                    fh.write(f"{i + 1} {A.indices[k] + 1} {_fmt(A.data[k])}\n")
    except OSError as exc:
        raise OSError(f"cannot write matrix {path}: {exc}") from exc


# --------------------------------------------------------------------------
# Run output bundle
# --------------------------------------------------------------------------

def write_outputs(result, outdir: str) -> list[str]:
    """Write the standard output bundle; returns the created file paths.

    Files: phi_line.csv (t_s, x_m, phi_V), uz_line.csv (t_s, x_m, uz_m),
    uz_center.csv (t_s, uz_m), dots.csv (t_s, phi1_V, phi2_V), metrics.csv,
    snapshot_<k>.vtk, and step_log.csv when step reports were recorded.
    """
    import os

    os.makedirs(outdir, exist_ok=True)
    created = []

    def path(name):
        created.append(os.path.join(outdir, name))
        return created[-1]

    write_trace_csv(result.phi_line, path("phi_line.csv"), value_names=("phi_V",))
    write_trace_csv(result.uz_line, path("uz_line.csv"), value_names=("uz_m",))
    write_trace_csv(result.uz_center, path("uz_center.csv"), value_names=("uz_m",))
    if result.dot_trace is not None:
        write_trace_csv(result.dot_trace, path("dots.csv"), value_names=("phi1_V", "phi2_V"))
    final = result.phi_line.values[-1]
    write_metrics_csv(
        path("metrics.csv"),
        {
            "t_s": [result.phi_line.times[-1]],
            "rms_V": [float(np.sqrt(np.mean(final**2)))],
            "max_modulus_V": [float(np.abs(final).max())],
        },
    )
    for k, snap in enumerate(result.snapshots):
        write_vtk_snapshot(snap, path(f"snapshot_{k}.vtk"))
    if result.reports:
        write_csv(
            path("step_log.csv"),
            {
                "step": [r.step for r in result.reports],
                "t_s": [r.t for r in result.reports],
                "cg_iterations": [r.cg_iterations for r in result.reports],
                "cg_residual": [r.cg_residual for r in result.reports],
                "max_u_m": [r.max_u for r in result.reports],
                "max_phi_V": [r.max_phi for r in result.reports],
                "energy_J": [r.energy for r in result.reports],
            },
        )
    return created
