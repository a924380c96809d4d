"""Field sampling, wave metrics, and constitutive-field evaluation.

Works on immutable snapshots of the nodal fields; nothing here mutates
simulation state, so probes can run concurrently with anything.
"""

from dataclasses import dataclass, field

import numpy as np

from .assembly import GlobalSystem, shape_gradients, strain_displacement
from .mesh import BoxMesh


class ProbeError(RuntimeError):
    pass


@dataclass
class ProbeTrace:
    """Uniformly sampled time series at one or more probe locations."""

    times: np.ndarray  # (T,)
    values: np.ndarray  # (T,) or (T, L)
    location: tuple = ()

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.shape[0] < 1:
            raise ProbeError("trace needs at least one sample time")
        dt = np.diff(t)
        if t.shape[0] > 1:
            if np.any(dt <= 0.0):
                raise ProbeError("sample times must be strictly increasing")
            if not np.allclose(dt, dt[0], rtol=1e-9, atol=0.0):
                raise ProbeError("sample times must be uniformly spaced")
        self.times = t
        self.values = np.asarray(self.values, dtype=float)


@dataclass
class LineTrace:
    """phi (or u component) along the x grid line at fixed depth, over time."""

    times: np.ndarray  # (T,)
    x: np.ndarray  # (Nx,)
    values: np.ndarray  # (T, Nx)
    depth: float = 0.0


@dataclass
class FieldSnapshot:
    time: float
    phi: np.ndarray  # (N,)
    u: np.ndarray  # (3N,)
    mesh: BoxMesh

    def __post_init__(self):
        n = self.mesh.node_count
        if self.phi.shape != (n,) or self.u.shape != (3 * n,):
            raise ProbeError("snapshot arrays do not match the mesh DOF counts")


@dataclass
class AmplitudeMetrics:
    rms: float
    max_modulus: float
    window: tuple[float, float]


@dataclass
class ResponseTime:
    """Settling diagnostics: first crossing of equilibrium (inf if never),
    the +-20 percent band-entry time, and the equilibrium level itself."""

    t_c: float
    t_band: float
    equilibrium: float


@dataclass
class TrackedExtremum:
    x_start: float
    x_end: float
    speed: float  # m/s, positive moving away from the domain center
    ambiguous: bool = False


# --------------------------------------------------------------------------
# Structured-grid interpolation
# --------------------------------------------------------------------------

def _axis_cell(coord, L, n, periodic=False):
    """Cell index and interpolation weight along one axis (clamped to the box)."""
    h = L / n
    if periodic:
        coord = np.mod(coord, L)
    t = np.clip(np.asarray(coord, dtype=float) / h, 0.0, float(n))
    i = np.minimum(t.astype(np.int64), n - 1)
    return i, t - i


def grid_interpolate(mesh: BoxMesh, nodal: np.ndarray, points) -> np.ndarray:
    """Trilinear interpolation of a nodal scalar field at physical points (P, 3)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nxn, nyn, nzn = mesh.node_dims
    for ax in range(3):
        L = mesh.extents[ax]
        if not mesh.periodic[ax] and (
            np.any(pts[:, ax] < -1e-12 * L) or np.any(pts[:, ax] > L * (1 + 1e-12))
        ):
            raise ProbeError(f"probe point outside the mesh along axis {ax}")
    f = nodal.reshape(nzn, nyn, nxn)
    ii, wx = _axis_cell(pts[:, 0], mesh.extents[0], mesh.divisions[0], mesh.periodic[0])
    jj, wy = _axis_cell(pts[:, 1], mesh.extents[1], mesh.divisions[1], mesh.periodic[1])
    kk, wz = _axis_cell(pts[:, 2], mesh.extents[2], mesh.divisions[2], mesh.periodic[2])
    i1 = (ii + 1) % nxn if mesh.periodic[0] else ii + 1
    j1 = (jj + 1) % nyn if mesh.periodic[1] else jj + 1
    k1 = (kk + 1) % nzn if mesh.periodic[2] else kk + 1
    out = np.zeros(pts.shape[0])
    for (iz, wz_) in ((kk, 1.0 - wz), (k1, wz)):
        for (iy, wy_) in ((jj, 1.0 - wy), (j1, wy)):
            for (ix, wx_) in ((ii, 1.0 - wx), (i1, wx)):
                out += wz_ * wy_ * wx_ * f[iz, iy, ix]
    return out


def record_line(state, depth: float, y: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample phi at every x grid line at the given depth below the top face."""
    mesh = state.system.mesh
    return line_from_field(mesh, state.phi, depth, y)


def line_from_field(
    mesh: BoxMesh, nodal: np.ndarray, depth: float, y: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    if y is None:
        y = mesh.extents[1] / 2.0
    z = mesh.extents[2] - depth
    if depth < -1e-12 * mesh.extents[2] or z < -1e-12 * mesh.extents[2]:
        raise ProbeError("probe depth outside the mesh")
    nxn = mesh.node_dims[0]
    x = np.arange(nxn) * mesh.spacing[0]
    pts = np.column_stack([x, np.full(nxn, y), np.full(nxn, z)])
    return x, grid_interpolate(mesh, nodal, pts)


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

def amplitude_metrics(x: np.ndarray, samples: np.ndarray) -> AmplitudeMetrics:
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ProbeError("no samples")
    return AmplitudeMetrics(
        rms=float(np.sqrt(np.mean(samples**2))),
        max_modulus=float(np.abs(samples).max()),
        window=(float(np.min(x)), float(np.max(x))),
    )


def _local_extrema(x, v, noise_floor):
    """Indices and parabolic-refined positions of interior local maxima of |v|."""
    a = np.abs(v)
    floor = noise_floor * a.max() if a.max() > 0 else np.inf
    idx = np.nonzero((a[1:-1] >= a[:-2]) & (a[1:-1] >= a[2:]) & (a[1:-1] > floor))[0] + 1
    # collapse plateaus: keep the first index of any run of equal neighbours
    keep = []
    last = -10
    for i in idx:
        if i != last + 1 or a[i] != a[last]:
            keep.append(i)
        last = i
    pos = []
    h = x[1] - x[0] if x.shape[0] > 1 else 1.0
    for i in keep:
        d2 = a[i - 1] - 2.0 * a[i] + a[i + 1]
        off = 0.0 if d2 == 0.0 else 0.5 * (a[i - 1] - a[i + 1]) / d2
        pos.append(x[i] + np.clip(off, -0.5, 0.5) * h)
    return np.array(pos)


def wavefront_speed(
    snap_a: FieldSnapshot,
    snap_b: FieldSnapshot,
    depth: float,
    y: float | None = None,
    noise_floor: float = 0.01,
) -> list[TrackedExtremum]:
    """Track |phi| extrema along the depth line between two snapshots.

    Extrema are paired greedily by nearest position; speeds are signed
    positive for outward motion from the domain x midpoint.  Pairings with a
    second candidate within one grid cell are flagged ambiguous.
    """
    if snap_b.time <= snap_a.time:
        snap_a, snap_b = snap_b, snap_a
        flip = -1.0
    else:
        flip = 1.0
    dt = snap_b.time - snap_a.time
    mesh = snap_a.mesh
    x, va = line_from_field(mesh, snap_a.phi, depth, y)
    _, vb = line_from_field(mesh, snap_b.phi, depth, y)
    pa = _local_extrema(x, va, noise_floor)
    pb = _local_extrema(x, vb, noise_floor)
    if pa.size == 0 or pb.size == 0:
        raise ProbeError("no extrema above the noise floor")
    h = x[1] - x[0]
    xc = mesh.extents[0] / 2.0
    tracked = []
    for xa in pa:
        d = np.abs(pb - xa)
        k = int(np.argmin(d))
        ambiguous = bool(np.sum(d <= d[k] + h) > 1)
        outward = 1.0 if xa >= xc else -1.0
        speed = flip * outward * (pb[k] - xa) / dt
        tracked.append(TrackedExtremum(float(xa), float(pb[k]), float(speed), ambiguous))
    return tracked


def response_time(trace: ProbeTrace, window: tuple[float, float]) -> ResponseTime:
    """Settling time of a step response within the bias-on window.

    Equilibrium is the mean of the final 20 percent of the window; t_c is the
    first crossing of that level (inf for monotone approaches) and t_band the
    last entry into the +-20 percent band around it.
    """
    t = trace.times
    v = np.asarray(trace.values, dtype=float)
    t0, t1 = window
    sel = (t >= t0) & (t <= t1)
    if not np.any(sel):
        raise ProbeError("window contains no samples")
    tw = t[sel]
    vw = v[sel]
    tail = tw >= tw[0] + 0.8 * (tw[-1] - tw[0])
    eq = float(np.mean(vw[tail]))

    dev = vw - eq
    t_c = np.inf
    s0 = np.sign(dev[0]) if dev[0] != 0.0 else 0.0
    if s0 == 0.0:
        t_c = float(tw[0])
    else:
        cross = np.nonzero(np.sign(dev) != s0)[0]
        if cross.size:
            i = cross[0]
            # linear interpolation of the crossing instant
            f = dev[i - 1] / (dev[i - 1] - dev[i])
            t_c = float(tw[i - 1] + f * (tw[i] - tw[i - 1]))

    band = 0.2 * abs(eq)
    outside = np.abs(dev) > band
    if outside[-1] or band == 0.0 and np.any(outside):
        raise ProbeError("trace never settles into the +-20 percent band")
    if not np.any(outside):
        t_band = float(tw[0])
    else:
        i = int(np.nonzero(outside)[0][-1]) + 1
        a = abs(dev[i - 1]) - band
        b = band - abs(dev[i])
        f = a / (a + b) if (a + b) > 0 else 1.0
        t_band = float(tw[i - 1] + f * (tw[i] - tw[i - 1]))
    return ResponseTime(t_c=t_c, t_band=t_band, equilibrium=eq)


def surface_localization(
    snap: FieldSnapshot, wavelength: float, y: float | None = None, noise_floor: float = 0.01
) -> float:
    """Ratio of |phi| two wavelengths below the surface to |phi| at the surface,
    measured at the x position of the strongest surface extremum."""
    mesh = snap.mesh
    x, surf = line_from_field(mesh, snap.phi, 0.0, y)
    pos = _local_extrema(x, surf, noise_floor)
    if pos.size == 0:
        raise ProbeError("no surface crest above the noise floor")
    crest_vals = np.interp(pos, x, np.abs(surf))
    xc = float(pos[np.argmax(crest_vals)])
    if y is None:
        y = mesh.extents[1] / 2.0
    top = grid_interpolate(mesh, snap.phi, [(xc, y, mesh.extents[2])])[0]
    deep = grid_interpolate(mesh, snap.phi, [(xc, y, mesh.extents[2] - 2.0 * wavelength)])[0]
    return float(abs(deep) / abs(top))


# --------------------------------------------------------------------------
# Constitutive fields
# --------------------------------------------------------------------------

VOIGT_TENSOR_INDEX = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))


def evaluate_stress_and_displacement_d(state, element: int, xi) -> tuple[np.ndarray, np.ndarray]:
    """Stress tensor (3,3) and electric displacement (3,) at a point of an element.

    Uses sigma = C gamma - e^T E and D = eps E + e gamma with E = -grad phi,
    all from the trilinear gradients at the reference point xi.
    """
    system: GlobalSystem = state.system
    mesh = system.mesh
    nodes = element_nodes(mesh, element)
    g = shape_gradients(xi, mesh.spacing)
    B = strain_displacement(g)
    u_e = state.u_curr[system.dofs.u_dofs(nodes[None, :])[0]]
    phi_e = state.phi[nodes]
    gamma = B @ u_e
    E = -(g @ phi_e)
    mat = system.material
    sigma_v = mat.elastic.voigt @ gamma - mat.piezo.matrix.T @ E
    D = mat.permittivity.matrix @ E + mat.piezo.matrix @ gamma
    sigma = np.empty((3, 3))
    for J, (i, j) in enumerate(VOIGT_TENSOR_INDEX):
        sigma[i, j] = sigma[j, i] = sigma_v[J]
    return sigma, D


def element_nodes(mesh: BoxMesh, eid: int) -> np.ndarray:
    """Node ids of one element without building the full connectivity table."""
    nx, ny, nz = mesh.divisions
    if not 0 <= eid < mesh.element_count:
        raise ProbeError(f"element id {eid} out of range")
    i = eid % nx
    j = (eid // nx) % ny
    k = eid // (nx * ny)
    nxn, nyn, nzn = mesh.node_dims
    offsets = ((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
               (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1))
    out = np.empty(8, dtype=np.int64)
    for a, (di, dj, dk) in enumerate(offsets):
        ii = (i + di) % nxn if mesh.periodic[0] else i + di
        jj = (j + dj) % nyn if mesh.periodic[1] else j + dj
        kk = (k + dk) % nzn if mesh.periodic[2] else k + dk
        out[a] = ii + nxn * (jj + nyn * kk)
    return out
