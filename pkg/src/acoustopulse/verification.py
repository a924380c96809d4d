"""Self-contained oracle and invariant checks, shared by `verify` and the tests.

Each check returns (name, passed, detail).  The checks deliberately recompute
their expectations through independent routes: brute-force index rotation for
the Bond transformation, closed-form oscillator periods, plane-wave phase
velocities from the Christoffel eigenproblem, and a manufactured solution with
analytic forcing for the convergence orders.
"""

import math
from dataclasses import replace

import numpy as np

from .assembly import CsrMatrix, GlobalSystem, assemble, constrain, element_matrices
from .io import RunConfig
from .materials import (
    ElasticTensor,
    MaterialSet,
    PermittivityTensor,
    PiezoTensor,
    bond_rotate,
    christoffel_velocities,
    device_frame_orientation,
    gaas_constants,
    CrystalOrientation,
)
from .mesh import build_box_mesh, build_dof_map
from .timeloop import CgConfig, PotentialSolver, cg_solve, mechanical_step, run, stable_dt
from . import timeloop


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0.0:
        q[:, [0, 1]] = q[:, [1, 0]]
    return q


def brute_force_rotate(m: MaterialSet, a: np.ndarray) -> MaterialSet:
    """Index-by-index tensor rotation; the oracle for the Bond-matrix route."""
    c4 = np.einsum("ia,jb,kc,ld,abcd->ijkl", a, a, a, a, m.elastic.full())
    e3 = np.einsum("ia,jb,kc,abc->ijk", a, a, a, m.piezo.full())
    return MaterialSet(
        elastic=ElasticTensor.from_full(c4),
        piezo=PiezoTensor.from_full(e3),
        permittivity=PermittivityTensor(a @ m.permittivity.matrix @ a.T),
        density=m.density,
    )


def check_bond_equivalence(n_rotations: int = 20, seed: int = 7) -> tuple[str, bool, str]:
    rng = np.random.default_rng(seed)
    gaas = gaas_constants()
    worst = 0.0
    for _ in range(n_rotations):
        a = random_rotation(rng)
        fast = bond_rotate(gaas, CrystalOrientation(a))
        slow = brute_force_rotate(gaas, a)
        for got, want in (
            (fast.elastic.voigt, slow.elastic.voigt),
            (fast.piezo.matrix, slow.piezo.matrix),
            (fast.permittivity.matrix, slow.permittivity.matrix),
        ):
            scale = np.abs(want).max()
            worst = max(worst, float(np.abs(got - want).max() / scale))
    return ("bond-rotation vs 4th-rank oracle", worst < 1e-10, f"max rel diff {worst:.3e}")


def check_patch_test() -> tuple[str, bool, str]:
    """Linear displacement on the boundary of a 2x2x2 mesh reproduces the
    linear field at the interior node when the piezo coupling is off."""
    gaas = gaas_constants()
    mat = MaterialSet(
        elastic=gaas.elastic,
        piezo=PiezoTensor(np.zeros((3, 6))),
        permittivity=gaas.permittivity,
        density=gaas.density,
    )
    mesh = build_box_mesh((1e-6, 1e-6, 1e-6), (2, 2, 2))
    dofs = build_dof_map(mesh)
    system = assemble(mesh, dofs, mat)
    coords = mesh.node_coords()
    grad = np.array([[1.0, 0.4, -0.3], [0.2, -1.1, 0.5], [-0.6, 0.3, 0.9]]) * 1e-6
    u_exact = coords @ grad.T

    nxn, nyn, nzn = mesh.node_dims
    idx = np.arange(mesh.node_count)
    i = idx % nxn
    j = (idx // nxn) % nyn
    k = idx // (nxn * nyn)
    boundary = (i % (nxn - 1) == 0) | (j % (nyn - 1) == 0) | (k % (nzn - 1) == 0)
    fixed_nodes = idx[boundary]
    fixed_dofs = dofs.u_dofs(fixed_nodes)

    con = constrain(system.k_uu, fixed_dofs)
    fixed_vals = u_exact.reshape(-1)[con.fixed]
    b = con.reduce_rhs(np.zeros(dofs.n_u), fixed_vals)
    x, _, _ = cg_solve(con.a_ff, b, CgConfig(tol=1e-13, max_iter=200))
    u = con.expand(x, fixed_vals)
    err = np.abs(u - u_exact.reshape(-1)).max() / np.abs(u_exact).max()
    return ("patch test (linear field, e = 0)", err < 1e-10, f"rel error {err:.3e}")


def _stub_system(k_uu: CsrMatrix, m_diag: np.ndarray) -> GlobalSystem:
    zero = CsrMatrix(
        np.zeros(k_uu.shape[0] + 1, dtype=np.int64),
        np.empty(0, dtype=np.int64),
        np.empty(0),
        (k_uu.shape[0], 1),
    )
    return GlobalSystem(
        k_uu=k_uu, k_uphi=zero, k_phiphi=zero, k_phiu=zero.transpose(),
        m_diag=m_diag, mesh=None, dofs=None, material=None,
    )


def oscillator_period_error(omega0: float, dt: float, n_periods: int = 12) -> float:
    """|measured - exact| period of u'' = -omega0^2 u under the leapfrog update."""
    k_uu = CsrMatrix(
        np.array([0, 1], dtype=np.int64), np.array([0], dtype=np.int64),
        np.array([omega0**2]), (1, 1),
    )
    system = _stub_system(k_uu, np.ones(1))
    phi = np.zeros(1)
    t_end = n_periods * 2.0 * np.pi / omega0
    u_prev = np.array([math.cos(-omega0 * dt)])
    u = np.array([1.0])
    crossings = []
    t = 0.0
    prev_val, prev_t = u[0], 0.0
    while t < t_end:
        u_next = mechanical_step(system, u, u_prev, phi, dt)
        t += dt
        if prev_val > 0.0 >= u_next[0] or prev_val < 0.0 <= u_next[0]:
            f = prev_val / (prev_val - u_next[0])
            crossings.append(prev_t + f * dt)
        prev_val, prev_t = u_next[0], t
        u_prev, u = u, u_next
    crossings = np.array(crossings)
    idx = np.arange(crossings.shape[0])
    half_period = np.polyfit(idx, crossings, 1)[0]
    return abs(2.0 * half_period - 2.0 * np.pi / omega0)


def check_oscillator_order() -> tuple[str, bool, str]:
    omega0 = 2.0 * np.pi * 1.0e9
    dt = 1.0 / (40.0 * 1.0e9)
    e1 = oscillator_period_error(omega0, dt)
    e2 = oscillator_period_error(omega0, dt / 2.0)
    ratio = e1 / e2
    return (
        "oscillator period error halving ratio",
        3.2 < ratio < 4.8,
        f"ratio {ratio:.2f} (expect ~4)",
    )


def energy_drift_config() -> RunConfig:
    return replace(
        RunConfig(),
        extents=(8e-6, 0.2e-6, 4e-6),
        divisions=(80, 2, 40),
        t_end=1.4e-9,
        report_interval_steps=1,
        qubit=None,
        snapshot_times=(),
    )


def check_energy_drift(config: RunConfig | None = None) -> tuple[str, bool, str]:
    """Discrete energy after the pulse returns to zero must hold to < 1%."""
    config = config or energy_drift_config()
    result = run(config)
    # both half-step states entering the energy must postdate the pulse
    t_off = config.t_start + 2.0 * config.t_rise + config.t_duration
    post = [r for r in result.reports if r.t >= t_off + 2.0 * result.dt]
    e0, e1 = post[0].energy, post[-1].energy
    drift = abs(e1 - e0) / abs(e0)
    window = post[-1].t - post[0].t
    return (
        "post-pulse energy drift",
        drift < 0.01 and window >= 0.99e-9,
        f"drift {drift:.3e} over {window * 1e9:.2f} ns",
    )


# --------------------------------------------------------------------------
# Plane-wave phase velocity on a fully periodic strip
# --------------------------------------------------------------------------

def plane_wave_speed(mode: int, wavelengths: int = 2, elements_per_wavelength: int = 20,
                     periods: float = 2.0) -> tuple[float, float]:
    """Measured and predicted speed of Christoffel branch `mode` along device x.

    A single-harmonic traveling wave is launched on a torus (periodic in all
    axes, one element across the transverse directions) and its phase is
    tracked through the projection onto the launched polarization.
    """
    lam = 1.0e-6
    h = lam / elements_per_wavelength
    nx = wavelengths * elements_per_wavelength
    mat = bond_rotate(gaas_constants(), device_frame_orientation())
    mesh = build_box_mesh((nx * h, h, h), (nx, 1, 1), periodic=(True, True, True))
    dofs = build_dof_map(mesh)
    system = assemble(mesh, dofs, mat)
    system = replace(system, dirichlet=[(0, "pin")])

    n_dir = np.array([1.0, 0.0, 0.0])
    vels, pols = christoffel_modes(mat, n_dir, stiffened=True)
    v_pred = vels[mode]
    p = pols[:, mode]

    k = 2.0 * np.pi / lam
    omega = k * v_pred
    x = np.arange(nx) * h
    dt = stable_dt(mesh, mat, 0.5)

    u = (p[None, :] * np.cos(k * x)[:, None]).reshape(-1)
    u_prev = (p[None, :] * np.cos(k * x + omega * dt)[:, None]).reshape(-1)

    solver = PotentialSolver(system, CgConfig(tol=1e-11, max_iter=2000))
    nsteps = int(round(periods * 2.0 * np.pi / omega / dt))
    phase_factor = np.exp(-1j * k * x)
    amps = np.empty(nsteps + 1, dtype=complex)
    times = np.arange(nsteps + 1) * dt
    for n in range(nsteps + 1):
        amps[n] = (u.reshape(-1, 3) @ p) @ phase_factor
        if n == nsteps:
            break
        phi = solver.solve(u, {"pin": 0.0})
        u, u_prev = mechanical_step(system, u, u_prev, phi, dt), u
    theta = np.unwrap(np.angle(amps))
    slope = np.polyfit(times, theta, 1)[0]
    return float(-slope / k), float(v_pred)


def christoffel_modes(m: MaterialSet, direction, stiffened=True):
    """Velocities (descending) and matching polarization column vectors."""
    n = np.asarray(direction, dtype=float)
    c = m.elastic.full()
    gamma = np.einsum("ijkl,j,k->il", c, n, n)
    if stiffened:
        e = m.piezo.full()
        g = np.einsum("ijk,j,k->i", e, n, n)
        gamma = gamma + np.outer(g, g) / (n @ m.permittivity.matrix @ n)
    lam, vec = np.linalg.eigh(gamma)
    order = np.argsort(lam)[::-1]
    return np.sqrt(lam[order] / m.density), vec[:, order]


def check_plane_wave_speeds() -> tuple[str, bool, str]:
    details = []
    ok = True
    for mode in (0, 1):  # quasi-longitudinal and the stiffened fast shear
        v_meas, v_pred = plane_wave_speed(mode)
        rel = abs(v_meas - v_pred) / v_pred
        ok &= rel < 0.03
        details.append(f"mode {mode}: {v_meas:.0f} vs {v_pred:.0f} m/s ({100 * rel:.2f}%)")
    return ("plane-wave speed vs Christoffel", ok, "; ".join(details))


# --------------------------------------------------------------------------
# Manufactured-solution convergence study
# --------------------------------------------------------------------------

class _Manufactured:
    """u*_i = A_i sin(k.x + p_i) cos(w t), phi* = B sin(k.x + q) cos(w t)
    with the body force and charge source that make them exact solutions."""

    def __init__(self, mat: MaterialSet, L: float):
        self.mat = mat
        self.k = (2.0 * np.pi / L) * np.array([1.0, 0.75, 0.5])
        self.p = np.array([0.3, 1.1, 2.0])
        self.q = 0.7
        self.A = np.array([0.30, -0.20, 0.25]) * 1e-12
        self.B = 0.02
        self.omega = 0.8 * np.linalg.norm(self.k) * 3000.0

        c4 = mat.elastic.full()
        e3 = mat.piezo.full()
        k = self.k
        self.gamma_c = np.einsum("ijkl,j,k->il", c4, k, k)
        self.gamma_e = np.einsum("kij,j,k->i", e3, k, k)  # e_kij k_j k_k
        self.m_e = np.einsum("ijk,i,j->k", e3, k, k)
        self.eps_kk = float(k @ mat.permittivity.matrix @ k)

    def u_exact(self, coords, t):
        phase = coords @ self.k
        return (self.A[None, :] * np.sin(phase[:, None] + self.p[None, :])) * math.cos(
            self.omega * t
        )

    def phi_exact(self, coords, t):
        return self.B * np.sin(coords @ self.k + self.q) * math.cos(self.omega * t)

    def body_force_spatial(self, coords):
        """f_i / cos(w t): rho u''  - div(c grad u) - div(e^T grad phi)."""
        phase = coords @ self.k
        s = np.sin(phase[:, None] + self.p[None, :])
        f = -self.mat.density * self.omega**2 * self.A[None, :] * s
        f = f + s @ (self.gamma_c * self.A[None, :]).T
        f = f + self.gamma_e[None, :] * self.B * np.sin(phase + self.q)[:, None]
        return f

    def charge_spatial(self, coords):
        """g / cos(w t) for div(eps grad phi) - div(e : grad u) = g."""
        phase = coords @ self.k
        out = -self.eps_kk * self.B * np.sin(phase + self.q)
        out = out + np.sin(phase[:, None] + self.p[None, :]) @ (self.m_e * self.A)
        return out


def _consistent_loads(mesh, dofs, mms):
    """Element-quadrature consistent load vectors for the separable forcing."""
    from .mesh import CORNER_SIGNS
    from .assembly import GAUSS_1D

    conn = mesh.connectivity()
    coords = mesh.node_coords()
    h = np.array(mesh.spacing)
    det_j = h.prod() / 8.0
    origins = coords[conn[:, 0]]
    F0 = np.zeros(dofs.n_u)
    G0 = np.zeros(dofs.n_phi)
    u_cols = dofs.u_dofs(conn)
    for gx in GAUSS_1D:
        for gy in GAUSS_1D:
            for gz in GAUSS_1D:
                xi = np.array([gx, gy, gz])
                N = np.prod(1.0 + CORNER_SIGNS * xi, axis=1) / 8.0
                xg = origins + (xi + 1.0) / 2.0 * h
                f = mms.body_force_spatial(xg) * det_j
                g = mms.charge_spatial(xg) * det_j
                contrib = N[None, :, None] * f[:, None, :]
                np.add.at(F0, u_cols, contrib.reshape(len(conn), 24))
                np.add.at(G0, conn, N[None, :] * g[:, None])
    return F0, G0


def _mms_run(mesh, mat, dt, t_end, cg_tol=1e-11):
    dofs = build_dof_map(mesh)
    system = assemble(mesh, dofs, mat)
    mms = _Manufactured(mat, mesh.extents[0])
    F0, G0 = _consistent_loads(mesh, dofs, mms)
    coords = mesh.node_coords()

    nxn, nyn, nzn = mesh.node_dims
    idx = np.arange(mesh.node_count)
    i = idx % nxn
    j = (idx // nxn) % nyn
    k = idx // (nxn * nyn)
    boundary_nodes = idx[(i % (nxn - 1) == 0) | (j % (nyn - 1) == 0) | (k % (nzn - 1) == 0)]
    fixed_u = dofs.u_dofs(boundary_nodes)
    con_p = constrain(system.k_phiphi, boundary_nodes)
    cfg = CgConfig(tol=cg_tol, max_iter=20000)

    nsteps = int(round(t_end / dt))
    u = mms.u_exact(coords, 0.0).reshape(-1)
    # second-order leapfrog start from the *discrete* acceleration (u* has
    # zero initial velocity); starting from u*(-dt) would inject the spatial
    # truncation into the initial velocity at O(dt)
    fixed_vals0 = mms.phi_exact(coords[boundary_nodes], 0.0)
    b0 = con_p.reduce_rhs(system.k_phiu.matvec(u) - G0, fixed_vals0)
    warm, _, _ = cg_solve(con_p.a_ff, b0, CgConfig(tol=cg_tol, max_iter=20000))
    phi0 = con_p.expand(warm, fixed_vals0)
    a0 = (-system.k_uu.matvec(u) - system.k_uphi.matvec(phi0) + F0) / system.m_diag
    u_prev = u + 0.5 * dt * dt * a0
    for n in range(nsteps):
        t = n * dt
        ct = math.cos(mms.omega * t)
        b_full = system.k_phiu.matvec(u) - G0 * ct
        fixed_vals = mms.phi_exact(coords[boundary_nodes], t)
        b = con_p.reduce_rhs(b_full, fixed_vals)
        warm, _, _ = cg_solve(con_p.a_ff, b, cfg, x0=warm)
        phi = con_p.expand(warm, fixed_vals)
        u_next = mechanical_step(system, u, u_prev, phi, dt, forcing=F0 * ct)
        u_next[fixed_u] = mms.u_exact(coords[boundary_nodes], t + dt).reshape(-1)
        u_prev, u = u, u_next
    return u, mms, coords, nsteps * dt


def convergence_orders() -> tuple[float, float, str]:
    """Measured convergence orders (h, dt) from the manufactured solution."""
    mat = bond_rotate(gaas_constants(), device_frame_orientation())
    L = 1.0e-6

    # spatial: dt tied to h, error vs the exact solution
    errors = []
    t_end = 1.5e-10
    for n in (8, 16, 32):
        mesh = build_box_mesh((L, L, L), (n, n, n))
        dt = stable_dt(mesh, mat, 0.4)
        dt = t_end / int(round(t_end / dt))
        u, mms, coords, T = _mms_run(mesh, mat, dt, t_end)
        exact = mms.u_exact(coords, T).reshape(-1)
        errors.append(np.linalg.norm(u - exact) / np.linalg.norm(exact))
    h_orders = [math.log2(errors[a] / errors[a + 1]) for a in range(2)]

    # temporal: fixed mesh, error vs a fine-dt reference
    mesh = build_box_mesh((L, L, L), (12, 12, 12))
    dt0 = stable_dt(mesh, mat, 0.4)
    t_end = 2.0e-10
    dt0 = t_end / int(round(t_end / dt0))
    u_ref, _, _, _ = _mms_run(mesh, mat, dt0 / 16.0, t_end)
    errs = []
    for div in (1, 2, 4):
        u, _, _, _ = _mms_run(mesh, mat, dt0 / div, t_end)
        errs.append(np.linalg.norm(u - u_ref))
    dt_orders = [math.log2(errs[a] / errs[a + 1]) for a in range(2)]

    detail = (
        f"h errors {['%.3e' % e for e in errors]} orders {['%.2f' % o for o in h_orders]}; "
        f"dt errors {['%.3e' % e for e in errs]} orders {['%.2f' % o for o in dt_orders]}"
    )
    return min(h_orders[-1], h_orders[0]), min(dt_orders), detail


def check_convergence() -> tuple[str, bool, str]:
    h_order, dt_order, detail = convergence_orders()
    return (
        "manufactured-solution convergence",
        h_order >= 1.8 and dt_order >= 1.8,
        f"h order {h_order:.2f}, dt order {dt_order:.2f} ({detail})",
    )


STANDARD_CHECKS = (
    check_bond_equivalence,
    check_patch_test,
    check_oscillator_order,
    check_energy_drift,
    check_plane_wave_speeds,
)


def run_all(checks=STANDARD_CHECKS):
    return [fn() for fn in checks]
