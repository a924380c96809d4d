import numpy as np
import pytest
from dataclasses import replace

from acoustopulse.assembly import CsrMatrix, assemble, attach_gate_dirichlet, constrain
from acoustopulse.io import RunConfig
from acoustopulse.materials import bond_rotate, device_frame_orientation, gaas_constants, max_velocity
from acoustopulse.mesh import build_box_mesh, build_dof_map, tag_gates
from acoustopulse.pulse import GateLayout
from acoustopulse.timeloop import (
    CgConfig,
    InstabilityError,
    NotSpdError,
    PotentialSolver,
    SolverError,
    cg_solve,
    discrete_energy,
    electrostatic_solve,
    mechanical_step,
    run,
    stable_dt,
)
from acoustopulse.verification import oscillator_period_error


def csr_from_dense(dense):
    dense = np.asarray(dense, dtype=float)
    indptr = [0]
    indices, data = [], []
    for row in dense:
        cols = np.nonzero(row)[0]
        indices.extend(cols.tolist())
        data.extend(row[cols].tolist())
        indptr.append(len(indices))
    return CsrMatrix(np.array(indptr, dtype=np.int64), np.array(indices, dtype=np.int64),
                     np.array(data), dense.shape)


def gaas_device():
    return bond_rotate(gaas_constants(), device_frame_orientation())


def small_gated_system(extents=(2e-6, 0.2e-6, 1e-6), divisions=(20, 2, 10)):
    mesh = build_box_mesh(extents, divisions)
    dofs = build_dof_map(mesh)
    regions = tag_gates(mesh, GateLayout(250e-9, 250e-9))
    system = attach_gate_dirichlet(assemble(mesh, dofs, gaas_device()), regions)
    return system, regions


class TestCg:
    def test_identity_one_iteration(self):
        A = csr_from_dense(np.eye(4))
        b = np.array([1.0, -2.0, 3.0, 0.5])
        x, iters, res = cg_solve(A, b, CgConfig())
        assert np.allclose(x, b)
        assert iters <= 1

    def test_diagonal(self):
        A = csr_from_dense(np.diag([2.0, 4.0]))
        x, _, _ = cg_solve(A, np.array([2.0, 8.0]), CgConfig())
        assert np.allclose(x, [1.0, 2.0])

    def test_zero_rhs(self):
        A = csr_from_dense(np.eye(3))
        x, iters, res = cg_solve(A, np.zeros(3), CgConfig())
        assert np.allclose(x, 0.0) and iters == 0

    @pytest.mark.parametrize("use_numba", [False, True])
    def test_random_spd_vs_dense_oracle(self, use_numba, monkeypatch):
        from acoustopulse import backend

        if use_numba and not backend.HAS_NUMBA:
            pytest.skip("numba unavailable")
        monkeypatch.setattr(backend, "USE_NUMBA", use_numba)
        rng = np.random.default_rng(9)
        M = rng.normal(size=(50, 50))
        dense = M.T @ M + np.eye(50)
        b = rng.normal(size=50)
        expected = np.linalg.solve(dense, b)
        for precond in ("jacobi", "none"):
            x, iters, res = cg_solve(csr_from_dense(dense), b,
                                     CgConfig(tol=1e-12, max_iter=500, preconditioner=precond))
            assert np.linalg.norm(x - expected) / np.linalg.norm(expected) < 1e-8

    def test_warm_start_converges_immediately(self):
        rng = np.random.default_rng(10)
        M = rng.normal(size=(20, 20))
        dense = M.T @ M + np.eye(20)
        b = rng.normal(size=20)
        A = csr_from_dense(dense)
        x, _, _ = cg_solve(A, b, CgConfig(tol=1e-12, max_iter=200))
        x2, iters, _ = cg_solve(A, b, CgConfig(tol=1e-10, max_iter=200), x0=x)
        assert iters == 0

    def test_non_spd_breakdown(self):
        A = csr_from_dense(np.diag([1.0, -1.0]))
        with pytest.raises(NotSpdError):
            cg_solve(A, np.array([1.0, 1.0]), CgConfig(preconditioner="none"))

    def test_non_convergence_reported(self):
        rng = np.random.default_rng(11)
        M = rng.normal(size=(30, 30))
        A = csr_from_dense(M.T @ M + 1e-8 * np.eye(30))
        with pytest.raises(SolverError, match="residual"):
            cg_solve(A, rng.normal(size=30), CgConfig(tol=1e-14, max_iter=2))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CgConfig(tol=2.0)
        with pytest.raises(ValueError):
            CgConfig(max_iter=0)
        with pytest.raises(ValueError):
            CgConfig(preconditioner="ilu")


class TestElectrostatic:
    def setup_method(self):
        self.system, self.regions = small_gated_system()

    def gates(self, v_center):
        out = [(int(n), v_center) for n in self.regions["center"]]
        for name in ("outer_left", "outer_right"):
            out.extend((int(n), 0.0) for n in self.regions[name])
        return out

    def test_zero_everything(self):
        phi = electrostatic_solve(self.system, np.zeros(self.system.dofs.n_u), self.gates(0.0))
        assert np.allclose(phi, 0.0)

    def test_gate_plateau_bounds_and_decay(self):
        phi = electrostatic_solve(
            self.system, np.zeros(self.system.dofs.n_u), self.gates(1.0),
            CgConfig(tol=1e-12, max_iter=5000),
        )
        assert phi.max() == pytest.approx(1.0)
        assert phi.min() >= -1e-9
        # monotone decay with depth below the center-gate midpoint (M-matrix
        # maximum principle holds for cubic elements)
        mesh = self.system.mesh
        nxn, nyn, nzn = mesh.node_dims
        i_mid = nxn // 2
        j_mid = nyn // 2
        col = [phi[i_mid + nxn * (j_mid + nyn * k)] for k in range(nzn)]
        assert all(col[k + 1] >= col[k] - 1e-9 for k in range(nzn - 1))

    def test_matches_dense_oracle_on_two_elements(self):
        mesh = build_box_mesh((2e-6, 1e-6, 1e-6), (2, 1, 1))
        dofs = build_dof_map(mesh)
        system = assemble(mesh, dofs, gaas_device())
        rng = np.random.default_rng(3)
        u = rng.normal(size=dofs.n_u) * 1e-12
        gates = [(0, 0.2), (5, 0.0)]
        phi = electrostatic_solve(system, u, gates, CgConfig(tol=1e-13, max_iter=500))
        dense = system.k_phiphi.to_dense()
        fixed = np.array([0, 5])
        vals = np.array([0.2, 0.0])
        free = np.setdiff1d(np.arange(dofs.n_phi), fixed)
        b = system.k_phiu.to_dense() @ u
        ref = np.linalg.solve(dense[np.ix_(free, free)],
                              b[free] - dense[np.ix_(free, fixed)] @ vals)
        assert np.abs(phi[free] - ref).max() < 1e-9 * max(1e-30, np.abs(ref).max())

    def test_pure_neumann_rejected(self):
        with pytest.raises(SolverError):
            electrostatic_solve(self.system, np.zeros(self.system.dofs.n_u), [])

    def test_duplicate_gate_rejected(self):
        with pytest.raises(SolverError):
            electrostatic_solve(self.system, np.zeros(self.system.dofs.n_u),
                                [(0, 0.0), (0, 1.0)])


class TestMechanicalStep:
    def test_rest_stays_at_rest(self):
        system, _ = small_gated_system((2e-6, 0.5e-6, 0.5e-6), (8, 2, 2))
        z = np.zeros(system.dofs.n_u)
        u = mechanical_step(system, z, z, np.zeros(system.dofs.n_phi), 1e-12)
        assert np.allclose(u, 0.0)

    def test_uniform_translation_continues(self):
        system, _ = small_gated_system((2e-6, 0.5e-6, 0.5e-6), (8, 2, 2))
        c = np.zeros(system.dofs.n_u)
        c[0::3] = 1e-12  # uniform x displacement
        v = 1.0  # m/s
        dt = 1e-12
        u_prev = c - 0.0
        u_curr = c.copy()
        u_curr[0::3] += v * dt
        u_next = mechanical_step(system, u_curr, u_prev, np.zeros(system.dofs.n_phi), dt)
        expected = c.copy()
        expected[0::3] += 2 * v * dt
        assert np.allclose(u_next, expected, rtol=1e-10)

    def test_oscillator_second_order(self):
        omega0 = 2 * np.pi * 1e9
        e1 = oscillator_period_error(omega0, 1.0 / 40e9)
        e2 = oscillator_period_error(omega0, 0.5 / 40e9)
        assert e1 / e2 == pytest.approx(4.0, rel=0.2)

    def test_instability_detected(self):
        system, regions = small_gated_system((2e-6, 0.2e-6, 0.5e-6), (20, 2, 5))
        dt = 10 * stable_dt(system.mesh, system.material, 1.0)
        rng = np.random.default_rng(8)
        phi = np.zeros(system.dofs.n_phi)
        u_prev = np.zeros(system.dofs.n_u)
        u = rng.normal(size=system.dofs.n_u) * 1e-15
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(InstabilityError):
                for n in range(2000):
                    u, u_prev = mechanical_step(system, u, u_prev, phi, dt), u


class TestStableDt:
    def setup_method(self):
        self.mat = gaas_device()
        self.mesh = build_box_mesh((16e-6, 0.1e-6, 4e-6), (320, 2, 80))

    def test_formula(self):
        dt = stable_dt(self.mesh, self.mat, 0.5)
        assert dt == pytest.approx(0.5 * 50e-9 / max_velocity(self.mat, stiffened=True))

    def test_reference_arithmetic(self):
        # with v_max pinned at the fast [011] longitudinal speed the bound is
        # 0.5 * 50 nm / 5214 m/s ~ 4.79 ps/1000
        assert 0.5 * 50e-9 / 5214.0 == pytest.approx(4.79e-12, rel=2e-3)

    def test_safety_ratio(self):
        assert stable_dt(self.mesh, self.mat, 1.0) == pytest.approx(
            2 * stable_dt(self.mesh, self.mat, 0.5)
        )

    def test_mesh_scaling(self):
        finer = build_box_mesh((16e-6, 0.1e-6, 4e-6), (640, 4, 160))
        assert stable_dt(finer, self.mat, 0.5) == pytest.approx(
            stable_dt(self.mesh, self.mat, 0.5) / 2
        )

    def test_invalid_safety(self):
        with pytest.raises(ValueError):
            stable_dt(self.mesh, self.mat, 0.0)
        with pytest.raises(ValueError):
            stable_dt(self.mesh, self.mat, 1.5)


def tiny_config(**overrides):
    base = RunConfig(
        extents=(4e-6, 0.2e-6, 1e-6),
        divisions=(40, 2, 10),
        t_end=0.2e-9,
        phi_interval=0.05e-9,
        uz_interval=0.05e-9,
        snapshot_times=(),
        qubit=None,
    )
    return replace(base, **overrides)


class TestRun:
    def test_zero_amplitude_all_zero(self):
        result = run(tiny_config(amplitude=0.0))
        assert np.allclose(result.phi_line.values, 0.0)
        assert np.allclose(result.uz_line.values, 0.0)
        assert np.allclose(result.uz_center.values, 0.0)

    def test_linearity_doubling(self):
        r1 = run(tiny_config(amplitude=1.0))
        r2 = run(tiny_config(amplitude=2.0))
        scale = np.abs(r1.phi_line.values).max()
        assert np.allclose(r2.phi_line.values, 2 * r1.phi_line.values,
                           rtol=1e-6, atol=1e-9 * scale)
        uscale = np.abs(r1.uz_center.values).max()
        assert np.allclose(r2.uz_center.values, 2 * r1.uz_center.values,
                           rtol=1e-6, atol=1e-9 * uscale)

    def test_deterministic(self):
        a = run(tiny_config())
        b = run(tiny_config())
        assert np.array_equal(a.phi_line.values, b.phi_line.values)
        assert np.array_equal(a.uz_center.values, b.uz_center.values)

    def test_dt_override_clamped(self):
        result = run(tiny_config(dt_override=1.0))
        assert result.dt_clamped
        assert result.dt <= stable_dt(result.mesh, result.final_state.system.material, 0.5)

    def test_trace_times_uniform(self):
        result = run(tiny_config())
        dts = np.diff(result.phi_line.times)
        assert np.allclose(dts, dts[0])

    def test_snapshot_recorded(self):
        result = run(tiny_config(snapshot_times=(0.1e-9,)))
        assert len(result.snapshots) == 1
        assert result.snapshots[0].time == pytest.approx(0.1e-9, abs=result.dt)


class TestSplittingConsistency:
    def test_matches_monolithic_dense_solve(self):
        """The split update equals a dense coupled elimination of phi when the
        iterative solve is converged."""
        mesh = build_box_mesh((2e-6, 1e-6, 1e-6), (2, 1, 1))
        dofs = build_dof_map(mesh)
        system = assemble(mesh, dofs, gaas_device())
        fixed = np.array([0, 1], dtype=np.int64)  # two pinned phi nodes act as gates
        vals = np.array([0.3, 0.0])
        system = replace(system, dirichlet=[(0, "a"), (1, "b")])

        dt = stable_dt(mesh, system.material, 0.5)
        solver = PotentialSolver(system, CgConfig(tol=1e-13, max_iter=2000))

        kuu = system.k_uu.to_dense()
        kup = system.k_uphi.to_dense()
        kpp = system.k_phiphi.to_dense()
        free = np.setdiff1d(np.arange(dofs.n_phi), fixed)

        u = np.zeros(dofs.n_u)
        u_prev = np.zeros(dofs.n_u)
        ud = u.copy()
        ud_prev = u.copy()
        for n in range(50):
            phi = solver.solve(u, {"a": 0.3, "b": 0.0})
            u, u_prev = mechanical_step(system, u, u_prev, phi, dt), u

            b = (system.k_phiu.to_dense() @ ud)[free] - kpp[np.ix_(free, fixed)] @ vals
            phi_d = np.zeros(dofs.n_phi)
            phi_d[fixed] = vals
            phi_d[free] = np.linalg.solve(kpp[np.ix_(free, free)], b)
            f = -kuu @ ud - kup @ phi_d
            ud, ud_prev = 2 * ud - ud_prev + dt * dt * f / system.m_diag, ud

        assert np.abs(u - ud).max() < 1e-8 * np.abs(ud).max()


class TestEnergy:
    def test_discrete_energy_conserved_free_vibration(self):
        system, regions = small_gated_system((2e-6, 0.2e-6, 0.5e-6), (20, 2, 5))
        rng = np.random.default_rng(4)
        dt = stable_dt(system.mesh, system.material, 0.5)
        solver = PotentialSolver(system, CgConfig(tol=1e-12, max_iter=5000))
        grounded = {"center": 0.0, "outer_left": 0.0, "outer_right": 0.0}
        u_prev = rng.normal(size=system.dofs.n_u) * 1e-13
        phi = solver.solve(u_prev, grounded)
        u = mechanical_step(system, u_prev, u_prev, phi, dt)
        energies = []
        for n in range(60):
            phi = solver.solve(u, grounded)
            energies.append(discrete_energy(system, u, u_prev, phi, dt))
            u, u_prev = mechanical_step(system, u, u_prev, phi, dt), u
        energies = np.array(energies)
        assert np.abs(energies - energies[0]).max() < 1e-6 * abs(energies[0])
