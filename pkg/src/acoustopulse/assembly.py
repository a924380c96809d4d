"""Element and global operators for the coupled displacement/potential system.

Element integrals on one 8-node brick (full 2x2x2 Gauss):

    k_uu     = int B^T C B dV            (24x24, elastic stiffness)
    k_uphi   = int B^T e^T gradN dV      (24x8, piezoelectric coupling)
    k_phiphi = int gradN^T eps gradN dV  (8x8, dielectric stiffness)
    m_lumped = rho V / 8 per node        (row-sum of the consistent mass)

Sign conventions (fixed by the weak form and checked against the 1D
piezoelectric bar in the tests): the quasi-static potential solves
K_phiphi phi = K_uphi^T u, and the potential loads the mechanical equation as
M u'' = -K_uu u - K_uphi phi.

All elements of a box mesh are identical, so assembly scatters a single local
matrix; the CSR sparsity pattern is derived from the grid stencil up front and
values are filled by the backend kernels.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import backend
from .materials import MaterialSet
from .mesh import CORNER_SIGNS, BoxMesh, DofMap, SurfaceRegionSet


class AssemblyError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Sparse matrices
# --------------------------------------------------------------------------

@dataclass
class CsrMatrix:
    """Compressed sparse row matrix; column indices sorted within each row."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    shape: tuple[int, int]

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return backend.csr_matvec(self.indptr, self.indices, self.data, x)

    def __matmul__(self, x):
        return self.matvec(x)

    def diagonal(self) -> np.ndarray:
        n = min(self.shape)
        rows = np.arange(n, dtype=np.int64)
        # within-row binary search, vectorized through the global sorted keys
        nnz_rows = np.repeat(
            np.arange(self.shape[0], dtype=np.int64), np.diff(self.indptr)
        )
        keys = nnz_rows * self.shape[1] + self.indices
        pos = np.searchsorted(keys, rows * self.shape[1] + rows)
        d = np.zeros(n)
        hit = (pos < keys.shape[0]) & (keys[np.minimum(pos, keys.shape[0] - 1)]
                                       == rows * self.shape[1] + rows)
        d[hit] = self.data[pos[hit]]
        return d

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        rows = np.repeat(np.arange(self.shape[0]), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out

    def transpose(self) -> "CsrMatrix":
        rows = np.repeat(np.arange(self.shape[0], dtype=np.int64), np.diff(self.indptr))
        order = np.lexsort((rows, self.indices))
        indptr = np.zeros(self.shape[1] + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(np.bincount(self.indices, minlength=self.shape[1]))
        return CsrMatrix(indptr, rows[order], self.data[order], (self.shape[1], self.shape[0]))

    def submatrix(self, rows: np.ndarray, cols: np.ndarray) -> "CsrMatrix":
        """Extract A[rows][:, cols]; both index lists must be sorted ascending."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        lens = self.indptr[rows + 1] - self.indptr[rows]
        src = _segment_gather(self.indptr[rows], lens)
        sub_indices = self.indices[src]
        sub_data = self.data[src]
        colmap = np.full(self.shape[1], -1, dtype=np.int64)
        colmap[cols] = np.arange(cols.shape[0])
        mapped = colmap[sub_indices]
        keep = mapped >= 0
        row_of = np.repeat(np.arange(rows.shape[0]), lens)
        indptr = np.zeros(rows.shape[0] + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(np.bincount(row_of[keep], minlength=rows.shape[0]))
        return CsrMatrix(indptr, mapped[keep], sub_data[keep], (rows.shape[0], cols.shape[0]))


def _segment_gather(starts: np.ndarray, lens: np.ndarray) -> np.ndarray:
    """Indices covering [starts[i], starts[i]+lens[i]) for all i, concatenated."""
    total = int(lens.sum())
    offsets = np.zeros(lens.shape[0] + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(lens)
    ramp = np.arange(total, dtype=np.int64) - np.repeat(offsets[:-1], lens)
    return np.repeat(starts, lens) + ramp


# --------------------------------------------------------------------------
# Element matrices
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ElementMatrices:
    k_uu: np.ndarray  # (24, 24)
    k_uphi: np.ndarray  # (24, 8)
    k_phiphi: np.ndarray  # (8, 8)
    m_lumped: np.ndarray  # (24,)


def shape_gradients(xi, spacing) -> np.ndarray:
    """Physical shape-function gradients dN_a/dx_i, shape (3, 8)."""
    xi = np.asarray(xi, dtype=float)
    g = np.empty((3, 8))
    for a in range(8):
        s = CORNER_SIGNS[a]
        g[0, a] = s[0] * (1 + xi[1] * s[1]) * (1 + xi[2] * s[2]) / 4.0 / spacing[0]
        g[1, a] = s[1] * (1 + xi[0] * s[0]) * (1 + xi[2] * s[2]) / 4.0 / spacing[1]
        g[2, a] = s[2] * (1 + xi[0] * s[0]) * (1 + xi[1] * s[1]) / 4.0 / spacing[2]
    return g


def strain_displacement(grad: np.ndarray) -> np.ndarray:
    """6x24 B matrix (engineering-strain Voigt rows) from gradients (3, 8)."""
    B = np.zeros((6, 24))
    for a in range(8):
        gx, gy, gz = grad[0, a], grad[1, a], grad[2, a]
        B[0, 3 * a + 0] = gx
        B[1, 3 * a + 1] = gy
        B[2, 3 * a + 2] = gz
        B[3, 3 * a + 1] = gz
        B[3, 3 * a + 2] = gy
        B[4, 3 * a + 0] = gz
        B[4, 3 * a + 2] = gx
        B[5, 3 * a + 0] = gy
        B[5, 3 * a + 1] = gx
    return B


GAUSS_1D = (-1.0 / np.sqrt(3.0), 1.0 / np.sqrt(3.0))


def element_matrices(spacing, m: MaterialSet) -> ElementMatrices:
    if any(h <= 0.0 for h in spacing):
        raise AssemblyError("element spacings must be positive")
    C = m.elastic.voigt
    E = m.piezo.matrix
    perm = m.permittivity.matrix
    det_j = spacing[0] * spacing[1] * spacing[2] / 8.0

    k_uu = np.zeros((24, 24))
    k_uphi = np.zeros((24, 8))
    k_phiphi = np.zeros((8, 8))
    for gx in GAUSS_1D:
        for gy in GAUSS_1D:
            for gz in GAUSS_1D:
                g = shape_gradients((gx, gy, gz), spacing)
                B = strain_displacement(g)
                k_uu += (B.T @ C @ B) * det_j
                k_uphi += (B.T @ E.T @ g) * det_j
                k_phiphi += (g.T @ perm @ g) * det_j

    volume = spacing[0] * spacing[1] * spacing[2]
    m_lumped = np.full(24, m.density * volume / 8.0)
    return ElementMatrices(k_uu, k_uphi, k_phiphi, m_lumped)


# --------------------------------------------------------------------------
# Sparsity patterns from the structured-grid stencil
# --------------------------------------------------------------------------

def _node_graph(mesh: BoxMesh) -> tuple[np.ndarray, np.ndarray]:
    """CSR pattern (indptr, indices) of the 27-point node adjacency graph."""
    nxn, nyn, nzn = mesh.node_dims
    n = mesh.node_count
    k, j, i = np.meshgrid(np.arange(nzn), np.arange(nyn), np.arange(nxn), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()

    pairs = []
    for dk in (-1, 0, 1):
        for dj in (-1, 0, 1):
            for di in (-1, 0, 1):
                ii, jj, kk = i + di, j + dj, k + dk
                ok = np.ones(n, dtype=bool)
                if mesh.periodic[0]:
                    ii = ii % nxn
                else:
                    ok &= (ii >= 0) & (ii < nxn)
                if mesh.periodic[1]:
                    jj = jj % nyn
                else:
                    ok &= (jj >= 0) & (jj < nyn)
                if mesh.periodic[2]:
                    kk = kk % nzn
                else:
                    ok &= (kk >= 0) & (kk < nzn)
                col = ii + nxn * (jj + nyn * kk)
                rows = np.nonzero(ok)[0]
                pairs.append(rows.astype(np.int64) * n + col[rows])
    keys = np.unique(np.concatenate(pairs))
    rows = keys // n
    cols = keys % n
    indptr = np.zeros(n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(np.bincount(rows, minlength=n))
    return indptr, cols


def _expand_pattern(gp, gi, row_rep: int, col_rep: int) -> tuple[np.ndarray, np.ndarray]:
    """Expand a node graph into a block pattern with row_rep x col_rep DOF blocks."""
    n = gp.shape[0] - 1
    lens = np.diff(gp)
    if col_rep > 1:
        base = (col_rep * gi[:, None] + np.arange(col_rep, dtype=np.int64)).ravel()
    else:
        base = gi
    if row_rep == 1:
        indptr = np.zeros(n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(col_rep * lens)
        return indptr, base
    seg_starts = col_rep * gp[:-1]
    seg_lens = col_rep * lens
    row_node = np.repeat(np.arange(n, dtype=np.int64), row_rep)
    out_lens = seg_lens[row_node]
    indptr = np.zeros(row_rep * n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(out_lens)
    src = _segment_gather(seg_starts[row_node], out_lens)
    return indptr, base[src]


# --------------------------------------------------------------------------
# Global system
# --------------------------------------------------------------------------

@dataclass
class GlobalSystem:
    k_uu: CsrMatrix
    k_uphi: CsrMatrix
    k_phiphi: CsrMatrix
    k_phiu: CsrMatrix  # cached transpose of k_uphi
    m_diag: np.ndarray
    mesh: BoxMesh
    dofs: DofMap
    material: MaterialSet
    # potential-space Dirichlet constraints: (phi DOF, value-provider id)
    dirichlet: list = field(default_factory=list)

    @property
    def fixed_phi(self) -> np.ndarray:
        return np.array(sorted(d for d, _ in self.dirichlet), dtype=np.int64)

    @property
    def free_phi(self) -> np.ndarray:
        mask = np.ones(self.dofs.n_phi, dtype=bool)
        if self.dirichlet:
            mask[self.fixed_phi] = False
        return np.nonzero(mask)[0].astype(np.int64)


def assemble(mesh: BoxMesh, dofs: DofMap, m: MaterialSet) -> GlobalSystem:
    """Scatter-add the shared element matrices into global CSR operators.

    Natural (do-nothing) boundary terms are simply omitted, which enforces
    traction-free surfaces and zero normal electric displacement weakly.
    """
    if dofs.node_count != mesh.node_count:
        raise AssemblyError("DofMap does not match mesh")
    em = element_matrices(mesh.spacing, m)
    conn = mesh.connectivity()
    if conn.max() >= mesh.node_count:
        raise AssemblyError("connectivity references an out-of-range node")

    gp, gi = _node_graph(mesh)
    n = mesh.node_count

    p_uu = _expand_pattern(gp, gi, 3, 3)
    p_up = _expand_pattern(gp, gi, 3, 1)
    p_pp = (gp, gi)

    k_uu = CsrMatrix(p_uu[0], p_uu[1], np.zeros(p_uu[1].shape[0]), (3 * n, 3 * n))
    k_uphi = CsrMatrix(p_up[0], p_up[1], np.zeros(p_up[1].shape[0]), (3 * n, n))
    k_phiphi = CsrMatrix(p_pp[0], p_pp[1], np.zeros(p_pp[1].shape[0]), (n, n))

    _fill_operator(k_uu, conn, em.k_uu, 3, 3)
    _fill_operator(k_uphi, conn, em.k_uphi, 3, 1)
    _fill_operator(k_phiphi, conn, em.k_phiphi, 1, 1)

    u_dofs = dofs.u_dofs(conn)  # (E, 24)
    m_diag = np.bincount(
        u_dofs.ravel(), weights=np.tile(em.m_lumped, conn.shape[0]), minlength=3 * n
    )
    return GlobalSystem(
        k_uu=k_uu,
        k_uphi=k_uphi,
        k_phiphi=k_phiphi,
        k_phiu=k_uphi.transpose(),
        m_diag=m_diag,
        mesh=mesh,
        dofs=dofs,
        material=m,
    )


def _fill_operator(A: CsrMatrix, conn: np.ndarray, k_local: np.ndarray, row_rep: int, col_rep: int):
    if backend.USE_NUMBA:
        _fill_numba(A, conn, k_local, row_rep, col_rep)
    else:
        _fill_numpy(A, conn, k_local, row_rep, col_rep)


def _dof_expand(conn_chunk: np.ndarray, rep: int) -> np.ndarray:
    if rep == 1:
        return conn_chunk
    return (rep * conn_chunk[:, :, None] + np.arange(rep, dtype=np.int64)).reshape(
        conn_chunk.shape[0], -1
    )


def _fill_numpy(A, conn, k_local, row_rep, col_rep, chunk=8192):
    nnz_rows = np.repeat(np.arange(A.shape[0], dtype=np.int64), np.diff(A.indptr))
    keys = nnz_rows * A.shape[1] + A.indices
    for lo in range(0, conn.shape[0], chunk):
        c = conn[lo : lo + chunk]
        rows = _dof_expand(c, row_rep)
        cols = _dof_expand(c, col_rep)
        r = np.repeat(rows, cols.shape[1], axis=1).ravel()
        cc = np.tile(cols, (1, rows.shape[1])).ravel()
        pos = np.searchsorted(keys, r * A.shape[1] + cc)
        vals = np.tile(k_local.ravel(), c.shape[0])
        np.add.at(A.data, pos, vals)


def _fill_numba(A, conn, k_local, row_rep, col_rep):
    rows_loc = np.repeat(np.arange(8 * row_rep, dtype=np.int64), 8 * col_rep)
    cols_loc = np.tile(np.arange(8 * col_rep, dtype=np.int64), 8 * row_rep)
    backend._fill_csr_elements(
        A.indptr,
        A.indices,
        A.data,
        np.ascontiguousarray(conn),
        np.ascontiguousarray(k_local.ravel()),
        rows_loc // row_rep,
        rows_loc % row_rep,
        cols_loc // col_rep,
        cols_loc % col_rep,
        row_rep,
        col_rep,
    )


# --------------------------------------------------------------------------
# Dirichlet constraints by symmetric elimination
# --------------------------------------------------------------------------

@dataclass
class ConstrainedOperator:
    """Partition of a square operator into free/fixed DOFs.

    Solves use A_ff x_f = b_f - A_fc x_c; `expand` reassembles the full vector.
    """

    a_ff: CsrMatrix
    a_fc: CsrMatrix
    free: np.ndarray
    fixed: np.ndarray

    def reduce_rhs(self, b_full: np.ndarray, fixed_values: np.ndarray) -> np.ndarray:
        b = b_full[self.free]
        if self.fixed.shape[0]:
            b = b - self.a_fc.matvec(fixed_values)
        return b

    def expand(self, x_free: np.ndarray, fixed_values: np.ndarray) -> np.ndarray:
        out = np.empty(self.free.shape[0] + self.fixed.shape[0])
        out[self.free] = x_free
        if self.fixed.shape[0]:
            out[self.fixed] = fixed_values
        return out


def constrain(A: CsrMatrix, fixed_dofs) -> ConstrainedOperator:
    """Build the free/fixed partition of a square CSR operator.

    `fixed_dofs` must be unique valid DOF ids (any order); values are supplied
    at solve time, sorted to match the `fixed` field.
    """
    n = A.shape[0]
    fixed = np.asarray(sorted(fixed_dofs), dtype=np.int64)
    if fixed.shape[0]:
        if fixed[0] < 0 or fixed[-1] >= n:
            raise AssemblyError("fixed DOF out of range")
        if np.any(np.diff(fixed) == 0):
            raise AssemblyError("duplicate constraint on a DOF")
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.nonzero(mask)[0].astype(np.int64)
    return ConstrainedOperator(
        a_ff=A.submatrix(free, free),
        a_fc=A.submatrix(free, fixed),
        free=free,
        fixed=fixed,
    )


def attach_gate_dirichlet(system: GlobalSystem, regions: SurfaceRegionSet) -> GlobalSystem:
    """Return a system whose potential DOFs at gate nodes are Dirichlet-constrained.

    The provider id is the region name; the time loop maps providers to values
    through the pulse each step.
    """
    dirichlet = []
    seen = set()
    for name, nodes in regions.items():
        for node in nodes:
            dof = int(node)
            if dof in seen:
                raise AssemblyError(f"duplicate Dirichlet constraint on phi DOF {dof}")
            seen.add(dof)
            dirichlet.append((dof, name))
    return replace(system, dirichlet=dirichlet)
