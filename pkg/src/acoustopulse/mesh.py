"""Structured hexahedral box mesh, DOF numbering, and gate-region tagging.

Nodes are ordered lexicographically with x fastest, then y, then z.  Elements
are identical axis-aligned bricks; local node ordering follows the usual
trilinear reference cube with corner signs
(-1,-1,-1), (1,-1,-1), (1,1,-1), (-1,1,-1), (-1,-1,1), (1,-1,1), (1,1,1), (-1,1,1).

Axes may optionally be made periodic (used by the plane-wave verification
runs); a periodic axis drops its duplicate top node plane, so the node count
along it equals the element count.
"""

from dataclasses import dataclass, field

import numpy as np

from .pulse import GateLayout

# reference-corner signs, shape (8, 3)
CORNER_SIGNS = np.array(
    [
        (-1, -1, -1),
        (1, -1, -1),
        (1, 1, -1),
        (-1, 1, -1),
        (-1, -1, 1),
        (1, -1, 1),
        (1, 1, 1),
        (-1, 1, 1),
    ],
    dtype=float,
)


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class BoxMesh:
    extents: tuple[float, float, float]
    divisions: tuple[int, int, int]
    periodic: tuple[bool, bool, bool] = (False, False, False)

    def __post_init__(self):
        if any(L <= 0.0 for L in self.extents):
            raise MeshError("extents must be positive")
        if any(int(n) < 1 or int(n) != n for n in self.divisions):
            raise MeshError("divisions must be integers >= 1")
        object.__setattr__(self, "extents", tuple(float(L) for L in self.extents))
        object.__setattr__(self, "divisions", tuple(int(n) for n in self.divisions))
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(L / n for L, n in zip(self.extents, self.divisions))

    @property
    def node_dims(self) -> tuple[int, int, int]:
        return tuple(n if p else n + 1 for n, p in zip(self.divisions, self.periodic))

    @property
    def node_count(self) -> int:
        nxn, nyn, nzn = self.node_dims
        return nxn * nyn * nzn

    @property
    def element_count(self) -> int:
        nx, ny, nz = self.divisions
        return nx * ny * nz

    def node_id(self, i, j, k):
        nxn, nyn, _ = self.node_dims
        return i + nxn * (j + nyn * np.asarray(k))

    def node_coords(self) -> np.ndarray:
        """(N, 3) array of node positions."""
        nxn, nyn, nzn = self.node_dims
        hx, hy, hz = self.spacing
        i = np.arange(nxn) * hx
        j = np.arange(nyn) * hy
        k = np.arange(nzn) * hz
        K, J, I = np.meshgrid(k, j, i, indexing="ij")
        return np.column_stack([I.ravel(), J.ravel(), K.ravel()])

    def connectivity(self) -> np.ndarray:
        """(E, 8) node ids per element, local ordering per CORNER_SIGNS."""
        nx, ny, nz = self.divisions
        nxn, nyn, nzn = self.node_dims
        i = np.arange(nx)
        j = np.arange(ny)
        k = np.arange(nz)
        K, J, I = np.meshgrid(k, j, i, indexing="ij")
        I, J, K = I.ravel(), J.ravel(), K.ravel()
        conn = np.empty((self.element_count, 8), dtype=np.int64)
        # local corner offsets in (di, dj, dk), matching CORNER_SIGNS
        offsets = ((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                   (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1))
        for a, (di, dj, dk) in enumerate(offsets):
            ii = (I + di) % nxn if self.periodic[0] else I + di
            jj = (J + dj) % nyn if self.periodic[1] else J + dj
            kk = (K + dk) % nzn if self.periodic[2] else K + dk
            conn[:, a] = ii + nxn * (jj + nyn * kk)
        return conn

    def element_id(self, i: int, j: int, k: int) -> int:
        nx, ny, _ = self.divisions
        return i + nx * (j + ny * k)


def build_box_mesh(extents, divisions, periodic=(False, False, False)) -> BoxMesh:
    return BoxMesh(tuple(extents), tuple(divisions), tuple(periodic))


@dataclass(frozen=True)
class DofMap:
    """Node-based DOF numbering: node n owns displacement DOFs (3n, 3n+1, 3n+2)
    and potential DOF n.  The two spaces are indexed independently."""

    node_count: int

    @property
    def n_u(self) -> int:
        return 3 * self.node_count

    @property
    def n_phi(self) -> int:
        return self.node_count

    def u_dofs(self, nodes) -> np.ndarray:
        """Interleaved displacement DOFs for the given nodes (last axis expands x3)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        out = 3 * nodes[..., None] + np.arange(3, dtype=np.int64)
        return out.reshape(nodes.shape[:-1] + (-1,)) if nodes.ndim > 1 else out.ravel()

    def phi_dof(self, nodes) -> np.ndarray:
        return np.asarray(nodes, dtype=np.int64)


def build_dof_map(mesh: BoxMesh) -> DofMap:
    return DofMap(mesh.node_count)


@dataclass(frozen=True)
class SurfaceRegionSet:
    """Named, disjoint sets of top-face (z = Lz) node indices."""

    regions: dict = field(default_factory=dict)

    def items(self):
        return self.regions.items()

    def __getitem__(self, name):
        return self.regions[name]

    def all_nodes(self) -> np.ndarray:
        if not self.regions:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([np.asarray(v) for v in self.regions.values()])


def tag_gates(mesh: BoxMesh, layout: GateLayout) -> SurfaceRegionSet:
    """Tag the three gate footprints (outer_left, center, outer_right) on the top face.

    Footprints span the full y extent and are centered on x = Lx/2; edges snap
    to the node grid (the default geometries divide evenly).  Regions must be
    disjoint after snapping.
    """
    if mesh.periodic[2]:
        raise MeshError("gate tagging requires a non-periodic z axis (no top face)")
    Lx = mesh.extents[0]
    hx = mesh.spacing[0]
    a, d = layout.width, layout.gap
    edges = {
        "outer_left": (Lx / 2 - a / 2 - d - a, Lx / 2 - a / 2 - d),
        "center": (Lx / 2 - a / 2, Lx / 2 + a / 2),
        "outer_right": (Lx / 2 + a / 2 + d, Lx / 2 + a / 2 + d + a),
    }
    nxn, nyn, nzn = mesh.node_dims
    k_top = nzn - 1

    regions = {}
    spans = []
    ncols = int(round(layout.width / hx))
    for name, (x0, x1) in edges.items():
        # width-preserving snap: anchor the left edge, keep round(a/hx) cells,
        # so half-cell offsets shift the centroid by at most hx/2
        i0 = int(np.floor(x0 / hx + 0.5))
        i1 = i0 + ncols
        if i0 < 0 or i1 > nxn - 1:
            raise MeshError(f"gate footprint {name} extends outside the top face")
        spans.append((i0, i1))
        cols = np.arange(i0, i1 + 1)
        j = np.arange(nyn)
        nodes = (cols[:, None] + nxn * (j[None, :] + nyn * k_top)).ravel()
        regions[name] = np.sort(nodes.astype(np.int64))

    spans.sort()
    for (lo0, hi0), (lo1, hi1) in zip(spans, spans[1:]):
        if hi0 >= lo1:
            raise MeshError("gate footprints overlap after snapping to the grid")
    return SurfaceRegionSet(regions)


def locate_point(mesh: BoxMesh, p) -> tuple[int, np.ndarray]:
    """Element id and reference coordinates xi in [-1,1]^3 containing point p.

    Points on a shared face go to the lower-index element.  Points outside the
    box by more than a 1e-12 relative tolerance are rejected.
    """
    p = np.asarray(p, dtype=float)
    h = mesh.spacing
    idx = []
    xi = np.empty(3)
    for ax in range(3):
        L, n = mesh.extents[ax], mesh.divisions[ax]
        x = p[ax]
        if mesh.periodic[ax]:
            x = x % L
        elif x < -1e-12 * L or x > L * (1.0 + 1e-12):
            raise MeshError(f"point {p} outside the mesh along axis {ax}")
        # ceil(x/h) - 1 sends shared-face points to the lower-index element
        t = x / h[ax]
        ie = int(np.ceil(t - 1e-12)) - 1
        ie = min(max(ie, 0), n - 1)
        idx.append(ie)
        xi[ax] = 2.0 * (t - ie) - 1.0
    return mesh.element_id(*idx), xi


def trilinear_shape(xi) -> np.ndarray:
    """Shape function values N_a(xi), shape (8,)."""
    xi = np.asarray(xi, dtype=float)
    return np.prod(1.0 + CORNER_SIGNS * xi, axis=1) / 8.0


def interpolate_at(mesh: BoxMesh, conn: np.ndarray, nodal: np.ndarray, p) -> np.ndarray:
    """Trilinear interpolation of nodal data (N,...) at a physical point."""
    eid, xi = locate_point(mesh, p)
    N = trilinear_shape(xi)
    return np.tensordot(N, nodal[conn[eid]], axes=(0, 0))
