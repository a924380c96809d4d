"""GaAs material tensors, frame rotation, and plane-wave velocity oracle.

Voigt convention used throughout the package (documented once, here):
index pairs (11, 22, 33, 23, 13, 12) map to 0..5, stress and stiffness carry
no numeric factors, and strain is *engineering* strain (shear entries doubled,
gamma_J = 2 eps_jk for J >= 3).  With that convention the 3x6 piezoelectric
matrix satisfies e_iJ = e_ijk and contractions like e_ijk eps_jk == e_iJ g_J
hold without correction factors.
"""

from dataclasses import dataclass

import numpy as np

EPS0 = 8.85e-12  # vacuum permittivity, F/m

# crystal-frame GaAs constants
C11 = 11.88e10  # N/m^2
C12 = 5.38e10
C44 = 5.94e10
E14 = -0.16  # C/m^2
EPS_R = 13.18
DENSITY = 5.36e3  # kg/m^3

VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))


class MaterialError(ValueError):
    """Raised for physically invalid tensors or rotations."""


@dataclass(frozen=True)
class ElasticTensor:
    """Stiffness in 6x6 Voigt form, N/m^2."""

    voigt: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.voigt, dtype=float)
        if v.shape != (6, 6):
            raise MaterialError(f"elastic Voigt matrix must be 6x6, got {v.shape}")
        if not np.allclose(v, v.T, rtol=0.0, atol=1e-6 * np.abs(v).max()):
            raise MaterialError("elastic Voigt matrix must be symmetric")
        object.__setattr__(self, "voigt", v)

    def full(self) -> np.ndarray:
        """Expand to the 4th-rank tensor c_ijkl (3,3,3,3)."""
        c = np.empty((3, 3, 3, 3))
        for I, (i, j) in enumerate(VOIGT_PAIRS):
            for J, (k, l) in enumerate(VOIGT_PAIRS):
                v = self.voigt[I, J]
                c[i, j, k, l] = c[j, i, k, l] = c[i, j, l, k] = c[j, i, l, k] = v
        return c

    @staticmethod
    def from_full(c: np.ndarray) -> "ElasticTensor":
        v = np.empty((6, 6))
        for I, (i, j) in enumerate(VOIGT_PAIRS):
            for J, (k, l) in enumerate(VOIGT_PAIRS):
                v[I, J] = c[i, j, k, l]
        return ElasticTensor(v)


@dataclass(frozen=True)
class PiezoTensor:
    """Piezoelectric coupling in 3x6 form, C/m^2 (strain-type Voigt columns)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 6):
            raise MaterialError(f"piezo matrix must be 3x6, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    def full(self) -> np.ndarray:
        """Expand to e_ijk (3,3,3), symmetric in the last two indices."""
        e = np.empty((3, 3, 3))
        for J, (j, k) in enumerate(VOIGT_PAIRS):
            e[:, j, k] = self.matrix[:, J]
            e[:, k, j] = self.matrix[:, J]
        return e

    @staticmethod
    def from_full(e: np.ndarray) -> "PiezoTensor":
        m = np.empty((3, 6))
        for J, (j, k) in enumerate(VOIGT_PAIRS):
            m[:, J] = e[:, j, k]
        return PiezoTensor(m)


@dataclass(frozen=True)
class PermittivityTensor:
    """Dielectric tensor, 3x3 symmetric positive definite, F/m."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise MaterialError(f"permittivity must be 3x3, got {m.shape}")
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-9 * np.abs(m).max()):
            raise MaterialError("permittivity must be symmetric")
        if np.linalg.eigvalsh(m).min() <= 0.0:
            raise MaterialError("permittivity must be positive definite")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class MaterialSet:
    elastic: ElasticTensor
    piezo: PiezoTensor
    permittivity: PermittivityTensor
    density: float

    def __post_init__(self):
        if self.density <= 0.0:
            raise MaterialError("density must be positive")


@dataclass(frozen=True)
class CrystalOrientation:
    """Proper orthogonal matrix taking crystal-frame components to the device frame."""

    rotation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        if r.shape != (3, 3):
            raise MaterialError(f"rotation must be 3x3, got {r.shape}")
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-8:
            raise MaterialError("rotation must be orthogonal (residual > 1e-8)")
        if np.linalg.det(r) < 0.0:
            raise MaterialError("rotation must be proper (det = +1)")
        object.__setattr__(self, "rotation", r)


def gaas_constants() -> MaterialSet:
    """GaAs constants in the cubic crystal frame."""
    voigt = np.zeros((6, 6))
    voigt[:3, :3] = C12
    np.fill_diagonal(voigt[:3, :3], C11)
    voigt[3, 3] = voigt[4, 4] = voigt[5, 5] = C44

    piezo = np.zeros((3, 6))
    piezo[0, 3] = piezo[1, 4] = piezo[2, 5] = E14

    return MaterialSet(
        elastic=ElasticTensor(voigt),
        piezo=PiezoTensor(piezo),
        permittivity=PermittivityTensor(EPS_R * EPS0 * np.eye(3)),
        density=DENSITY,
    )


def device_frame_orientation() -> CrystalOrientation:
    """Device frame with x || [011], z || [100], y = [0,-1,1]/sqrt(2).

    Rows are the device basis vectors in crystal coordinates; the y direction
    is fixed by right-handedness (x cross y = z).
    """
    s = 1.0 / np.sqrt(2.0)
    return CrystalOrientation(np.array([[0.0, s, s], [0.0, -s, s], [1.0, 0.0, 0.0]]))


def identity_orientation() -> CrystalOrientation:
    return CrystalOrientation(np.eye(3))


def bond_stress_matrix(a: np.ndarray) -> np.ndarray:
    """6x6 Bond matrix M for a 3x3 rotation a, acting on stress-type Voigt vectors.

    Satisfies sigma' = M sigma, C' = M C M^T, and (strain transforms with
    N = M^-T) e' = a e M^T.
    """
    M = np.zeros((6, 6))
    M[:3, :3] = a**2
    shear = VOIGT_PAIRS[3:]
    for I in range(3):
        for J, (k, l) in enumerate(shear):
            M[I, 3 + J] = 2.0 * a[I, k] * a[I, l]
    for I, (i, j) in enumerate(shear):
        for k in range(3):
            M[3 + I, k] = a[i, k] * a[j, k]
        for J, (k, l) in enumerate(shear):
            M[3 + I, 3 + J] = a[i, k] * a[j, l] + a[i, l] * a[j, k]
    return M


def bond_rotate(m: MaterialSet, r: CrystalOrientation) -> MaterialSet:
    """Rotate a material set into the frame defined by r (crystal -> device)."""
    a = r.rotation
    if np.abs(a @ a.T - np.eye(3)).max() > 1e-8:
        raise MaterialError("rotation must be orthogonal (residual > 1e-8)")
    M = bond_stress_matrix(a)
    return MaterialSet(
        elastic=ElasticTensor(M @ m.elastic.voigt @ M.T),
        piezo=PiezoTensor(a @ m.piezo.matrix @ M.T),
        permittivity=PermittivityTensor(a @ m.permittivity.matrix @ a.T),
        density=m.density,
    )


def christoffel_velocities(
    m: MaterialSet, direction: np.ndarray, stiffened: bool = False
) -> np.ndarray:
    """Phase velocities (m/s, descending) for plane waves along a unit direction.

    Solves the eigenproblem of Gamma_il = c_ijkl n_j n_k, optionally adding the
    piezoelectric stiffening term (g g^T)/(n.eps.n) with g_i = e_ijk n_j n_k.
    """
    n = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise MaterialError("direction must be a unit vector (|n| - 1 > 1e-9)")
    c = m.elastic.full()
    gamma = np.einsum("ijkl,j,k->il", c, n, n)
    if stiffened:
        e = m.piezo.full()
        g = np.einsum("ijk,j,k->i", e, n, n)
        gamma = gamma + np.outer(g, g) / (n @ m.permittivity.matrix @ n)
    lam = np.linalg.eigvalsh(gamma)
    if lam.min() <= 0.0:
        raise MaterialError("Christoffel matrix is not positive definite")
    return np.sqrt(lam[::-1] / m.density)


def scan_directions() -> np.ndarray:
    """Axis directions plus face and body diagonals (13 unit vectors)."""
    dirs = [np.eye(3)[i] for i in range(3)]
    for i in range(3):
        for j in range(i + 1, 3):
            for sj in (1.0, -1.0):
                v = np.zeros(3)
                v[i], v[j] = 1.0, sj
                dirs.append(v / np.sqrt(2.0))
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            dirs.append(np.array([sx, sy, 1.0]) / np.sqrt(3.0))
    return np.array(dirs)


def max_velocity(m: MaterialSet, stiffened: bool = True) -> float:
    """Fastest phase velocity over the standard direction scan."""
    return max(christoffel_velocities(m, d, stiffened)[0] for d in scan_directions())
