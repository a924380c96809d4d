"""Compare the numba kernels against the pure-numpy fallback.

Runs the three hot paths (CSR matvec, CSR assembly fill, two-level RK4) on a
representative problem with both backends in one process and prints a timing
table.  Usage: python benchmarks/bench_backends.py [--divisions 80,2,40]
"""

import argparse
import time

import numpy as np

from acoustopulse import backend
from acoustopulse import assembly
from acoustopulse.materials import bond_rotate, device_frame_orientation, gaas_constants
from acoustopulse.mesh import build_box_mesh, build_dof_map


def timeit(fn, repeat=5):
    fn()  # warm-up (JIT compile, caches)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--divisions", default="80,2,40")
    args = parser.parse_args()
    divisions = tuple(int(v) for v in args.divisions.split(","))

    mat = bond_rotate(gaas_constants(), device_frame_orientation())
    mesh = build_box_mesh((divisions[0] * 50e-9, divisions[1] * 50e-9,
                           divisions[2] * 50e-9), divisions)
    dofs = build_dof_map(mesh)
    print(f"mesh {divisions}: {mesh.node_count} nodes, {mesh.element_count} elements")
    print(f"numba available: {backend.HAS_NUMBA}; active backend: {backend.backend_name()}")

    rows = []

    def with_backend(use_numba, fn):
        saved = backend.USE_NUMBA
        backend.USE_NUMBA = use_numba and backend.HAS_NUMBA
        try:
            return fn()
        finally:
            backend.USE_NUMBA = saved

    # assembly fill
    for use in (False, True):
        if use and not backend.HAS_NUMBA:
            continue
        t = with_backend(use, lambda: timeit(lambda: assembly.assemble(mesh, dofs, mat), 3))
        rows.append((f"assemble ({'numba' if use else 'numpy'})", t))

    system = assembly.assemble(mesh, dofs, mat)
    x = np.random.default_rng(0).normal(size=system.k_uu.shape[1])

    for use in (False, True):
        if use and not backend.HAS_NUMBA:
            continue
        t = with_backend(use, lambda: timeit(lambda: system.k_uu.matvec(x)))
        rows.append((f"K_uu matvec, nnz={system.k_uu.nnz} ({'numba' if use else 'numpy'})", t))

    eps = np.random.default_rng(1).normal(size=4096) * 1e10
    psi0 = np.array([1.0, 0.0], dtype=np.complex128)
    for use in (False, True):
        if use and not backend.HAS_NUMBA:
            continue
        t = with_backend(
            use, lambda: timeit(lambda: backend.tls_rk4(psi0, eps, 0.0, 1e-12, 1e10, 5e-13, 8000))
        )
        rows.append((f"two-level RK4, 8000 steps ({'numba' if use else 'numpy'})", t))

    width = max(len(r[0]) for r in rows)
    print()
    for name, t in rows:
        print(f"{name:<{width}}  {t * 1e3:10.2f} ms")
    pairs = {}
    for name, t in rows:
        key = name.rsplit(" (", 1)[0]
        pairs.setdefault(key, {})[name.rsplit("(", 1)[1].rstrip(")")] = t
    print()
    for key, d in pairs.items():
        if "numba" in d and "numpy" in d:
            print(f"{key}: numpy/numba = {d['numpy'] / d['numba']:.1f}x")


if __name__ == "__main__":
    main()
