"""Kernel backend selection: numba-jitted hot loops with a pure-numpy fallback.

The environment variable ``ACOUSTOPULSE_NUMBA`` controls the choice at import
time: set it to ``0`` (or ``off``/``false``) to force the numpy path even when
numba is installed.  Anything else (or unset) uses numba when importable.
Both paths compute identical quantities; they differ only in speed and in
floating-point summation order (differences at the 1e-15 level).

Hot kernels live here so the rest of the package stays backend-agnostic:
CSR matrix-vector products, CSR value scatter during assembly, and the
two-level-system RK4 inner loop.
"""

import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag instead
    numba = None
    HAS_NUMBA = False

_FLAG = os.environ.get("ACOUSTOPULSE_NUMBA", "1").strip().lower()
USE_NUMBA = HAS_NUMBA and _FLAG not in ("0", "off", "false", "no")


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# CSR matrix-vector product
# --------------------------------------------------------------------------

def _csr_matvec_numpy(indptr, indices, data, x):
    prod = data * x[indices]
    out = np.zeros(indptr.shape[0] - 1)
    starts = indptr[:-1]
    nonempty = indptr[1:] > starts
    if prod.size:
        # reduceat mishandles empty segments; summing only nonempty rows is exact
        out[nonempty] = np.add.reduceat(prod, starts[nonempty])
    return out


if HAS_NUMBA:

    # serial on purpose: matvecs here run interleaved with numpy vector ops,
    # where parallel-region wake-up latency costs far more than it saves
    @numba.njit(cache=True)
    def _csr_matvec_numba(indptr, indices, data, x):
        n = indptr.shape[0] - 1
        out = np.empty(n)
        for i in range(n):
            s = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                s += data[k] * x[indices[k]]
            out[i] = s
        return out


def csr_matvec(indptr, indices, data, x):
    if USE_NUMBA:
        return _csr_matvec_numba(indptr, indices, data, x)
    return _csr_matvec_numpy(indptr, indices, data, x)


# --------------------------------------------------------------------------
# CSR value fill during assembly
#
# The sparsity pattern is built ahead of time (all elements share one local
# matrix, so the pattern is the grid stencil).  Filling scatters the local
# matrix once per element; positions are found by binary search within each
# row, exploiting the sorted column invariant.  The numpy fallback lives in
# assembly (it needs the pattern-wide key arrays anyway).
# --------------------------------------------------------------------------

if HAS_NUMBA:

    @numba.njit(cache=True)
    def _fill_csr_elements(
        indptr, indices, data, conn, vals, row_node, row_comp, col_node, col_comp,
        row_rep, col_rep,
    ):
        ne = conn.shape[0]
        nent = vals.shape[0]
        for e in range(ne):
            for t in range(nent):
                r = row_rep * conn[e, row_node[t]] + row_comp[t]
                c = col_rep * conn[e, col_node[t]] + col_comp[t]
                lo = indptr[r]
                hi = indptr[r + 1]
                while lo < hi:
                    mid = (lo + hi) // 2
                    if indices[mid] < c:
                        lo = mid + 1
                    else:
                        hi = mid
                data[lo] += vals[t]


# --------------------------------------------------------------------------
# Fused preconditioned-CG kernel
#
# One compiled loop avoids per-iteration numpy call overhead.  Status codes:
# 0 converged, 1 iteration limit, 2 breakdown (not SPD), 3 non-finite.
# --------------------------------------------------------------------------

if HAS_NUMBA:

    @numba.njit(cache=True)
    def _cg_numba(indptr, indices, data, b, x, inv_d, tol_abs, max_iter):
        n = b.shape[0]
        r = np.empty(n)
        z = np.empty(n)
        p = np.empty(n)
        ap = np.empty(n)
        for i in range(n):
            s = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                s += data[k] * x[indices[k]]
            r[i] = b[i] - s
        rz = 0.0
        res2 = 0.0
        for i in range(n):
            z[i] = r[i] * inv_d[i]
            p[i] = z[i]
            rz += r[i] * z[i]
            res2 += r[i] * r[i]
        it = 0
        while True:
            if not np.isfinite(res2):
                return it, res2, 3
            if res2 <= tol_abs * tol_abs:
                return it, np.sqrt(res2), 0
            if it >= max_iter:
                return it, np.sqrt(res2), 1
            pap = 0.0
            for i in range(n):
                s = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    s += data[k] * p[indices[k]]
                ap[i] = s
                pap += p[i] * s
            if pap <= 0.0:
                return it, pap, 2
            alpha = rz / pap
            rz_new = 0.0
            res2 = 0.0
            for i in range(n):
                x[i] += alpha * p[i]
                r[i] -= alpha * ap[i]
                z[i] = r[i] * inv_d[i]
                rz_new += r[i] * z[i]
                res2 += r[i] * r[i]
            beta = rz_new / rz
            rz = rz_new
            for i in range(n):
                p[i] = z[i] + beta * p[i]
            it += 1


# --------------------------------------------------------------------------
# Two-level-system RK4 sweep kernel
#
# d/dt psi = -i/2 (eps(t) sz + delta sx) psi with eps linearly interpolated
# on a uniform time grid.  Returns psi at t0 + nsteps*dt.
# --------------------------------------------------------------------------

def _tls_rk4_numpy(psi0, eps, t_start, dt_trace, delta, dt, nsteps):
    psi = psi0.astype(np.complex128).copy()
    n_eps = eps.shape[0]

    def eps_at(t):
        s = (t - t_start) / dt_trace
        i = int(np.floor(s))
        if i < 0:
            return eps[0]
        if i >= n_eps - 1:
            return eps[n_eps - 1]
        w = s - i
        return (1.0 - w) * eps[i] + w * eps[i + 1]

    def deriv(t, p):
        e = eps_at(t)
        # -i/2 * (e*sz + delta*sx) @ p
        return np.array(
            [
                -0.5j * (e * p[0] + delta * p[1]),
                -0.5j * (delta * p[0] - e * p[1]),
            ],
            dtype=np.complex128,
        )

    t = 0.0
    for _ in range(nsteps):
        k1 = deriv(t, psi)
        k2 = deriv(t + 0.5 * dt, psi + 0.5 * dt * k1)
        k3 = deriv(t + 0.5 * dt, psi + 0.5 * dt * k2)
        k4 = deriv(t + dt, psi + dt * k3)
        psi = psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += dt
    return psi


if HAS_NUMBA:

    @numba.njit(cache=True)
    def _tls_rk4_numba(psi0, eps, t_start, dt_trace, delta, dt, nsteps):
        psi = psi0.astype(np.complex128).copy()
        n_eps = eps.shape[0]
        out = np.empty(2, dtype=np.complex128)
        k1 = np.empty(2, dtype=np.complex128)
        k2 = np.empty(2, dtype=np.complex128)
        k3 = np.empty(2, dtype=np.complex128)
        k4 = np.empty(2, dtype=np.complex128)
        tmp = np.empty(2, dtype=np.complex128)

        t = 0.0
        for _ in range(nsteps):
            for stage in range(4):
                if stage == 0:
                    ts = t
                    tmp[0] = psi[0]
                    tmp[1] = psi[1]
                elif stage == 1:
                    ts = t + 0.5 * dt
                    tmp[0] = psi[0] + 0.5 * dt * k1[0]
                    tmp[1] = psi[1] + 0.5 * dt * k1[1]
                elif stage == 2:
                    ts = t + 0.5 * dt
                    tmp[0] = psi[0] + 0.5 * dt * k2[0]
                    tmp[1] = psi[1] + 0.5 * dt * k2[1]
                else:
                    ts = t + dt
                    tmp[0] = psi[0] + dt * k3[0]
                    tmp[1] = psi[1] + dt * k3[1]

                s = (ts - t_start) / dt_trace
                i = int(np.floor(s))
                if i < 0:
                    e = eps[0]
                elif i >= n_eps - 1:
                    e = eps[n_eps - 1]
                else:
                    w = s - i
                    e = (1.0 - w) * eps[i] + w * eps[i + 1]

                d0 = -0.5j * (e * tmp[0] + delta * tmp[1])
                d1 = -0.5j * (delta * tmp[0] - e * tmp[1])
                if stage == 0:
                    k1[0], k1[1] = d0, d1
                elif stage == 1:
                    k2[0], k2[1] = d0, d1
                elif stage == 2:
                    k3[0], k3[1] = d0, d1
                else:
                    k4[0], k4[1] = d0, d1

            out[0] = psi[0] + (dt / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            out[1] = psi[1] + (dt / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            psi[0] = out[0]
            psi[1] = out[1]
            t += dt
        return psi


def tls_rk4(psi0, eps, t_start, dt_trace, delta, dt, nsteps):
    if USE_NUMBA:
        return _tls_rk4_numba(
            np.ascontiguousarray(psi0, dtype=np.complex128),
            np.ascontiguousarray(eps, dtype=np.float64),
            float(t_start),
            float(dt_trace),
            float(delta),
            float(dt),
            int(nsteps),
        )
    return _tls_rk4_numpy(psi0, eps, t_start, dt_trace, delta, dt, nsteps)
