# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fixed-step RK4 loop for the closed-loop grid + controller ODE.

Must stay arithmetically identical to ``_rk4_py.integrate``; the test-suite
compares both backends bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport isfinite, fabs

cnp.import_array()


cdef inline void _rhs(Py_ssize_t n, Py_ssize_t m, int kind,
                      const Py_ssize_t[:] ei, const Py_ssize_t[:] ej, const double[:] g,
                      const double[:] elast, const double[:] kp, const double[:] ki,
                      const double[:] vnom, const double[:] vlo, const double[:] vhi,
                      const double[:] iinj, double* v, double* z,
                      double* dv, double* dz) noexcept nogil:
    cdef Py_ssize_t i, e, a, b
    cdef double u, flow, up, lo
    for i in range(n):
        u = -kp[i] * (v[i] - vnom[i])
        if kind != 0:
            u = u - ki[i] * z[i]
        dv[i] = iinj[i] + u
    for e in range(m):
        a = ei[e]
        b = ej[e]
        flow = g[e] * (v[a] - v[b])
        dv[a] = dv[a] - flow
        dv[b] = dv[b] + flow
    for i in range(n):
        dv[i] = dv[i] * elast[i]
        if kind == 0:
            dz[i] = 0.0
        elif kind == 1:
            dz[i] = v[i] - vnom[i]
        else:
            up = v[i] - vhi[i]
            if not up > 0.0:
                up = 0.0
            lo = vlo[i] - v[i]
            if not lo > 0.0:
                lo = 0.0
            dz[i] = up - lo


def integrate(const Py_ssize_t[:] ei, const Py_ssize_t[:] ej, const double[:] g,
              const double[:] elast, int kind,
              const double[:] kp, const double[:] ki, const double[:] vnom,
              const double[:] vlo, const double[:] vhi, const double[:] iinj,
              double[:] v, double[:] z, double h, Py_ssize_t n_steps,
              Py_ssize_t stride, double tol, double[:, :] rec_v, double[:, :] rec_z):
    """Advance (v, z) in place by up to ``n_steps`` RK4 steps.

    Returns ``(steps_done, n_recorded, status)`` with status 0 = all steps
    taken, 1 = steady state detected before step ``steps_done``, 2 = the
    step starting at ``steps_done`` produced a non-finite value (state left
    at the start of that step).
    """
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t m = ei.shape[0]
    cdef Py_ssize_t k, i, n_rec = 0
    cdef int status = 0
    cdef double hh = 0.5 * h
    cdef double h6 = h / 6.0
    cdef double mx
    cdef bint ok

    work = np.empty((12, n), dtype=np.float64)
    cdef double[:, ::1] w = work
    cdef double* k1v = &w[0, 0]
    cdef double* k1z = &w[1, 0]
    cdef double* k2v = &w[2, 0]
    cdef double* k2z = &w[3, 0]
    cdef double* k3v = &w[4, 0]
    cdef double* k3z = &w[5, 0]
    cdef double* k4v = &w[6, 0]
    cdef double* k4z = &w[7, 0]
    cdef double* sv = &w[8, 0]
    cdef double* sz = &w[9, 0]
    cdef double* nv = &w[10, 0]
    cdef double* nz = &w[11, 0]

    state = np.empty((2, n), dtype=np.float64)
    cdef double[:, ::1] st = state
    cdef double* x = &st[0, 0]
    cdef double* y = &st[1, 0]
    for i in range(n):
        x[i] = v[i]
        y[i] = z[i]

    with nogil:
        k = 0
        while k < n_steps:
            if k % stride == 0:
                for i in range(n):
                    rec_v[n_rec, i] = x[i]
                    rec_z[n_rec, i] = y[i]
                n_rec += 1

            _rhs(n, m, kind, ei, ej, g, elast, kp, ki, vnom, vlo, vhi, iinj, x, y, k1v, k1z)
            if tol > 0.0:
                mx = 0.0
                for i in range(n):
                    if fabs(k1v[i]) > mx:
                        mx = fabs(k1v[i])
                    if fabs(k1z[i]) > mx:
                        mx = fabs(k1z[i])
                if mx < tol:
                    status = 1
                    break

            for i in range(n):
                sv[i] = x[i] + hh * k1v[i]
                sz[i] = y[i] + hh * k1z[i]
            _rhs(n, m, kind, ei, ej, g, elast, kp, ki, vnom, vlo, vhi, iinj, sv, sz, k2v, k2z)
            for i in range(n):
                sv[i] = x[i] + hh * k2v[i]
                sz[i] = y[i] + hh * k2z[i]
            _rhs(n, m, kind, ei, ej, g, elast, kp, ki, vnom, vlo, vhi, iinj, sv, sz, k3v, k3z)
            for i in range(n):
                sv[i] = x[i] + h * k3v[i]
                sz[i] = y[i] + h * k3z[i]
            _rhs(n, m, kind, ei, ej, g, elast, kp, ki, vnom, vlo, vhi, iinj, sv, sz, k4v, k4z)

            ok = True
            for i in range(n):
                nv[i] = x[i] + h6 * (((k1v[i] + 2.0 * k2v[i]) + 2.0 * k3v[i]) + k4v[i])
                nz[i] = y[i] + h6 * (((k1z[i] + 2.0 * k2z[i]) + 2.0 * k3z[i]) + k4z[i])
                if not (isfinite(nv[i]) and isfinite(nz[i])):
                    ok = False
            if not ok:
                status = 2
                break
            for i in range(n):
                x[i] = nv[i]
                y[i] = nz[i]
            k += 1

    for i in range(n):
        v[i] = x[i]
        z[i] = y[i]
    return k, n_rec, status
