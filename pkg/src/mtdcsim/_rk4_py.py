"""Pure-Python RK4 loop, used when the compiled ``_rk4`` extension is absent.

Same contract and the same floating-point operation order as ``_rk4.pyx``.
Scalar Python floats are IEEE doubles, so both backends agree bit for bit.
"""

import math


def _rhs(n, edges, kind, elast, kp, ki, vnom, vlo, vhi, iinj, v, z):
    dv = [0.0] * n
    dz = [0.0] * n
    for i in range(n):
        u = -kp[i] * (v[i] - vnom[i])
        if kind != 0:
            u = u - ki[i] * z[i]
        dv[i] = iinj[i] + u
    for a, b, g in edges:
        flow = g * (v[a] - v[b])
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
    return dv, dz


def integrate(ei, ej, g, elast, kind, kp, ki, vnom, vlo, vhi, iinj,
              v, z, h, n_steps, stride, tol, rec_v, rec_z):
    """See ``mtdcsim._rk4.integrate``."""
    n = len(v)
    edges = list(zip((int(a) for a in ei), (int(b) for b in ej), (float(c) for c in g)))
    params = [list(map(float, p)) for p in (elast, kp, ki, vnom, vlo, vhi, iinj)]
    elast, kp, ki, vnom, vlo, vhi, iinj = params
    x = [float(a) for a in v]
    y = [float(a) for a in z]
    hh = 0.5 * h
    h6 = h / 6.0
    isfinite = math.isfinite
    rng = range(n)

    def f(a, b):
        return _rhs(n, edges, kind, elast, kp, ki, vnom, vlo, vhi, iinj, a, b)

    n_rec = 0
    status = 0
    k = 0
    while k < n_steps:
        if k % stride == 0:
            rec_v[n_rec, :] = x
            rec_z[n_rec, :] = y
            n_rec += 1

        k1v, k1z = f(x, y)
        if tol > 0.0:
            mx = 0.0
            for i in rng:
                if abs(k1v[i]) > mx:
                    mx = abs(k1v[i])
                if abs(k1z[i]) > mx:
                    mx = abs(k1z[i])
            if mx < tol:
                status = 1
                break

        k2v, k2z = f([x[i] + hh * k1v[i] for i in rng], [y[i] + hh * k1z[i] for i in rng])
        k3v, k3z = f([x[i] + hh * k2v[i] for i in rng], [y[i] + hh * k2z[i] for i in rng])
        k4v, k4z = f([x[i] + h * k3v[i] for i in rng], [y[i] + h * k3z[i] for i in rng])
        nv = [x[i] + h6 * (((k1v[i] + 2.0 * k2v[i]) + 2.0 * k3v[i]) + k4v[i]) for i in rng]
        nz = [y[i] + h6 * (((k1z[i] + 2.0 * k2z[i]) + 2.0 * k3z[i]) + k4z[i]) for i in rng]
        if not all(isfinite(a) for a in nv) or not all(isfinite(a) for a in nz):
            status = 2
            break
        x, y = nv, nz
        k += 1

    v[:] = x
    z[:] = y
    return k, n_rec, status
