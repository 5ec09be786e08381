# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled event loops.

Every routine consumes pre-drawn random arrays and mutates the state in
place, so results are bit-identical to the pure-Python loops in
``_pykernels``. Keep the arithmetic order in both files the same.
"""
from libc.math cimport sqrt, floor, ceil

cdef double PI = 3.141592653589793
cdef double TWO_PI = 6.283185307179586


def kac_events(double[::1] v, const long long[::1] ii, const long long[::1] jj,
               const double[::1] c, const double[::1] s):
    cdef Py_ssize_t n = ii.shape[0]
    cdef Py_ssize_t e
    cdef long long i, j
    cdef double vi, vj
    for e in range(n):
        i = ii[e]
        j = jj[e]
        vi = v[i]
        vj = v[j]
        v[i] = vi * c[e] - vj * s[e]
        v[j] = vi * s[e] + vj * c[e]


def averaging_events(double[::1] x, const long long[::1] ii, const long long[::1] jj,
                     const double[::1] x1, const double[::1] x2):
    cdef Py_ssize_t n = ii.shape[0]
    cdef Py_ssize_t e
    cdef double m
    for e in range(n):
        m = (x[ii[e]] + x[jj[e]]) * 0.5
        x[ii[e]] = m + x1[e]
        x[jj[e]] = m + x2[e]


cdef inline double _rep(double d):
    # representative in (-pi, pi]
    return d - TWO_PI * ceil((d - PI) / TWO_PI)


cdef inline double _wrap(double a):
    # representative in [-pi, pi)
    return a - TWO_PI * floor((a + PI) / TWO_PI)


def circle_events(double[::1] th, const long long[::1] ii, const long long[::1] jj,
                  const double[::1] n1, const double[::1] n2):
    cdef Py_ssize_t n = ii.shape[0]
    cdef Py_ssize_t e
    cdef double a, mid
    for e in range(n):
        a = th[ii[e]]
        mid = a + _rep(th[jj[e]] - a) * 0.5
        th[ii[e]] = _wrap(mid + n1[e])
        th[jj[e]] = _wrap(mid + n2[e])


cdef inline double _gamma(int code, const double[::1] p, double r):
    cdef double g
    if code == 0:
        return p[0]
    elif code == 1:
        g = p[0] * r
        if g > p[1]:
            g = p[1]
        return g
    elif code == 2:
        return p[0] * r / (p[1] + r)
    return -1.0


def boltzmann_events(double[:, ::1] v, const long long[::1] ii, const long long[::1] jj,
                     const double[::1] u, const double[:, ::1] sig,
                     int code, const double[::1] gparams, double gmax, double cos_min,
                     signed char[::1] accepted):
    """Thinned collision loop. Returns index of a kernel-bound violation or -1."""
    cdef Py_ssize_t n = ii.shape[0]
    cdef Py_ssize_t e
    cdef long long i, j
    cdef double dx, dy, dz, r, g, mx, my, mz, sx, sy, sz
    cdef double ux, uy, uz, cth, px, py, pz, pn, cnew, snew, h
    for e in range(n):
        i = ii[e]
        j = jj[e]
        dx = v[i, 0] - v[j, 0]
        dy = v[i, 1] - v[j, 1]
        dz = v[i, 2] - v[j, 2]
        r = sqrt(dx * dx + dy * dy + dz * dz)
        g = _gamma(code, gparams, r)
        if g > gmax:
            return e
        if not (u[e] * gmax < g):
            accepted[e] = 0
            continue
        accepted[e] = 1
        sx = sig[e, 0]
        sy = sig[e, 1]
        sz = sig[e, 2]
        if cos_min > -1.0 and r > 0.0:
            ux = dx / r
            uy = dy / r
            uz = dz / r
            cth = sx * ux + sy * uy + sz * uz
            px = sx - cth * ux
            py = sy - cth * uy
            pz = sz - cth * uz
            pn = sqrt(px * px + py * py + pz * pz)
            cnew = cos_min + (1.0 - cos_min) * (cth + 1.0) * 0.5
            snew = sqrt(1.0 - cnew * cnew)
            if pn > 0.0:
                sx = cnew * ux + snew * px / pn
                sy = cnew * uy + snew * py / pn
                sz = cnew * uz + snew * pz / pn
            else:
                sx = cnew * ux
                sy = cnew * uy
                sz = cnew * uz
        mx = (v[i, 0] + v[j, 0]) * 0.5
        my = (v[i, 1] + v[j, 1]) * 0.5
        mz = (v[i, 2] + v[j, 2]) * 0.5
        h = r * 0.5
        v[i, 0] = mx + sx * h
        v[i, 1] = my + sy * h
        v[i, 2] = mz + sz * h
        v[j, 0] = mx - sx * h
        v[j, 1] = my - sy * h
        v[j, 2] = mz - sz * h
    return -1
