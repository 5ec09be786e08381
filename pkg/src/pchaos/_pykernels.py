"""Pure-Python event loops, mirroring ``_ckernels.pyx`` operation by operation.

Used when the compiled extension is missing or ``PCHAOS_PURE=1``.
"""
import math

PI = 3.141592653589793
TWO_PI = 6.283185307179586


def kac_events(v, ii, jj, c, s):
    vl = v.tolist()
    for i, j, ce, se in zip(ii.tolist(), jj.tolist(), c.tolist(), s.tolist()):
        vi = vl[i]
        vj = vl[j]
        vl[i] = vi * ce - vj * se
        vl[j] = vi * se + vj * ce
    v[:] = vl


def averaging_events(x, ii, jj, x1, x2):
    xl = x.tolist()
    for i, j, a, b in zip(ii.tolist(), jj.tolist(), x1.tolist(), x2.tolist()):
        m = (xl[i] + xl[j]) * 0.5
        xl[i] = m + a
        xl[j] = m + b
    x[:] = xl


def _rep(d):
    return d - TWO_PI * math.ceil((d - PI) / TWO_PI)


def _wrap(a):
    return a - TWO_PI * math.floor((a + PI) / TWO_PI)


def circle_events(th, ii, jj, n1, n2):
    tl = th.tolist()
    for i, j, a1, a2 in zip(ii.tolist(), jj.tolist(), n1.tolist(), n2.tolist()):
        a = tl[i]
        mid = a + _rep(tl[j] - a) * 0.5
        tl[i] = _wrap(mid + a1)
        tl[j] = _wrap(mid + a2)
    th[:] = tl


def _gamma(code, p, r):
    if code == 0:
        return p[0]
    if code == 1:
        g = p[0] * r
        return p[1] if g > p[1] else g
    if code == 2:
        return p[0] * r / (p[1] + r)
    return -1.0


def boltzmann_events(v, ii, jj, u, sig, code, gparams, gmax, cos_min, accepted):
    vl = v.tolist()
    p = [float(x) for x in gparams]
    sl = sig.tolist()
    ul = u.tolist()
    status = -1
    for e, (i, j) in enumerate(zip(ii.tolist(), jj.tolist())):
        a = vl[i]
        b = vl[j]
        dx = a[0] - b[0]
        dy = a[1] - b[1]
        dz = a[2] - b[2]
        r = math.sqrt(dx * dx + dy * dy + dz * dz)
        g = _gamma(code, p, r)
        if g > gmax:
            status = e
            break
        if not (ul[e] * gmax < g):
            accepted[e] = 0
            continue
        accepted[e] = 1
        sx, sy, sz = sl[e]
        if cos_min > -1.0 and r > 0.0:
            ux = dx / r
            uy = dy / r
            uz = dz / r
            cth = sx * ux + sy * uy + sz * uz
            px = sx - cth * ux
            py = sy - cth * uy
            pz = sz - cth * uz
            pn = math.sqrt(px * px + py * py + pz * pz)
            cnew = cos_min + (1.0 - cos_min) * (cth + 1.0) * 0.5
            snew = math.sqrt(1.0 - cnew * cnew)
            if pn > 0.0:
                sx = cnew * ux + snew * px / pn
                sy = cnew * uy + snew * py / pn
                sz = cnew * uz + snew * pz / pn
            else:
                sx = cnew * ux
                sy = cnew * uy
                sz = cnew * uz
        mx = (a[0] + b[0]) * 0.5
        my = (a[1] + b[1]) * 0.5
        mz = (a[2] + b[2]) * 0.5
        h = r * 0.5
        vl[i] = [mx + sx * h, my + sy * h, mz + sz * h]
        vl[j] = [mx - sx * h, my - sy * h, mz - sz * h]
    v[:] = vl
    return status
