# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: bivariate normal cdf and Kendall concordance counts.

Signatures mirror :mod:`hiercop._pykernels`; :mod:`hiercop.kernels` picks one at import.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport asin, erfc, exp, fabs, sin, sqrt, INFINITY, M_PI

cnp.import_array()

cdef double[3] _X6 = [0.9324695142031522, 0.6612093864662647, 0.2386191860831970]
cdef double[3] _W6 = [0.1713244923791705, 0.3607615730481384, 0.4679139345726904]
cdef double[6] _X12 = [0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                       0.5873179542866171, 0.3678314989981802, 0.1252334085114692]
cdef double[6] _W12 = [0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                       0.2031674267230659, 0.2334925365383547, 0.2491470458134029]
cdef double[10] _X20 = [0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                        0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                        0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                        0.07652652113349733]
cdef double[10] _W20 = [0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                        0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                        0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
                        0.1527533871307259]


cdef inline double _phi(double x) nogil:
    return 0.5 * erfc(-x / 1.4142135623730951)


cdef double _bvnu(double dh, double dk, double r, double* xg, double* wg, int ng,
                  double* sn_, double* isn) nogil:
    # P(X > dh, Y > dk) for a standard bivariate normal with correlation r
    cdef double tp = 2.0 * M_PI
    cdef double h, k, hk, bvn, hs, asr, sn, as_, a, bs, c, d, b, sp, xs, rs, ep, L, xi
    cdef int i, s
    if dh == INFINITY or dk == INFINITY:
        return 0.0
    if dh == -INFINITY:
        if dk == -INFINITY:
            return 1.0
        return _phi(-dk)
    if dk == -INFINITY:
        return _phi(-dh)
    if r == 0.0:
        return _phi(-dh) * _phi(-dk)
    h = dh
    k = dk
    hk = h * k
    bvn = 0.0
    if fabs(r) < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = asin(r) / 2.0
        for i in range(2 * ng):
            bvn += wg[i % ng] * exp((sn_[i] * hk - hs) * isn[i])
        bvn = bvn * asr / tp + _phi(-h) * _phi(-k)
    else:
        if r < 0.0:
            k = -k
            hk = -hk
        if fabs(r) < 1.0:
            as_ = (1.0 - r) * (1.0 + r)
            a = sqrt(as_)
            bs = (h - k) * (h - k)
            asr = -(bs / as_ + hk) / 2.0
            c = (4.0 - hk) / 8.0
            d = (12.0 - hk) / 80.0
            if asr > -100.0:
                bvn = a * exp(asr) * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_)
            if hk > -100.0:
                b = sqrt(bs)
                sp = sqrt(tp) * _phi(-b / a)
                bvn = bvn - exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0)
            a = a / 2.0
            L = 0.0
            for i in range(ng):
                for s in range(2):
                    xi = 1.0 - xg[i] if s == 0 else 1.0 + xg[i]
                    xs = (a * xi) * (a * xi)
                    asr = -(bs / xs + hk) / 2.0
                    if asr > -100.0:
                        sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs)
                        rs = sqrt(1.0 - xs)
                        ep = exp(-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))) / rs
                        L += wg[i] * exp(asr) * (sp - ep)
            bvn = (a * L - bvn) / tp
        if r > 0.0:
            bvn = bvn + _phi(-(h if h > k else k))
        elif h >= k:
            bvn = -bvn
        else:
            if h < 0.0:
                L = _phi(k) - _phi(h)
            else:
                L = _phi(-h) - _phi(-k)
            bvn = L - bvn
    if bvn < 0.0:
        return 0.0
    if bvn > 1.0:
        return 1.0
    return bvn


def bvn_cdf(h, k, double rho):
    """P(X <= h, Y <= k) for a standard bivariate normal with correlation ``rho``."""
    hb, kb = np.broadcast_arrays(np.asarray(h, dtype=np.float64), np.asarray(k, dtype=np.float64))
    shape = hb.shape
    cdef double[::1] hh = np.ascontiguousarray(hb).ravel()
    cdef double[::1] kk = np.ascontiguousarray(kb).ravel()
    cdef Py_ssize_t n = hh.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double* xg
    cdef double* wg
    cdef int ng, j
    cdef double[20] sn_
    cdef double[20] isn
    cdef double asr = asin(rho) / 2.0
    if fabs(rho) < 0.3:
        xg = _X6; wg = _W6; ng = 3
    elif fabs(rho) < 0.75:
        xg = _X12; wg = _W12; ng = 6
    else:
        xg = _X20; wg = _W20; ng = 10
    # sin nodes depend on rho only, so they are shared by every element
    for j in range(ng):
        sn_[j] = sin(asr * (1.0 - xg[j]))
        sn_[j + ng] = sin(asr * (1.0 + xg[j]))
    for j in range(2 * ng):
        isn[j] = 1.0 / (1.0 - sn_[j] * sn_[j])
    with nogil:
        for i in range(n):
            o[i] = _bvnu(-hh[i], -kk[i], rho, xg, wg, ng, sn_, isn)
    return out.reshape(shape)


def kendall_rowsums(x, y):
    """Row sums of sign(x_i - x_j) * sign(y_i - y_j) over j != i."""
    cdef double[::1] xx = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = xx.shape[0], i, j
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double xi, yi, dx, dy, p
    cdef long acc, bad
    with nogil:
        for i in range(n):
            xi = xx[i]
            yi = yy[i]
            acc = 0
            bad = 0
            # sign of the product is branch-free; redo the row if the product underflowed
            for j in range(n):
                dx = xi - xx[j]
                dy = yi - yy[j]
                p = dx * dy
                acc += (p > 0) - (p < 0)
                bad += (p == 0) & (dx != 0) & (dy != 0)
            if bad:
                acc = 0
                for j in range(n):
                    dx = xi - xx[j]
                    dy = yi - yy[j]
                    acc += ((dx > 0) - (dx < 0)) * ((dy > 0) - (dy < 0))
            o[i] = acc
    return out


def exch_pair_sums(values, starts, sizes):
    """Cluster-by-cluster matrix of summed concordance signs.

    Entry (i, k) is the sum over ordered within-cluster pairs (j, l) of cluster i and
    (r, s) of cluster k of sign(x_ij - x_kr) * sign(x_il - x_ks).
    """
    cdef double[::1] x = np.ascontiguousarray(values, dtype=np.float64)
    cdef long[::1] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef long[::1] sz = np.ascontiguousarray(sizes, dtype=np.int64)
    cdef Py_ssize_t m = sz.shape[0], i, k, j, r
    cdef long si, sk, ni, nk
    out = np.zeros((m, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    nmax = int(np.max(sizes)) if m else 0
    colbuf = np.zeros(max(nmax, 1), dtype=np.int64)
    cdef long[::1] col = colbuf
    cdef long tot, rowsq, colsq, nz, arow, s
    cdef double xij, d
    with nogil:
        for i in range(m):
            si = st[i]
            ni = sz[i]
            if ni < 2:
                continue
            for k in range(i + 1, m):
                sk = st[k]
                nk = sz[k]
                if nk < 2:
                    continue
                for r in range(nk):
                    col[r] = 0
                tot = 0
                rowsq = 0
                nz = 0
                for j in range(ni):
                    xij = x[si + j]
                    arow = 0
                    for r in range(nk):
                        d = xij - x[sk + r]
                        s = (d > 0) - (d < 0)
                        arow += s
                        col[r] += s
                        nz += s * s
                    tot += arow
                    rowsq += arow * arow
                colsq = 0
                for r in range(nk):
                    colsq += col[r] * col[r]
                o[i, k] = <double>(tot * tot - rowsq - colsq + nz)
                o[k, i] = o[i, k]
    return out
