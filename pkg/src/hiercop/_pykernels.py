"""Pure numpy versions of the compiled kernels in ``_core.pyx``."""
import numpy as np
from scipy.special import ndtr

_NODES = {}


def _half_nodes(ng):
    if ng not in _NODES:
        x, w = np.polynomial.legendre.leggauss(2 * ng)
        _NODES[ng] = (x[ng:][::-1].copy(), w[ng:][::-1].copy())
    return _NODES[ng]


def bvn_cdf(h, k, rho):
    """P(X <= h, Y <= k) for a standard bivariate normal with correlation ``rho``."""
    hb, kb = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float))
    shape = hb.shape
    # Genz's algorithm works with upper orthant probabilities P(X > dh, Y > dk)
    dh = -hb.ravel()
    dk = -kb.ravel()
    out = np.empty(dh.shape)
    r = float(rho)

    pinf_h, pinf_k = dh == np.inf, dk == np.inf
    ninf_h, ninf_k = dh == -np.inf, dk == -np.inf
    special = pinf_h | pinf_k | ninf_h | ninf_k
    out[special & (pinf_h | pinf_k)] = 0.0
    both = special & ninf_h & ninf_k
    out[both] = 1.0
    sel = special & ninf_h & ~ninf_k & ~pinf_k
    out[sel] = ndtr(-dk[sel])
    sel = special & ninf_k & ~ninf_h & ~pinf_h
    out[sel] = ndtr(-dh[sel])

    ok = ~special
    h = dh[ok]
    k = dk[ok]
    if r == 0.0:
        out[ok] = ndtr(-h) * ndtr(-k)
        return out.reshape(shape)

    ng = 3 if abs(r) < 0.3 else (6 if abs(r) < 0.75 else 10)
    xg, wg = _half_nodes(ng)
    xs_all = np.concatenate([1.0 - xg, 1.0 + xg])
    ws_all = np.concatenate([wg, wg])
    tp = 2.0 * np.pi
    hk = h * k

    if abs(r) < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = np.arcsin(r) / 2.0
        sn = np.sin(asr * xs_all)[:, None]
        bvn = np.sum(ws_all[:, None] * np.exp((sn * hk - hs) / (1.0 - sn * sn)), axis=0)
        bvn = bvn * asr / tp + ndtr(-h) * ndtr(-k)
    else:
        if r < 0.0:
            k = -k
            hk = -hk
        bvn = np.zeros_like(h)
        if abs(r) < 1.0:
            as_ = (1.0 - r) * (1.0 + r)
            a = np.sqrt(as_)
            bs = (h - k) ** 2
            asr = -(bs / as_ + hk) / 2.0
            c = (4.0 - hk) / 8.0
            d = (12.0 - hk) / 80.0
            with np.errstate(over="ignore", under="ignore"):
                t1 = a * np.exp(asr) * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_)
                bvn = np.where(asr > -100.0, t1, 0.0)
                b = np.sqrt(bs)
                sp = np.sqrt(tp) * ndtr(-b / a)
                t2 = np.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0)
                bvn = np.where(hk > -100.0, bvn - t2, bvn)
                a = a / 2.0
                xs = ((a * xs_all) ** 2)[:, None]
                asr2 = -(bs / xs + hk) / 2.0
                sp2 = 1.0 + c * xs * (1.0 + 5.0 * d * xs)
                rs = np.sqrt(1.0 - xs)
                ep = np.exp(-(hk / 2.0) * xs / (1.0 + rs) ** 2) / rs
                terms = np.where(asr2 > -100.0, np.exp(asr2) * (sp2 - ep), 0.0)
            L = np.sum(ws_all[:, None] * terms, axis=0)
            bvn = (a * L - bvn) / tp
        if r > 0.0:
            bvn = bvn + ndtr(-np.maximum(h, k))
        else:
            alt = np.where(h < 0.0, ndtr(k) - ndtr(h), ndtr(-h) - ndtr(-k))
            bvn = np.where(h >= k, -bvn, alt - bvn)
    out[ok] = np.clip(bvn, 0.0, 1.0)
    return out.reshape(shape)


def kendall_rowsums(x, y, chunk=2048):
    """Row sums of sign(x_i - x_j) * sign(y_i - y_j) over j != i."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    out = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        s = np.sign(x[lo:hi, None] - x[None, :]) * np.sign(y[lo:hi, None] - y[None, :])
        out[lo:hi] = s.sum(axis=1)
    return out


def exch_pair_sums(values, starts, sizes):
    """Cluster-by-cluster matrix of summed concordance signs (see ``_core.exch_pair_sums``)."""
    x = np.asarray(values, dtype=float)
    starts = np.asarray(starts, dtype=np.int64)
    sizes = np.asarray(sizes, dtype=np.int64)
    m = sizes.size
    out = np.zeros((m, m))
    for i in range(m):
        if sizes[i] < 2:
            continue
        xi = x[starts[i] : starts[i] + sizes[i]]
        # one block row at a time keeps memory at n_i * N
        sgn = np.sign(xi[:, None] - x[None, :])
        rows = np.add.reduceat(sgn, starts, axis=1)
        cols = sgn.sum(axis=0)
        tot = rows.sum(axis=0)
        rowsq = (rows**2).sum(axis=0)
        colsq = np.add.reduceat(cols**2, starts)
        sqsum = np.add.reduceat((sgn**2).sum(axis=0), starts)
        out[i] = tot**2 - rowsq - colsq + sqsum
    small = sizes < 2
    out[:, small] = 0.0
    np.fill_diagonal(out, 0.0)
    return out
