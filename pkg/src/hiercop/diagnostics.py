"""Rank-based dependence diagnostics for clustered data."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from hiercop.kernels import exch_pair_sums, kendall_rowsums

#: Above this many sign comparisons the exchangeable tau switches to a cluster subsample.
COMPARISON_CUTOFF = 2e8


@dataclass(frozen=True)
class TauEstimate:
    tau: float
    se: float
    n_pairs: int
    subsampled: bool = False

    def to_dict(self):
        return {"tau": self.tau, "se": self.se, "n_pairs": self.n_pairs, "subsampled": self.subsampled}


def _check_ties(values, what):
    if np.unique(values).size != np.size(values):
        raise ValueError(f"{what}: tied values found; add a small random jitter to break ties")


def _as_clusters(values, sizes=None):
    if sizes is None:
        parts = [np.atleast_1d(np.asarray(c, dtype=float)) for c in values]
        return np.concatenate(parts), np.array([p.size for p in parts], dtype=np.int64)
    return np.asarray(values, dtype=float), np.asarray(sizes, dtype=np.int64)


def exchangeable_kendall_tau(values, sizes=None, rng=None, cutoff=COMPARISON_CUTOFF):
    """Exchangeable Kendall tau of one variable measured on clustered units.

    Every ordered pair of distinct units in cluster ``i`` is compared with every
    ordered pair in cluster ``k != i``; ``values`` is either a list of per-cluster
    arrays or a flat array with ``sizes``. The se is a delete-one-cluster jackknife.
    Past ``cutoff`` sign comparisons a random subset of clusters is used.
    """
    x, sizes = _as_clusters(values, sizes)
    _check_ties(x, "exchangeable_kendall_tau")
    keep = sizes >= 2
    if keep.sum() < 2:
        raise ValueError("exchangeable_kendall_tau: need at least two clusters with two or more units")
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    x = np.concatenate([x[s : s + n] for s, n in zip(starts[keep], sizes[keep])])
    sizes = sizes[keep]

    subsampled = False
    n_units = float(sizes.sum())
    if n_units * n_units / 2.0 > cutoff:
        rng = np.random.default_rng(0) if rng is None else rng
        order = rng.permutation(sizes.size)
        cum = np.cumsum(sizes[order])
        take = np.sort(order[: max(2, int(np.searchsorted(cum, math.sqrt(2.0 * cutoff))))])
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        x = np.concatenate([x[starts[i] : starts[i] + sizes[i]] for i in take])
        sizes = sizes[take]
        subsampled = True

    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    S = exch_pair_sums(x, starts, sizes)
    c = sizes * (sizes - 1.0)
    D = np.outer(c, c)
    np.fill_diagonal(D, 0.0)
    num = S.sum() / 2.0
    den = D.sum() / 2.0
    tau = float(num / den)
    m = sizes.size
    if m > 2:
        tj = (num - S.sum(axis=1)) / (den - D.sum(axis=1))
        se = float(math.sqrt((m - 1.0) / m * np.sum((tj - tj.mean()) ** 2)))
    else:
        se = math.nan
    return TauEstimate(tau, se, int(den), subsampled)


def pooled_kendall_tau(u, v):
    """Ordinary Kendall tau of pooled pairs with its i.i.d. U-statistic pse."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.size != v.size or u.size < 2:
        raise ValueError("pooled_kendall_tau: need two equal-length samples of size >= 2")
    _check_ties(u, "pooled_kendall_tau")
    _check_ties(v, "pooled_kendall_tau")
    n = u.size
    rows = kendall_rowsums(u, v)
    tau = float(rows.sum() / (n * (n - 1.0)))
    if n > 2:
        h1 = rows / (n - 1.0)
        se = float(2.0 * np.std(h1, ddof=1) / math.sqrt(n))
    else:
        se = math.nan
    return TauEstimate(tau, se, n * (n - 1) // 2)


QUADRANTS = {
    "u<0.5,v<0.5": (False, False),
    "u<0.5,v>=0.5": (False, True),
    "u>=0.5,v<0.5": (True, False),
    "u>=0.5,v>=0.5": (True, True),
}


def quadrant_kendall_tau(u, v, split=0.5):
    """Pooled Kendall tau inside each quadrant of the unit square.

    Keys name the quadrant by its ``(u, v)`` ranges; a quadrant with fewer than two
    points maps to ``None``.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    out = {}
    for label, (hu, hv) in QUADRANTS.items():
        sel = ((u >= split) == hu) & ((v >= split) == hv)
        out[label] = pooled_kendall_tau(u[sel], v[sel]) if sel.sum() >= 2 else None
    return out


def spearman_from_normal(r):
    """Spearman correlation of a bivariate normal with Pearson correlation ``r``."""
    return 6.0 / math.pi * np.arcsin(np.asarray(r) / 2.0)


def _cross_block(a, b, sizes, starts):
    """Per-cluster sums of a_j b_l over ordered pairs j != l."""
    sa = np.add.reduceat(a, starts)
    sb = np.add.reduceat(b, starts)
    sab = np.add.reduceat(a * b, starts)
    return sa * sb - sab


def exchangeability_structure_check(data, max_lag_pairs=20):
    """Estimate the within-unit and between-unit Spearman blocks of ``(X, Y)``.

    Scores are pooled normalized ranks. Returns a JSON-ready dict with the within
    block (``Sigma_w + Sigma_b``), the between block ``Sigma_b`` (averaged over
    all ordered cross-unit pairs), jackknife standard errors, eigenvalues of
    ``Sigma_w`` and ``Sigma_b``, and the largest deviation of position-pair
    blocks from the average.
    """
    sizes = np.asarray(data.sizes)
    starts = np.asarray(data.starts)
    npairs = sizes * (sizes - 1.0)
    if npairs.sum() < 10 or (sizes >= 2).sum() < 3:
        raise ValueError("exchangeability_structure_check: too few cross-unit pairs")
    N = data.n_units
    a = (stats.rankdata(data.x) / (N + 1.0) - 0.5) * math.sqrt(12.0)
    b = (stats.rankdata(data.y) / (N + 1.0) - 0.5) * math.sqrt(12.0)

    within_xy = a * b
    cl_w = np.add.reduceat(within_xy, starts)
    cross = np.stack(
        [
            _cross_block(a, a, sizes, starts),
            _cross_block(a, b, sizes, starts),
            _cross_block(b, b, sizes, starts),
        ]
    )

    def blocks(w_sum, c_sum, n_units, n_pairs):
        rxy = w_sum / n_units
        sb = c_sum / n_pairs
        W = np.array([[1.0, rxy], [rxy, 1.0]])
        B = np.array([[sb[0], sb[1]], [sb[1], sb[2]]])
        return W, B

    W, B = blocks(cl_w.sum(), cross.sum(axis=1), N, npairs.sum())
    # delete-one-cluster jackknife for entries of both blocks
    m = sizes.size
    reps = []
    for i in range(m):
        Wi, Bi = blocks(cl_w.sum() - cl_w[i], cross.sum(axis=1) - cross[:, i], N - sizes[i], npairs.sum() - npairs[i])
        reps.append(np.concatenate([Wi.ravel(), Bi.ravel()]))
    reps = np.array(reps)
    jse = np.sqrt((m - 1.0) / m * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))
    W_se, B_se = jse[:4].reshape(2, 2), jse[4:].reshape(2, 2)

    # homogeneity across unit-position pairs (j, l) in clusters holding both positions
    nmin = int(np.max(sizes))
    dev = 0.0
    count = 0
    for j in range(nmin):
        for l in range(nmin):
            if j == l or count >= max_lag_pairs:
                continue
            sel = sizes > max(j, l)
            if sel.sum() < 3:
                continue
            ij = starts[sel] + j
            il = starts[sel] + l
            blk = np.array(
                [[np.mean(a[ij] * a[il]), np.mean(a[ij] * b[il])], [np.mean(b[ij] * a[il]), np.mean(b[ij] * b[il])]]
            )
            dev = max(dev, float(np.max(np.abs(blk - B))))
            count += 1

    Sw = W - B
    return {
        "within_block": W.tolist(),
        "within_block_se": W_se.tolist(),
        "between_block": B.tolist(),
        "between_block_se": B_se.tolist(),
        "sigma_w_eigenvalues": np.linalg.eigvalsh(Sw).tolist(),
        "sigma_b_eigenvalues": np.linalg.eigvalsh(B).tolist(),
        "position_pairs_checked": count,
        "max_block_deviation": dev,
        "n_cross_pairs": int(npairs.sum()),
    }

