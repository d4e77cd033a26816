"""Hot loops: split-point scan and batch tree routing.

Each kernel exists twice, a numba version and a numpy version with identical
results. ``scan_numeric`` and ``route_rows`` dispatch to the numba versions
unless ``CIRCFOREST_NUMBA=0``.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# near-ties in the split statistic resolve to the first (smallest) candidate
TIE_RTOL = 1e-9
TIE_ATOL = 1e-12

LEAF, NUMERIC, CATEGORICAL = 0, 1, 2


def _scan_numeric_numpy(x, s, allowed, minbucket, vinv, hbar):
    n = x.shape[0]
    if n < 2:
        return -1, 0.0
    cum = np.cumsum(s, axis=0)[:-1]
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    d = cum - n_left[:, None] * hbar[None, :]
    quad = np.einsum("ij,jk,ik->i", d, vinv, d)
    stat = quad * (n - 1) / (n_left * n_right)
    ok = allowed & (x[:-1] < x[1:]) & (n_left >= minbucket) & (n_right >= minbucket)
    if not ok.any():
        return -1, 0.0
    stat = np.where(ok, stat, -np.inf)
    best = stat.max()
    thresh = best - (TIE_RTOL * abs(best) + TIE_ATOL)
    idx = int(np.flatnonzero(stat >= thresh)[0])
    return idx, float(stat[idx])


@njit
def _scan_numeric_numba(x, s, allowed, minbucket, vinv, hbar):
    n = x.shape[0]
    if n < 2:
        return -1, 0.0
    stat = np.empty(n - 1)
    c0 = 0.0
    c1 = 0.0
    best = -np.inf
    for i in range(n - 1):
        c0 += s[i, 0]
        c1 += s[i, 1]
        nl = i + 1.0
        nr = n - nl
        if not allowed[i] or x[i] >= x[i + 1] or nl < minbucket or nr < minbucket:
            stat[i] = -np.inf
            continue
        d0 = c0 - nl * hbar[0]
        d1 = c1 - nl * hbar[1]
        q = d0 * (vinv[0, 0] * d0 + vinv[0, 1] * d1) + d1 * (vinv[1, 0] * d0 + vinv[1, 1] * d1)
        v = q * (n - 1) / (nl * nr)
        stat[i] = v
        if v > best:
            best = v
    if best == -np.inf:
        return -1, 0.0
    thresh = best - (TIE_RTOL * abs(best) + TIE_ATOL)
    for i in range(n - 1):
        if stat[i] >= thresh:
            return i, stat[i]
    return -1, 0.0


def scan_numeric(x, s, allowed, minbucket, vinv, hbar):
    """Best cut of a sorted numeric covariate under the two-sample statistic.

    Parameters
    ----------
    x : (n,) float64, sorted ascending
    s : (n, 2) float64, score rows in the same order
    allowed : (n-1,) bool, cut positions permitted by binning
    minbucket : int
    vinv : (2, 2) pseudoinverse of the score covariance
    hbar : (2,) mean score

    Returns
    -------
    (i, stat) where the cut sends ``x[:i+1]`` left; ``i == -1`` if none is feasible.
    """
    args = (
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(s, dtype=np.float64),
        np.ascontiguousarray(allowed, dtype=np.bool_),
        float(minbucket),
        np.ascontiguousarray(vinv, dtype=np.float64),
        np.ascontiguousarray(hbar, dtype=np.float64),
    )
    if USE_NUMBA:
        i, v = _scan_numeric_numba(*args)
        return int(i), float(v)
    return _scan_numeric_numpy(*args)


def _route_rows_numpy(X, kind, var, thr, left, right, catmask):
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    bad_var = np.full(n, -1, dtype=np.int64)
    active = kind[node] != LEAF
    while active.any():
        rows = np.flatnonzero(active)
        cur = node[rows]
        v = var[cur]
        vals = X[rows, v]
        miss = np.isnan(vals)
        if miss.any():
            bad_var[rows[miss]] = v[miss]
            node[rows[miss]] = -1
            rows, cur, vals = rows[~miss], cur[~miss], vals[~miss]
        is_cat = kind[cur] == CATEGORICAL
        go_left = np.empty(rows.size, dtype=bool)
        num = ~is_cat
        go_left[num] = vals[num] <= thr[cur[num]]
        if is_cat.any():
            codes = vals[is_cat].astype(np.int64)
            width = catmask.shape[1]
            inside = (codes >= 0) & (codes < width)
            res = np.zeros(codes.size, dtype=bool)
            res[inside] = catmask[cur[is_cat][inside], codes[inside]]
            go_left[is_cat] = res
        node[rows] = np.where(go_left, left[cur], right[cur])
        active = np.zeros(n, dtype=bool)
        valid = node >= 0
        active[valid] = kind[node[valid]] != LEAF
    return node, bad_var


@njit
def _route_rows_numba(X, kind, var, thr, left, right, catmask):
    n = X.shape[0]
    width = catmask.shape[1]
    node = np.zeros(n, dtype=np.int64)
    bad_var = np.full(n, -1, dtype=np.int64)
    for r in range(n):
        k = 0
        while kind[k] != LEAF:
            v = var[k]
            val = X[r, v]
            if np.isnan(val):
                bad_var[r] = v
                k = -1
                break
            if kind[k] == CATEGORICAL:
                code = int(val)
                go = code >= 0 and code < width and catmask[k, code]
            else:
                go = val <= thr[k]
            k = left[k] if go else right[k]
        node[r] = k
    return node, bad_var


def route_rows(X, kind, var, thr, left, right, catmask):
    """Send each row of ``X`` down a flattened tree.

    Returns the reached node index per row (``-1`` when a split variable is
    missing) and the offending variable index (``-1`` otherwise).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if USE_NUMBA:
        return _route_rows_numba(X, kind, var, thr, left, right, catmask)
    return _route_rows_numpy(X, kind, var, thr, left, right, catmask)
