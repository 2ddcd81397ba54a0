"""Hot inner loops.

Every kernel exists twice: a loop version compiled with ``@njit`` and a
vectorised numpy version. The public names dispatch on
:data:`ccatl._accel.USE_NUMBA`. Both versions accumulate per-feature sums in
the same order, so they agree bit-for-bit and make identical tie-breaks.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "heom_matrix",
    "knn_fill",
    "euclidean_matrix",
    "pair_rounds",
    "knn_vote",
]


# --------------------------------------------------------------------------
# HEOM distance matrix
# --------------------------------------------------------------------------

@njit
def _heom_matrix_nb(qv, qm, pv, pm, is_cat, ranges):
    nq, d = qv.shape
    npool = pv.shape[0]
    out = np.empty((nq, npool))
    for i in range(nq):
        for p in range(npool):
            acc = 0.0
            for j in range(d):
                if qm[i, j] or pm[p, j]:
                    acc += 1.0
                elif is_cat[j]:
                    if qv[i, j] != pv[p, j]:
                        acc += 1.0
                else:
                    diff = abs(qv[i, j] - pv[p, j])
                    if ranges[j] > 0.0:
                        t = diff / ranges[j]
                        acc += t * t
                    elif diff != 0.0:
                        acc += 1.0
            out[i, p] = np.sqrt(acc)
    return out


def _heom_matrix_np(qv, qm, pv, pm, is_cat, ranges):
    nq, d = qv.shape
    acc = np.zeros((nq, pv.shape[0]))
    for j in range(d):
        either = qm[:, j][:, None] | pm[:, j][None, :]
        a = np.where(qm[:, j], 0.0, qv[:, j])[:, None]
        b = np.where(pm[:, j], 0.0, pv[:, j])[None, :]
        if is_cat[j]:
            term = (a != b).astype(float)
        else:
            diff = np.abs(a - b)
            if ranges[j] > 0.0:
                t = diff / ranges[j]
                term = t * t
            else:
                term = (diff != 0.0).astype(float)
        acc += np.where(either, 1.0, term)
    return np.sqrt(acc)


def heom_matrix(qv, qm, pv, pm, is_cat, ranges):
    """HEOM distances between every query row and every pool row."""
    args = (
        np.ascontiguousarray(qv, dtype=np.float64),
        np.ascontiguousarray(qm, dtype=np.bool_),
        np.ascontiguousarray(pv, dtype=np.float64),
        np.ascontiguousarray(pm, dtype=np.bool_),
        np.ascontiguousarray(is_cat, dtype=np.bool_),
        np.ascontiguousarray(ranges, dtype=np.float64),
    )
    if USE_NUMBA:
        return _heom_matrix_nb(*args)
    return _heom_matrix_np(*args)


# --------------------------------------------------------------------------
# kNN fill of missing cells
# --------------------------------------------------------------------------

@njit
def _aggregate(vals, categorical):
    n = vals.shape[0]
    if not categorical:
        s = 0.0
        for v in vals:
            s += v
        return s / n
    srt = np.sort(vals)
    best = srt[0]
    best_count = 0
    run = 0
    for t in range(n):
        if t > 0 and srt[t] == srt[t - 1]:
            run += 1
        else:
            run = 1
        # strict > keeps the smallest value on count ties
        if run > best_count:
            best_count = run
            best = srt[t]
    return best


@njit
def _knn_fill_nb(dist, qv, qm, pv, pm, is_cat, k):
    nq, d = qv.shape
    npool = pv.shape[0]
    out = qv.copy()
    nbr_d = np.empty(k)
    nbr_i = np.empty(k, dtype=np.int64)
    for i in range(nq):
        for j in range(d):
            if not qm[i, j]:
                continue
            filled = 0
            for p in range(npool):
                if pm[p, j]:
                    continue
                dp = dist[i, p]
                if filled == k and dp >= nbr_d[k - 1]:
                    continue
                # insertion keeps earlier (smaller) pool index first on ties
                pos = filled if filled < k else k - 1
                while pos > 0 and nbr_d[pos - 1] > dp:
                    if pos < k:
                        nbr_d[pos] = nbr_d[pos - 1]
                        nbr_i[pos] = nbr_i[pos - 1]
                    pos -= 1
                nbr_d[pos] = dp
                nbr_i[pos] = p
                if filled < k:
                    filled += 1
            if filled == 0:
                out[i, j] = np.nan
                continue
            vals = np.empty(filled)
            for t in range(filled):
                vals[t] = pv[nbr_i[t], j]
            out[i, j] = _aggregate(vals, is_cat[j])
    return out


def _mode_np(vals):
    uniq, counts = np.unique(vals, return_counts=True)
    return uniq[np.argmax(counts)]


def _knn_fill_np(dist, qv, qm, pv, pm, is_cat, k):
    out = qv.copy()
    for j in range(qv.shape[1]):
        rows = np.flatnonzero(qm[:, j])
        if rows.size == 0:
            continue
        donors = np.flatnonzero(~pm[:, j])
        if donors.size == 0:
            out[rows, j] = np.nan
            continue
        kk = min(k, donors.size)
        order = np.argsort(dist[np.ix_(rows, donors)], axis=1, kind="stable")[:, :kk]
        picked = pv[donors[order], j]
        if is_cat[j]:
            out[rows, j] = [_mode_np(v) for v in picked]
        else:
            s = np.zeros(rows.size)
            for t in range(kk):
                s += picked[:, t]
            out[rows, j] = s / kk
    return out


def knn_fill(dist, qv, qm, pv, pm, is_cat, k):
    """Fill masked query cells from the ``k`` nearest pool rows observing that feature.

    ``dist`` is the query-by-pool distance matrix. Numerical cells take the
    donor mean, categorical cells the donor mode (smallest value on ties).
    A feature with no donor at all is left as NaN.
    """
    args = (
        np.ascontiguousarray(dist, dtype=np.float64),
        np.ascontiguousarray(qv, dtype=np.float64),
        np.ascontiguousarray(qm, dtype=np.bool_),
        np.ascontiguousarray(pv, dtype=np.float64),
        np.ascontiguousarray(pm, dtype=np.bool_),
        np.ascontiguousarray(is_cat, dtype=np.bool_),
        int(k),
    )
    if USE_NUMBA:
        return _knn_fill_nb(*args)
    return _knn_fill_np(*args)


# --------------------------------------------------------------------------
# Euclidean distance matrix
# --------------------------------------------------------------------------

@njit
def _euclidean_nb(a, b):
    na, d = a.shape
    nb_ = b.shape[0]
    out = np.empty((na, nb_))
    for i in range(na):
        for p in range(nb_):
            acc = 0.0
            for j in range(d):
                t = a[i, j] - b[p, j]
                acc += t * t
            out[i, p] = np.sqrt(acc)
    return out


def _euclidean_np(a, b):
    acc = np.zeros((a.shape[0], b.shape[0]))
    for j in range(a.shape[1]):
        t = a[:, j][:, None] - b[:, j][None, :]
        acc += t * t
    return np.sqrt(acc)


def euclidean_matrix(a, b):
    """Pairwise Euclidean distances, shape ``(len(a), len(b))``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"width mismatch: {a.shape} vs {b.shape}")
    if USE_NUMBA:
        return _euclidean_nb(a, b)
    return _euclidean_np(a, b)


# --------------------------------------------------------------------------
# Round-based nearest pairing
# --------------------------------------------------------------------------

@njit
def _pair_rounds_nb(dist):
    n_src, n_tgt = dist.shape
    src_used = np.zeros(n_src, dtype=np.bool_)
    match = np.full(n_tgt, -1, dtype=np.int64)
    rnd = np.full(n_tgt, -1, dtype=np.int64)
    choice = np.empty(n_tgt, dtype=np.int64)
    claim_t = np.full(n_src, -1, dtype=np.int64)
    remaining = n_tgt
    r = 0
    while remaining > 0:
        for t in range(n_tgt):
            if match[t] >= 0:
                continue
            best = -1
            bd = np.inf
            for s in range(n_src):
                if src_used[s]:
                    continue
                if best < 0 or dist[s, t] < bd:
                    bd = dist[s, t]
                    best = s
            choice[t] = best
            s = best
            c = claim_t[s]
            # targets are visited in index order, so strict < keeps the smaller index on ties
            if c < 0 or dist[s, t] < dist[s, c]:
                claim_t[s] = t
        for t in range(n_tgt):
            if match[t] >= 0:
                continue
            s = choice[t]
            if claim_t[s] == t:
                match[t] = s
                rnd[t] = r
                src_used[s] = True
                remaining -= 1
        for t in range(n_tgt):
            if match[t] >= 0:
                claim_t[match[t]] = -1
            else:
                claim_t[choice[t]] = -1
        r += 1
    return match, rnd


def _pair_rounds_np(dist):
    n_src, n_tgt = dist.shape
    src_used = np.zeros(n_src, dtype=bool)
    match = np.full(n_tgt, -1, dtype=np.int64)
    rnd = np.full(n_tgt, -1, dtype=np.int64)
    r = 0
    while True:
        open_t = np.flatnonzero(match < 0)
        if open_t.size == 0:
            break
        sub = np.where(src_used[:, None], np.inf, dist[:, open_t])
        choice = np.argmin(sub, axis=0)
        dchoice = sub[choice, np.arange(open_t.size)]
        order = np.lexsort((open_t, dchoice, choice))
        first = np.ones(order.size, dtype=bool)
        first[1:] = choice[order][1:] != choice[order][:-1]
        win = order[first]
        match[open_t[win]] = choice[win]
        rnd[open_t[win]] = r
        src_used[choice[win]] = True
        r += 1
    return match, rnd


def pair_rounds(dist):
    """Greedy round matching on a source-by-target distance matrix.

    Returns ``(match, round)``: the source index paired with each target and
    the round in which it was settled.
    """
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    if dist.shape[1] > dist.shape[0]:
        raise ValueError("more targets than sources")
    if dist.shape[1] == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    if USE_NUMBA:
        return _pair_rounds_nb(dist)
    return _pair_rounds_np(dist)


# --------------------------------------------------------------------------
# k-nearest-neighbour vote
# --------------------------------------------------------------------------

@njit
def _knn_vote_nb(dist, train_y, k):
    nq, n = dist.shape
    out = np.zeros(nq, dtype=np.int64)
    nbr_d = np.empty(k)
    nbr_i = np.empty(k, dtype=np.int64)
    for i in range(nq):
        filled = 0
        for p in range(n):
            dp = dist[i, p]
            if filled == k and dp >= nbr_d[k - 1]:
                continue
            pos = filled if filled < k else k - 1
            while pos > 0 and nbr_d[pos - 1] > dp:
                if pos < k:
                    nbr_d[pos] = nbr_d[pos - 1]
                    nbr_i[pos] = nbr_i[pos - 1]
                pos -= 1
            nbr_d[pos] = dp
            nbr_i[pos] = p
            if filled < k:
                filled += 1
        ones = 0
        for t in range(filled):
            ones += train_y[nbr_i[t]]
        out[i] = 1 if 2 * ones > filled else 0
    return out


def _knn_vote_np(dist, train_y, k):
    kk = min(k, dist.shape[1])
    nbr = np.argsort(dist, axis=1, kind="stable")[:, :kk]
    ones = train_y[nbr].sum(axis=1)
    return (2 * ones > kk).astype(np.int64)


def knn_vote(dist, train_y, k):
    """Binary k-NN vote; distance ties go to the smaller train index, vote ties to 0."""
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    train_y = np.ascontiguousarray(train_y, dtype=np.int64)
    k = int(min(k, dist.shape[1]))
    if USE_NUMBA:
        return _knn_vote_nb(dist, train_y, k)
    return _knn_vote_np(dist, train_y, k)
