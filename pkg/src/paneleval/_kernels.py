"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time. Set ``PANELEVAL_NUMBA=0`` to force
the numpy implementations (also used automatically when numba is missing).
Both implementations are always importable as ``numpy_impl`` / ``numba_impl``
so they can be compared directly.
"""

import os
import types

import numpy as np

KERNEL_GAUSSIAN = 0
KERNEL_EPANECHNIKOV = 1

_CHUNK = 256


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

def _np_demean_twoway(cube):
    # cube: (k, n_entities, n_years)
    ent = cube.mean(axis=2, keepdims=True)
    yr = cube.mean(axis=1, keepdims=True)
    grand = cube.mean(axis=(1, 2), keepdims=True)
    return cube - ent - yr + grand


def _np_group_sums(values, codes, n_groups):
    # values: (n, k) -> (n_groups, k)
    out = np.zeros((n_groups, values.shape[1]))
    for j in range(values.shape[1]):
        out[:, j] = np.bincount(codes, weights=values[:, j], minlength=n_groups)
    return out


def _np_group_demean(values, codes, n_groups):
    sums = _np_group_sums(values, codes, n_groups)
    counts = np.bincount(codes, minlength=n_groups).astype(np.float64)
    counts[counts == 0] = 1.0
    return values - (sums / counts[:, None])[codes]


def _np_nearest_with_replacement(t_scores, c_scores, c_rank, k):
    n_t = t_scores.shape[0]
    idx = np.full((n_t, k), -1, dtype=np.int64)
    dist = np.full((n_t, k), np.inf)
    kk = min(k, c_scores.shape[0])
    for start in range(0, n_t, _CHUNK):
        stop = min(start + _CHUNK, n_t)
        d = np.abs(t_scores[start:stop, None] - c_scores[None, :])
        if kk == 0:
            continue
        kth = np.partition(d, kk - 1, axis=1)[:, kk - 1]
        for r in range(stop - start):
            # only candidates up to the k-th distance (ties included) need ordering
            cand = np.flatnonzero(d[r] <= kth[r])
            order = cand[np.lexsort((c_rank[cand], d[r, cand]))[:kk]]
            idx[start + r, :kk] = order
            dist[start + r, :kk] = d[r, order]
    return idx, dist


def _np_nearest_without_replacement(t_scores, c_scores, c_rank, k):
    n_t = t_scores.shape[0]
    idx = np.full((n_t, k), -1, dtype=np.int64)
    dist = np.full((n_t, k), np.inf)
    available = np.ones(c_scores.shape[0], dtype=bool)
    left = c_scores.shape[0]
    for i in range(n_t):
        d = np.where(available, np.abs(t_scores[i] - c_scores), np.inf)
        for m in range(k):
            if left == 0:
                return idx, dist
            cand = np.flatnonzero(d == d.min())
            best = cand[np.argmin(c_rank[cand])]
            idx[i, m] = best
            dist[i, m] = d[best]
            d[best] = np.inf
            available[best] = False
            left -= 1
    return idx, dist


def _np_kde(values, grid, h, kernel):
    out = np.empty(grid.shape[0])
    n = values.shape[0]
    for start in range(0, grid.shape[0], _CHUNK):
        stop = min(start + _CHUNK, grid.shape[0])
        u = (grid[start:stop, None] - values[None, :]) / h
        if kernel == KERNEL_GAUSSIAN:
            kv = np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)
        else:
            kv = np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)
        out[start:stop] = kv.sum(axis=1) / (n * h)
    return out


numpy_impl = types.SimpleNamespace(
    demean_twoway=_np_demean_twoway,
    group_sums=_np_group_sums,
    group_demean=_np_group_demean,
    nearest_with_replacement=_np_nearest_with_replacement,
    nearest_without_replacement=_np_nearest_without_replacement,
    kde=_np_kde,
)


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

def _build_numba():
    from numba import njit

    @njit(cache=True)
    def demean_twoway(cube):
        k, ne, nt = cube.shape
        out = np.empty_like(cube)
        ent = np.empty(ne)
        yr = np.empty(nt)
        for c in range(k):
            grand = 0.0
            for t in range(nt):
                yr[t] = 0.0
            for i in range(ne):
                s = 0.0
                for t in range(nt):
                    v = cube[c, i, t]
                    s += v
                    yr[t] += v
                ent[i] = s / nt
                grand += s
            grand /= ne * nt
            for t in range(nt):
                yr[t] /= ne
            for i in range(ne):
                for t in range(nt):
                    out[c, i, t] = cube[c, i, t] - ent[i] - yr[t] + grand
        return out

    @njit(cache=True)
    def group_sums(values, codes, n_groups):
        n, k = values.shape
        out = np.zeros((n_groups, k))
        for r in range(n):
            g = codes[r]
            for j in range(k):
                out[g, j] += values[r, j]
        return out

    @njit(cache=True)
    def group_demean(values, codes, n_groups):
        n, k = values.shape
        sums = group_sums(values, codes, n_groups)
        counts = np.zeros(n_groups)
        for r in range(n):
            counts[codes[r]] += 1.0
        out = np.empty_like(values)
        for r in range(n):
            g = codes[r]
            for j in range(k):
                out[r, j] = values[r, j] - sums[g, j] / counts[g]
        return out

    @njit(cache=True)
    def _better(d, r, best_d, best_r):
        return d < best_d or (d == best_d and r < best_r)

    @njit(cache=True)
    def nearest_with_replacement(t_scores, c_scores, c_rank, k):
        n_t = t_scores.shape[0]
        n_c = c_scores.shape[0]
        idx = np.full((n_t, k), -1, dtype=np.int64)
        dist = np.full((n_t, k), np.inf)
        ranks = np.full(k, np.iinfo(np.int64).max, dtype=np.int64)
        for i in range(n_t):
            for m in range(k):
                ranks[m] = np.iinfo(np.int64).max
            for j in range(n_c):
                d = abs(t_scores[i] - c_scores[j])
                r = c_rank[j]
                if not _better(d, r, dist[i, k - 1], ranks[k - 1]):
                    continue
                # insertion into the sorted top-k list
                pos = k - 1
                while pos > 0 and _better(d, r, dist[i, pos - 1], ranks[pos - 1]):
                    dist[i, pos] = dist[i, pos - 1]
                    ranks[pos] = ranks[pos - 1]
                    idx[i, pos] = idx[i, pos - 1]
                    pos -= 1
                dist[i, pos] = d
                ranks[pos] = r
                idx[i, pos] = j
        return idx, dist

    @njit(cache=True)
    def nearest_without_replacement(t_scores, c_scores, c_rank, k):
        n_t = t_scores.shape[0]
        n_c = c_scores.shape[0]
        idx = np.full((n_t, k), -1, dtype=np.int64)
        dist = np.full((n_t, k), np.inf)
        used = np.zeros(n_c, dtype=np.bool_)
        for i in range(n_t):
            for m in range(k):
                best = -1
                best_d = np.inf
                best_r = np.iinfo(np.int64).max
                for j in range(n_c):
                    if used[j]:
                        continue
                    d = abs(t_scores[i] - c_scores[j])
                    if best == -1 or _better(d, c_rank[j], best_d, best_r):
                        best = j
                        best_d = d
                        best_r = c_rank[j]
                if best == -1:
                    return idx, dist
                used[best] = True
                idx[i, m] = best
                dist[i, m] = best_d
        return idx, dist

    @njit(cache=True)
    def kde(values, grid, h, kernel):
        n = values.shape[0]
        out = np.empty(grid.shape[0])
        norm = 1.0 / np.sqrt(2.0 * np.pi)
        for g in range(grid.shape[0]):
            s = 0.0
            for i in range(n):
                u = (grid[g] - values[i]) / h
                if kernel == 0:
                    s += np.exp(-0.5 * u * u) * norm
                elif abs(u) <= 1.0:
                    s += 0.75 * (1.0 - u * u)
            out[g] = s / (n * h)
        return out

    return types.SimpleNamespace(
        demean_twoway=demean_twoway,
        group_sums=group_sums,
        group_demean=group_demean,
        nearest_with_replacement=nearest_with_replacement,
        nearest_without_replacement=nearest_without_replacement,
        kde=kde,
    )


try:
    numba_impl = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None

_use_numba = os.environ.get("PANELEVAL_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")
BACKEND = "numba" if (_use_numba and numba_impl is not None) else "numpy"
_impl = numba_impl if BACKEND == "numba" else numpy_impl


def demean_twoway(cube):
    """Two-way demeaning of a balanced ``(k, entities, years)`` cube."""
    return _impl.demean_twoway(np.ascontiguousarray(cube, dtype=np.float64))


def group_sums(values, codes, n_groups):
    return _impl.group_sums(np.ascontiguousarray(values, dtype=np.float64),
                            np.ascontiguousarray(codes, dtype=np.int64), int(n_groups))


def group_demean(values, codes, n_groups):
    return _impl.group_demean(np.ascontiguousarray(values, dtype=np.float64),
                              np.ascontiguousarray(codes, dtype=np.int64), int(n_groups))


def nearest(t_scores, c_scores, c_rank, k=1, replace=True):
    """k nearest controls per treated score; ties go to the lower ``c_rank``.

    Returns ``(idx, dist)`` of shape ``(n_treated, k)``; ``-1`` marks no match.
    """
    args = (np.ascontiguousarray(t_scores, dtype=np.float64),
            np.ascontiguousarray(c_scores, dtype=np.float64),
            np.ascontiguousarray(c_rank, dtype=np.int64), int(k))
    if replace:
        return _impl.nearest_with_replacement(*args)
    return _impl.nearest_without_replacement(*args)


def kde(values, grid, h, kernel=KERNEL_GAUSSIAN):
    return _impl.kde(np.ascontiguousarray(values, dtype=np.float64),
                     np.ascontiguousarray(grid, dtype=np.float64), float(h), int(kernel))
