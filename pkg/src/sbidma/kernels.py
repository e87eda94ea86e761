"""Hot Monte Carlo kernels for the DT integrand.

Both kernels accumulate per-segment information densities

    iota = sum_j C[g_j] + D[g_j] * S_j

with Kahan compensation, where ``C[g] = n0/2 log2(1 + 1/(sigma2 + g))``,
``D[g] = log2(e) / (2 sqrt(1 + sigma2 + g))`` and ``S_j`` is a difference of
two independent chi-square(n0) draws, then average the DT integrand
``min(1, 2^(tau - iota))``.

Arrays are segment-major, shape ``(segments, samples)``. Each kernel has a
loop implementation (jitted when numba is available) and a vectorized numpy
implementation performing the same floating point operations per sample in
the same order.
"""
import numpy as np

from ._accel import BACKEND, HAVE_NUMBA, njit


GUIDE_SIZE = 256


def guide_table(cdf):
    """Start indices for the quantile scan: ``guide[b]`` is the count for ``u = b/GUIDE_SIZE``."""
    return np.searchsorted(cdf, np.arange(GUIDE_SIZE) / GUIDE_SIZE, side="right")


def _crn_sums_loop(U_T, S_T, cdf, guide, C, D, tau):
    m, n = U_T.shape
    s = np.zeros(n)
    c = np.zeros(n)
    nb = guide.shape[0]
    for j in range(m):
        for i in range(n):
            u = U_T[j, i]
            g = guide[int(u * nb)]
            while cdf[g] <= u:
                g += 1
            y = (C[g] + D[g] * S_T[j, i]) - c[i]
            t = s[i] + y
            c[i] = (t - s[i]) - y
            s[i] = t
    tot = 0.0
    tot2 = 0.0
    for i in range(n):
        h = np.exp2(min(tau - s[i], 0.0))
        tot += h
        tot2 += h * h
    return tot, tot2


def _crn_sums_numpy(U_T, S_T, cdf, guide, C, D, tau):
    m, n = U_T.shape
    s = np.zeros(n)
    c = np.zeros(n)
    for j in range(m):
        g = np.searchsorted(cdf, U_T[j], side="right")
        y = (C[g] + D[g] * S_T[j]) - c
        t = s + y
        c = (t - s) - y
        s = t
    h = np.exp2(np.minimum(tau - s, 0.0))
    return float(h.sum()), float((h * h).sum())


def _fixed_sums_loop(g, S_T, C, D, tau):
    m, n = S_T.shape
    s = np.zeros(n)
    c = np.zeros(n)
    for j in range(m):
        cj = C[g[j]]
        dj = D[g[j]]
        for i in range(n):
            y = (cj + dj * S_T[j, i]) - c[i]
            t = s[i] + y
            c[i] = (t - s[i]) - y
            s[i] = t
    tot = 0.0
    tot2 = 0.0
    for i in range(n):
        h = np.exp2(min(tau - s[i], 0.0))
        tot += h
        tot2 += h * h
    return tot, tot2


def _fixed_sums_numpy(g, S_T, C, D, tau):
    m, n = S_T.shape
    s = np.zeros(n)
    c = np.zeros(n)
    for j in range(m):
        y = (C[g[j]] + D[g[j]] * S_T[j]) - c
        t = s + y
        c = (t - s) - y
        s = t
    h = np.exp2(np.minimum(tau - s, 0.0))
    return float(h.sum()), float((h * h).sum())


def _runs_sums_loop(prefix, values, starts, ends, C, D, tau):
    n = prefix.shape[1]
    iota = np.zeros(n)
    for r in range(values.shape[0]):
        cr = (ends[r] - starts[r]) * C[values[r]]
        dr = D[values[r]]
        hi = prefix[ends[r]]
        lo = prefix[starts[r]]
        for i in range(n):
            iota[i] += cr + dr * (hi[i] - lo[i])
    tot = 0.0
    tot2 = 0.0
    for i in range(n):
        h = np.exp2(min(tau - iota[i], 0.0))
        tot += h
        tot2 += h * h
    return tot, tot2


def _runs_sums_numpy(prefix, values, starts, ends, C, D, tau):
    iota = np.zeros(prefix.shape[1])
    for v, a, b in zip(values.tolist(), starts.tolist(), ends.tolist()):
        iota += (b - a) * C[v] + D[v] * (prefix[b] - prefix[a])
    h = np.exp2(np.minimum(tau - iota, 0.0))
    return float(h.sum()), float((h * h).sum())


IMPLEMENTATIONS = {
    "numpy": {"crn": _crn_sums_numpy, "fixed": _fixed_sums_numpy, "runs": _runs_sums_numpy},
}
if HAVE_NUMBA:
    IMPLEMENTATIONS["numba"] = {
        "crn": njit(cache=True, nogil=True)(_crn_sums_loop),
        "fixed": njit(cache=True, nogil=True)(_fixed_sums_loop),
        "runs": njit(cache=True, nogil=True)(_runs_sums_loop),
    }


def crn_dt_sums(U_T, S_T, cdf, C, D, tau, backend=None):
    """Sum and sum of squares of the DT integrand with Poisson-quantile counts.

    The interferer count of segment ``j`` in sample ``i`` is the smallest
    ``g`` with ``cdf[g] > U_T[j, i]``; ``cdf[-1]`` must be ``inf``.
    """
    fn = IMPLEMENTATIONS[backend or BACKEND]["crn"]
    return fn(U_T, S_T, cdf, guide_table(cdf), C, D, float(tau))


def fixed_dt_sums(g, S_T, C, D, tau, backend=None):
    """Sum and sum of squares of the DT integrand for one count vector ``g``."""
    fn = IMPLEMENTATIONS[backend or BACKEND]["fixed"]
    return fn(np.ascontiguousarray(g, dtype=np.int64), S_T, C, D, float(tau))


def runs_dt_sums(prefix, counts, C, D, tau, backend=None):
    """DT integrand sums for sorted ``counts`` scored on prefix-summed draws.

    ``prefix[j]`` holds the sum of the first ``j`` segment draws per sample;
    each run of equal counts costs one pass over the samples.
    """
    counts = np.asarray(counts, dtype=np.int64)
    edges = np.flatnonzero(np.diff(counts)) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [counts.size]])
    fn = IMPLEMENTATIONS[backend or BACKEND]["runs"]
    return fn(prefix, counts[starts], starts, ends, C, D, float(tau))
