"""Random-coding decoding failure probability of one user.

A user with a Gaussian codebook is observed over a set of segments, each
corrupted by noise of variance ``sigma2`` plus Gaussian interference of
variance ``g_i`` (the number of residual interferers in that slot). The
failure probability is bounded by the DT bound

    phi(g) <= E[ 2^-[iota - log2((M-1)/2)]^+ ],

evaluated here by Monte Carlo. Per segment, the information density of
``n0`` symbols reduces exactly to

    n0/2 log2(1 + 1/v) + log2(e)/2 * (A - B) / sqrt(1 + v),   v = sigma2 + g,

with ``A, B`` independent chi-square(n0): the per-symbol quadratic form
``y^2/(1+v) - w^2/v`` has eigenvalues ``+-1/sqrt(1+v)``. The default sampler
uses this identity; ``method="symbol"`` draws ``x`` and ``w`` explicitly.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .params import ParamError, SystemParams

LOG2E = 1.0 / math.log(2.0)
DEFAULT_SAMPLES = 100_000
CHUNK = 1 << 16

EXACT_MAX_K = 12
EXACT_MAX_WORK = 2e9


@dataclass(frozen=True)
class InterferenceProfile:
    g: tuple

    def __post_init__(self):
        g = tuple(int(x) for x in self.g)
        if len(g) < 1:
            raise ParamError("g", "profile must cover at least one observed segment")
        if min(g) < 0:
            raise ParamError("g", f"interferer counts must be >= 0, got {min(g)}")
        object.__setattr__(self, "g", g)

    @classmethod
    def of(cls, g) -> "InterferenceProfile":
        return g if isinstance(g, cls) else cls(tuple(np.asarray(g).ravel().tolist()))

    def __len__(self):
        return len(self.g)

    def sorted_key(self) -> tuple:
        return tuple(sorted(self.g))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.g, dtype=np.int64)


@dataclass(frozen=True)
class PhiEstimate:
    value: float
    std_err: float
    samples: int


def dt_threshold(k):
    """``log2((2^k - 1)/2)`` without forming ``2^k``."""
    if k < 1:
        raise ParamError("k", f"DT threshold needs k >= 1 (M >= 2), got {k}")
    return (k - 1) + math.log1p(-(2.0 ** -k)) * LOG2E


def segment_tables(sigma2, n0, gmax):
    """Per-count constants ``C[g]`` and ``D[g]`` for ``g = 0..gmax``."""
    v = sigma2 + np.arange(gmax + 1, dtype=np.float64)
    C = 0.5 * n0 * np.log2(1.0 + 1.0 / v)
    D = 0.5 * LOG2E / np.sqrt(1.0 + v)
    return C, D


def chi2_differences(rng, n0, shape):
    """Draws of ``A - B`` with ``A, B`` independent chi-square(n0)."""
    a = rng.standard_gamma(n0 / 2.0, size=shape)
    b = rng.standard_gamma(n0 / 2.0, size=shape)
    return 2.0 * (a - b)


def _check_profile(profile, params):
    profile = InterferenceProfile.of(profile)
    if len(profile) > params.d_u:
        raise ParamError("g", f"profile has {len(profile)} segments but a codeword has only {params.d_u}")
    return profile


def info_density_symbol(x, y, v):
    """``log2 p(y|x)/p(y)`` for ``y = x + w``, ``x ~ N(0,1)``, ``w ~ N(0,v)``."""
    v = np.asarray(v, dtype=np.float64)
    if np.any(v <= 0):
        raise ParamError("v", "non-signal variance must be > 0")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = 0.5 * np.log2((1.0 + v) / v) + 0.5 * LOG2E * (y * y / (1.0 + v) - (y - x) ** 2 / v)
    return out[()] if out.ndim == 0 else out


def sample_info_density(profile, params: SystemParams, rng, size=None, method="chi2"):
    """Draw ``iota(X, Y)`` over the segments in ``profile``.

    Returns a float for ``size=None``, else an array of ``size`` draws.
    """
    profile = _check_profile(profile, params)
    g = profile.as_array()
    n = 1 if size is None else int(size)
    v = params.sigma2 + g.astype(np.float64)
    n0 = params.n0
    if method == "chi2":
        C, D = segment_tables(params.sigma2, n0, int(g.max()))
        S = chi2_differences(rng, n0, (n, len(g)))
        out = (C[g] + D[g] * S).sum(axis=1)
    elif method == "symbol":
        out = np.empty(n)
        per_draw = len(g) * n0
        step = max(1, CHUNK * 4 // per_draw)
        var = np.repeat(v, n0)
        for lo in range(0, n, step):
            m = min(step, n - lo)
            x = rng.standard_normal((m, per_draw))
            w = rng.standard_normal((m, per_draw)) * np.sqrt(var)
            out[lo:lo + m] = info_density_symbol(x, x + w, var).sum(axis=1)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(out[0]) if size is None else out


def mutual_information(profile, params: SystemParams):
    """``E[iota] = n0 * sum_i 1/2 log2(1 + 1/(sigma2 + g_i))``."""
    g = InterferenceProfile.of(profile).as_array()
    return float(params.n0 * np.sum(0.5 * np.log2(1.0 + 1.0 / (params.sigma2 + g))))


def _estimate(total, total2, n):
    mean = total / n
    var = max(total2 / n - mean * mean, 0.0)
    se = math.sqrt(var / (n - 1)) if n > 1 else 0.0
    return PhiEstimate(min(max(mean, 0.0), 1.0), se, n)


def phi_dt(profile, params: SystemParams, samples=DEFAULT_SAMPLES, rng=None, backend=None):
    """Monte Carlo DT bound on the failure probability for counts ``profile``."""
    if samples < 1:
        raise ParamError("samples", f"must be >= 1, got {samples}")
    if rng is None:
        raise ParamError("rng", "an explicit random stream is required")
    profile = _check_profile(profile, params)
    tau = dt_threshold(params.k)
    g = profile.as_array()
    C, D = segment_tables(params.sigma2, params.n0, int(g.max()))
    total = total2 = 0.0
    for lo in range(0, samples, CHUNK):
        m = min(CHUNK, samples - lo)
        S_T = chi2_differences(rng, params.n0, (len(g), m))
        t, t2 = kernels.fixed_dt_sums(g, S_T, C, D, tau, backend=backend)
        total += t
        total2 += t2
    return _estimate(total, total2, samples)


def phi_exact_small(profile, k_small, n_c_small, n0_small, sigma2, codebook_trials, noise_trials, rng):
    """Brute-force ML error of random Gaussian codes over the observed segments.

    The codeword has ``n_c_small / n0_small`` segments; ``profile`` gives the
    interferer counts of the first ``len(profile)`` of them and the rest are
    erased. Each codebook trial draws ``2^k_small`` codewords, sends
    codeword 0 ``noise_trials`` times and decodes by minimum weighted
    distance. The standard error is taken across codebook trials.
    """
    profile = InterferenceProfile.of(profile)
    if k_small < 1:
        raise ParamError("k_small", f"must be >= 1, got {k_small}")
    if k_small > EXACT_MAX_K:
        raise ParamError("k_small", f"2^{k_small} codewords exceeds the limit 2^{EXACT_MAX_K}")
    if n0_small < 1 or n_c_small % n0_small:
        raise ParamError("n_c_small", f"n_c_small={n_c_small} not divisible by n0_small={n0_small}")
    d_u = n_c_small // n0_small
    if len(profile) > d_u:
        raise ParamError("g", f"profile has {len(profile)} segments, codeword has {d_u}")
    if sigma2 <= 0:
        raise ParamError("sigma2", f"must be > 0, got {sigma2}")
    if codebook_trials < 1 or noise_trials < 1:
        raise ParamError("trials", "codebook_trials and noise_trials must be >= 1")
    M = 1 << k_small
    n_obs = len(profile) * n0_small
    work = float(codebook_trials) * noise_trials * M * n_obs
    if work > EXACT_MAX_WORK:
        raise ParamError("trials", f"requested work {work:.3g} exceeds limit {EXACT_MAX_WORK:.3g}")

    var = np.repeat(sigma2 + profile.as_array().astype(np.float64), n0_small)
    w = 1.0 / var
    rates = np.empty(codebook_trials)
    for t in range(codebook_trials):
        book = rng.standard_normal((M, n_obs))
        y = book[0] + rng.standard_normal((noise_trials, n_obs)) * np.sqrt(var)
        # weighted squared distance, dropping the ||y||^2 term common to all codewords
        metric = (book * book * w).sum(axis=1)[None, :] - 2.0 * (y * w) @ book.T
        rates[t] = np.mean(np.argmin(metric, axis=1) != 0)
    value = float(rates.mean())
    if codebook_trials > 1:
        se = float(rates.std(ddof=1) / math.sqrt(codebook_trials))
    else:
        se = math.sqrt(value * (1.0 - value) / noise_trials)
    return PhiEstimate(value, se, codebook_trials * noise_trials)


class PhiOracle:
    """Memoized ``phi(g)`` against one fixed bank of chi-square draws.

    All profiles are scored on the same ``samples`` draws (common random
    numbers), with segments assigned to the sorted counts, so the value
    depends only on the multiset of counts. Results are cached under
    ``(params fingerprint, samples, seed, sorted counts)``.
    """

    def __init__(self, params: SystemParams, samples=DEFAULT_SAMPLES, seed=0, cache=True, backend=None):
        from .rng import substream

        if samples < 1:
            raise ParamError("samples", f"must be >= 1, got {samples}")
        self.params = params
        self.samples = int(samples)
        self.seed = int(seed)
        self.tau = dt_threshold(params.k)
        self.cache_enabled = cache
        self.backend = backend
        self._cache = {}
        self._lock = threading.Lock()
        self._fp = params.fingerprint()
        rng = substream(self.seed, "phi-bank", params.n0, params.d_u)
        bank = chi2_differences(rng, params.n0, (params.d_u, self.samples))
        # prefix[j] = sum of the first j segments, per sample
        self._prefix = np.zeros((params.d_u + 1, self.samples))
        np.cumsum(bank, axis=0, out=self._prefix[1:])
        self._C, self._D = segment_tables(params.sigma2, params.n0, 0)
        self.hits = 0
        self.misses = 0

    def key(self, g) -> tuple:
        return (self._fp, self.samples, self.seed, tuple(sorted(int(x) for x in g)))

    def _tables(self, gmax):
        if gmax >= len(self._C):
            self._C, self._D = segment_tables(self.params.sigma2, self.params.n0, max(gmax, 2 * len(self._C)))
        return self._C, self._D

    def _compute(self, counts: Sequence[int]) -> PhiEstimate:
        if len(counts) < 1 or len(counts) > self.params.d_u:
            raise ParamError("g", f"profile length {len(counts)} outside 1..{self.params.d_u}")
        if counts[0] < 0:
            raise ParamError("g", "interferer counts must be >= 0")
        C, D = self._tables(counts[-1])
        total, total2 = kernels.runs_dt_sums(self._prefix, counts, C, D, self.tau, backend=self.backend)
        return _estimate(total, total2, self.samples)

    def __call__(self, g) -> PhiEstimate:
        key = self.key(g)
        if self.cache_enabled:
            hit = self._cache.get(key)
            if hit is not None:
                self.hits += 1
                return hit
        est = self._compute(key[-1])
        if self.cache_enabled:
            with self._lock:
                self._cache[key] = est
        self.misses += 1
        return est

    def __len__(self):
        return len(self._cache)


_default_cache = {}
_default_lock = threading.Lock()


def phi_memoized(profile, params: SystemParams, samples=DEFAULT_SAMPLES, rng=None, cache=None, backend=None):
    """:func:`phi_dt` on the sorted profile, cached by multiset.

    ``cache`` may be a dict to use instead of the module cache, or ``False``
    to compute without caching. On a miss, the estimate is computed from
    ``rng``; on a hit ``rng`` is not consumed.
    """
    profile = _check_profile(profile, params)
    key = (params.fingerprint(), int(samples), profile.sorted_key())
    store = _default_cache if cache is None else cache
    if store is not False:
        hit = store.get(key)
        if hit is not None:
            return hit
    est = phi_dt(InterferenceProfile(key[-1]), params, samples, rng, backend=backend)
    if store is not False:
        with _default_lock:
            store[key] = est
    return est


def clear_cache():
    with _default_lock:
        _default_cache.clear()
