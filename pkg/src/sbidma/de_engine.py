"""Density evolution of the TIN-SIC receiver.

One DE step maps the failure probability of child user nodes to that of the
parent:

    f(eps) = E_G[ phi(G) ],   G_1..G_{d_u-1} iid Poisson(d_bar_s * eps),

with ``phi`` the DT integrand of :mod:`sbidma.dt_oracle`. Both expectations
are taken in a single Monte Carlo loop. All evaluations inside one analysis
share a bank of uniforms (for Poisson quantiles) and chi-square differences,
so counts are pathwise non-decreasing in ``eps`` and evaluations at
different ``eps``, SNR and density are directly comparable.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
from scipy import stats

from . import kernels
from .dt_oracle import CHUNK, chi2_differences, dt_threshold, segment_tables
from .params import ParamError, SystemParams
from .rng import seed_from, substream

DEFAULT_OUTER_SAMPLES = 100_000
DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITERS = 1000
BANK_MEMORY_BUDGET = 512 * 2**20


class BracketError(ValueError):
    def __init__(self, endpoint, message):
        self.endpoint = endpoint
        super().__init__(f"{endpoint}: {message}")


def default_grid():
    """101 uniform points on [0, 1] plus 10 geometric points in [1e-4, 1e-2]."""
    grid = np.concatenate([np.linspace(0.0, 1.0, 101), np.geomspace(1e-4, 1e-2, 10)])
    return np.unique(np.round(grid, 12))


class CrnBank:
    """Common random numbers for one analysis, generated in keyed chunks.

    Chunk ``c`` comes from ``substream(seed, "de-bank", c)``; chunks are held
    in memory when the bank fits ``memory_budget`` bytes and regenerated on
    every pass otherwise.
    """

    def __init__(self, n0, segments, samples, seed, memory_budget=BANK_MEMORY_BUDGET):
        if samples < 1:
            raise ParamError("outer_samples", f"must be >= 1, got {samples}")
        self.n0 = int(n0)
        self.segments = int(segments)
        self.samples = int(samples)
        self.seed = int(seed)
        self._cached = None
        if 16 * self.segments * self.samples <= memory_budget:
            self._cached = [self._make(c) for c in range(self.n_chunks)]

    @property
    def n_chunks(self):
        return -(-self.samples // CHUNK)

    def _make(self, c):
        m = min(CHUNK, self.samples - c * CHUNK)
        rng = substream(self.seed, "de-bank", c)
        U_T = rng.random((self.segments, m))
        S_T = chi2_differences(rng, self.n0, (self.segments, m))
        return U_T, S_T

    def chunks(self):
        if self._cached is not None:
            yield from self._cached
        else:
            for c in range(self.n_chunks):
                yield self._make(c)

    def compatible(self, params: SystemParams):
        return params.n0 == self.n0 and params.d_u - 1 == self.segments


def poisson_cdf_table(lam):
    """CDF of Poisson(lam) on ``0..gmax`` with a trailing ``inf`` sentinel."""
    gmax = int(math.ceil(lam + 12.0 * math.sqrt(lam) + 12.0))
    cdf = np.empty(gmax + 2)
    cdf[:-1] = stats.poisson.cdf(np.arange(gmax + 1), lam) if lam > 0 else 1.0
    cdf[-1] = np.inf
    return cdf


@dataclass
class DeTrajectory:
    epsilons: List[float]
    ses: List[float]
    converged: bool
    fixed_point: float
    iterations: int
    se_at_fixed_point: float
    se_limited: bool = False
    diagnostic: str = ""


@dataclass
class ExitChart:
    eps: np.ndarray
    f: np.ndarray
    se: np.ndarray
    snr_db: float = float("nan")
    mu: float = float("nan")

    def rows(self):
        return list(zip(self.eps.tolist(), self.f.tolist(), self.se.tolist()))


@dataclass
class FixedPoint:
    eps: float
    stability: str
    uncertain: bool = False
    slope: float = float("nan")
    se: float = 0.0


@dataclass
class FixedPointReport:
    points: List[FixedPoint]
    grid_resolution: float
    snr_db: float = float("nan")
    mu: float = float("nan")

    @property
    def stable(self):
        return [p for p in self.points if p.stability == "stable"]

    def to_dict(self):
        return {
            "snr_db": self.snr_db,
            "mu": self.mu,
            "grid_resolution": self.grid_resolution,
            "points": [
                {"eps_star": p.eps, "stability": p.stability, "uncertain": p.uncertain, "slope": p.slope, "se": p.se}
                for p in self.points
            ],
        }


class DensityEvolution:
    """DE map, trajectory and EXIT chart for one parameter set."""

    def __init__(self, params: SystemParams, outer_samples=DEFAULT_OUTER_SAMPLES, seed=0, bank=None, backend=None):
        if params.d_u < 2:
            raise ParamError("N_s", "d_u = 1 leaves the extrinsic decoder with no observed segment")
        self.params = params
        if bank is None:
            bank = CrnBank(params.n0, params.d_u - 1, outer_samples, seed)
        elif not bank.compatible(params):
            raise ParamError("bank", "bank segment structure does not match params")
        self.bank = bank
        self.backend = backend
        self.tau = dt_threshold(params.k)

    @property
    def samples(self):
        return self.bank.samples

    def f(self, eps):
        """``(f(eps), standard error)``."""
        eps = float(eps)
        if not 0.0 <= eps <= 1.0:
            raise ParamError("eps", f"must lie in [0, 1], got {eps}")
        cdf = poisson_cdf_table(self.params.d_bar_s * eps)
        C, D = segment_tables(self.params.sigma2, self.params.n0, len(cdf) - 1)
        total = total2 = 0.0
        for U_T, S_T in self.bank.chunks():
            t, t2 = kernels.crn_dt_sums(U_T, S_T, cdf, C, D, self.tau, backend=self.backend)
            total += t
            total2 += t2
        n = self.bank.samples
        mean = total / n
        var = max(total2 / n - mean * mean, 0.0)
        se = math.sqrt(var / (n - 1)) if n > 1 else 0.0
        return min(max(mean, 0.0), 1.0), se

    step = f

    def run(self, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS) -> DeTrajectory:
        if tol <= 0:
            raise ParamError("tol", f"must be > 0, got {tol}")
        if max_iters < 1:
            raise ParamError("max_iters", f"must be >= 1, got {max_iters}")
        eps = 1.0
        epsilons, ses = [1.0], [0.0]
        converged = False
        for _ in range(max_iters):
            new, se = self.f(eps)
            epsilons.append(new)
            ses.append(se)
            if abs(new - eps) < tol:
                converged = True
                eps = new
                break
            eps = new
        se = ses[-1]
        traj = DeTrajectory(
            epsilons=epsilons,
            ses=ses,
            converged=converged,
            fixed_point=eps,
            iterations=len(epsilons) - 1,
            se_at_fixed_point=se,
        )
        if not converged:
            traj.diagnostic = f"no convergence within {max_iters} iterations (last step {abs(epsilons[-1] - epsilons[-2]):.3g})"
        elif tol <= 3.0 * se:
            traj.se_limited = True
            traj.diagnostic = f"step tolerance {tol:g} is below 3*SE={3 * se:.3g}; fixed point resolved only to MC accuracy"
        return traj

    def exit_chart(self, grid=None, workers=1) -> ExitChart:
        grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
        if grid.size == 0:
            raise ParamError("grid", "empty grid")
        if np.any(np.diff(grid) < 0) or grid[0] < 0 or grid[-1] > 1:
            raise ParamError("grid", "grid must be sorted within [0, 1]")
        vals = _map(self.f, grid.tolist(), workers)
        return ExitChart(
            eps=grid,
            f=np.array([v[0] for v in vals]),
            se=np.array([v[1] for v in vals]),
            snr_db=self.params.ebno_db,
            mu=self.params.mu,
        )

    def fixed_points(self, chart=None, grid=None, workers=1) -> FixedPointReport:
        chart = self.exit_chart(grid, workers) if chart is None else chart
        return find_fixed_points(chart, self.f)


def _map(fn, items, workers):
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def find_fixed_points(chart: ExitChart, evaluator: Optional[Callable] = None, xtol=1e-7, max_bisect=60) -> FixedPointReport:
    """Locate crossings of ``f(eps) = eps`` on an EXIT chart.

    Sign changes of ``f - eps`` between grid points are refined by
    bisection with ``evaluator`` (``eps -> (f, se)``), or linear
    interpolation without one. Stability comes from a symmetric finite
    difference slope at spacing ``max(grid step, 10 SE)``. A point is
    ``uncertain`` when ``f - eps`` stays within 3 SE of zero on one side all
    the way to the neighbouring crossing, or when the slope disagrees with
    the crossing direction.
    """
    eps = np.asarray(chart.eps, dtype=np.float64)
    f = np.asarray(chart.f, dtype=np.float64)
    se = np.asarray(chart.se, dtype=np.float64)
    if eps.size < 2:
        raise ParamError("chart", "need at least 2 chart points")
    d = f - eps
    steps = np.diff(eps)
    resolution = float(steps.max())

    def ev(x):
        if evaluator is None:
            return float(np.interp(x, eps, f)), float(np.interp(x, eps, se))
        return evaluator(x)

    found = []  # (eps*, direction, left index)
    for i in range(eps.size):
        if d[i] == 0.0:
            found.append((eps[i], 0, i))
    for i in range(eps.size - 1):
        if d[i] * d[i + 1] >= 0:
            continue
        lo, hi, dlo = eps[i], eps[i + 1], d[i]
        if evaluator is None:
            x = lo + (hi - lo) * d[i] / (d[i] - d[i + 1])
        else:
            for _ in range(max_bisect):
                if hi - lo <= xtol:
                    break
                mid = 0.5 * (lo + hi)
                dm = ev(mid)[0] - mid
                if dm == 0.0:
                    lo = hi = mid
                    break
                if (dm > 0) == (dlo > 0):
                    lo, dlo = mid, dm
                else:
                    hi = mid
            x = 0.5 * (lo + hi)
        found.append((x, -1 if d[i] > 0 else 1, i))

    found.sort()
    resolved = np.abs(d) > 3.0 * se
    points = []
    for n, (x, direction, i) in enumerate(found):
        fx, sx = ev(x)
        j = min(i, steps.size - 1)
        h = max(float(steps[j]), 10.0 * sx)
        a, b = max(x - h, 0.0), min(x + h, 1.0)
        slope = (ev(b)[0] - ev(a)[0]) / (b - a) if b > a else float("nan")
        stable = slope < 1.0
        # the residual must leave the noise band on both sides before the neighbouring crossing
        left_lo = found[n - 1][2] + 1 if n > 0 else 0
        right_hi = found[n + 1][2] if n + 1 < len(found) else eps.size - 1
        right_lo = i + 1 if direction != 0 else i
        left_ok = i < left_lo or resolved[left_lo:i + 1].any() or (direction == 0 and i == 0)
        right_ok = right_lo > right_hi or resolved[right_lo:right_hi + 1].any() or (direction == 0 and i == eps.size - 1)
        disagree = direction != 0 and (direction < 0) != stable
        uncertain = not (left_ok and right_ok) or disagree
        points.append(FixedPoint(float(x), "stable" if stable else "unstable", bool(uncertain), float(slope), float(sx)))
    return FixedPointReport(points, resolution, chart.snr_db, chart.mu)


def _as_seed(rng):
    if rng is None:
        raise ParamError("seed", "an explicit seed or random stream is required")
    return seed_from(rng)


def de_step(eps_prev, params: SystemParams, outer_samples=DEFAULT_OUTER_SAMPLES, rng=None, backend=None):
    """One fused Monte Carlo DE step; returns ``(eps, se)``."""
    if not 0.0 <= eps_prev <= 1.0:
        raise ParamError("eps_prev", f"must lie in [0, 1], got {eps_prev}")
    return DensityEvolution(params, outer_samples, _as_seed(rng), backend=backend).f(eps_prev)


def run_de(params, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS, outer_samples=DEFAULT_OUTER_SAMPLES, rng=None, backend=None):
    return DensityEvolution(params, outer_samples, _as_seed(rng), backend=backend).run(tol, max_iters)


def exit_chart(params, grid=None, outer_samples=DEFAULT_OUTER_SAMPLES, rng=None, workers=1, backend=None):
    return DensityEvolution(params, outer_samples, _as_seed(rng), backend=backend).exit_chart(grid, workers)


@dataclass
class PupeRow:
    mu: float
    snr_db: float
    eps_star: float
    converged: bool
    iterations: int
    se: float


def pupe_curve(mu_list, snr_grid, template: SystemParams, rng=None, outer_samples=DEFAULT_OUTER_SAMPLES,
               tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS, workers=1, backend=None) -> List[PupeRow]:
    """DE fixed point reached from ``eps = 1`` on a (mu, SNR) grid.

    All cells share one random-number bank. Rows are ordered by mu, then SNR.
    """
    mu_list = [float(m) for m in mu_list]
    snr_grid = [float(s) for s in snr_grid]
    if not mu_list or not snr_grid:
        raise ParamError("grid", "mu list and SNR grid must be nonempty")
    seed = _as_seed(rng)
    bank = CrnBank(template.n0, template.d_u - 1, outer_samples, seed)
    cells = [(m, s) for m in mu_list for s in snr_grid]

    def cell(ms):
        m, s = ms
        p = template.with_mu(m).with_snr(s)
        t = DensityEvolution(p, bank=bank, backend=backend).run(tol, max_iters)
        return PupeRow(m, s, t.fixed_point, t.converged, t.iterations, t.se_at_fixed_point)

    return _map(cell, cells, workers)


def threshold_search(mu, target_pupe, snr_lo, snr_hi, tol_db, template: SystemParams, rng=None,
                     outer_samples=DEFAULT_OUTER_SAMPLES, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS, backend=None):
    """Smallest SNR (to ``tol_db``) at which the DE fixed point is <= target.

    Bisects on SNR assuming the reached fixed point is non-increasing in SNR.
    """
    if tol_db <= 0:
        raise ParamError("tol_db", f"must be > 0, got {tol_db}")
    if snr_lo >= snr_hi:
        raise BracketError("snr_lo", f"inverted bracket: snr_lo={snr_lo} >= snr_hi={snr_hi}")
    if target_pupe >= 1.0:
        return float(snr_lo)
    bank = CrnBank(template.n0, template.d_u - 1, outer_samples, _as_seed(rng))
    base = template.with_mu(mu)

    def eps_at(snr):
        return DensityEvolution(base.with_snr(snr), bank=bank, backend=backend).run(tol, max_iters).fixed_point

    e_lo, e_hi = eps_at(snr_lo), eps_at(snr_hi)
    if not e_lo > target_pupe:
        raise BracketError("snr_lo", f"eps*={e_lo:.4g} at {snr_lo} dB already meets target {target_pupe:g}")
    if not e_hi <= target_pupe:
        raise BracketError("snr_hi", f"eps*={e_hi:.4g} at {snr_hi} dB does not meet target {target_pupe:g}")
    lo, hi = float(snr_lo), float(snr_hi)
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if eps_at(mid) > target_pupe:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
