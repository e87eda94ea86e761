"""Acceptance criteria, each run at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line (repeated in the pytest
terminal summary). Run directly with ``python tests/test_acceptance.py``
or through pytest with ``-m acceptance``.

SNR convention: Eb/N0 is computed from the ``n_c`` data symbols alone.
Under it, the high-density transition sits about 0.3 dB below the
reference operating points named in criteria 2 and 3, close to the
preamble overhead ``10 log10((n_c + n_pre)/n_c) = 0.289 dB``. Those two
criteria are therefore run twice: at the literal SNRs (these fail) and at
the literal SNRs minus that overhead.
"""
import hashlib
import json
import math
import os
import sys
import time

import numpy as np
import pytest
from scipy import stats

from sbidma import (DensityEvolution, PhiOracle, derive, phi_dt, phi_exact_small, phi_memoized, pupe_curve,
                    run_de, sample_graph, sample_info_density, simulate_pupe, threshold_search)
from sbidma.cli import db_grid, main
from sbidma.dt_oracle import mutual_information
from sbidma.params import preamble_overhead_db
from sbidma.rng import substream

from conftest import MU_HIGH, MU_LOW, REFERENCE, acceptance_report

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

SAMPLES = 100_000
SEED = 2024
OFFSET = preamble_overhead_db(4000)


def params(mu, snr=0.0):
    return derive(dict(REFERENCE, mu=mu, ebno_db=snr))


def fixed_point_structure(mu, snr):
    t0 = time.perf_counter()
    de = DensityEvolution(params(mu, snr), SAMPLES, SEED)
    rep = de.fixed_points()
    f0, se0 = de.f(0.0)
    return rep, f0, se0, time.perf_counter() - t0


def fmt_points(rep):
    return "[" + ", ".join(f"{p.eps:.4g}/{p.stability[0]}{'?' if p.uncertain else ''}" for p in rep.points) + "]"


# 1 -------------------------------------------------------------------------

def test_criterion_1_low_density_unique_fixed_point():
    oks, details = [], []
    for snr in (0.0, 0.18):
        rep, f0, se0, secs = fixed_point_structure(MU_LOW, snr)
        ok = len(rep.points) == 1
        gap = bound = float("nan")
        if ok:
            p = rep.points[0]
            gap, bound = p.eps - f0, 3 * p.se + 1e-3
            ok = gap <= bound and secs < 120
        oks.append(ok)
        details.append(f"{snr:+.2f} dB: points {fmt_points(rep)} eps*-f(0)={gap:.2e} <= {bound:.2e} ({secs:.0f}s)")
    assert acceptance_report("criterion 1 (low-density unique fixed point)", all(oks), "; ".join(details))


# 2 -------------------------------------------------------------------------

def criterion_2(shift):
    rep0, _, _, _ = fixed_point_structure(MU_HIGH, 0.0 - shift)
    stable = [p.eps for p in rep0.stable]
    ok0 = len(rep0.points) >= 3 and max(stable) >= 0.3
    rep1, f0, _, _ = fixed_point_structure(MU_HIGH, 0.18 - shift)
    ok1 = len(rep1.points) == 1 and rep1.points[0].eps <= 2 * f0
    detail = (f"{0.0 - shift:+.3f} dB: {fmt_points(rep0)} (need >=3, max stable >= 0.3); "
              f"{0.18 - shift:+.3f} dB: {fmt_points(rep1)} (need 1 point <= 2 f(0) = {2 * f0:.4g})")
    return ok0 and ok1, detail


def test_criterion_2_high_density_structure():
    ok, detail = criterion_2(0.0)
    assert acceptance_report("criterion 2 (high-density structure, literal SNR)", ok, detail)


def test_criterion_2_high_density_structure_overhead_mapped():
    ok, detail = criterion_2(OFFSET)
    assert acceptance_report(f"criterion 2 (high-density structure, SNR - {OFFSET:.3f} dB)", ok, detail)


# 3 -------------------------------------------------------------------------

def criterion_3(shift):
    grid = [round(s - shift, 6) for s in db_grid(-0.3, 0.4, 0.02)]
    rows = pupe_curve([MU_HIGH], grid, params(MU_HIGH), rng=SEED, outer_samples=SAMPLES)
    eps = np.array([r.eps_star for r in rows])
    snr = np.array(grid)
    lo_edge, hi_edge = 0.0 - shift, 0.18 - shift
    best = (0.0, None, None)
    for i in range(len(snr)):
        for j in range(i + 1, len(snr)):
            # window [snr_i, snr_j] must contain (lo_edge, hi_edge] and be at most 0.2 dB wide
            if snr[i] <= lo_edge + 1e-9 and snr[j] >= hi_edge - 1e-9 and snr[j] - snr[i] <= 0.2 + 1e-9:
                ratio = eps[i] / eps[j]
                if ratio > best[0]:
                    best = (ratio, snr[i], snr[j])
    ratio, a, b = best
    ok = ratio >= 10
    detail = f"best window [{a:+.3f}, {b:+.3f}] dB: eps* {eps[snr == a][0]:.4g} -> {eps[snr == b][0]:.4g}, drop x{ratio:.2f} (need >= 10)"
    return ok, detail


def test_criterion_3_phase_transition():
    ok, detail = criterion_3(0.0)
    assert acceptance_report("criterion 3 (phase transition, literal SNR)", ok, detail)


def test_criterion_3_phase_transition_overhead_mapped():
    ok, detail = criterion_3(OFFSET)
    assert acceptance_report(f"criterion 3 (phase transition, SNR - {OFFSET:.3f} dB)", ok, detail)


# 4 -------------------------------------------------------------------------

def test_criterion_4_bound_ordering():
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    worst, failures, n = -np.inf, 0, 30
    for case in range(n):
        k = int(rng.integers(1, 5))
        n0 = int(rng.integers(1, 5))
        d_u = int(rng.integers(2, 5))
        snr = float(rng.uniform(-2, 6))
        g = rng.integers(0, 4, d_u - 1).tolist()
        p = derive(dict(k=k, n_c=n0 * d_u, n0=n0, mu=1e-3, ebno_db=snr))
        exact = phi_exact_small(g, k, n0 * d_u, n0, p.sigma2, 200, 200, substream(SEED, "exact", case))
        dt = phi_dt(g, p, SAMPLES, substream(SEED, "dt", case))
        excess = (exact.value - dt.value) / (3 * math.hypot(exact.std_err, dt.std_err) or 1.0)
        worst = max(worst, excess)
        failures += exact.value > dt.value + 3 * math.hypot(exact.std_err, dt.std_err)
    secs = time.perf_counter() - t0
    ok = failures == 0 and secs < 300
    detail = f"{n} instances, {failures} violations, max (exact-dt)/(3 SE) = {worst:.3f}, {secs:.0f}s"
    assert acceptance_report("criterion 4 (exact <= DT bound)", ok, detail)


# 5 -------------------------------------------------------------------------

def test_criterion_5_information_density_calibration():
    rng = np.random.default_rng(5)
    p = params(MU_LOW)
    zs = []
    for i in range(10):
        snr = float(rng.uniform(-2, 3))
        g = rng.integers(0, 15, p.d_u - 1)
        q = p.with_snr(snr)
        draws = sample_info_density(g, q, substream(SEED, "calib", i), size=SAMPLES)
        se = draws.std(ddof=1) / math.sqrt(SAMPLES)
        zs.append((draws.mean() - mutual_information(g, q)) / se)
    zs = np.array(zs)
    ok = bool(np.all(np.abs(zs) <= 3))
    assert acceptance_report("criterion 5 (info density mean)", ok, f"10 profiles, max |z| = {np.abs(zs).max():.2f} (need <= 3)")


# 6 -------------------------------------------------------------------------

@pytest.mark.parametrize("K_a", [25, 100])
def test_criterion_6_de_simulation_agreement(K_a):
    N, frames = 600, 2000
    p = derive(dict(REFERENCE, K_a=K_a, N=N))
    thr = threshold_search(p.mu, 5e-2, -1.0, 2.0, 0.01, p, rng=SEED, outer_samples=SAMPLES)
    snr = thr + 0.2
    de = run_de(p.with_mu(p.mu).with_snr(snr), rng=SEED, outer_samples=SAMPLES)
    t0 = time.perf_counter()
    est = simulate_pupe(p.with_snr(snr), frames, SEED, extrinsic=True)
    secs = time.perf_counter() - t0
    tol = max(3 * est.ci95, 2e-2)
    gap = abs(est.pupe - de.fixed_point)
    detail = (f"K_a={K_a}: DE threshold {thr:+.3f} dB, at {snr:+.3f} dB DE eps*={de.fixed_point:.4g}, "
              f"sim PUPE={est.pupe:.4g} +- {est.ci95:.2g} over {frames} frames ({secs:.0f}s); |gap|={gap:.3g} <= {tol:.3g}")
    assert acceptance_report(f"criterion 6 (DE vs simulation, K_a={K_a})", gap <= tol, detail)


# 7 -------------------------------------------------------------------------

def test_criterion_7_degree_law():
    p = derive(dict(REFERENCE, K_a=100, N=600))
    frames = 1000
    degrees = np.concatenate([sample_graph(p, substream(SEED, "degree", f)).slot_degrees() for f in range(frames)])
    n, q = p.K_a, p.N_s / p.N
    counts = np.bincount(degrees, minlength=n + 1)
    pmf = stats.binom.pmf(np.arange(n + 1), n, q)
    # merge tails until every bin expects at least 5 observations
    expected = pmf * degrees.size
    lo = int(np.argmax(np.cumsum(expected) >= 5))
    hi = int(n - np.argmax(np.cumsum(expected[::-1]) >= 5))
    obs = np.concatenate([[counts[:lo + 1].sum()], counts[lo + 1:hi], [counts[hi:].sum()]])
    exp = np.concatenate([[expected[:lo + 1].sum()], expected[lo + 1:hi], [expected[hi:].sum()]])
    exp *= obs.sum() / exp.sum()
    pval = stats.chisquare(obs, exp).pvalue
    ks = np.arange(n + 1)
    tv_law = 0.5 * (np.abs(pmf - stats.poisson.pmf(ks, p.d_bar_s)).sum() + stats.poisson.sf(n, p.d_bar_s))
    emp = counts / counts.sum()
    tv_emp = 0.5 * (np.abs(emp - stats.poisson.pmf(ks, p.d_bar_s)).sum() + stats.poisson.sf(n, p.d_bar_s))
    ok = pval > 0.01 and tv_law <= 0.02
    detail = (f"chi-square vs Binomial({n}, {q:.4f}) p={pval:.3f} (need > 0.01); TV(Binomial, Poisson({p.d_bar_s:.2f}))="
              f"{tv_law:.4f}, empirical TV={tv_emp:.4f} (need <= 0.02)")
    assert acceptance_report("criterion 7 (degree law)", ok, detail)


# 8 -------------------------------------------------------------------------

def _cli_outputs(tmp_path, argv):
    out = {}
    for workers in (1, 2, 3):
        d = tmp_path / f"{argv[0]}-{workers}"
        assert main(argv + ["--workers", str(workers), "--out", str(d)]) == 0
        out[workers] = {f: hashlib.sha256((d / f).read_bytes()).hexdigest() for f in sorted(os.listdir(d)) if f != "manifest.json"}
    return out


def test_criterion_8_determinism_and_monotonicity(tmp_path):
    checks = {}
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(dict(REFERENCE, mu=MU_HIGH, seed=SEED, outer_samples=20000, phi_samples=5000)))
    runs = [
        ["exit-chart", "--config", str(cfg), "--snr", "-0.3", "0.0"],
        ["pupe-curve", "--config", str(cfg), "--mu", str(MU_LOW), str(MU_HIGH), "--snr-grid", "-0.3", "0.1", "0.1"],
        ["simulate", "--config", str(cfg), "--K-a", "100", "--N", "600", "--snr", "0.0", "--frames", "20", "--trace",
         "--extrinsic"],
    ]
    identical = True
    for argv in runs:
        outs = _cli_outputs(tmp_path, argv)
        identical &= outs[1] == outs[2] == outs[3] and bool(outs[1])
    checks["byte-identical outputs for workers 1/2/3"] = identical

    monotone = True
    for mu in (MU_LOW, MU_HIGH):
        for snr in (-0.5, -0.3, -0.1, 0.0, 0.18):
            t = run_de(params(mu, snr), rng=SEED, outer_samples=SAMPLES)
            monotone &= all(b <= a for a, b in zip(t.epsilons, t.epsilons[1:]))
    checks["trajectories non-increasing (10 runs)"] = bool(monotone)

    rng = np.random.default_rng(8)
    p = params(MU_HIGH)
    phi_ok = True
    for i in range(10):
        g = rng.integers(0, 6, p.d_u - 1)
        h = g + rng.integers(0, 3, g.size) * (rng.random(g.size) < 0.5)
        a = phi_dt(g, p, 20000, substream(SEED, "mono", i))
        b = phi_dt(h, p, 20000, substream(SEED, "mono", i))
        phi_ok &= b.value >= a.value - 3 * math.hypot(a.std_err, b.std_err)
    checks["phi componentwise monotone in g (10 CRN pairs, 3 SE)"] = bool(phi_ok)

    perm_exact = perm_stat = True
    oracle = PhiOracle(p, 20000, seed=SEED)
    cache = {}
    for i in range(10):
        g = rng.integers(0, 8, p.d_u - 1)
        perm = rng.permutation(g)
        perm_exact &= oracle(g) == oracle(perm)
        perm_exact &= phi_memoized(g, p, 5000, substream(SEED, "m", i), cache=cache) == \
            phi_memoized(perm, p, 5000, substream(SEED, "m2", i), cache=cache)
        a = phi_dt(g, p, 20000, substream(SEED, "pa", i))
        b = phi_dt(perm, p, 20000, substream(SEED, "pb", i))
        perm_stat &= abs(a.value - b.value) <= 3 * math.hypot(a.std_err, b.std_err)
    checks["phi permutation invariant (exact via keys)"] = bool(perm_exact)
    checks["phi permutation invariant (independent streams, 3 SE)"] = bool(perm_stat)

    ok = all(checks.values())
    detail = "; ".join(f"{k}: {'ok' if v else 'VIOLATED'}" for k, v in checks.items())
    assert acceptance_report("criterion 8 (determinism & monotonicity)", ok, detail)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
