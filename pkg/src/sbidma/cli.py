"""Command-line front end.

Every subcommand reads a JSON config (system parameters plus run settings),
writes ``#``-headed CSV files into ``--out`` and a ``manifest.json`` listing
their digests. Exit codes: 0 success, 2 configuration error, 3 numerical
non-convergence.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__, io
from .de_engine import (
    DEFAULT_MAX_ITERS,
    DEFAULT_OUTER_SAMPLES,
    DEFAULT_TOL,
    BracketError,
    CrnBank,
    DensityEvolution,
    default_grid,
    find_fixed_points,
    pupe_curve,
    threshold_search,
)
from .dt_oracle import phi_dt
from .graph_sim import DEFAULT_MAX_ITERS as SIM_MAX_ITERS
from .graph_sim import DEFAULT_PHI_SAMPLES, sample_graph, simulate_pupe
from .params import PARAM_KEYS, ParamError, derive, users_from_mu
from .rng import substream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3

RUN_KEYS = {
    "seed": None,
    "outer_samples": DEFAULT_OUTER_SAMPLES,
    "phi_samples": DEFAULT_PHI_SAMPLES,
    "tol": DEFAULT_TOL,
    "max_iters": DEFAULT_MAX_ITERS,
    "sim_max_iters": SIM_MAX_ITERS,
}


class UsageError(Exception):
    pass


def load_config(path=None, overrides=None):
    """Read a config file and apply ``overrides``; keys starting with ``_`` are comments."""
    raw = {}
    if path:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ParamError("config", f"cannot read {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ParamError("config", "top level must be a JSON object")
    raw = {k: v for k, v in raw.items() if not str(k).startswith("_")}
    overrides = overrides or {}
    if overrides.get("mu") is None and (overrides.get("K_a") is not None or overrides.get("N") is not None):
        raw.pop("mu", None)  # re-derived from the new frame geometry
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    unknown = sorted(set(raw) - set(PARAM_KEYS) - set(RUN_KEYS))
    if unknown:
        raise ParamError(unknown[0], "unknown config key")
    params = derive({k: v for k, v in raw.items() if k in PARAM_KEYS})
    run = {k: raw.get(k, default) for k, default in RUN_KEYS.items()}
    if run["seed"] is None:
        raise ParamError("seed", "a seed is required (config key 'seed' or --seed)")
    if isinstance(run["seed"], bool) or not isinstance(run["seed"], int) or run["seed"] < 0:
        raise ParamError("seed", f"must be a nonnegative integer, got {run['seed']!r}")
    for key in ("outer_samples", "phi_samples", "max_iters", "sim_max_iters"):
        if isinstance(run[key], bool) or not isinstance(run[key], int) or run[key] < 1:
            raise ParamError(key, f"must be a positive integer, got {run[key]!r}")
    if not isinstance(run["tol"], (int, float)) or not run["tol"] > 0:
        raise ParamError("tol", f"must be > 0, got {run['tol']!r}")
    snapshot = dict(params.to_dict())
    snapshot.update(run)
    return params, run, snapshot


def db_grid(lo, hi, step):
    """Inclusive ``lo..hi`` grid in dB, rounded to 1e-6 dB."""
    if step <= 0:
        raise UsageError("grid step must be > 0")
    if hi < lo:
        raise UsageError("grid upper end below lower end")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 6) + 0.0 for i in range(n)]


def _snr_list(args):
    if getattr(args, "snr_grid", None):
        snrs = db_grid(*args.snr_grid)
    elif getattr(args, "snr", None):
        snrs = [round(float(s), 6) + 0.0 for s in args.snr]
    else:
        snrs = []
    if not snrs:
        raise UsageError("no SNR values given (use --snr or --snr-grid)")
    return snrs


def _tag(snr):
    return f"{snr:+.6f}dB"


def _grid(args):
    if args.eps_grid:
        n = int(args.eps_grid)
        if n < 2:
            raise UsageError("--eps-grid needs at least 2 points")
        return np.linspace(0.0, 1.0, n)
    return default_grid()


class _Run:
    def __init__(self, args, subcommand, overrides):
        self.params, self.run, self.config = load_config(args.config, overrides)
        self.subcommand = subcommand
        self.seed = self.run["seed"]
        self.out = args.out
        self.workers = args.workers
        os.makedirs(self.out, exist_ok=True)
        self.manifest = io.RunManifest(subcommand, self.config, self.seed, self.out)

    def header(self, **extra):
        return io.header_lines(self.subcommand, self.config, self.seed, extra)

    def csv(self, name, columns, rows, **extra):
        digest = io.write_csv(os.path.join(self.out, name), self.header(**extra), columns, rows)
        self.manifest.add(name, digest)

    def json(self, name, obj):
        obj = dict(obj, tool=f"sbidma {__version__}", subcommand=self.subcommand, seed=self.seed,
                   config=self.config, config_digest=io.config_digest(self.config))
        self.manifest.add(name, io.write_json(os.path.join(self.out, name), obj))

    def text(self, name, lines):
        body = "\n".join(self.header() + list(lines)) + "\n"
        self.manifest.add(name, io.write_text(os.path.join(self.out, name), body))

    def finish(self):
        self.manifest.write()

    def bank(self):
        return CrnBank(self.params.n0, self.params.d_u - 1, self.run["outer_samples"], self.seed)


def _parse_set(items):
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _common_overrides(args):
    return {**_parse_set(args.set), "seed": args.seed, "outer_samples": getattr(args, "samples", None),
            "phi_samples": getattr(args, "phi_samples", None), "mu": getattr(args, "mu_value", None)}


def cmd_exit_chart(args):
    snrs = _snr_list(args)
    r = _Run(args, "exit-chart", _common_overrides(args))
    grid = _grid(args)
    bank = r.bank()
    reports = []
    for snr in snrs:
        de = DensityEvolution(r.params.with_snr(snr), bank=bank)
        chart = de.exit_chart(grid, r.workers)
        r.csv(f"exit_chart_{_tag(snr)}.csv", ["eps", "f_eps", "se"], chart.rows(), snr_db=snr)
        reports.append(find_fixed_points(chart, de.f).to_dict())
    r.json("fixed_points.json", {"reports": reports})
    r.finish()
    for rep in reports:
        pts = ", ".join(f"{p['eps_star']:.4g} ({p['stability']}{', uncertain' if p['uncertain'] else ''})" for p in rep["points"])
        print(f"{rep['snr_db']:+.3f} dB: {len(rep['points'])} fixed point(s): {pts}")
    return EXIT_OK


def cmd_fixed_points(args):
    snrs = _snr_list(args)
    r = _Run(args, "fixed-points", _common_overrides(args))
    grid = _grid(args)
    bank = r.bank()
    for snr in snrs:
        de = DensityEvolution(r.params.with_snr(snr), bank=bank)
        rep = de.fixed_points(grid=grid, workers=r.workers)
        rows = [(p.eps, p.stability, p.uncertain) for p in rep.points]
        r.csv(f"fixed_points_{_tag(snr)}.csv", ["eps_star", "stability", "uncertain"], rows,
              snr_db=snr, grid_resolution=rep.grid_resolution)
        print(f"{snr:+.3f} dB: " + ", ".join(f"{e:.4g} {s}" for e, s, _ in rows))
    r.finish()
    return EXIT_OK


def cmd_de_trajectory(args):
    snrs = _snr_list(args)
    r = _Run(args, "de-trajectory", _common_overrides(args))
    bank = r.bank()
    status = EXIT_OK
    for snr in snrs:
        t = DensityEvolution(r.params.with_snr(snr), bank=bank).run(r.run["tol"], r.run["max_iters"])
        r.csv(f"trajectory_{_tag(snr)}.csv", ["iter", "eps"], list(enumerate(t.epsilons)),
              snr_db=snr, converged=t.converged, fixed_point=t.fixed_point, se_at_fixed_point=t.se_at_fixed_point)
        print(f"{snr:+.3f} dB: eps* = {t.fixed_point:.6g} after {t.iterations} iterations"
              + ("" if t.converged else " (NOT converged)") + (f"; {t.diagnostic}" if t.diagnostic else ""))
        if not t.converged:
            status = EXIT_NONCONVERGENCE
    r.finish()
    return status


def cmd_pupe_curve(args):
    snrs = _snr_list(args)
    r = _Run(args, "pupe-curve", _common_overrides(args))
    mus = args.mu or [r.params.mu]
    rows = pupe_curve(mus, snrs, r.params, rng=r.seed, outer_samples=r.run["outer_samples"],
                      tol=r.run["tol"], max_iters=r.run["max_iters"], workers=r.workers)
    r.csv("pupe_curve.csv", ["mu", "snr_db", "eps_star", "converged"],
          [(row.mu, row.snr_db, row.eps_star, row.converged) for row in rows], mu_list=mus, snr_db=snrs)
    r.finish()
    for row in rows:
        print(f"mu={row.mu:.4g} snr={row.snr_db:+.3f} dB eps*={row.eps_star:.5g}" + ("" if row.converged else " (NOT converged)"))
    return EXIT_OK if all(row.converged for row in rows) else EXIT_NONCONVERGENCE


def cmd_simulate(args):
    if args.frames is not None and args.frames < 1:
        raise UsageError("--frames must be >= 1")
    overrides = _common_overrides(args)
    overrides.update(K_a=args.K_a, N=args.N)
    if args.snr:
        overrides["ebno_db"] = float(args.snr[0])
    r = _Run(args, "simulate", overrides)
    if not r.params.finite_frame:
        raise ParamError("K_a", "simulate needs K_a and N (config or --K-a/--N)")
    frames = args.frames or 1000
    est = simulate_pupe(r.params, frames, r.seed, extrinsic=args.extrinsic, phi_samples=r.run["phi_samples"],
                        max_iters=r.run["sim_max_iters"], workers=r.workers, trace=args.trace)
    extra = dict(frames=frames, extrinsic=args.extrinsic, users_simulated=est.users_simulated)
    r.csv("simulate_summary.csv", ["mu", "snr_db", "pupe", "ci95", "frames"],
          [(r.params.mu, r.params.ebno_db, est.pupe, est.ci95, est.frames)], **extra)
    hist = est.iteration_histogram()
    r.csv("iterations.csv", ["iterations", "frames"], [(i, int(c)) for i, c in enumerate(hist) if c], **extra)
    if args.trace:
        r.csv("trace.csv", ["frame", "iter", "decoded_count"], est.trace, **extra)
    if args.dump_graph:
        graph = sample_graph(r.params, substream(r.seed, "frame", 0))
        r.text("graph_frame0.txt", graph.dump())
    r.finish()
    print(f"PUPE = {est.pupe:.5g} +- {est.ci95:.2g} (95%) over {est.frames} frames, {est.users_simulated} users")
    return EXIT_OK


def cmd_threshold(args):
    r = _Run(args, "threshold", _common_overrides(args))
    lo, hi = args.bracket
    mus = args.mu or [r.params.mu]
    rows = []
    for mu in mus:
        snr = threshold_search(mu, args.target, lo, hi, args.tol_db, r.params, rng=r.seed,
                               outer_samples=r.run["outer_samples"], tol=r.run["tol"], max_iters=r.run["max_iters"])
        rows.append((mu, users_from_mu(mu), args.target, snr))
        print(f"mu={mu:.4g} (K_a ~ {users_from_mu(mu):.1f}): threshold {snr:+.4f} dB for PUPE <= {args.target:g}")
    r.csv("threshold.csv", ["mu", "K_a_equiv", "target", "snr_db"], rows, bracket=[lo, hi], tol_db=args.tol_db)
    r.finish()
    return EXIT_OK


def cmd_phi_table(args):
    r = _Run(args, "phi-table", _common_overrides(args))
    m = r.params.d_u - 1 if not args.full else r.params.d_u
    profiles = []
    for text in args.profile or []:
        profiles.append([int(x) for x in text.split(",") if x.strip()])
    if args.uniform:
        lo, hi = args.uniform
        profiles.extend([[c] * m for c in range(lo, hi + 1)])
    if not profiles:
        raise UsageError("no profiles given (use --profile or --uniform)")
    samples = r.run["phi_samples"]
    rows = []
    for i, g in enumerate(profiles):
        est = phi_dt(g, r.params, samples, substream(r.seed, "phi-table", i))
        rows.append((" ".join(map(str, g)), est.value, est.std_err, est.samples))
    r.csv("phi_table.csv", ["g", "phi", "se", "samples"], rows)
    r.finish()
    for g, v, se, n in rows:
        print(f"phi = {v:.6g} +- {se:.2g}  ({n} samples)  g = {g if len(g) < 60 else g[:57] + '...'}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="sbidma", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"sbidma {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, snr=True):
        sp.add_argument("--config", "-c", help="JSON config file")
        sp.add_argument("--seed", type=int, help="random seed (overrides config)")
        sp.add_argument("--out", "-o", default=".", help="output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (JSON value)")
        sp.add_argument("--workers", type=int, default=1, help="threads (results do not depend on this)")
        sp.add_argument("--samples", type=int, help="Monte Carlo samples per evaluation")
        sp.add_argument("--phi-samples", type=int, dest="phi_samples", help="oracle bank size (simulate, phi-table)")
        sp.add_argument("--density", type=float, dest="mu_value", help="user density mu (overrides config)")
        if snr:
            sp.add_argument("--snr", type=float, nargs="+", help="Eb/N0 values in dB")
            sp.add_argument("--snr-grid", type=float, nargs=3, metavar=("LO", "HI", "STEP"), help="Eb/N0 grid in dB")

    sp = sub.add_parser("exit-chart", help="f(eps) on a grid, one CSV per SNR, plus fixed points")
    common(sp)
    sp.add_argument("--eps-grid", type=int, help="uniform grid size (default: 101 uniform + 10 geometric near 0)")
    sp.set_defaults(func=cmd_exit_chart)

    sp = sub.add_parser("fixed-points", help="fixed points of the DE map with stability")
    common(sp)
    sp.add_argument("--eps-grid", type=int)
    sp.set_defaults(func=cmd_fixed_points)

    sp = sub.add_parser("de-trajectory", help="DE recursion from eps=1")
    common(sp)
    sp.set_defaults(func=cmd_de_trajectory)

    sp = sub.add_parser("pupe-curve", help="DE-predicted PUPE over (mu, SNR)")
    common(sp)
    sp.add_argument("--mu", type=float, nargs="+", help="user densities")
    sp.set_defaults(func=cmd_pupe_curve)

    sp = sub.add_parser("simulate", help="finite-frame peeling simulation")
    common(sp)
    sp.add_argument("--frames", type=int)
    sp.add_argument("--K-a", type=int, dest="K_a")
    sp.add_argument("--N", type=int)
    sp.add_argument("--extrinsic", action="store_true", help="decode from all slots but one held-out slot")
    sp.add_argument("--trace", action="store_true", help="write per-iteration decoded counts")
    sp.add_argument("--dump-graph", action="store_true", help="write the access patterns of frame 0")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("threshold", help="SNR at which the DE fixed point reaches a target PUPE")
    common(sp, snr=False)
    sp.add_argument("--mu", type=float, nargs="+")
    sp.add_argument("--target", type=float, default=5e-2)
    sp.add_argument("--bracket", type=float, nargs=2, default=(-1.0, 2.0), metavar=("LO", "HI"))
    sp.add_argument("--tol-db", type=float, default=0.01, dest="tol_db")
    sp.set_defaults(func=cmd_threshold)

    sp = sub.add_parser("phi-table", help="DT failure probability for given interferer-count profiles")
    common(sp, snr=False)
    sp.add_argument("--profile", action="append", help="comma-separated counts, repeatable")
    sp.add_argument("--uniform", type=int, nargs=2, metavar=("LO", "HI"), help="all-equal profiles of d_u-1 counts")
    sp.add_argument("--full", action="store_true", help="use d_u segments for --uniform (no held-out slot)")
    sp.set_defaults(func=cmd_phi_table)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (ParamError, BracketError) as exc:
        print(f"sbidma: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
