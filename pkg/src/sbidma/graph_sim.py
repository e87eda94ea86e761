"""Finite-frame TIN-SIC simulation on the user/slot bipartite graph.

The receiver is simulated at the level of residual interferer counts: the
residual observation of a slot is summarised by how many attached users are
still undecoded. A user with counts ``g`` over its slots decodes iff its
latent uniform ``u`` satisfies ``u >= phi(g)``; decoded users are cancelled
from every slot they touch.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .dt_oracle import PhiOracle
from .params import ParamError, SystemParams
from .rng import substream

DEFAULT_MAX_ITERS = 100
DEFAULT_PHI_SAMPLES = 10_000


@dataclass
class FrameGraph:
    N: int
    patterns: np.ndarray  # (K_a, N_s) slot indices, 0-based
    latent: np.ndarray  # (K_a,) uniforms
    held_out: np.ndarray  # (K_a,) position in the pattern ignored in extrinsic mode
    decoded: np.ndarray = None
    slot_ptr: np.ndarray = field(init=False, repr=False)
    slot_users: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.patterns = np.asarray(self.patterns, dtype=np.int64)
        K_a, N_s = self.patterns.shape
        if self.decoded is None:
            self.decoded = np.zeros(K_a, dtype=bool)
        users = np.repeat(np.arange(K_a), N_s)
        slots = self.patterns.ravel()
        order = np.argsort(slots, kind="stable")
        self.slot_users = users[order]
        self.slot_ptr = np.concatenate([[0], np.cumsum(np.bincount(slots, minlength=self.N))])

    @classmethod
    def from_patterns(cls, patterns, N, rng):
        patterns = np.asarray(patterns, dtype=np.int64)
        K_a, N_s = patterns.shape
        return cls(N, patterns, rng.random(K_a), rng.integers(0, N_s, K_a))

    @property
    def K_a(self):
        return self.patterns.shape[0]

    @property
    def N_s(self):
        return self.patterns.shape[1]

    def slot_degrees(self):
        return np.diff(self.slot_ptr)

    def users_of(self, slot):
        return self.slot_users[self.slot_ptr[slot]:self.slot_ptr[slot + 1]]

    def reset(self):
        self.decoded[:] = False

    def check(self):
        """Raise ``AssertionError`` if the adjacency is inconsistent."""
        K_a, N_s = self.patterns.shape
        assert self.patterns.min() >= 0 and self.patterns.max() < self.N
        for row in self.patterns:
            assert len(set(row.tolist())) == N_s, "access pattern repeats a slot"
        assert self.slot_ptr[-1] == K_a * N_s
        for s in range(self.N):
            for u in self.users_of(s):
                assert s in self.patterns[u]

    def dump(self):
        """One ``user_id:slot,slot,...`` line per user, slots numbered from 1."""
        return [f"{u}:" + ",".join(str(s + 1) for s in row) for u, row in enumerate(self.patterns.tolist())]


def sample_graph(params: SystemParams, rng) -> FrameGraph:
    """Independent uniform access patterns (ordered N_s-tuples of distinct slots)."""
    if not params.finite_frame:
        raise ParamError("K_a", "finite-frame simulation needs K_a and N")
    N, K_a, N_s = params.N, params.K_a, params.N_s
    if N < N_s:
        raise ParamError("N", f"N={N} is smaller than N_s={N_s}")
    patterns = np.argsort(rng.random((K_a, N)), axis=1)[:, :N_s]
    return FrameGraph(N, patterns, rng.random(K_a), rng.integers(0, N_s, K_a))


@dataclass
class PeelResult:
    decoded: np.ndarray
    iterations: int
    decoded_per_iter: List[int]


def peel(graph: FrameGraph, params: SystemParams, phi, max_iters=DEFAULT_MAX_ITERS, extrinsic=False, history=None) -> PeelResult:
    """Synchronous SIC on ``graph``; mutates ``graph.decoded``.

    Each iteration, every missing user is scored on the counts of other
    missing users in its slots (all ``N_s`` slots, or all but its held-out
    slot with ``extrinsic=True``); all successes are cancelled together at
    the end of the iteration. Stops when an iteration decodes nobody.
    ``history``, if a list, receives the residual count vector after every
    iteration.
    """
    if max_iters < 1:
        raise ParamError("max_iters", f"must be >= 1, got {max_iters}")
    patterns = graph.patterns
    residual = np.bincount(patterns[~graph.decoded].ravel(), minlength=graph.N)
    per_iter = []
    iterations = 0
    for _ in range(max_iters):
        missing = np.flatnonzero(~graph.decoded)
        if missing.size == 0:
            break
        iterations += 1
        counts = residual[patterns[missing]] - 1
        if extrinsic:
            counts[np.arange(missing.size), graph.held_out[missing]] = -1
        counts.sort(axis=1)
        if extrinsic:
            counts = counts[:, 1:]
        success = []
        for row, u in zip(counts.tolist(), missing.tolist()):
            try:
                value = phi(row).value
            except Exception as exc:
                raise RuntimeError(f"phi oracle failed for user {u} with counts {row}: {exc}") from exc
            if graph.latent[u] >= value:
                success.append(u)
        per_iter.append(len(success))
        if not success:
            break
        graph.decoded[success] = True
        residual -= np.bincount(patterns[success].ravel(), minlength=graph.N)
        if history is not None:
            history.append(residual.copy())
    return PeelResult(graph.decoded.copy(), iterations, per_iter)


@dataclass
class PupeEstimate:
    pupe: float
    ci95: float
    frames: int
    users_simulated: int
    iteration_counts: List[int] = field(default_factory=list, repr=False)
    trace: List[tuple] = field(default_factory=list, repr=False)

    def iteration_histogram(self):
        return np.bincount(self.iteration_counts) if self.iteration_counts else np.zeros(0, dtype=int)


def simulate_pupe(params: SystemParams, frames, seed, extrinsic=False, phi_samples=DEFAULT_PHI_SAMPLES,
                  max_iters=DEFAULT_MAX_ITERS, workers=1, trace=False, oracle: Optional[PhiOracle] = None) -> PupeEstimate:
    """Per-user error probability over ``frames`` independent frames.

    Frame ``f`` draws its graph from ``substream(seed, "frame", f)``; the
    oracle bank is drawn from ``seed`` as well, so results do not depend on
    ``workers``.
    """
    if frames < 1:
        raise ParamError("frames", f"must be >= 1, got {frames}")
    if not params.finite_frame:
        raise ParamError("K_a", "finite-frame simulation needs K_a and N")
    if extrinsic and params.d_u < 2:
        raise ParamError("N_s", "extrinsic mode needs d_u >= 2")
    if oracle is None:
        oracle = PhiOracle(params, phi_samples, seed)

    def one(f):
        graph = sample_graph(params, substream(seed, "frame", f))
        res = peel(graph, params, oracle, max_iters, extrinsic)
        return int((~res.decoded).sum()), res.iterations, res.decoded_per_iter

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, range(frames)))
    else:
        results = [one(f) for f in range(frames)]

    failures = sum(r[0] for r in results)
    users = frames * params.K_a
    p = failures / users
    ci = 1.96 * math.sqrt(p * (1.0 - p) / users)
    est = PupeEstimate(p, ci, frames, users, [r[1] for r in results])
    if trace:
        for f, (_, _, per_iter) in enumerate(results):
            total = 0
            for it, n in enumerate(per_iter, start=1):
                total += n
                est.trace.append((f, it, total))
    return est
