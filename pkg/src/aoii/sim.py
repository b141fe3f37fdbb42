"""Slot-level Monte Carlo of source, preemptive channel and receiver.

Each slot consumes one row of three uniforms drawn from a PCG64 generator:
column 0 decides the source flip, column 1 the delivery, column 2 the action
of :class:`~aoii.policies.RandomPolicy`. All three columns are drawn for every
policy, so runs with equal seeds share random numbers.

Slot order: accrue ``f(delta)``; pick the action; a fresh transmission
replaces any in-flight update; delivery resolves with the hazard of the
update's new age; the source flips; ``delta`` is updated.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numba
import numpy as np
import scipy.sparse as sp

from .mdp import State, TruncationConfig, build_truncated
from .model import DelayModel, Geometric, Linear, PenaltyFunction, SourceModel
from .policies import Policy, RandomPolicy, TablePolicy

CHUNK = 1_000_000
N_BATCHES = 100
TRACE_FIELDS = ("k", "X", "Xhat", "Delta", "a", "t", "i", "d")


@dataclass(frozen=True)
class SimConfig:
    horizon: int
    warmup: int = 0
    seed: int = 0
    record_trace: bool = False

    def __post_init__(self):
        if not (self.horizon > self.warmup >= 0):
            raise ValueError(f"need horizon > warmup >= 0, got horizon={self.horizon}, warmup={self.warmup}")


@dataclass
class Trace:
    """Per-slot record; ``t`` and ``i`` describe the channel at the start of the slot."""

    k: np.ndarray
    X: np.ndarray
    Xhat: np.ndarray
    Delta: np.ndarray
    a: np.ndarray
    t: np.ndarray
    i: np.ndarray
    d: np.ndarray

    def __len__(self):
        return len(self.k)

    def rows(self):
        cols = [getattr(self, f) for f in TRACE_FIELDS]
        return [tuple(int(c[j]) for c in cols) for j in range(len(self))]

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        w.writerows(self.rows())


@dataclass
class SimResult:
    avg_penalty: float
    std_error: float
    slots: int
    deliveries: int
    preemptions: int
    trace: Optional[Trace] = field(default=None, repr=False)

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if k != "trace"}
        return json.dumps(d, sort_keys=True)


# --------------------------------------------------------------------------
# compiled slot loop
# --------------------------------------------------------------------------


@numba.njit(cache=True)
def _run_chunk(state, u, grid, hz, p, rand_prob, o_delta, o_t, o_i, o_a, o_x, o_xh, o_d):
    """Advance ``len(u)`` slots; ``state = [delta, t, i, x, xhat, v]`` is updated in place.

    ``grid[min(delta, dcap), min(t, tcap), i + 1]`` is the action, or -1 for
    a Bernoulli(rand_prob) draw. ``hz[min(age, len(hz) - 1)]`` is the hazard.
    """
    delta, t, i, x, xh, v = state[0], state[1], state[2], state[3], state[4], state[5]
    dcap = grid.shape[0] - 1
    tcap = grid.shape[1] - 1
    hcap = hz.shape[0] - 1
    for k in range(u.shape[0]):
        o_delta[k] = delta
        o_t[k] = t
        o_i[k] = i
        o_x[k] = x
        o_xh[k] = xh
        a = grid[min(delta, dcap), min(t, tcap), i + 1]
        if a < 0:
            a = 1 if u[k, 2] < rand_prob else 0
        o_a[k] = a
        if a == 1:
            v = x
            age = 1
        elif t > 0:
            age = t + 1
        else:
            age = 0
        d = 0
        if age > 0:
            if u[k, 1] < hz[min(age, hcap)]:
                xh = v
                d = 1
                t = 0
                i = -1
            else:
                t = age
                i = 1 if v != xh else 0
        o_d[k] = d
        if u[k, 0] < p:
            x = 1 - x
        delta = 0 if x == xh else delta + 1
    state[0], state[1], state[2], state[3], state[4], state[5] = delta, t, i, x, xh, v


# --------------------------------------------------------------------------
# policy and delay encoding
# --------------------------------------------------------------------------


def _hazard_table(delay: DelayModel) -> np.ndarray:
    if delay.bounded:
        return delay.hazards(delay.t_max)
    if isinstance(delay, Geometric):
        return delay.hazards(1)
    return delay.hazards(4096)


def _action_grid(policy: Policy, delay: DelayModel) -> np.ndarray:
    """Action lookup over clamped ``(delta, t, i + 1)``; -1 marks a random draw."""
    if isinstance(policy, RandomPolicy):
        return np.full((1, 1, 3), -1, dtype=np.int8)
    if isinstance(policy, TablePolicy):
        m = policy.mdp
        dcap, tcap = m.delta_max, m.t_max
    else:
        policy.check_delay(delay)
        # canonical policies depend on delta only through delta > 0 and on t
        # only through t == t_max - 1
        dcap = 2
        tcap = max(2, delay.t_max if delay.bounded else 2)
    grid = np.zeros((dcap + 1, tcap + 1, 3), dtype=np.int8)
    for d in range(dcap + 1):
        grid[d, 0, 0] = policy.action(State(d, 0, -1))
        for t in range(1, tcap + 1):
            grid[d, t, 1] = policy.action(State(d, t, 0))
            grid[d, t, 2] = policy.action(State(d, t, 1))
    return grid


def _chunks(total: int):
    done = 0
    while done < total:
        n = min(CHUNK, total - done)
        yield done, n
        done += n


class _Runner:
    """Drives the compiled loop chunk by chunk and hands per-slot arrays to a sink."""

    def __init__(self, source, delay, policy, seed):
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.grid = _action_grid(policy, delay)
        self.hz = _hazard_table(delay)
        self.p = float(source.p)
        self.prob = float(policy.prob) if isinstance(policy, RandomPolicy) else 0.0
        self.state = np.array([0, 0, -1, 0, 0, 0], dtype=np.int64)

    def run(self, total: int, sink) -> None:
        for offset, n in _chunks(total):
            u = self.rng.random((n, 3))
            out = {
                "Delta": np.empty(n, np.int64),
                "t": np.empty(n, np.int64),
                "i": np.empty(n, np.int8),
                "a": np.empty(n, np.int8),
                "X": np.empty(n, np.int8),
                "Xhat": np.empty(n, np.int8),
                "d": np.empty(n, np.int8),
            }
            _run_chunk(
                self.state, u, self.grid, self.hz, self.p, self.prob,
                out["Delta"], out["t"], out["i"], out["a"], out["X"], out["Xhat"], out["d"],
            )
            sink(offset, out)


def simulate(
    source: SourceModel, delay: DelayModel, f: PenaltyFunction, policy: Policy, cfg: SimConfig
) -> SimResult:
    n_keep = cfg.horizon - cfg.warmup
    n_batches = min(N_BATCHES, n_keep)
    bsize = n_keep // n_batches
    batch_sums = np.zeros(n_batches)
    parts: List[float] = []
    counts = {"deliveries": 0, "preemptions": 0}
    trace_parts: List[dict] = []

    def sink(offset, out):
        lo = max(cfg.warmup - offset, 0)
        n = len(out["Delta"])
        if cfg.record_trace:
            trace_parts.append({**out, "k": np.arange(offset, offset + n, dtype=np.int64)})
        if lo >= n:
            return
        sl = slice(lo, n)
        cost = np.asarray(f(out["Delta"][sl]), dtype=float)
        parts.append(math.fsum(cost))
        counts["deliveries"] += int(out["d"][sl].sum())
        counts["preemptions"] += int(((out["a"][sl] == 1) & (out["t"][sl] > 0)).sum())
        j = np.arange(offset + lo - cfg.warmup, offset + n - cfg.warmup)
        batch_sums[:] += np.bincount(np.minimum(j // bsize, n_batches - 1), weights=cost, minlength=n_batches)

    _Runner(source, delay, policy, cfg.seed).run(cfg.horizon, sink)
    avg = math.fsum(parts) / n_keep
    if n_batches >= 2:
        sizes = np.full(n_batches, bsize)
        sizes[-1] += n_keep - bsize * n_batches
        means = batch_sums / sizes
        se = float(np.std(means, ddof=1) / math.sqrt(n_batches))
    else:
        se = float("nan")
    trace = _concat_trace(trace_parts) if cfg.record_trace else None
    return SimResult(avg, se, n_keep, counts["deliveries"], counts["preemptions"], trace)


def _concat_trace(parts: List[dict]) -> Trace:
    if not parts:
        return Trace(*[np.zeros(0, np.int64) for _ in TRACE_FIELDS])
    return Trace(**{f: np.concatenate([p[f] for p in parts]) for f in TRACE_FIELDS})


def sample_path(
    source: SourceModel, delay: DelayModel, f: PenaltyFunction, policy: Policy, length: int, seed: int = 0
) -> Trace:
    """Per-slot trace of ``length`` slots starting from a matched, idle system."""
    if length < 0:
        raise ValueError(f"length must be >= 0, got {length}")
    parts: List[dict] = []
    runner = _Runner(source, delay, policy, seed)
    runner.run(length, lambda off, out: parts.append({**out, "k": np.arange(off, off + len(out["a"]))}))
    return _concat_trace(parts)


def merge_results(results: Sequence[SimResult]) -> SimResult:
    """Slot-weighted average of independent runs with pooled standard error."""
    if not results:
        raise ValueError("nothing to merge")
    n = sum(r.slots for r in results)
    avg = math.fsum(r.avg_penalty * r.slots for r in results) / n
    se = math.sqrt(math.fsum((r.slots / n) ** 2 * r.std_error**2 for r in results))
    return SimResult(
        avg, se, n, sum(r.deliveries for r in results), sum(r.preemptions for r in results)
    )


# --------------------------------------------------------------------------
# kernel and hazard checks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelEntry:
    state: State
    action: int
    visits: int
    tv: float


def empirical_kernel_check(
    source: SourceModel,
    delay: DelayModel,
    policy: Policy,
    slots: int,
    seed: int = 0,
    delta_max: int = 50,
    t_max: Optional[int] = None,
    min_visits: int = 10_000,
) -> List[KernelEntry]:
    """Total-variation distance between simulated and model transitions per ``(s, a)``.

    States are bucketed onto a truncated MDP (``delta`` and ``t`` clamped), whose
    rows clamp the same way, so the comparison is exact in law.
    Only pairs visited at least ``min_visits`` times are reported.
    """
    if slots <= 0:
        return []
    mdp = build_truncated(source, delay, Linear(), TruncationConfig(delta_max, t_max))
    n = mdp.n_states
    D, T, B = mdp.delta_max, mdp.t_max, mdp.block
    counts = sp.csr_matrix((2 * n, n))

    def idx(d, t, i):
        d = np.minimum(d, D)
        t = np.minimum(t, T)
        return d * B + np.where(t == 0, 0, 2 * t - 1 + i)

    carry = {}

    def sink(offset, out):
        nonlocal counts
        s = idx(out["Delta"], out["t"], out["i"].astype(np.int64))
        if "s" in carry:
            s_prev = np.concatenate([[carry["s"]], s])
            a_prev = np.concatenate([[carry["a"]], out["a"]])
        else:
            s_prev, a_prev = s, out["a"]
        # pair slot k's (state, action) with slot k+1's state
        rows = s_prev[:-1] * 2 + a_prev[:-1]
        cols = s_prev[1:]
        counts = counts + sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(2 * n, n))
        carry["s"], carry["a"] = int(s[-1]), int(out["a"][-1])

    _Runner(source, delay, policy, seed).run(slots, sink)
    counts = counts.tocsr()
    visits = np.asarray(counts.sum(axis=1)).ravel()
    report = []
    for r in np.flatnonzero(visits >= min_visits):
        k, a = divmod(int(r), 2)
        emp = counts.getrow(r).toarray().ravel() / visits[r]
        ref = mdp.kernels[a].getrow(k).toarray().ravel()
        report.append(KernelEntry(mdp.state(k), a, int(visits[r]), 0.5 * float(np.abs(emp - ref).sum())))
    return report


def sample_delivery_times(delay: DelayModel, n: int, seed: int = 0) -> np.ndarray:
    """Transmission times drawn slot by slot from the hazards, with no preemption."""
    rng = np.random.Generator(np.random.PCG64(seed))
    hz = _hazard_table(delay)
    out = np.zeros(n, dtype=np.int64)
    alive = np.arange(n)
    age = 1
    while len(alive):
        hit = rng.random(len(alive)) < hz[min(age, len(hz) - 1)]
        out[alive[hit]] = age
        alive = alive[~hit]
        age += 1
    return out
