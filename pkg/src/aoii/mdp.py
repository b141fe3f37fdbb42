"""State space, exact transition kernel and the truncated finite MDP.

A state is ``(delta, t, i)``: AoII level, slots the in-flight update has been
transmitting (0 iff idle) and the channel indicator (-1 idle, 0 the in-flight
update equals the receiver's estimate, 1 it differs).

Truncated state index layout is lexicographic in ``(delta, t, i)`` over valid
pairs only, i.e. for ``T = t_max_trunc``::

    index(delta, 0, -1) = delta * (2T + 1)
    index(delta, t, i)  = delta * (2T + 1) + 2t - 1 + i      (t >= 1, i in {0, 1})
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, List, NamedTuple, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .model import DelayModel, Geometric, PenaltyFunction, SourceModel, ValidationError

ROW_TOL = 1e-12


class State(NamedTuple):
    delta: int
    t: int
    i: int


IDLE0 = State(0, 0, -1)


def is_valid_state(s) -> bool:
    delta, t, i = s
    if delta < 0 or t < 0 or i not in (-1, 0, 1):
        return False
    return (t == 0) == (i == -1)


def check_state(s) -> State:
    if not is_valid_state(s):
        raise ValueError(f"invalid state {tuple(s)}: need i = -1 iff t = 0, delta >= 0")
    return State(*s)


def _branch_successors(p: float, delta: int, tx: Optional[Tuple[float, int, int]]):
    """Successor list for one slot.

    ``tx`` is ``None`` when nothing is in flight after the action, otherwise
    ``(hazard, mismatch, next_age)`` where ``mismatch`` says whether the
    in-flight update differs from the receiver's current estimate.

    Values are tracked relative to the estimate: estimate = 0, source = 1
    iff ``delta > 0``.
    """
    x = 1 if delta > 0 else 0
    out = []
    if tx is None:
        for flip, w in ((0, 1.0 - p), (1, p)):
            x_next = x ^ flip
            out.append((State(0 if x_next == 0 else delta + 1, 0, -1), w))
        return out
    q, j, age = tx
    for delivered, wd in ((True, q), (False, 1.0 - q)):
        est_next = j if delivered else 0
        for flip, wf in ((0, 1.0 - p), (1, p)):
            x_next = x ^ flip
            d_next = 0 if x_next == est_next else delta + 1
            if delivered:
                out.append((State(d_next, 0, -1), wd * wf))
            else:
                # estimate unchanged, so the in-flight mismatch flag is kept
                out.append((State(d_next, age, j), wd * wf))
    return out


def transitions(source: SourceModel, delay: DelayModel, s, a: int) -> List[Tuple[State, float]]:
    """Exact (untruncated) successor distribution of ``s`` under action ``a``.

    Zero-probability successors are dropped; coincident successors merged.
    """
    delta, t, i = check_state(s)
    if a not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {a}")
    if a == 1:
        # fresh update carries the current source value
        tx = (delay.hazard(1), 1 if delta > 0 else 0, 1)
    elif i == -1:
        tx = None
    else:
        tx = (delay.hazard(t + 1), i, t + 1)
    merged: dict = {}
    for s2, w in _branch_successors(source.p, delta, tx):
        if w > 0:
            merged[s2] = merged.get(s2, 0.0) + w
    return list(merged.items())


@dataclass(frozen=True)
class TruncationConfig:
    delta_max: int = 100
    t_max: Optional[int] = None

    def resolve(self, delay: DelayModel) -> "TruncationConfig":
        """Fill in the default in-flight age bound and check it against ``delay``."""
        if self.delta_max < 1:
            raise ValidationError([f"delta_max must be >= 1, got {self.delta_max}"])
        t_max = self.t_max
        if t_max is None:
            if delay.bounded:
                t_max = max(1, delay.t_max - 1)
            elif isinstance(delay, Geometric):
                t_max = delay.tail_horizon(1e-9)
            else:
                raise ValidationError(["unbounded delay needs an explicit t_max truncation"])
        if t_max < 1:
            raise ValidationError([f"t_max truncation must be >= 1, got {t_max}"])
        if delay.bounded and t_max < delay.t_max - 1:
            raise ValidationError(
                [f"t_max truncation {t_max} clips reachable in-flight ages (delay t_max = {delay.t_max})"]
            )
        return TruncationConfig(self.delta_max, t_max)


@dataclass(frozen=True)
class FiniteMdp:
    """Finite two-action MDP: per-state costs and one row-stochastic matrix per action."""

    costs: np.ndarray
    kernels: Tuple[sp.csr_matrix, sp.csr_matrix]

    @property
    def n_states(self) -> int:
        return len(self.costs)

    def ref_index(self, s_ref=None) -> int:
        return 0 if s_ref is None else int(s_ref)

    def policy_matrix(self, actions: np.ndarray) -> sp.csr_matrix:
        a = np.asarray(actions, dtype=float)
        return (sp.diags(1.0 - a) @ self.kernels[0] + sp.diags(a) @ self.kernels[1]).tocsr()


@dataclass(frozen=True)
class TruncatedMdp(FiniteMdp):
    source: SourceModel = None
    delay: DelayModel = None
    penalty: PenaltyFunction = None
    delta_max: int = 0
    t_max: int = 0
    deltas: np.ndarray = field(default=None, repr=False)
    ts: np.ndarray = field(default=None, repr=False)
    iis: np.ndarray = field(default=None, repr=False)

    @property
    def block(self) -> int:
        return 2 * self.t_max + 1

    def index(self, s) -> int:
        delta, t, i = check_state(s)
        if delta > self.delta_max or t > self.t_max:
            raise IndexError(f"state {tuple(s)} outside truncation ({self.delta_max}, {self.t_max})")
        return delta * self.block + (0 if t == 0 else 2 * t - 1 + i)

    def state(self, k: int) -> State:
        return State(int(self.deltas[k]), int(self.ts[k]), int(self.iis[k]))

    def states(self) -> List[State]:
        return [self.state(k) for k in range(self.n_states)]

    def ref_index(self, s_ref=None) -> int:
        if s_ref is None:
            return self.index(IDLE0)
        if isinstance(s_ref, (int, np.integer)):
            return int(s_ref)
        return self.index(s_ref)

    def row(self, k: int, a: int) -> List[Tuple[State, float]]:
        m = self.kernels[a]
        lo, hi = m.indptr[k], m.indptr[k + 1]
        return [(self.state(j), float(w)) for j, w in zip(m.indices[lo:hi], m.data[lo:hi])]


def enumerate_states(delta_max: int, t_max: int):
    """Arrays ``(deltas, ts, iis)`` in index order."""
    block_t = np.concatenate([[0], np.repeat(np.arange(1, t_max + 1), 2)])
    block_i = np.concatenate([[-1], np.tile([0, 1], t_max)])
    n_d = delta_max + 1
    deltas = np.repeat(np.arange(n_d), len(block_t))
    return deltas, np.tile(block_t, n_d), np.tile(block_i, n_d)


def build_truncated(
    source: SourceModel,
    delay: DelayModel,
    f: PenaltyFunction,
    cfg: TruncationConfig = TruncationConfig(),
) -> TruncatedMdp:
    """Truncate to ``delta <= delta_max``, ``t <= t_max`` folding overflow onto the boundary.

    Out-of-range successors keep their channel indicator and have delta and/or
    t clamped, which realises all three overflow cases at once.
    """
    cfg = cfg.resolve(delay)
    D, T = cfg.delta_max, cfg.t_max
    deltas, ts, iis = enumerate_states(D, T)
    n = len(deltas)
    p = source.p
    haz = delay.hazards(T + 1)
    block = 2 * T + 1
    x = (deltas > 0).astype(np.int64)

    def idx(d, t, i):
        d = np.minimum(d, D)
        t = np.minimum(t, T)
        return d * block + np.where(t == 0, 0, 2 * t - 1 + i)

    kernels = []
    rows_all = np.arange(n)
    for a in (0, 1):
        rows, cols, vals = [], [], []

        def emit(mask, d_next, t_next, i_next, w):
            r = rows_all[mask]
            rows.append(r)
            cols.append(idx(d_next[mask], t_next[mask], i_next[mask]))
            vals.append(np.broadcast_to(w, mask.shape)[mask])

        if a == 1:
            busy = np.ones(n, dtype=bool)
            q = np.full(n, haz[1])
            j = x.copy()
            age = np.ones(n, dtype=np.int64)
        else:
            busy = iis != -1
            q = haz[np.minimum(ts + 1, T + 1)]
            j = np.maximum(iis, 0)
            age = ts + 1
        idle = ~busy
        for flip, wf in ((0, 1.0 - p), (1, p)):
            x_next = x ^ flip
            # nothing in flight
            emit(idle, np.where(x_next == 0, 0, deltas + 1), np.zeros(n, np.int64), np.full(n, -1), wf)
            # delivered: estimate becomes the update's value j
            emit(busy, np.where(x_next == j, 0, deltas + 1), np.zeros(n, np.int64), np.full(n, -1), q * wf)
            # still in flight: estimate unchanged
            emit(busy, np.where(x_next == 0, 0, deltas + 1), age, j, (1.0 - q) * wf)
        m = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        kernels.append(m)

    costs = np.asarray(f(deltas), dtype=float)
    for arr in (deltas, ts, iis, costs):
        arr.setflags(write=False)
    return TruncatedMdp(
        costs=costs,
        kernels=(kernels[0], kernels[1]),
        source=source,
        delay=delay,
        penalty=f,
        delta_max=D,
        t_max=T,
        deltas=deltas,
        ts=ts,
        iis=iis,
    )


def reachable_states(mdp: FiniteMdp, policy, start=None) -> set:
    """Indices reachable from ``start`` under the actions chosen by ``policy``."""
    actions = policy.actions(mdp) if hasattr(policy, "actions") else np.asarray(policy)
    return set(_reach(mdp.policy_matrix(actions), mdp.ref_index(start)).tolist())


def _reach(P: sp.csr_matrix, start: int) -> np.ndarray:
    seen = np.zeros(P.shape[0], dtype=bool)
    seen[start] = True
    queue = deque([start])
    indptr, indices, data = P.indptr, P.indices, P.data
    while queue:
        k = queue.popleft()
        for j, w in zip(indices[indptr[k] : indptr[k + 1]], data[indptr[k] : indptr[k + 1]]):
            if w > 0 and not seen[j]:
                seen[j] = True
                queue.append(j)
    return np.flatnonzero(seen)


def reaches(P: sp.csr_matrix, target: int) -> np.ndarray:
    """Boolean mask of states from which ``target`` is reachable."""
    mask = np.zeros(P.shape[0], dtype=bool)
    mask[_reach(P.T.tocsr(), target)] = True
    return mask


def row_sums(mdp: FiniteMdp) -> Iterable[np.ndarray]:
    return [np.asarray(k.sum(axis=1)).ravel() for k in mdp.kernels]


def write_kernel_csv(mdp: TruncatedMdp, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "t", "i", "a", "delta_next", "t_next", "i_next", "prob"])
        for k in range(mdp.n_states):
            s = mdp.state(k)
            for a in (0, 1):
                for s2, prob in mdp.row(k, a):
                    w.writerow([*s, a, *s2, repr(prob)])
