"""Canonical and tabular transmission policies.

Every policy maps a state ``(delta, t, i)`` to an action in ``{0, 1}``:
``1`` means start a transmission when idle, or preempt when busy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .mdp import FiniteMdp, State, TruncatedMdp, check_state, reachable_states
from .model import DelayModel, ValidationError


class Policy:
    name: str = "policy"

    def action(self, s) -> int:
        raise NotImplementedError

    def _vector(self, deltas, ts, iis) -> np.ndarray:
        return np.array([self.action(State(int(d), int(t), int(i))) for d, t, i in zip(deltas, ts, iis)], dtype=np.int8)

    def actions(self, mdp: TruncatedMdp) -> np.ndarray:
        """Action for every state of ``mdp`` in index order."""
        self.check_delay(getattr(mdp, "delay", None))
        return self._vector(mdp.deltas, mdp.ts, mdp.iis)

    def check_delay(self, delay: Optional[DelayModel]) -> None:
        pass

    def to_table(self, mdp: TruncatedMdp) -> "TablePolicy":
        return TablePolicy(mdp, self.actions(mdp))


@dataclass(frozen=True)
class StrongPreemptive(Policy):
    """Transmit whenever idle and preempt whenever busy."""

    name: str = field(default="strong-preemptive", init=False)

    def action(self, s) -> int:
        check_state(s)
        return 1

    def _vector(self, deltas, ts, iis):
        return np.ones(len(deltas), dtype=np.int8)


@dataclass(frozen=True)
class WeakPreemptive(Policy):
    """Strong preemptive, except let an informative update finish while the estimate is wrong."""

    name: str = field(default="weak-preemptive", init=False)

    def action(self, s) -> int:
        delta, t, i = check_state(s)
        return 0 if (delta > 0 and i == 1) else 1

    def _vector(self, deltas, ts, iis):
        return np.where((deltas > 0) & (iis == 1), 0, 1).astype(np.int8)


@dataclass(frozen=True)
class ThresholdPreemptive(Policy):
    """Strong preemptive, except never preempt at ``(delta >= 1, t_max - 1, 1)``."""

    t_max: int
    name: str = field(default="threshold-preemptive", init=False)

    def __post_init__(self):
        if self.t_max < 2:
            raise ValidationError([f"threshold preemptive policy needs t_max >= 2, got {self.t_max}"])

    def check_delay(self, delay):
        if delay is None:
            return
        if not delay.bounded or delay.t_max != self.t_max:
            raise ValidationError(
                [f"threshold preemptive policy with t_max={self.t_max} needs a bounded delay with the same t_max"]
            )

    def action(self, s) -> int:
        delta, t, i = check_state(s)
        return 0 if (delta >= 1 and t == self.t_max - 1 and i == 1) else 1

    def _vector(self, deltas, ts, iis):
        return np.where((deltas >= 1) & (ts == self.t_max - 1) & (iis == 1), 0, 1).astype(np.int8)


@dataclass(frozen=True)
class LazyThreshold(Policy):
    """Non-preemptive baseline: transmit only when idle and the estimate is wrong."""

    name: str = field(default="lazy-threshold", init=False)

    def action(self, s) -> int:
        delta, t, i = check_state(s)
        return 1 if (i == -1 and delta > 0) else 0

    def _vector(self, deltas, ts, iis):
        return np.where((iis == -1) & (deltas > 0), 1, 0).astype(np.int8)


@dataclass(frozen=True)
class RandomPolicy(Policy):
    """Bernoulli(prob) decisions, for sample-path demos only; not usable by the solvers."""

    prob: float = 0.5
    name: str = field(default="random", init=False)

    def action(self, s) -> int:
        raise TypeError("random policy draws its actions inside the simulator")

    def actions(self, mdp):
        raise TypeError("random policy has no deterministic action table")


class TablePolicy(Policy):
    """Explicit action per state of a truncated MDP.

    :meth:`action` clamps ``delta`` and ``t`` to the truncation bounds, which
    matches how the truncated MDP folds out-of-range states.
    """

    name = "table"

    def __init__(self, mdp: FiniteMdp, table):
        table = np.asarray(table, dtype=np.int8).copy()
        if table.shape != (mdp.n_states,):
            raise ValidationError([f"policy table has {table.shape} entries, MDP has {mdp.n_states} states"])
        if np.any((table != 0) & (table != 1)):
            raise ValidationError(["policy table entries must be 0 or 1"])
        table.setflags(write=False)
        self.mdp = mdp
        self.table = table

    def __eq__(self, other):
        return isinstance(other, TablePolicy) and np.array_equal(self.table, other.table)

    def __hash__(self):
        return hash(self.table.tobytes())

    def __repr__(self):
        return f"TablePolicy(n={len(self.table)}, ones={int(self.table.sum())})"

    def action(self, s) -> int:
        delta, t, i = check_state(s)
        mdp = self.mdp
        s = State(min(delta, mdp.delta_max), min(t, mdp.t_max), i)
        return int(self.table[mdp.index(s)])

    def actions(self, mdp: FiniteMdp) -> np.ndarray:
        if mdp is not self.mdp and mdp.n_states != len(self.table):
            raise ValidationError(["policy table belongs to a different MDP"])
        return self.table


def action(policy: Policy, s) -> int:
    return policy.action(s)


def equal_on_reachable(a: Policy, b: Policy, mdp: TruncatedMdp, start=None) -> Tuple[bool, List[State]]:
    """Compare two policies on the states reachable from ``start`` under ``a``.

    Returns ``(equal, witnesses)`` where witnesses are the disagreeing states.
    """
    act_a = a.actions(mdp)
    act_b = b.actions(mdp)
    reach = np.array(sorted(reachable_states(mdp, act_a, start)), dtype=np.int64)
    bad = reach[act_a[reach] != act_b[reach]]
    return len(bad) == 0, [mdp.state(int(k)) for k in bad]


def by_name(name: str, delay: Optional[DelayModel] = None, prob: float = 0.5) -> Policy:
    key = name.lower().replace("_", "-")
    if key in ("strong-preemptive", "sp", "strong"):
        return StrongPreemptive()
    if key in ("weak-preemptive", "wp", "weak"):
        return WeakPreemptive()
    if key in ("threshold-preemptive", "tp"):
        if delay is None or not delay.bounded:
            raise ValidationError(["threshold preemptive policy needs a bounded delay"])
        return ThresholdPreemptive(delay.t_max)
    if key in ("lazy-threshold", "lazy", "threshold"):
        return LazyThreshold()
    if key == "random":
        return RandomPolicy(prob)
    raise ValidationError([f"unknown policy {name!r}"])


def write_policy_csv(policy: Policy, mdp: TruncatedMdp, fh, only=None) -> None:
    """Write ``delta,t,i,a`` rows; ``only`` restricts to a set of state indices."""
    acts = policy.actions(mdp)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["delta", "t", "i", "a"])
    keys = range(mdp.n_states) if only is None else sorted(only)
    for k in keys:
        w.writerow([*mdp.state(k), int(acts[k])])


def read_policy_csv(mdp: TruncatedMdp, fh) -> TablePolicy:
    table = np.full(mdp.n_states, -1, dtype=np.int64)
    rows = (line for line in fh if not line.startswith("#"))
    for row in csv.DictReader(rows):
        k = mdp.index((int(row["delta"]), int(row["t"]), int(row["i"])))
        table[k] = int(row["a"])
    if np.any(table < 0):
        raise ValidationError([f"policy CSV misses {int((table < 0).sum())} states"])
    return TablePolicy(mdp, table)
