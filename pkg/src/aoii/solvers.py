"""Dynamic programming on a finite (truncated) MDP.

All solvers minimise cost. Greedy steps break ties toward ``a = 1``: action 1
wins whenever its Q-value is within ``TIE_TOL`` (relative to the value scale)
of action 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mdp import FiniteMdp, reaches, _reach
from .policies import Policy, TablePolicy

TIE_TOL = 1e-9
DENSE_LIMIT = 5000


class ConvergenceError(RuntimeError):
    """A solver hit its iteration budget; ``result`` carries the last iterate."""

    def __init__(self, message: str, result: "SolveResult" = None, cycle: Optional[List[float]] = None):
        super().__init__(message)
        self.result = result
        self.cycle = cycle


class MultichainError(RuntimeError):
    """The policy does not induce a single recurrent class containing the reference state."""

    def __init__(self, message: str, witnesses=()):
        super().__init__(message)
        self.witnesses = list(witnesses)


@dataclass
class SolveResult:
    values: np.ndarray
    theta: Optional[float]
    policy: TablePolicy
    iterations: int
    residual: float
    history: List[float] = field(default_factory=list)

    def to_json(self) -> str:
        d = {"theta": self.theta, "iterations": self.iterations, "residual": self.residual}
        if self.history:
            d["theta_history"] = self.history
        return json.dumps(d, sort_keys=True)


def _q_values(mdp: FiniteMdp, values: np.ndarray, gamma: float = 1.0):
    return mdp.costs + gamma * (mdp.kernels[0] @ values), mdp.costs + gamma * (mdp.kernels[1] @ values)


def _greedy(q0: np.ndarray, q1: np.ndarray, scale: float) -> np.ndarray:
    tol = TIE_TOL * max(1.0, scale)
    return (q1 <= q0 + tol).astype(np.int8)


def greedy_policy(mdp: FiniteMdp, values: np.ndarray, gamma: float = 1.0) -> TablePolicy:
    q0, q1 = _q_values(mdp, values, gamma)
    return TablePolicy(mdp, _greedy(q0, q1, float(np.max(np.abs(values), initial=0.0))))


def discounted_vi(mdp: FiniteMdp, gamma: float, tol: float = 1e-9, max_iter: int = 100_000) -> SolveResult:
    """Value iteration for the ``gamma``-discounted cost, started from zero."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    v = np.zeros(mdp.n_states)
    res = np.inf
    for it in range(1, max_iter + 1):
        q0, q1 = _q_values(mdp, v, gamma)
        v_new = np.minimum(q0, q1)
        res = float(np.max(np.abs(v_new - v), initial=0.0))
        v = v_new
        if res <= tol:
            return SolveResult(v, None, greedy_policy(mdp, v, gamma), it, res)
    out = SolveResult(v, None, greedy_policy(mdp, v, gamma), max_iter, res)
    raise ConvergenceError(f"discounted VI did not converge in {max_iter} iterations (residual {res:.3g})", out)


def rvi(
    mdp: FiniteMdp,
    eps: float = 1e-9,
    s_ref=None,
    max_iter: int = 200_000,
    span: bool = False,
) -> SolveResult:
    """Relative value iteration.

    ``V <- Q - Q(s_ref)`` with ``Q = min_a (C + P_a V)``; stops when the
    max-abs change (or, with ``span=True``, the span of the change) is at most
    ``eps``. ``theta`` is ``Q(s_ref)`` at the last sweep.
    """
    ref = mdp.ref_index(s_ref)
    v = np.zeros(mdp.n_states)
    res = np.inf
    theta = float("nan")
    k0, k1, c = mdp.kernels[0], mdp.kernels[1], mdp.costs
    for it in range(1, max_iter + 1):
        q = np.minimum(c + k0 @ v, c + k1 @ v)
        theta = float(q[ref])
        v_new = q - theta
        diff = v_new - v
        res = float(np.ptp(diff)) if span else float(np.max(np.abs(diff)))
        v = v_new
        if res <= eps:
            return SolveResult(v, theta, greedy_policy(mdp, v), it, res)
    out = SolveResult(v, theta, greedy_policy(mdp, v), max_iter, res)
    raise ConvergenceError(f"RVI did not converge in {max_iter} iterations (residual {res:.3g})", out)


def _actions(mdp: FiniteMdp, policy) -> np.ndarray:
    if isinstance(policy, Policy):
        return policy.actions(mdp)
    return np.asarray(policy, dtype=np.int8)


def check_unichain(mdp: FiniteMdp, policy, s_ref=None) -> sp.csr_matrix:
    """Return the policy's transition matrix after checking every state reaches ``s_ref``."""
    ref = mdp.ref_index(s_ref)
    P = mdp.policy_matrix(_actions(mdp, policy))
    ok = reaches(P, ref)
    if not ok.all():
        bad = np.flatnonzero(~ok)
        wit = [mdp.state(int(k)) if hasattr(mdp, "state") else int(k) for k in bad[:10]]
        raise MultichainError(f"{len(bad)} states never reach the reference state", wit)
    return P


def _solve(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    if A.shape[0] < DENSE_LIMIT:
        return sla.solve(A.toarray(), b)
    return spla.spsolve(A.tocsc(), b)


def policy_evaluation(mdp: FiniteMdp, policy, s_ref=None):
    """Solve ``V + theta = C + P V`` with ``V(s_ref) = 0``. Returns ``(values, theta)``.

    The unknown ``V(s_ref)`` is replaced by ``theta``, which turns the system
    into a square nonsingular one for unichain policies.
    """
    ref = mdp.ref_index(s_ref)
    P = check_unichain(mdp, policy, ref)
    n = mdp.n_states
    A = (sp.identity(n, format="csr") - P).tolil()
    A[:, ref] = np.ones((n, 1))
    x = _solve(A.tocsr(), mdp.costs.astype(float))
    theta = float(x[ref])
    v = x.copy()
    v[ref] = 0.0
    return v, theta


def bellman_residual(mdp: FiniteMdp, policy, values: np.ndarray, theta: float) -> float:
    P = mdp.policy_matrix(_actions(mdp, policy))
    return float(np.max(np.abs(values + theta - mdp.costs - P @ values)))


def policy_improvement(mdp: FiniteMdp, values: np.ndarray) -> TablePolicy:
    """Greedy policy with respect to ``values`` (ties toward ``a = 1``)."""
    return greedy_policy(mdp, np.asarray(values, dtype=float))


def policy_iteration(mdp: FiniteMdp, init, max_rounds: int = 100, s_ref=None) -> SolveResult:
    """Alternate evaluation and improvement until the policy stops changing."""
    table = TablePolicy(mdp, _actions(mdp, init))
    seen = {table: 0}
    history: List[float] = []
    for rnd in range(1, max_rounds + 1):
        v, theta = policy_evaluation(mdp, table, s_ref)
        history.append(theta)
        new = policy_improvement(mdp, v)
        if new == table:
            res = bellman_residual(mdp, table, v, theta)
            return SolveResult(v, theta, table, rnd, res, history)
        if new in seen:
            start = seen[new]
            raise ConvergenceError(
                f"policy iteration cycles between rounds {start} and {rnd}",
                SolveResult(v, theta, table, rnd, float("nan"), history),
                cycle=history[start:],
            )
        seen[new] = rnd
        table = new
    raise ConvergenceError(
        f"policy iteration did not converge in {max_rounds} rounds",
        SolveResult(v, theta, table, max_rounds, float("nan"), history),
    )


def stationary_distribution(mdp: FiniteMdp, policy, tol: float = 1e-10, s_ref=None) -> np.ndarray:
    """Stationary law of the policy's chain; states outside the recurrent class get 0."""
    ref = mdp.ref_index(s_ref)
    P = check_unichain(mdp, policy, ref)
    live = _reach(P, ref)
    Pl = P[live][:, live]
    m = len(live)
    A = (sp.identity(m, format="csr") - Pl).T.tolil()
    A[0, :] = np.ones((1, m))
    b = np.zeros(m)
    b[0] = 1.0
    x = _solve(A.tocsr(), b)
    x = np.clip(x, 0.0, None)
    x /= x.sum()
    pi = np.zeros(mdp.n_states)
    pi[live] = x
    res = float(np.max(np.abs(P.T @ pi - pi)))
    if res > tol:
        raise ConvergenceError(f"stationary solve residual {res:.3g} exceeds {tol:.3g}")
    return pi


def average_cost(mdp: FiniteMdp, policy, s_ref=None) -> float:
    return float(stationary_distribution(mdp, policy, s_ref=s_ref) @ mdp.costs)
