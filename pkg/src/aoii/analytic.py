"""Closed-form performance of the canonical preemptive policies.

Formulas take the hazards they actually depend on (``q1``, ``q_{t_max-1}``)
as plain floats; wrappers accept delay models.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import (
    DelayModel,
    Linear,
    Logarithmic,
    PenaltyFunction,
    Quadratic,
    SourceModel,
    Table,
    ValidationError,
)


def _check_pq(p: float, q1: float) -> None:
    errs = []
    if not (0.0 < p < 0.5):
        errs.append(f"need 0 < p < 1/2, got p={p}")
    if not (0.0 < q1 <= 1.0):
        errs.append(f"need 0 < q1 <= 1, got q1={q1}")
    if errs:
        raise ValidationError(errs)


def _decay(p: float, q1: float) -> float:
    # per-slot probability that a nonzero AoII keeps growing under strong preemption
    return 1.0 - q1 - p + 2.0 * q1 * p


# --------------------------------------------------------------------------
# strong preemptive policy
# --------------------------------------------------------------------------


def sp_stationary(p: float, q1: float, delta: int) -> float:
    """Stationary probability that the AoII equals ``delta`` under strong preemption."""
    _check_pq(p, q1)
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    den = 1.0 - (1.0 - q1) * (1.0 - 2.0 * p)
    if delta == 0:
        return (p + q1 - 2.0 * q1 * p) / den
    return _decay(p, q1) ** (delta - 1) * (p * p + q1 * p - 2.0 * q1 * p * p) / den


def _geometric_moment_tails(r: float, n: int):
    """``sum_{k>=n} r^k k^m`` for m = 0, 1, 2."""
    rn = r**n
    u = 1.0 - r
    s0 = rn / u
    s1 = rn * (n / u + r / u**2)
    s2 = rn * (n * n / u + 2.0 * n * r / u**2 + r * (1.0 + r) / u**3)
    return s0, s1, s2


def _linear_majorant(f: PenaltyFunction):
    """``(a, b)`` with ``f(delta) <= a*delta + b`` for all delta >= 0, or None."""
    if isinstance(f, Linear):
        return f.alpha, f.beta
    if isinstance(f, Logarithmic):
        # log(1 + x) <= x
        return 1.0 / math.log(f.base), 0.0
    if isinstance(f, Table):
        if f.slope is None:
            raise ValidationError(["table penalty without extrapolation slope cannot be tail-bounded"])
        # f <= v[-1] on the table and v[-1] + slope*(delta - last) beyond it
        return f.slope, float(f.values[-1])
    return None


def sp_expected_aoii(p: float, q1: float, f: PenaltyFunction, delta_cap: int):
    """Expected penalty under strong preemption, summed up to ``delta_cap``.

    Returns ``(value, tail_bound)`` where ``tail_bound`` bounds the omitted
    mass ``sum_{delta > delta_cap} f(delta) pi(delta)`` from above.
    """
    _check_pq(p, q1)
    maj = None if isinstance(f, Quadratic) else _linear_majorant(f)
    if maj is None and not isinstance(f, Quadratic):
        raise ValidationError([f"no tail bound for penalty kind {f.kind!r}"])
    deltas = np.arange(delta_cap + 1)
    pis = np.array([sp_stationary(p, q1, int(d)) for d in deltas])
    value = float(np.dot(np.asarray(f(deltas), dtype=float), pis))
    r = _decay(p, q1)
    c = sp_stationary(p, q1, 1)
    # tail = c * sum_{k >= cap} r^k f(k + 1)
    s0, s1, s2 = _geometric_moment_tails(r, delta_cap)
    if maj is None:
        tail = c * f.kappa * (s2 + 2.0 * s1 + s0)
    else:
        a, b = maj
        tail = c * (a * (s1 + s0) + b * s0)
    return value, float(tail)


def sp_expected_aoii_linear(p: float, q1: float, alpha: float, beta: float) -> float:
    """Expected ``alpha*delta + beta`` penalty under strong preemption."""
    _check_pq(p, q1)
    return alpha * p / ((p + q1 - 2.0 * q1 * p) * (q1 + 2.0 * p - 2.0 * q1 * p)) + beta


def tp_expected_aoii_linear(p: float, q1: float, alpha: float, beta: float) -> float:
    """Expected ``alpha*delta + beta`` penalty under threshold preemption, ``t_max >= 3``.

    The two policies differ only on states the strong preemptive chain never
    visits, so the expression is the strong preemptive one. With ``t_max = 2``
    the threshold policy coincides with weak preemption instead; use
    :func:`optimal_expected_aoii_linear` for a delay-aware value.
    """
    return sp_expected_aoii_linear(p, q1, alpha, beta)


def optimal_expected_aoii_linear(source: SourceModel, delay: DelayModel, alpha: float, beta: float) -> float:
    """Closed-form cost of the policy that is optimal for ``delay`` under a linear penalty.

    Geometric: strong preemption. Bounded delays: threshold preemption, which is
    weak preemption when ``t_max = 2``. Optimality of the bounded case holds
    only where :func:`check_condition1` is satisfied.
    """
    if delay.bounded and delay.t_max == 2:
        return wp_expected_aoii_linear(source, delay, alpha, beta)
    return tp_expected_aoii_linear(source.p, delay.hazard(1), alpha, beta)


def sigma_increment(p: float, q1: float, alpha: float) -> float:
    """Constant value-function increment ``V(delta+1) - V(delta)``, delta >= 1, under threshold preemption."""
    return alpha / (q1 + p - 2.0 * q1 * p)


# --------------------------------------------------------------------------
# weak preemptive policy
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WeakAggregates:
    """Aggregated stationary masses under weak preemption.

    ``pi0``: AoII zero. ``big_pi``: AoII > 0 with no informative update in flight.
    ``big_pi_t[t-1]``: AoII > 0 with an informative update ``t`` slots in flight.
    """

    pi0: float
    big_pi: float
    big_pi_t: tuple

    @property
    def total(self) -> float:
        return self.pi0 + self.big_pi + math.fsum(self.big_pi_t)


def _bounded_hazards(delay: DelayModel) -> np.ndarray:
    if not delay.bounded:
        raise ValidationError(["weak preemptive closed form needs a bounded delay"])
    return delay.hazards(delay.t_max)


def _cum_products(p: float, q: np.ndarray, t_max: int) -> np.ndarray:
    """``P[t] = prod_{l=1}^{t} (1 - q_l)(1 - p)`` for t = 0..t_max-1 (``P[0] = 1``)."""
    out = np.ones(t_max)
    for t in range(1, t_max):
        out[t] = out[t - 1] * (1.0 - q[t]) * (1.0 - p)
    return out


def wp_aggregates(source: SourceModel, delay: DelayModel) -> WeakAggregates:
    p = source.p
    q = _bounded_hazards(delay)
    T = delay.t_max
    prods = _cum_products(p, q, T)
    ts = range(1, T)
    s_q = math.fsum(q[t + 1] * prods[t] for t in ts)
    s_1 = math.fsum(prods[t] for t in ts)
    big_pi = 1.0 / (1.0 / p - q[1] - s_q + 1.0 + s_1)
    big_pi_t = tuple(prods[t] * big_pi for t in ts)
    pi0 = 1.0 - big_pi - math.fsum(big_pi_t)
    return WeakAggregates(pi0, big_pi, big_pi_t)


def wp_expected_aoii_linear(
    source: SourceModel, delay: DelayModel, alpha: float, beta: float, pmf_weights: bool = False
) -> float:
    """Expected ``alpha*delta + beta`` penalty under weak preemption (bounded delay).

    The first-moment recursion weights continuation by the hazards ``q_1`` and
    ``q_{t+1}``. ``pmf_weights=True`` substitutes the PMF values ``p_1`` and
    ``p_{t+1}`` instead; that variant does not match the stationary chain and
    is kept only for comparison.
    """
    p = source.p
    q = _bounded_hazards(delay)
    T = delay.t_max
    w = np.array([0.0] + [delay.pmf(t) for t in range(1, T + 1)]) if pmf_weights else q
    agg = wp_aggregates(source, delay)
    prods = _cum_products(p, q, T)
    big_pi_t = (None,) + agg.big_pi_t

    def partial(i: int, t: int) -> float:
        # prod_{j=i+1}^{t} P_j, empty product = 1
        return prods[t] / prods[i]

    inner = [math.fsum(partial(i, t) * big_pi_t[i] for i in range(1, t + 1)) for t in range(T)]
    num = agg.big_pi + math.fsum(w[t + 1] * p * inner[t] for t in range(1, T))
    den = 1.0 - w[1] * p - math.fsum(w[t + 1] * p * prods[t] for t in range(1, T))
    sigma = num / den
    sigma_t = [prods[t] * sigma + inner[t] for t in range(1, T)]
    return alpha * (sigma + math.fsum(sigma_t)) + beta


# --------------------------------------------------------------------------
# optimality condition for threshold preemption
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Condition1Report:
    p: float
    t_max: int
    q1: float
    q_last: float
    hazard_monotone: bool
    Q1: float
    Q2: float
    Q3: float
    satisfied: bool

    def as_dict(self) -> dict:
        return asdict(self)


def condition_q_values(p: float, q1: float, q_last: float):
    """The three sign quantities ``(Q1, Q2, Q3)``; ``q_last`` is ``q_{t_max-1}``."""
    u = q1 + 2.0 * p - 2.0 * q1 * p
    v = q1 + p - 2.0 * q1 * p
    Q1 = (q_last - q_last * p - p) + (1.0 - q_last) * p * u * u
    Q2 = (1.0 - 2.0 * p) * ((q1 - 1.0) + (1.0 - q_last) * (p + q1 * (1.0 - p))) / v
    Q3 = (
        ((1.0 - q1) * (2.0 * p - 1.0) - p * (1.0 - q_last)) / (u * v)
        + (1.0 - q_last) * (1.0 - p) * p / v
        + (1.0 - q_last) * (1.0 - p)
        + Q2
    )
    return Q1, Q2, Q3


def check_condition1(source: SourceModel, delay: DelayModel) -> Condition1Report:
    if not delay.bounded:
        raise ValidationError(["optimality condition needs a bounded delay"])
    T = delay.t_max
    if T < 2:
        raise ValidationError([f"optimality condition needs t_max >= 2, got {T}"])
    p = source.p
    q = delay.hazards(T)
    mono = all(q[1] >= q[t] for t in range(1, T - 1))
    q_last = float(q[T - 1])
    if T >= 3:
        Q1, Q2, Q3 = condition_q_values(p, float(q[1]), q_last)
        ok = mono and Q1 >= 0 and Q2 >= 0 and Q3 >= 0
    else:
        Q1 = Q2 = Q3 = float("nan")
        ok = True
    return Condition1Report(p, T, float(q[1]), q_last, mono, Q1, Q2, Q3, ok)
