"""Source process, transmission-delay distributions and time penalties.

Delay models expose both the PMF ``p_t = Pr(T = t)`` and the discrete
hazard ``q_t = Pr(T = t | T > t - 1)``. Bounded models use the convention
``q_t = 0`` for ``t > t_max``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

PMF_TOL = 1e-12


class ValidationError(ValueError):
    """Raised when a model violates one or more of its invariants."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class SourceModel:
    """Symmetric two-state Markov source flipping with probability ``p`` per slot."""

    p: float

    def __post_init__(self):
        if not (0.0 < self.p < 0.5):
            raise ValidationError([f"source flip probability must satisfy 0 < p < 1/2, got {self.p}"])


# --------------------------------------------------------------------------
# delay models
# --------------------------------------------------------------------------


class DelayModel:
    """Discrete transmission time ``T`` on ``{1, 2, ...}``."""

    kind: str = "delay"
    t_max: Optional[int] = None

    @property
    def bounded(self) -> bool:
        return self.t_max is not None

    def pmf(self, t: int) -> float:
        raise NotImplementedError

    def hazard(self, t: int) -> float:
        raise NotImplementedError

    def hazards(self, upto: int) -> np.ndarray:
        """Array ``h`` of length ``upto + 1`` with ``h[t] = q_t`` (``h[0]`` unused, set to 0)."""
        out = np.zeros(upto + 1)
        for t in range(1, upto + 1):
            out[t] = self.hazard(t)
        return out

    def params(self) -> dict:
        raise NotImplementedError


def _check_t(t: int) -> None:
    if t < 1:
        raise ValueError(f"transmission slot index must be >= 1, got {t}")


@dataclass(frozen=True)
class Geometric(DelayModel):
    """``p_t = p_s (1 - p_s)^(t-1)``; memoryless, so ``q_t = p_s``."""

    p_s: float
    kind: str = field(default="geometric", init=False)

    def __post_init__(self):
        if not (0.0 < self.p_s < 1.0):
            raise ValidationError([f"geometric success probability must satisfy 0 < p_s < 1, got {self.p_s}"])

    def pmf(self, t: int) -> float:
        _check_t(t)
        return self.p_s * (1.0 - self.p_s) ** (t - 1)

    def hazard(self, t: int) -> float:
        _check_t(t)
        return self.p_s

    def hazards(self, upto: int) -> np.ndarray:
        out = np.full(upto + 1, self.p_s)
        out[0] = 0.0
        return out

    def tail_horizon(self, mass: float = 1e-9) -> int:
        """Smallest ``t`` with ``(1 - p_s)^t < mass``."""
        t = max(1, math.ceil(math.log(mass) / math.log1p(-self.p_s)))
        while (1.0 - self.p_s) ** t >= mass:
            t += 1
        while t > 1 and (1.0 - self.p_s) ** (t - 1) < mass:
            t -= 1
        return t

    def params(self) -> dict:
        return {"kind": self.kind, "p_s": self.p_s}


class _Tabulated(DelayModel):
    """Bounded delay with a precomputed PMF and hazard table."""

    _pmf: np.ndarray
    _haz: np.ndarray

    def _freeze_tables(self, pmf: np.ndarray) -> None:
        tail = np.cumsum(pmf[::-1])[::-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            haz = np.where(tail > 0, pmf / np.where(tail > 0, tail, 1.0), 0.0)
        haz[-1] = 1.0
        pmf.setflags(write=False)
        haz.setflags(write=False)
        object.__setattr__(self, "_pmf", pmf)
        object.__setattr__(self, "_haz", haz)

    @property
    def pmf_table(self) -> np.ndarray:
        return self._pmf

    @property
    def hazard_table(self) -> np.ndarray:
        return self._haz

    def pmf(self, t: int) -> float:
        _check_t(t)
        return float(self._pmf[t - 1]) if t <= self.t_max else 0.0

    def hazard(self, t: int) -> float:
        _check_t(t)
        return float(self._haz[t - 1]) if t <= self.t_max else 0.0

    def hazards(self, upto: int) -> np.ndarray:
        out = np.zeros(upto + 1)
        n = min(upto, self.t_max)
        out[1 : n + 1] = self._haz[:n]
        return out


@dataclass(frozen=True)
class Zipf(_Tabulated):
    """``p_t ∝ t^(-a)`` on ``1..t_max``."""

    a: float
    t_max: int
    kind: str = field(default="zipf", init=False)

    def __post_init__(self):
        errs = []
        if self.a < 0:
            errs.append(f"zipf exponent must be >= 0, got {self.a}")
        if int(self.t_max) != self.t_max or self.t_max <= 1:
            errs.append(f"zipf t_max must be an integer > 1, got {self.t_max}")
        if errs:
            raise ValidationError(errs)
        w = np.arange(1, self.t_max + 1, dtype=float) ** (-float(self.a))
        self._freeze_tables(w / w.sum())
        # closed-form hazard t^-a / sum_{i>=t} i^-a, exact at t_max
        tail = np.cumsum(w[::-1])[::-1]
        haz = w / tail
        haz[-1] = 1.0
        haz.setflags(write=False)
        object.__setattr__(self, "_haz", haz)

    def params(self) -> dict:
        return {"kind": self.kind, "a": self.a, "t_max": self.t_max}


@dataclass(frozen=True)
class Explicit(_Tabulated):
    """Finite PMF given as ``[p_1, ..., p_tmax]``; trailing zeros are dropped."""

    pmf_values: tuple
    kind: str = field(default="explicit", init=False)

    def __post_init__(self):
        vals = np.asarray(self.pmf_values, dtype=float)
        errs = []
        if vals.ndim != 1 or vals.size == 0:
            raise ValidationError(["PMF must be a non-empty sequence"])
        if np.any(~np.isfinite(vals)):
            errs.append("PMF has non-finite entries")
        if np.any(vals < 0):
            errs.append(f"PMF has negative entries at t={[int(k) + 1 for k in np.flatnonzero(vals < 0)]}")
        total = float(vals.sum())
        if abs(total - 1.0) > PMF_TOL:
            errs.append(f"PMF sums to {total:.12g}")
        if errs:
            raise ValidationError(errs)
        nz = np.flatnonzero(vals > 0)
        vals = vals[: nz[-1] + 1].copy()
        object.__setattr__(self, "pmf_values", tuple(float(v) for v in vals))
        self._freeze_tables(vals)

    def params(self) -> dict:
        return {"kind": self.kind, "pmf": list(self.pmf_values)}

    @property
    def t_max(self) -> int:
        return len(self._pmf)


def Deterministic(T: int) -> Explicit:
    """Unit mass at ``T``: ``q_t = 0`` for ``t < T`` and ``q_T = 1``."""
    if int(T) != T or T < 1:
        raise ValidationError([f"deterministic delay must be a positive integer, got {T}"])
    pmf = [0.0] * (int(T) - 1) + [1.0]
    return Explicit(tuple(pmf))


def hazard(delay: DelayModel, t: int) -> float:
    return delay.hazard(t)


def pmf(delay: DelayModel, t: int) -> float:
    return delay.pmf(t)


@dataclass(frozen=True)
class ValidationReport:
    kind: str
    bounded: bool
    t_max: Optional[int]
    pmf_sum: float
    hazard_at_tmax: Optional[float]
    violations: tuple = ()

    @property
    def accepted(self) -> bool:
        return not self.violations


def validate(delay: DelayModel, horizon: int = 1000) -> ValidationReport:
    """Check PMF mass, hazard range and the bounded-model ``q_tmax = 1`` invariant.

    Raises :class:`ValidationError` listing every violated invariant.
    """
    errs = []
    if delay.bounded:
        n = delay.t_max
        p = np.array([delay.pmf(t) for t in range(1, n + 1)])
        total = float(p.sum())
        q_last = delay.hazard(n)
        if q_last != 1.0:
            errs.append(f"hazard at t_max={n} is {q_last!r}, expected 1")
    else:
        n = horizon
        p = np.array([delay.pmf(t) for t in range(1, n + 1)])
        # geometric tail in closed form
        total = float(p.sum()) + (1.0 - delay.p_s) ** n
        q_last = None
    if abs(total - 1.0) > PMF_TOL:
        errs.append(f"PMF sums to {total:.12g}")
    q = delay.hazards(n)[1:]
    if np.any((q < 0) | (q > 1)):
        errs.append("hazard outside [0, 1]")
    if errs:
        raise ValidationError(errs)
    return ValidationReport(delay.kind, delay.bounded, delay.t_max, total, q_last)


def delay_from_params(params: dict) -> DelayModel:
    kind = params.get("kind")
    if kind == "geometric":
        return Geometric(float(params["p_s"]))
    if kind == "zipf":
        return Zipf(float(params["a"]), int(params["t_max"]))
    if kind == "explicit":
        return Explicit(tuple(params["pmf"]))
    if kind == "deterministic":
        return Deterministic(int(params["T"]))
    raise ValidationError([f"unknown delay kind {kind!r}"])


# --------------------------------------------------------------------------
# time penalty functions
# --------------------------------------------------------------------------


class PenaltyFunction:
    """Nondecreasing, nonnegative time penalty ``f(Δ)``; vectorised over arrays."""

    kind: str = "penalty"
    #: one of "constant", "linear", "quadratic", "logarithmic"
    growth: str = "linear"

    def __call__(self, delta):
        raise NotImplementedError

    @property
    def degenerate(self) -> bool:
        """True when ``f`` does not grow without bound."""
        return self.growth == "constant"

    def params(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Linear(PenaltyFunction):
    alpha: float = 1.0
    beta: float = 0.0
    kind: str = field(default="linear", init=False)

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError([f"linear penalty needs alpha, beta >= 0, got {self.alpha}, {self.beta}"])

    @property
    def growth(self) -> str:
        return "constant" if self.alpha == 0 else "linear"

    def __call__(self, delta):
        return self.alpha * delta + self.beta

    def params(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True)
class Quadratic(PenaltyFunction):
    kappa: float = 1.0
    kind: str = field(default="quadratic", init=False)
    growth: str = field(default="quadratic", init=False)

    def __post_init__(self):
        if self.kappa < 0:
            raise ValidationError([f"quadratic penalty needs kappa >= 0, got {self.kappa}"])

    def __call__(self, delta):
        d = np.asarray(delta, dtype=float) if np.ndim(delta) else float(delta)
        return self.kappa * d * d

    def params(self) -> dict:
        return {"kind": self.kind, "kappa": self.kappa}


@dataclass(frozen=True)
class Logarithmic(PenaltyFunction):
    """``f(Δ) = log_base(Δ + 1)``."""

    base: float = 2.0
    kind: str = field(default="logarithmic", init=False)
    growth: str = field(default="logarithmic", init=False)

    def __post_init__(self):
        if not self.base > 1:
            raise ValidationError([f"logarithmic penalty needs base > 1, got {self.base}"])

    def __call__(self, delta):
        if np.ndim(delta):
            return np.log1p(np.asarray(delta, dtype=float)) / math.log(self.base)
        return math.log1p(delta) / math.log(self.base)

    def params(self) -> dict:
        return {"kind": self.kind, "base": self.base}


@dataclass(frozen=True)
class Table(PenaltyFunction):
    """Tabulated ``f(0..L-1)`` extended linearly with ``slope`` past the last entry.

    Without a slope the penalty is only defined on the table itself.
    """

    values: tuple
    slope: Optional[float] = None
    kind: str = field(default="table", init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        errs = []
        if v.ndim != 1 or v.size == 0:
            errs.append("penalty table must be a non-empty sequence")
        elif np.any(v < 0) or np.any(np.diff(v) < 0):
            errs.append("penalty table must be nonnegative and nondecreasing")
        if self.slope is not None and self.slope < 0:
            errs.append(f"extrapolation slope must be >= 0, got {self.slope}")
        if errs:
            raise ValidationError(errs)
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @property
    def growth(self) -> str:
        return "linear" if self.slope else "constant"

    def __call__(self, delta):
        v = np.asarray(self.values)
        last = len(v) - 1
        d = np.asarray(delta)
        if np.any(d > last) and self.slope is None:
            raise ValueError(f"penalty table has no extrapolation slope beyond Δ={last}")
        slope = self.slope or 0.0
        out = np.where(d <= last, v[np.minimum(d, last)], v[-1] + slope * (d - last))
        return out.astype(float) if np.ndim(delta) else float(out)

    def params(self) -> dict:
        return {"kind": self.kind, "values": list(self.values), "slope": self.slope}


def penalty_eval(f: PenaltyFunction, delta):
    return f(delta)


def penalty_from_params(params: dict) -> PenaltyFunction:
    kind = params.get("kind", "linear")
    if kind == "linear":
        return Linear(float(params.get("alpha", 1.0)), float(params.get("beta", 0.0)))
    if kind == "quadratic":
        return Quadratic(float(params.get("kappa", 1.0)))
    if kind in ("log", "logarithmic"):
        return Logarithmic(float(params.get("base", 2.0)))
    if kind == "table":
        slope = params.get("slope")
        return Table(tuple(params["values"]), None if slope is None else float(slope))
    raise ValidationError([f"unknown penalty kind {kind!r}"])
