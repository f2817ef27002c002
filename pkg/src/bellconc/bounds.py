"""Closed-form constants and tail bounds for the typical Bell violation.

Every probability bound is returned as a natural logarithm.  Intermediate
quantities such as ``(mv)**N`` or ``d**N`` are handled through their logs, so
parameters far beyond double range are evaluated without overflow; when a
difference of two astronomically large terms cannot be formed in floating
point the result saturates to ``+inf`` or ``-inf`` according to which term
dominates.
"""

from __future__ import annotations

import math
import random
from dataclasses import asdict, dataclass, field

LOG2 = math.log(2.0)
LOG4 = math.log(4.0)
VARIANTS = ("theorem", "appendix", "derived")


class BoundDomainError(ValueError):
    """Parameters violate the hypotheses of a bound."""


def lipschitz_state(N: int, m: int) -> float:
    """Lipschitz constant ``2(2m-1)^(N-1)`` of ``Q`` in the state."""
    if N < 1 or m < 1:
        raise ValueError("need N, m >= 1")
    try:
        return 2.0 * float((2 * m - 1) ** (N - 1))
    except OverflowError:
        return math.inf


def lipschitz_param(N: int, m: int, v: int, d: int, b: float) -> tuple[float, int]:
    """``(lambda, n)``: Lipschitz constant in the joint (T, A) cube and its dimension.

    ``n`` is an exact integer.  ``lambda`` is ``inf`` if it exceeds double
    range; :func:`log_lipschitz_param` gives the log-domain companions.
    """
    if min(N, m, v, d) < 1 or b < 0:
        raise ValueError("need N, m, v, d >= 1 and b >= 0")
    mvN = (m * v) ** N
    n = d * d * m * v * N + mvN
    try:
        lam = 4.0 * N * b * float(mvN) * d * d
    except OverflowError:
        lam = math.inf if b > 0 else 0.0
    return lam, n


def log_lipschitz_param(N: int, m: int, v: int, d: int, b: float) -> tuple[float, float]:
    """``(log lambda, log n)``, finite for any positive parameters."""
    if min(N, m, v, d) < 1 or b <= 0:
        raise ValueError("need N, m, v, d >= 1 and b > 0")
    log_lam = math.log(4 * N * d * d) + math.log(b) + N * math.log(m * v)
    n = d * d * m * v * N + (m * v) ** N
    return log_lam, math.log(n)


def loubenets_bound(N: int, m: int) -> int:
    """Operator-norm ceiling ``(2m-1)^N`` for Bell operators of normalized functionals."""
    if N < 1 or m < 1:
        raise ValueError("need N, m >= 1")
    return (2 * m - 1) ** N


def levy_tail(D: int, Lam: float, eps: float) -> float:
    """``log 2 - (D+1) eps^2 / (9 pi^3 Lam^2)``."""
    if D < 1 or Lam <= 0 or eps < 0:
        raise ValueError("need D >= 1, Lam > 0, eps >= 0")
    if eps == 0:
        return LOG2
    log_expo = math.log(D + 1) + 2 * math.log(eps) - math.log(9 * math.pi**3) - 2 * math.log(Lam)
    return LOG2 - _exp_or_inf(log_expo)


def _exp_or_inf(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _combine(log_net: float, log_expo: float) -> float:
    """``log 4 + e^{log_net} - e^{log_expo}``, saturating when both overflow."""
    net = _exp_or_inf(log_net)
    expo = _exp_or_inf(log_expo)
    if math.isinf(net) and math.isinf(expo):
        if log_net == log_expo:
            return math.nan
        return math.inf if log_net > log_expo else -math.inf
    return LOG4 + net - expo


def _log_net(log_n: float, log_ratio: float) -> float:
    """log of ``n * log(ratio + 2)`` given logs of ``n`` and ``ratio``."""
    if log_n == -math.inf:
        return -math.inf
    return log_n + math.log(math.log(2.0 + math.exp(log_ratio)) if log_ratio < 700
                            else log_ratio + math.log1p(2.0 * math.exp(-log_ratio)))


def _check_slack(delta: float, c: float):
    if delta <= 0:
        raise BoundDomainError(f"net slack delta must be positive, got {delta}")
    if not c > delta + 1:
        raise BoundDomainError(f"need c > delta + 1, got c={c}, delta={delta}")


def generic_tail_bound(n: int, lam: float, delta: float, D: int, Lam: float, c: float) -> float:
    """``log[4 (2 lam/delta + 2)^n exp(-(D+1)(c-delta-1)^2 / (9 pi^3 Lam^2))]``.

    Union bound over a ``delta / lam`` net of the parameter cube combined with
    concentration in the state at every net point.
    """
    _check_slack(delta, c)
    if lam <= 0 or Lam <= 0:
        raise BoundDomainError("lambda and Lambda must be positive")
    if D < 1 or n < 0:
        raise BoundDomainError("need D >= 1 and n >= 0")
    log_n = math.log(n) if n > 0 else -math.inf
    log_net = _log_net(log_n, math.log(2 * lam / delta))
    log_expo = (math.log(D + 1) + 2 * math.log(c - delta - 1)
                - math.log(9 * math.pi**3) - 2 * math.log(Lam))
    return _combine(log_net, log_expo)


@dataclass(frozen=True)
class TailBoundParams:
    N: int
    m: int
    v: int
    d: int
    b: float
    c: float
    delta: float

    def __post_init__(self):
        if self.N < 2 or self.d < 2:
            raise BoundDomainError("need N >= 2 and d >= 2")
        if self.m < 1 or self.v < 1:
            raise BoundDomainError("need m, v >= 1")
        if self.b <= 0:
            raise BoundDomainError("coefficient cap b must be positive")
        _check_slack(self.delta, self.c)


@dataclass
class TailBoundResult:
    log_value: float
    variant: str
    params: TailBoundParams
    terms: dict = field(default_factory=dict)

    def record(self) -> dict:
        return {
            "params": asdict(self.params),
            "variant": self.variant,
            "log_value": self.log_value,
            "terms": dict(self.terms),
        }


def _theorem(p: TailBoundParams) -> TailBoundResult:
    N, m, v, d, b, c, delta = p.N, p.m, p.v, p.d, p.b, p.c, p.delta
    n = m * v * N * d * d + (m * v) ** N
    log_ratio = math.log(8 * b * N * d * d / delta) + N * math.log(m * v)
    log_net = _log_net(math.log(n), log_ratio)
    log_expo = (LOG2 + N * math.log(d) + 2 * math.log(c - delta - 1)
                - math.log(36 * math.pi**2) - (2 * N - 2) * math.log(2 * m - 1))
    return TailBoundResult(
        _combine(log_net, log_expo), "theorem", p,
        {"net": _exp_or_inf(log_net), "exponent": -_exp_or_inf(log_expo)},
    )


def _signed_log(coef_log: float, factor: float) -> tuple[float, float]:
    """``(sign, log|value|)`` of ``factor * e^{coef_log}``."""
    if factor == 0:
        return 0.0, -math.inf
    return math.copysign(1.0, factor), coef_log + math.log(abs(factor))


def _appendix(p: TailBoundParams) -> TailBoundResult:
    N, m, v, d, b, c, delta = p.N, p.m, p.v, p.d, p.b, p.c, p.delta
    mv = m * v
    log_mvN = N * math.log(mv)
    signed = {
        "settings_outcomes": _signed_log(0.0, mv * N * N * d * d * math.log(mv)),
        "measurement_block": _signed_log(0.0, mv * N * d * d * math.log(16 * b * N * d * d / delta)),
        "functional_block": _signed_log(log_mvN, math.log(16 * N * d * d / delta)),
        "coefficient_cap": _signed_log(math.log(N) + log_mvN, math.log(b * mv)),
        "concentration": (-1.0, 2 * math.log(c - delta - 1) + 2 * math.log(2 * m - 1)
                          - math.log(18 * math.pi**2)
                          + N * (math.log(d) - 2 * math.log(2 * m - 1))),
    }
    terms = {k: s * _exp_or_inf(lg) if s else 0.0 for k, (s, lg) in signed.items()}
    if any(math.isinf(t) for t in terms.values()):
        # the largest term decides the sign once anything leaves double range
        s, _ = max(signed.values(), key=lambda t: t[1])
        value = math.copysign(math.inf, s)
    else:
        value = LOG4 + math.fsum(terms.values())
    return TailBoundResult(value, "appendix", p, terms)


def _derived(p: TailBoundParams) -> TailBoundResult:
    N, m, v, d, b, c, delta = p.N, p.m, p.v, p.d, p.b, p.c, p.delta
    n = m * v * N * d * d + (m * v) ** N
    log_lam = math.log(4 * N * d * d) + math.log(b) + N * math.log(m * v)
    log_Lam = LOG2 + (N - 1) * math.log(2 * m - 1)
    log_net = _log_net(math.log(n), LOG2 + log_lam - math.log(delta))
    # D + 1 = 2 d^N
    log_expo = (LOG2 + N * math.log(d) + 2 * math.log(c - delta - 1)
                - math.log(9 * math.pi**3) - 2 * log_Lam)
    return TailBoundResult(
        _combine(log_net, log_expo), "derived", p,
        {"net": _exp_or_inf(log_net), "exponent": -_exp_or_inf(log_expo)},
    )


_IMPLS = {"theorem": _theorem, "appendix": _appendix, "derived": _derived}


def theorem_bound(params: TailBoundParams, variant: str = "theorem") -> TailBoundResult:
    """Log of the upper bound on the probability that a Haar state violates by more than ``c``.

    Variants:
        theorem: headline closed form with ``36 pi^2`` in the exponent.
        appendix: expanded five-term upper estimate of ``theorem``.
        derived: :func:`generic_tail_bound` with the same ``n, lambda`` and the
            state Lipschitz constant, which carries ``9 pi^3 Lambda^2``.
    """
    try:
        impl = _IMPLS[variant]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}") from None
    return impl(params)


def regime_check(d: int, m: int, v: int) -> bool:
    """True when ``d > m v (2m-1)^2``, the dimension regime where the bound decays."""
    return d > m * v * (2 * m - 1) ** 2


def random_params(rng: random.Random) -> TailBoundParams:
    """Random valid parameters with ``b >= 1`` (used by sweeps and self-checks)."""
    delta = rng.uniform(0.01, 1.0)
    return TailBoundParams(
        N=rng.randint(2, 8), m=rng.randint(1, 4), v=rng.randint(2, 4), d=rng.randint(2, 60),
        b=rng.uniform(1.0, 5.0), c=delta + 1 + rng.uniform(0.01, 5.0), delta=delta,
    )
