"""Deterministic strategies and exact classical bounds of Bell functionals.

The local polytope is the convex hull of the ``v**(m*N)`` deterministic
strategies, so the extrema of any linear functional over it are attained on
those vertices.  Values on all vertices are obtained by contracting the
coefficient tensor with one-hot local response tables, one party at a time.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.optimize import linprog

from .scenario import Behaviour, BellFunctional, Scenario

ENUMERATION_CAP = 10**7


class ScenarioTooLarge(ValueError):
    """The strategy count ``v**(m*N)`` exceeds the enumeration cap."""


class DegenerateFunctional(ValueError):
    """The functional vanishes identically on the local polytope."""


class PositivizeError(RuntimeError):
    """Internal consistency failure while rewriting a functional."""


def _check_cap(scenario: Scenario, cap: int | None):
    cap = ENUMERATION_CAP if cap is None else cap
    count = scenario.v ** (scenario.m * scenario.N)
    if count > cap:
        raise ScenarioTooLarge(
            f"scenario too large for enumeration: {count} strategies > cap {cap}"
        )
    return count


@dataclass(frozen=True)
class DeterministicStrategy:
    scenario: Scenario
    tables: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        sc = self.scenario
        tables = tuple(tuple(int(a) for a in t) for t in self.tables)
        if len(tables) != sc.N or any(len(t) != sc.m for t in tables):
            raise ValueError("strategy needs one table of length m per party")
        if any(not 0 <= a < sc.v for t in tables for a in t):
            raise ValueError("strategy outcome out of range")
        object.__setattr__(self, "tables", tables)


def enumerate_strategies(
    scenario: Scenario, cap: int | None = None
) -> Iterator[DeterministicStrategy]:
    """Yield all deterministic strategies, lexicographic in the table entries."""
    _check_cap(scenario, cap)
    local = list(itertools.product(range(scenario.v), repeat=scenario.m))
    for combo in itertools.product(local, repeat=scenario.N):
        yield DeterministicStrategy(scenario, combo)


def strategy_behaviour(s: DeterministicStrategy) -> Behaviour:
    sc = s.scenario
    t = np.zeros(sc.shape)
    for x in itertools.product(range(sc.m), repeat=sc.N):
        a = tuple(s.tables[i][xi] for i, xi in enumerate(x))
        t[a + x] = 1.0
    return Behaviour(sc, t.reshape(-1))


def _local_tables(scenario: Scenario) -> np.ndarray:
    """One-hot local responses ``D[s, x, a]`` for the ``v**m`` local strategies."""
    m, v = scenario.m, scenario.v
    tables = np.array(list(itertools.product(range(v), repeat=m)), dtype=np.int64)
    D = np.zeros((len(tables), m, v), dtype=np.int64)
    for x in range(m):
        D[np.arange(len(tables)), x, tables[:, x]] = 1
    return D


def strategy_values(
    coeffs: np.ndarray, scenario: Scenario, cap: int | None = None
) -> np.ndarray:
    """``T`` evaluated on every deterministic strategy, in enumeration order.

    Integer coefficients are contracted in int64 so the result is exact.
    """
    _check_cap(scenario, cap)
    N, m, v = scenario.N, scenario.m, scenario.v
    coeffs = np.asarray(coeffs)
    if np.issubdtype(coeffs.dtype, np.integer):
        work = coeffs.astype(np.int64)
    else:
        work = coeffs.astype(float)
    # (a_0..a_{N-1}, x_0..x_{N-1}) -> (x_0, a_0, x_1, a_1, ...)
    order = [ax for i in range(N) for ax in (N + i, i)]
    work = work.reshape(scenario.shape).transpose(order).reshape((m * v,) * N)
    D = _local_tables(scenario).reshape(v**m, m * v).astype(work.dtype)
    # each step consumes the leading party pair and appends its strategy axis
    for _ in range(N):
        work = np.tensordot(work, D, axes=([0], [1]))
    return work.reshape(-1)


def strategy_matrix(scenario: Scenario, cap: int | None = None) -> np.ndarray:
    """Rows are the behaviours of all deterministic strategies (0/1 valued)."""
    count = _check_cap(scenario, cap)
    N, m, v = scenario.N, scenario.m, scenario.v
    local = np.array(list(itertools.product(range(v), repeat=m)), dtype=np.int64)
    # per-party table index for each global strategy, lexicographic order
    ids = np.array(np.unravel_index(np.arange(count), (v**m,) * N)).T
    S = np.zeros((count, scenario.size), dtype=np.int8)
    rows = np.arange(count)
    for x in itertools.product(range(m), repeat=N):
        a_part = np.zeros(count, dtype=np.int64)
        for i, xi in enumerate(x):
            a_part = a_part * v + local[ids[:, i], xi]
        x_part = 0
        for xi in x:
            x_part = x_part * m + xi
        S[rows, a_part * m**N + x_part] = 1
    return S


def classical_bounds(T: BellFunctional, cap: int | None = None) -> tuple[float, float]:
    """``(min, max)`` of ``T`` over the local polytope, by vertex enumeration."""
    coeffs = T.coeffs
    if np.all(coeffs == np.round(coeffs)) and np.max(np.abs(coeffs), initial=0) < 2**52:
        vals = strategy_values(np.round(coeffs).astype(np.int64), T.scenario, cap)
    else:
        vals = strategy_values(coeffs, T.scenario, cap)
    return float(vals.min()), float(vals.max())


def with_bounds(T: BellFunctional, cap: int | None = None) -> BellFunctional:
    lo, hi = classical_bounds(T, cap)
    return BellFunctional(
        T.scenario, T.coeffs, T.coeff_cap, lo, hi, T.name, T.normalized,
        dict(T.provenance),
    )


def normalize(T: BellFunctional, cap: int | None = None) -> BellFunctional:
    """Rescale ``T`` so that ``max(|lower|, |upper|) = 1``."""
    lo, hi = classical_bounds(T, cap)
    scale = max(abs(lo), abs(hi))
    if scale == 0.0:
        raise DegenerateFunctional(f"functional {T.name!r} vanishes on the local set")
    coeffs = T.coeffs / scale
    lo, hi = classical_bounds(BellFunctional(T.scenario, coeffs), cap)
    prov = dict(T.provenance)
    prov["normalize"] = {"scale": scale}
    cap_b = None if T.coeff_cap is None else T.coeff_cap / scale
    return BellFunctional(T.scenario, coeffs, cap_b, lo, hi, T.name, True, prov)


def positivize(T: BellFunctional, cap: int | None = None) -> BellFunctional:
    """Equivalent functional with coefficients in ``[0, 1]`` and upper bound 1.

    Every negative coefficient ``T[a'|x']`` is removed with the normalization
    identity ``P(a'|x') = 1 - sum_{a != a'} P(a|x')`` (all other outcome
    tuples of the block).  The constants collect into
    ``theta = upper - sum_{T<0} T`` and the result is divided by ``theta``.
    For every behaviour, ``T(p) > upper`` iff ``result(p) > 1``.
    """
    sc = T.scenario
    lo, hi = classical_bounds(T, cap)
    blocks = T.coeffs.reshape(sc.v**sc.N, sc.m**sc.N)
    neg = np.where(blocks < 0, blocks, 0.0)
    # each negative entry pushes |T| onto every other outcome tuple of its block
    moved = -neg.sum(axis=0, keepdims=True) + neg
    shifted = np.where(blocks < 0, 0.0, blocks) + moved
    theta = hi - float(neg.sum())
    if theta <= 0:
        raise DegenerateFunctional("functional is identically zero")
    coeffs = (shifted / theta).reshape(-1)
    if coeffs.max() > 1 + 1e-12 or coeffs.min() < 0:
        raise PositivizeError(
            "positivized coefficient outside [0, 1]; classical bound inconsistent"
        )
    coeffs = np.clip(coeffs, 0.0, 1.0)
    new_lo, new_hi = classical_bounds(BellFunctional(sc, coeffs), cap)
    if abs(new_hi - 1.0) > 1e-12:
        raise PositivizeError(f"positivized upper bound {new_hi} != 1")
    substituted = [int(i) for i in np.flatnonzero(T.coeffs < 0)]
    prov = dict(T.provenance)
    prov["positivize"] = {
        "theta": theta,
        "original_upper": hi,
        "substituted_entries": substituted,
    }
    return BellFunctional(sc, coeffs, 1.0, new_lo, 1.0, T.name, False, prov)


def best_functional(
    p: Behaviour, b: float, cap: int | None = None
) -> tuple[BellFunctional, float]:
    """Largest ``T(p)`` over functionals with ``|T(lambda)| <= 1`` on every
    deterministic strategy and all coefficients bounded by ``b``.

    Solved as a dense LP with HiGHS.
    """
    sc = p.scenario
    if b < 0:
        raise ValueError("coefficient cap must be nonnegative")
    S = strategy_matrix(sc, cap).astype(float)
    A_ub = np.vstack([S, -S])
    b_ub = np.ones(2 * S.shape[0])
    res = linprog(
        -p.probs, A_ub=A_ub, b_ub=b_ub, bounds=[(-b, b)] * sc.size, method="highs"
    )
    if res.status != 0:
        raise RuntimeError(f"LP failed: {res.message}")
    coeffs = np.clip(res.x, -b, b)
    vals = S @ coeffs
    T = BellFunctional(
        sc, coeffs, float(b), float(vals.min()), float(vals.max()), "lp-optimal",
        False, {"best_functional": {"b": float(b)}},
    )
    return T, float(np.dot(coeffs, p.probs))

