"""Correlation scenarios, behaviours and Bell functionals.

A behaviour (or functional) over the scenario ``(N, m, v)`` is stored as a flat
vector of length ``(m*v)**N``.  The flattening is row-major with the outcome
tuple as the major key and the setting tuple as the minor key::

    idx = (sum_i a_i * v**(N-1-i)) * m**N + sum_i x_i * m**(N-1-i)

which is exactly the C-order flattening of an array of shape
``(v,)*N + (m,)*N``.  Every module and file format uses this convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

DEFAULT_TOL = 1e-9
_MAX_ENTRIES = np.iinfo(np.int64).max


class ScenarioMismatch(ValueError):
    """Two objects that must share a scenario do not."""


@dataclass(frozen=True)
class Scenario:
    """Scenario with ``N`` parties, ``m`` settings and ``v`` outcomes per party."""

    N: int
    m: int
    v: int

    def __post_init__(self):
        for name in ("N", "m", "v"):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, (int, np.integer)):
                raise TypeError(f"{name} must be an integer, got {val!r}")
            object.__setattr__(self, name, int(val))
        if self.N < 1 or self.m < 1:
            raise ValueError(f"need N >= 1 and m >= 1, got N={self.N}, m={self.m}")
        if self.v < 2:
            raise ValueError(f"need v >= 2, got v={self.v}")
        if (self.m * self.v) ** self.N > _MAX_ENTRIES:
            raise OverflowError(f"behaviour length (mv)^N overflows for {self}")

    @property
    def size(self) -> int:
        """Length ``(m*v)**N`` of a behaviour vector."""
        return (self.m * self.v) ** self.N

    @property
    def shape(self) -> tuple[int, ...]:
        """Tensor shape ``(v,)*N + (m,)*N`` matching the flat layout."""
        return (self.v,) * self.N + (self.m,) * self.N

    @property
    def n_blocks(self) -> int:
        return self.m ** self.N

    def to_dict(self) -> dict[str, int]:
        return {"N": self.N, "m": self.m, "v": self.v}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Scenario":
        return cls(int(data["N"]), int(data["m"]), int(data["v"]))


def flat_index(scenario: Scenario, outcomes: Sequence[int], settings: Sequence[int]) -> int:
    """Canonical flat index of the entry ``p(outcomes | settings)``."""
    N, m, v = scenario.N, scenario.m, scenario.v
    if len(outcomes) != N or len(settings) != N:
        raise ValueError(f"expected {N} outcomes and {N} settings")
    a_part = 0
    x_part = 0
    for i, (a, x) in enumerate(zip(outcomes, settings)):
        if not 0 <= a < v:
            raise IndexError(f"party {i}: outcome {a} outside [0, {v})")
        if not 0 <= x < m:
            raise IndexError(f"party {i}: setting {x} outside [0, {m})")
        a_part = a_part * v + int(a)
        x_part = x_part * m + int(x)
    return a_part * m**N + x_part


def unflat_index(scenario: Scenario, idx: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Inverse of :func:`flat_index`; returns ``(outcomes, settings)``."""
    N, m, v = scenario.N, scenario.m, scenario.v
    if not 0 <= idx < scenario.size:
        raise IndexError(f"index {idx} outside [0, {scenario.size})")
    a_part, x_part = divmod(int(idx), m**N)
    outcomes = []
    settings = []
    for _ in range(N):
        a_part, a = divmod(a_part, v)
        x_part, x = divmod(x_part, m)
        outcomes.append(a)
        settings.append(x)
    return tuple(reversed(outcomes)), tuple(reversed(settings))


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Behaviour:
    """Vector of conditional probabilities ``p(a|x)`` in canonical layout."""

    scenario: Scenario
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs).reshape(-1)
        if probs.size != self.scenario.size:
            raise ValueError(
                f"behaviour length {probs.size} != (mv)^N = {self.scenario.size}"
            )
        object.__setattr__(self, "probs", probs)

    def tensor(self) -> np.ndarray:
        return self.probs.reshape(self.scenario.shape)

    def __getitem__(self, key):
        outcomes, settings = key
        return float(self.probs[flat_index(self.scenario, outcomes, settings)])

    @classmethod
    def uniform(cls, scenario: Scenario) -> "Behaviour":
        return cls(scenario, np.full(scenario.size, 1.0 / scenario.v**scenario.N))

    @classmethod
    def product(cls, scenario: Scenario, local: Sequence[np.ndarray]) -> "Behaviour":
        """Product behaviour from per-party tables ``local[i][a, x] = q_i(a|x)``."""
        N = scenario.N
        if len(local) != N:
            raise ValueError(f"need {N} local tables")
        letters = "abcdefghijklmnopqrstuvwxyz"
        a_idx, x_idx = letters[:N], letters[N : 2 * N]
        spec = ",".join(a + x for a, x in zip(a_idx, x_idx)) + "->" + a_idx + x_idx
        tensor = np.einsum(spec, *[np.asarray(q, dtype=float) for q in local])
        return cls(scenario, tensor.reshape(-1))


@dataclass(frozen=True)
class BellFunctional:
    """Linear functional ``T`` on behaviours of one scenario.

    ``coeff_cap`` is the declared ``b`` of the family of functionals with all
    coefficients bounded by ``b``; when set, the coefficients must respect it.
    ``provenance`` records how the functional was produced (normalization
    scale, positivization constant, catalog source, ...).
    """

    scenario: Scenario
    coeffs: np.ndarray
    coeff_cap: float | None = None
    classical_lower: float | None = None
    classical_upper: float | None = None
    name: str = ""
    normalized: bool = False
    provenance: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        coeffs = _frozen(self.coeffs).reshape(-1)
        if coeffs.size != self.scenario.size:
            raise ValueError(
                f"functional length {coeffs.size} != (mv)^N = {self.scenario.size}"
            )
        object.__setattr__(self, "coeffs", coeffs)
        if self.coeff_cap is not None:
            if self.coeff_cap < 0:
                raise ValueError("coefficient cap must be nonnegative")
            if np.max(np.abs(coeffs), initial=0.0) > self.coeff_cap * (1 + 1e-12):
                raise ValueError(
                    f"coefficients exceed declared cap b={self.coeff_cap}"
                )
        if self.normalized and self.classical_lower is not None:
            scale = max(abs(self.classical_lower), abs(self.classical_upper))
            if abs(scale - 1.0) > 1e-12:
                raise ValueError(f"normalized functional has bound scale {scale}")

    def tensor(self) -> np.ndarray:
        return self.coeffs.reshape(self.scenario.shape)

    @property
    def max_abs_coeff(self) -> float:
        return float(np.max(np.abs(self.coeffs), initial=0.0))

    def __getitem__(self, key):
        outcomes, settings = key
        return float(self.coeffs[flat_index(self.scenario, outcomes, settings)])

    def scaled(self, factor: float) -> "BellFunctional":
        """Plain rescaling; bounds are rescaled too (swapping if negative)."""
        lo, hi = self.classical_lower, self.classical_upper
        if lo is not None and hi is not None:
            lo, hi = sorted((lo * factor, hi * factor))
        cap = None if self.coeff_cap is None else self.coeff_cap * abs(factor)
        return BellFunctional(
            self.scenario, self.coeffs * factor, cap, lo, hi, self.name, False,
            dict(self.provenance),
        )

    def __neg__(self) -> "BellFunctional":
        return self.scaled(-1.0)

    @classmethod
    def from_terms(
        cls, scenario: Scenario, terms, name: str = "", **kwargs
    ) -> "BellFunctional":
        """Build from ``[(outcomes, settings, value), ...]``; repeated entries add."""
        coeffs = np.zeros(scenario.size)
        for outcomes, settings, value in terms:
            coeffs[flat_index(scenario, outcomes, settings)] += value
        return cls(scenario, coeffs, name=name, **kwargs)


def _check_same(s1: Scenario, s2: Scenario):
    if s1 != s2:
        raise ScenarioMismatch(f"scenario mismatch: {s1} vs {s2}")


def validate_behaviour(p: Behaviour, tol: float = DEFAULT_TOL) -> list[str]:
    """List every violated admissibility constraint (empty when admissible)."""
    sc = p.scenario
    report = []
    probs = p.probs
    if not np.all(np.isfinite(probs)):
        report.append("non-finite entries present")
    bad = np.flatnonzero((probs < -tol) | (probs > 1 + tol))
    for idx in bad:
        a, x = unflat_index(sc, int(idx))
        report.append(f"p{a}|{x} = {probs[idx]!r} outside [0, 1]")
    # outcome axes lead, so summing the leading block gives one total per setting tuple
    sums = probs.reshape(sc.v**sc.N, sc.m**sc.N).sum(axis=0)
    for xi in np.flatnonzero(np.abs(sums - 1.0) > tol):
        _, x = unflat_index(sc, int(xi))
        report.append(f"sum over outcomes at settings {x} = {sums[xi]!r} != 1")
    return report


def check_nonsignalling(p: Behaviour, tol: float = DEFAULT_TOL) -> tuple[bool, float]:
    """Return ``(ok, worst)`` for the no-signalling constraints.

    For every party ``i`` the marginal obtained by summing out ``a_i`` must not
    depend on ``x_i``; composing these single-party conditions yields the
    condition for every subset of parties.
    """
    sc = p.scenario
    t = p.tensor()
    worst = 0.0
    for i in range(sc.N):
        marg = t.sum(axis=i)
        # setting axis of party i sits at position N - 1 + i once a_i is summed out
        axis = sc.N - 1 + i
        ref = np.take(marg, [0], axis=axis)
        worst = max(worst, float(np.max(np.abs(marg - ref))))
    return worst <= tol, worst


def evaluate_functional(T: BellFunctional, p: Behaviour) -> float:
    """``T(p) = sum_{a,x} T[a|x] p(a|x)``."""
    _check_same(T.scenario, p.scenario)
    return float(np.dot(T.coeffs, p.probs))
