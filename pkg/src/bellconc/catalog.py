"""Built-in Bell functionals with documented classical bounds.

Probabilities are written ``P(ab|xy)`` with Alice's outcome and setting first.
Marginal terms such as ``P(_1|_0)`` are expanded onto joint probabilities with
the absent party's setting fixed to 0, which is equivalent on every
non-signalling behaviour.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .lhv import classical_bounds, normalize
from .scenario import BellFunctional, Scenario

S222 = Scenario(2, 2, 2)
S232 = Scenario(2, 3, 2)

# pentagonal inequalities share these four terms
_PENT_CORE = ["00|00", "11|01", "10|11", "00|10"]


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    scenario: Scenario
    raw: BellFunctional
    documented_upper: float
    documented_lower: float | None
    provenance: str

    def normalized(self) -> BellFunctional:
        return normalize(self.raw)


class CatalogError(KeyError):
    pass


class VerificationFailure(AssertionError):
    pass


def _parse(term: str, remote_setting: int = 0):
    """``"1_|0_"`` -> list of ``(outcomes, settings)`` joint entries."""
    outs, sets = term.split("|")
    missing = [i for i, c in enumerate(outs) if c == "_"]
    if [i for i, c in enumerate(sets) if c == "_"] != missing:
        raise ValueError(f"malformed marginal term {term!r}")
    entries = []
    for fill in itertools.product(range(2), repeat=len(missing)):
        a = [0 if c == "_" else int(c) for c in outs]
        x = [remote_setting if c == "_" else int(c) for c in sets]
        for i, val in zip(missing, fill):
            a[i] = val
        entries.append((tuple(a), tuple(x)))
    return entries


def _from_strings(name: str, scenario: Scenario, terms: list[str]) -> BellFunctional:
    expanded = []
    for term in terms:
        expanded += [(a, x, 1) for a, x in _parse(term)]
    T = BellFunctional.from_terms(scenario, expanded, name=name)
    return BellFunctional(
        scenario, T.coeffs.astype(int), name=name,
        provenance={"catalog": name, "terms": terms, "marginal_remote_setting": 0},
    )


def _chsh() -> BellFunctional:
    terms = []
    for a, b, x, y in itertools.product(range(2), repeat=4):
        terms.append(((a, b), (x, y), (-1) ** (a + b + x * y)))
    T = BellFunctional.from_terms(S222, terms, name="chsh")
    return BellFunctional(
        S222, T.coeffs, name="chsh",
        provenance={"catalog": "chsh", "terms": "sum_xy (-1)^{xy} E_xy"},
    )


def _build() -> dict[str, CatalogEntry]:
    entries = {
        "chsh": CatalogEntry(
            "chsh", S222, _chsh(), 2.0, -2.0,
            "E00 + E01 + E10 - E11 with E_xy = sum_ab (-1)^(a+b) P(ab|xy)",
        ),
        "pent1": CatalogEntry(
            "pent1", S222,
            _from_strings("pent1", S222, _PENT_CORE + ["11|00"]), 2.0, None,
            "P(00|00)+P(11|01)+P(10|11)+P(00|10)+P(11|00)",
        ),
        "pent2": CatalogEntry(
            "pent2", S222,
            _from_strings("pent2", S222, _PENT_CORE + ["_1|_0"]), 2.0, None,
            "P(00|00)+P(11|01)+P(10|11)+P(00|10)+P(_1|_0)",
        ),
        "pent3": CatalogEntry(
            "pent3", S232,
            _from_strings("pent3", S232, _PENT_CORE + ["11|20"]), 2.0, None,
            "P(00|00)+P(11|01)+P(10|11)+P(00|10)+P(11|20); Bob's setting 2 unused",
        ),
        "i3322": CatalogEntry(
            "i3322", S232,
            _from_strings(
                "i3322", S232,
                ["00|01", "00|02", "00|10", "00|12", "00|20", "00|21",
                 "01|11", "10|11", "11|11", "01|22", "10|22", "11|22",
                 "1_|0_", "1_|1_", "_1|_0", "_1|_1"],
            ),
            6.0, None,
            "symmetric I3322 with four marginal terms",
        ),
    }
    return entries


_CATALOG = _build()
NAMES = tuple(_CATALOG)


def get(name: str) -> CatalogEntry:
    try:
        return _CATALOG[name]
    except KeyError:
        raise CatalogError(f"unknown catalog functional {name!r}; known: {', '.join(NAMES)}") from None


def names_for(scenario: Scenario) -> list[str]:
    return [n for n, e in _CATALOG.items() if e.scenario == scenario]


def verify_catalog(entries=None) -> list[dict]:
    """Recompute every classical bound by enumeration and compare exactly.

    Raises :class:`VerificationFailure` naming the first mismatching entry.
    """
    entries = list(_CATALOG.values()) if entries is None else list(entries)
    report = []
    for e in entries:
        lo, hi = classical_bounds(e.raw)
        ok = hi == e.documented_upper and (
            e.documented_lower is None or lo == e.documented_lower
        )
        integral = bool(np.all(e.raw.coeffs == np.round(e.raw.coeffs)))
        report.append({
            "name": e.name,
            "scenario": e.scenario.to_dict(),
            "lower": lo,
            "upper": hi,
            "documented_upper": e.documented_upper,
            "documented_lower": e.documented_lower,
            "exact": integral,
            "ok": ok,
        })
        if not ok:
            raise VerificationFailure(
                f"catalog entry {e.name!r}: enumeration gives ({lo}, {hi}), "
                f"documented upper {e.documented_upper}"
            )
    return report
