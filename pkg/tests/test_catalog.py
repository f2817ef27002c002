import dataclasses

import numpy as np
import pytest

from bellconc import catalog
from bellconc.lhv import classical_bounds, positivize
from bellconc.scenario import BellFunctional, Scenario
from oracles import brute_classical_bounds, index


class TestEntries:
    @pytest.mark.parametrize("name,upper", [("pent1", 2), ("pent2", 2), ("pent3", 2), ("i3322", 6)])
    def test_documented_upper(self, name, upper):
        e = catalog.get(name)
        assert classical_bounds(e.raw)[1] == upper
        assert brute_classical_bounds(e.raw)[1] == upper

    def test_chsh_both_bounds(self):
        assert classical_bounds(catalog.get("chsh").raw) == (-2.0, 2.0)

    def test_scenarios(self):
        for name in ("chsh", "pent1", "pent2"):
            assert catalog.get(name).scenario == Scenario(2, 2, 2)
        for name in ("pent3", "i3322"):
            assert catalog.get(name).scenario == Scenario(2, 3, 2)

    def test_unknown_name(self):
        with pytest.raises(catalog.CatalogError, match="unknown"):
            catalog.get("nope")

    def test_pent3_third_setting_only_for_first_party(self):
        T = catalog.get("pent3").raw
        t = T.coeffs.reshape(T.scenario.shape)
        assert np.any(t[:, :, 2, :] != 0)
        assert np.all(t[:, :, :, 2] == 0)

    def test_marginal_expansion_uses_setting_zero(self):
        # P(_1|_0) becomes sum_a P(a1|00)
        T = catalog.get("pent2").raw
        c = T.coeffs
        assert c[index(2, 2, 2, (0, 1), (0, 0))] == 1
        assert c[index(2, 2, 2, (1, 1), (0, 0))] == 1
        assert c[index(2, 2, 2, (0, 1), (1, 0))] == 0
        assert T.provenance["marginal_remote_setting"] == 0

    def test_integer_coefficients(self):
        for name in catalog.NAMES:
            c = catalog.get(name).raw.coeffs
            assert np.all(c == np.round(c))


class TestVerify:
    def test_all_pass(self):
        report = catalog.verify_catalog()
        assert [r["name"] for r in report] == list(catalog.NAMES)
        assert all(r["ok"] and r["exact"] for r in report)

    def test_corrupted_entry_named(self):
        e = catalog.get("pent1")
        coeffs = e.raw.coeffs.copy()
        coeffs[0] += 1
        bad = dataclasses.replace(e, raw=BellFunctional(e.scenario, coeffs, name="pent1"))
        with pytest.raises(catalog.VerificationFailure, match="pent1"):
            catalog.verify_catalog([catalog.get("chsh"), bad])

    def test_normalized_bound_one(self):
        for name in catalog.NAMES:
            lo, hi = classical_bounds(catalog.get(name).normalized())
            assert max(abs(lo), abs(hi)) == pytest.approx(1.0, abs=1e-12)

    def test_positivized_in_unit_class(self):
        for name in catalog.NAMES:
            P = positivize(catalog.get(name).normalized())
            assert P.coeffs.min() >= 0 and P.coeffs.max() <= 1
            assert classical_bounds(P)[1] == pytest.approx(1.0, abs=1e-12)
