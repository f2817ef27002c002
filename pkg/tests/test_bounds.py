import math
import random

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bellconc.bounds import (
    LOG2,
    BoundDomainError,
    TailBoundParams,
    generic_tail_bound,
    levy_tail,
    lipschitz_param,
    lipschitz_state,
    log_lipschitz_param,
    loubenets_bound,
    random_params,
    regime_check,
    theorem_bound,
)
from oracles import appendix_log_bound, derived_log_bound, rel_close, theorem_log_bound

POINTS = [
    (2, 2, 2, 2, 1.0, 2.0, 0.1),
    (3, 2, 2, 5, 2.5, 3.0, 0.5),
    (2, 3, 2, 40, 1.0, 1.7, 0.2),
    (4, 2, 3, 37, 1.5, 4.0, 0.05),
    (5, 1, 2, 10, 3.0, 2.2, 0.9),
]
ORACLES = {"theorem": theorem_log_bound, "appendix": appendix_log_bound, "derived": derived_log_bound}


class TestConstants:
    def test_lipschitz_state(self):
        assert lipschitz_state(2, 2) == 6
        assert lipschitz_state(1, 1) == 2
        assert lipschitz_state(3, 2) == 18
        assert lipschitz_state(5000, 2) == math.inf

    def test_lipschitz_param(self):
        assert lipschitz_param(2, 2, 2, 2, 1) == (512.0, 48)
        assert lipschitz_param(3, 2, 2, 2, 1) == (3072.0, 112)
        assert lipschitz_param(2, 2, 2, 2, 0)[0] == 0
        assert isinstance(lipschitz_param(2, 2, 2, 2, 1)[1], int)

    def test_log_companions(self):
        lam, n = lipschitz_param(3, 2, 2, 2, 1.5)
        log_lam, log_n = log_lipschitz_param(3, 2, 2, 2, 1.5)
        assert log_lam == pytest.approx(math.log(lam), rel=1e-14)
        assert log_n == pytest.approx(math.log(n), rel=1e-14)
        assert math.isfinite(log_lipschitz_param(2000, 2, 2, 37, 1)[0])

    def test_loubenets(self):
        assert loubenets_bound(2, 2) == 9
        assert loubenets_bound(7, 1) == 1
        assert loubenets_bound(3, 3) == 125

    def test_regime(self):
        assert regime_check(37, 2, 2)
        assert not regime_check(36, 2, 2)
        assert not regime_check(2, 2, 2)


class TestLevy:
    def test_zero_eps(self):
        assert levy_tail(7, 6.0, 0.0) == LOG2

    def test_quadratic_scaling(self):
        e1 = LOG2 - levy_tail(31, 6.0, 0.3)
        e2 = LOG2 - levy_tail(31, 6.0, 0.6)
        assert e2 == pytest.approx(4 * e1, rel=1e-13)

    def test_example(self):
        ref = mpmath.log(2) - mpmath.mpf(32) / (9 * mpmath.pi**3 * 36)
        assert rel_close(levy_tail(31, 6.0, 1.0), ref, 1e-14)

    def test_invalid(self):
        with pytest.raises(ValueError):
            levy_tail(0, 1.0, 0.1)


class TestGeneric:
    def test_boundary_rejected(self):
        with pytest.raises(BoundDomainError):
            generic_tail_bound(10, 1.0, 0.5, 7, 6.0, 1.5)

    def test_no_net_factor(self):
        val = generic_tail_bound(0, 1.0, 0.1, 31, 6.0, 2.0)
        expo = 32 * 0.9**2 / (9 * math.pi**3 * 36)
        assert val == pytest.approx(math.log(4) - expo, rel=1e-14)

    def test_hand_arithmetic(self):
        lam, n = lipschitz_param(2, 2, 2, 2, 1.0)
        val = generic_tail_bound(n, lam, 0.1, 2 * 2**2 - 1, lipschitz_state(2, 2), 2.0)
        ref = (mpmath.log(4) + 48 * mpmath.log(2 * 512 / mpmath.mpf("0.1") + 2)
               - 8 * mpmath.mpf("0.9") ** 2 / (9 * mpmath.pi**3 * 36))
        assert rel_close(val, ref, 1e-13)

    def test_matches_derived_variant(self):
        p = TailBoundParams(3, 2, 2, 4, 1.0, 2.5, 0.2)
        lam, n = lipschitz_param(3, 2, 2, 4, 1.0)
        g = generic_tail_bound(n, lam, 0.2, 2 * 4**3 - 1, lipschitz_state(3, 2), 2.5)
        assert theorem_bound(p, "derived").log_value == pytest.approx(g, rel=1e-13)


class TestTheorem:
    @pytest.mark.parametrize("point", POINTS)
    @pytest.mark.parametrize("variant", sorted(ORACLES))
    def test_against_high_precision(self, point, variant):
        val = theorem_bound(TailBoundParams(*point), variant).log_value
        assert rel_close(val, ORACLES[variant](*point), 1e-12)

    def test_appendix_sum_of_terms(self):
        r = theorem_bound(TailBoundParams(*POINTS[1]), "appendix")
        assert len(r.terms) == 5
        assert r.log_value == pytest.approx(math.log(4) + math.fsum(r.terms.values()), rel=1e-14)

    def test_appendix_dominates(self):
        rng = random.Random(0)
        for _ in range(100):
            p = random_params(rng)
            assert theorem_bound(p, "appendix").log_value >= theorem_bound(p).log_value

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1.01, 1.5), st.floats(0.01, 2.0))
    def test_decreasing_in_c(self, c0, gap):
        lo = theorem_bound(TailBoundParams(3, 2, 2, 40, 1.0, 1.1 + c0, 0.1)).log_value
        hi = theorem_bound(TailBoundParams(3, 2, 2, 40, 1.0, 1.1 + c0 + gap, 0.1)).log_value
        assert hi < lo

    def test_increasing_in_b(self):
        vals = [theorem_bound(TailBoundParams(2, 2, 2, 5, b, 2.0, 0.1)).log_value for b in (0.5, 1, 2, 4)]
        assert vals == sorted(vals)

    def test_domain_errors(self):
        with pytest.raises(BoundDomainError, match="c > delta"):
            TailBoundParams(2, 2, 2, 37, 1.0, 1.1, 0.1)
        with pytest.raises(BoundDomainError):
            TailBoundParams(1, 2, 2, 37, 1.0, 2.0, 0.1)
        with pytest.raises(BoundDomainError):
            TailBoundParams(2, 2, 2, 37, 0.0, 2.0, 0.1)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            theorem_bound(TailBoundParams(*POINTS[0]), "nope")

    def test_huge_parameters_saturate(self):
        for variant in ORACLES:
            val = theorem_bound(TailBoundParams(2000, 2, 2, 37, 1.0, 2.0, 0.1), variant).log_value
            assert val == -math.inf
        assert theorem_bound(TailBoundParams(600, 2, 2, 2, 1.0, 2.0, 0.1)).log_value == math.inf

    def test_record(self):
        rec = theorem_bound(TailBoundParams(*POINTS[0])).record()
        assert rec["variant"] == "theorem" and rec["params"]["d"] == 2


class TestEventualDecay:
    """In the regime d > mv(2m-1)^2 the bound does go to minus infinity, but late."""

    def test_large_N_at_d37(self):
        vals = [theorem_bound(TailBoundParams(N, 2, 2, 37, 1.0, 2.0, 0.1)).log_value
                for N in range(400, 461)]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert vals[-1] < -1e250

    def test_growth_before_turnover_at_d37(self):
        vals = [theorem_bound(TailBoundParams(N, 2, 2, 37, 1.0, 2.0, 0.1)).log_value
                for N in range(20, 31)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_decay_in_N_at_d1000(self):
        vals = [theorem_bound(TailBoundParams(N, 2, 2, 1000, 1.0, 2.0, 0.1)).log_value
                for N in range(4, 51)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_decay_in_d_at_N3(self):
        vals = [theorem_bound(TailBoundParams(3, 2, 2, d, 1.0, 2.0, 0.1)).log_value
                for d in (10**7, 10**8, 10**9, 10**10)]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert vals[-1] < -1e20
