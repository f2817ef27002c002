import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bellconc import catalog
from bellconc.lhv import classical_bounds, normalize
from bellconc.montecarlo import (
    LOWER_BOUND_FLAG,
    ExperimentConfig,
    clopper_pearson,
    concentration_experiment,
    joint_seesaw,
    optimize_state,
    product_family,
    seesaw_measurements,
    tail_experiment,
    violation_lower_bound,
)
from bellconc.quantum import (
    PureState,
    evaluate_Q,
    haar_vectors,
    operator_norm,
    random_assemblage,
    sample_haar_state,
    trace_bell_operator,
)
from bellconc.scenario import BellFunctional, Scenario, ScenarioMismatch
from oracles import dense_bell_operator

S222 = Scenario(2, 2, 2)
SQRT2 = math.sqrt(2)
CASES = [(Scenario(2, 2, 2), 2), (Scenario(3, 2, 2), 2), (Scenario(2, 3, 3), 2), (Scenario(2, 2, 3), 3)]


def bell_pair():
    phi = np.zeros(4, dtype=complex)
    phi[0] = phi[3] = 1 / SQRT2
    return PureState.from_vector(phi, 2, 2)


def chsh():
    return catalog.get("chsh").normalized()


class TestSeesaw:
    def test_traces_monotone(self):
        rng = np.random.default_rng(0)
        for i in range(100):
            sc, d = CASES[i % len(CASES)]
            T = normalize(BellFunctional(sc, rng.normal(size=sc.size)))
            psi = sample_haar_state(d, sc.N, rng)
            A0 = random_assemblage(sc, d, rng)
            A, q, trace = seesaw_measurements(psi, T, A0, max_iters=50)
            assert trace[0] >= evaluate_Q(psi, T, A0) - 1e-12
            assert all(b >= a - 1e-12 for a, b in zip(trace, trace[1:]))
            assert q == pytest.approx(evaluate_Q(psi, T, A), abs=1e-10)
            assert A.problems() == []

    def test_chsh_bell_pair(self):
        psi, T = bell_pair(), chsh()
        hits = 0
        for seed in range(100):
            A0 = random_assemblage(S222, 2, seed, projective=True)
            A, q, _ = seesaw_measurements(psi, T, A0)
            if abs(q - SQRT2) <= 1e-6:
                hits += 1
                w = np.linalg.eigvalsh(dense_bell_operator(T, A))
                assert w.max() == pytest.approx(SQRT2, abs=1e-6)
        assert hits >= 95

    def test_product_state_local(self):
        rng = np.random.default_rng(2)
        for sc, d in CASES:
            T = normalize(BellFunctional(sc, rng.normal(size=sc.size)))
            hi = classical_bounds(T)[1]
            psi = PureState.product([haar_vectors(d, 1, 1, rng)[0] for _ in range(sc.N)])
            _, q, _ = seesaw_measurements(psi, T, random_assemblage(sc, d, rng))
            assert q <= hi + 1e-9 <= 1 + 1e-9

    def test_mismatch(self):
        with pytest.raises(ScenarioMismatch):
            seesaw_measurements(bell_pair(), chsh(), random_assemblage(Scenario(2, 3, 2), 2, 0))
        with pytest.raises(ValueError):
            seesaw_measurements(bell_pair(), chsh(), random_assemblage(S222, 3, 0))


class TestOptimizeState:
    def test_single_term(self):
        A = random_assemblage(S222, 2, 3, projective=True)
        T = BellFunctional.from_terms(S222, [((0, 0), (0, 0), 1.0)])
        psi, q = optimize_state(T, A)
        assert q == pytest.approx(1.0, abs=1e-9)
        P = np.kron(A.ops[0, 0, 0], A.ops[1, 0, 0])
        np.testing.assert_allclose(P @ psi.amplitudes, psi.amplitudes, atol=1e-6)

    def test_matches_evaluate(self):
        rng = np.random.default_rng(5)
        for sc, d in CASES:
            T = normalize(BellFunctional(sc, rng.normal(size=sc.size)))
            A = random_assemblage(sc, d, rng)
            psi, q = optimize_state(T, A)
            assert q == pytest.approx(evaluate_Q(psi, T, A), abs=1e-9)
            assert q == pytest.approx(np.linalg.eigvalsh(dense_bell_operator(T, A)).max(), abs=1e-8)

    def test_joint_chsh(self):
        for seed in range(5):
            psi, A, q = joint_seesaw(chsh(), 2, rng=seed)
            assert q == pytest.approx(SQRT2, abs=1e-6)
            assert evaluate_Q(psi, chsh(), A) == pytest.approx(q, abs=1e-9)


class TestLowerBound:
    def test_tsirelson_ceiling(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            psi = sample_haar_state(2, 2, rng)
            assert violation_lower_bound(psi, [chsh()], restarts=5, rng=1) <= SQRT2 + 1e-6

    def test_separable(self):
        rng = np.random.default_rng(7)
        psi = PureState.product([haar_vectors(2, 1, 1, rng)[0] for _ in range(2)])
        names = catalog.names_for(S222)
        val = violation_lower_bound(psi, [catalog.get(n).normalized() for n in names], restarts=5)
        assert val <= 1 + 1e-9

    def test_nested_in_restarts(self):
        psi = sample_haar_state(2, 2, 8)
        Ts = [catalog.get(n).normalized() for n in catalog.names_for(S222)]
        vals = [violation_lower_bound(psi, Ts, restarts=r, rng=3) for r in (1, 2, 5, 10)]
        assert vals == sorted(vals)

    def test_deterministic(self):
        psi = sample_haar_state(2, 2, 9)
        a = violation_lower_bound(psi, [chsh()], restarts=3, rng=4)
        b = violation_lower_bound(psi, [chsh()], restarts=3, rng=4)
        assert a == b

    def test_empty(self):
        with pytest.raises(ValueError):
            violation_lower_bound(bell_pair(), [])


class TestClopperPearson:
    def test_zero_successes(self):
        lo, hi = clopper_pearson(0, 1000)
        assert lo == 0 and hi == pytest.approx(1 - 0.025 ** (1 / 1000), rel=1e-9)

    def test_all_successes(self):
        lo, hi = clopper_pearson(100, 100)
        assert hi == 1 and lo == pytest.approx(0.025 ** (1 / 100), rel=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 200), st.data())
    def test_contains_estimate(self, n, data):
        k = data.draw(st.integers(0, n))
        lo, hi = clopper_pearson(k, n)
        assert 0 <= lo <= k / n <= hi <= 1


class TestTail:
    def cfg(self, **kw):
        base = dict(scenario=S222, d=2, functionals=tuple(catalog.names_for(S222)),
                    samples=40, restarts=5, seed=7)
        base.update(kw)
        return ExperimentConfig(**base)

    def test_above_tsirelson(self):
        est = tail_experiment(self.cfg(c=1.5))
        assert est.p_hat == 0 and est.exceed == 0
        assert est.ci_low == 0 and 0 < est.ci_high < 0.1
        assert max(est.values) <= SQRT2 + 1e-6

    def test_low_threshold(self):
        est = tail_experiment(self.cfg(c=0.5, samples=100, restarts=20))
        assert est.p_hat == 1

    def test_flag_and_summary(self):
        est = tail_experiment(self.cfg(samples=5))
        s = est.summary()
        assert s["estimator"] == LOWER_BOUND_FLAG
        assert s["ci_method"] == "clopper-pearson" and "workers" not in s["config"]
        assert [r["index"] for r in est.records] == list(range(5))
        for r in est.records:
            assert 1 <= r["restart_hits"] <= 3 * 5 * 2 and r["restart_spread"] >= 0

    def test_seed_determinism(self):
        a = tail_experiment(self.cfg(samples=10))
        b = tail_experiment(self.cfg(samples=10))
        assert a.values == b.values and a.records == b.records

    def test_chunking_and_workers_invariant(self):
        a = tail_experiment(self.cfg(samples=12, chunk_size=5))
        b = tail_experiment(self.cfg(samples=12, chunk_size=3, workers=2))
        assert a.records == b.records

    def test_sample_prefix_stable(self):
        a = tail_experiment(self.cfg(samples=6))
        b = tail_experiment(self.cfg(samples=10))
        assert a.records == b.records[:6]

    def test_lp_refinement_not_worse(self):
        a = tail_experiment(self.cfg(samples=4, restarts=2))
        b = tail_experiment(self.cfg(samples=4, restarts=2, use_lp=True, b=1.0))
        assert all(y >= x for x, y in zip(a.values, b.values))

    def test_time_budget_partial(self):
        est = tail_experiment(self.cfg(samples=40, chunk_size=2, time_budget=0.0))
        assert est.partial and est.samples == 2

    def test_wrong_scenario(self):
        with pytest.raises(ScenarioMismatch):
            tail_experiment(self.cfg(functionals=("i3322",)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            self.cfg(samples=0)
        with pytest.raises(ValueError):
            self.cfg(functionals=())


class TestConcentration:
    def test_product_family_exact_variance(self):
        T, A = product_family(3, 2, rng=1)
        w = np.linalg.eigvalsh(dense_bell_operator(T, A))
        D = 8
        exact = (np.sum(w**2) / D - (np.sum(w) / D) ** 2) / (D + 1)
        out = concentration_experiment(T, A, 20_000, rng=2)
        assert out["variance"] == pytest.approx(exact, rel=0.05)

    def test_product_family_normalized(self):
        for N in (2, 3, 4):
            T, A = product_family(N, 2, rng=0)
            lo, hi = classical_bounds(T)
            assert max(abs(lo), abs(hi)) == pytest.approx(1.0)
            assert operator_norm(T, A) <= 1 + 1e-9

    def test_mean_consistency(self):
        T, A = product_family(2, 2, rng=3)
        out = concentration_experiment(T, A, 10_000, rng=4)
        assert abs(out["mean"] - out["trace_mean"]) <= 3 * out["sem"]
        assert out["trace_mean"] == pytest.approx(trace_bell_operator(T, A) / 4)

    def test_trace_mean_bounded(self):
        rng = np.random.default_rng(10)
        for sc, d in CASES:
            T = normalize(BellFunctional(sc, rng.normal(size=sc.size)))
            A = random_assemblage(sc, d, rng)
            assert abs(trace_bell_operator(T, A) / d**sc.N) <= 1 + 1e-9

    def test_variance_decreasing(self):
        var = []
        for N in range(2, 7):
            T, A = product_family(N, 2, rng=0)
            var.append(concentration_experiment(T, A, 10_000, rng=N)["variance"])
        assert all(b < a for a, b in zip(var, var[1:]))

    def test_below_levy(self):
        T, A = product_family(3, 2, rng=0)
        out = concentration_experiment(T, A, 5000, rng=1)
        assert [row["eps"] for row in out["tail"]] == [round(0.1 * i, 10) for i in range(1, 11)]
        for row in out["tail"]:
            assert row["empirical"] <= row["levy_bound"] + 3 * row["binomial_se"]
        assert out["lipschitz"] == 18

    def test_reproducible(self):
        T, A = product_family(2, 2)
        a = concentration_experiment(T, A, 100, rng=5)["values"]
        b = concentration_experiment(T, A, 100, rng=5)["values"]
        assert a.tobytes() == b.tobytes()
