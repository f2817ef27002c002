"""Heuristic lower bounds on the optimal violation and tail estimation.

The measurement see-saw updates one party at a time.  With the state and all
other parties fixed, ``Q = sum_{x,a} Tr(Pi_{a,x} F_{a,x})`` is linear in the
party's POVMs; for two outcomes the block optimum is the projector onto the
nonnegative eigenspace of ``F_0 - F_1``.  For more outcomes, pairs ``(a, b)``
are optimized exactly with ``Pi_a + Pi_b`` held fixed until no pair improves.

All instances of an experiment chunk (states x functionals x restarts x sign)
advance together in one batch, so the heavy lifting is a handful of stacked
matrix products and ``eigh`` calls per sweep.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import beta

from . import catalog
from .bounds import levy_tail, lipschitz_state
from .lhv import best_functional, normalize
from .quantum import (
    Assemblage,
    PureState,
    _contract_parties,
    _ketbra,
    _pair_matrices,
    behaviour_of,
    evaluate_Q_many,
    haar_vectors,
    random_povm,
    random_projective_povm,
    to_pairs,
    top_eigenpair,
    trace_bell_operator,
)
from .scenario import BellFunctional, Scenario, ScenarioMismatch

CONVERGENCE_TOL = 1e-9
PAIR_TOL = 1e-10
LOWER_BOUND_FLAG = "lower-bound estimator"
# spawn-key slot for LP refinement starts; disjoint from (i,) and (i, f, r)
_LP_KEY = 2**32 - 1
HIT_TOL = 1e-6


# ---------------------------------------------------------------------------
# batched see-saw core


def _effective_operators(psis, Tpairs, ops, k, d):
    """``F[b, x, a]`` for party ``k`` so that ``Q = sum Tr(Pi_{x,a} F_{x,a})``.

    psis: (B, d**N); Tpairs: (B, (mv,)*N); ops: (B, N, m, v, d, d).
    """
    B, N, m, v = ops.shape[:4]
    mv = m * v
    others = [j for j in range(N) if j != k]
    psi_t = np.moveaxis(psis.reshape((B,) + (d,) * N), 1 + k, N).reshape(B, -1)
    R = _ketbra(psi_t, d, N).reshape(B, 1, -1)
    mats = [_pair_matrices(ops[:, j]) for j in others]
    R = _contract_parties(R, mats, d)  # (B, mv**(N-1), d*d)
    W = np.moveaxis(Tpairs, 1 + k, N).reshape(B, -1, mv)
    F = np.matmul(np.swapaxes(W, 1, 2).astype(complex), R)  # (B, mv, d*d)
    # F[.., c*d + r] pairs with Pi[r, c]; as a matrix indexed [c, r]
    F = F.reshape(B, m, v, d, d)
    return (F + np.conj(np.swapaxes(F, -1, -2))) / 2


def _block_value(P, F):
    """``sum_{x,a} Tr(P_{x,a} F_{x,a})`` per batch row."""
    return np.einsum("bxarc,bxacr->b", P, F).real


def _pos_projector(G):
    if G.shape[-1] == 2:
        return _pos_projector_2x2(G)
    w, U = np.linalg.eigh(G)
    keep = (w >= 0).astype(G.dtype)
    return (U * keep[..., None, :]) @ np.conj(np.swapaxes(U, -1, -2))


def _pos_projector_2x2(G):
    # eigenvalues mid +- r; the top eigenprojector is (I + (G - mid I)/r) / 2
    p, q = G[..., 0, 0].real, G[..., 1, 1].real
    mid = (p + q) / 2
    r = np.sqrt(((p - q) / 2) ** 2 + np.abs(G[..., 0, 1]) ** 2)
    eye = np.eye(2, dtype=G.dtype)
    safe = np.where(r > 0, r, 1.0)[..., None, None]
    top = (eye + (G - mid[..., None, None] * eye) / safe) / 2
    full = (mid - r >= 0)[..., None, None]
    none = (mid + r < 0)[..., None, None]
    out = np.where(full, eye, np.where(none, 0.0, top))
    return out.astype(G.dtype)


def _psd_sqrt(S):
    w, U = np.linalg.eigh(S)
    w = np.sqrt(np.clip(w, 0.0, None)).astype(S.dtype)
    return (U * w[..., None, :]) @ np.conj(np.swapaxes(U, -1, -2))


def _tr(P, F):
    return np.einsum("...rc,...cr->...", P, F).real


def _best_response(P, F, max_passes: int = 50):
    """Improve every setting block of one party.  P, F: (B, m, v, d, d)."""
    B, m, v, d, _ = P.shape
    if v == 2:
        P0 = _pos_projector(F[:, :, 0] - F[:, :, 1])
        eye = np.eye(d, dtype=P.dtype)
        return np.stack([P0, eye - P0], axis=2)
    P = P.copy()
    for _ in range(max_passes):
        best_gain = 0.0
        for a in range(v):
            for b in range(a + 1, v):
                Pa, Pb = P[:, :, a], P[:, :, b]
                S = Pa + Pb
                Sh = _psd_sqrt(S)
                G = Sh @ (F[:, :, a] - F[:, :, b]) @ Sh
                G = (G + np.conj(np.swapaxes(G, -1, -2))) / 2
                Na = Sh @ _pos_projector(G) @ Sh
                Nb = S - Na
                old = _tr(Pa, F[:, :, a]) + _tr(Pb, F[:, :, b])
                new = _tr(Na, F[:, :, a]) + _tr(Nb, F[:, :, b])
                gain = new - old
                better = gain > 0
                P[:, :, a] = np.where(better[..., None, None], Na, Pa)
                P[:, :, b] = np.where(better[..., None, None], Nb, Pb)
                best_gain = max(best_gain, float(gain.max(initial=0.0)))
        if best_gain <= PAIR_TOL:
            break
    return P


@dataclass
class SeesawBatchResult:
    ops: np.ndarray
    values: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    traces: list


def seesaw_batch(psis, Tpairs, ops, d: int, max_iters: int = 200, tol: float = CONVERGENCE_TOL):
    """Run the measurement see-saw on a batch of independent instances.

    psis: (B, d**N) complex; Tpairs: (B, (mv,)*N) real coefficients in pair
    layout; ops: (B, N, m, v, d, d) initial POVMs.  Each sweep updates every
    party once; an instance stops when a sweep gains less than ``tol``.
    """
    psis = np.asarray(psis, dtype=complex)
    ops = np.array(ops, dtype=complex)
    Tpairs = np.asarray(Tpairs, dtype=float)
    B, N = ops.shape[:2]
    F0 = _effective_operators(psis, Tpairs, ops, 0, d)
    Q = _block_value(ops[:, 0], F0)
    traces = [[q] for q in Q]
    iters = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    active = np.arange(B)
    for _ in range(max_iters):
        if active.size == 0:
            break
        start = Q[active].copy()
        for k in range(N):
            sub = ops[active]
            F = _effective_operators(psis[active], Tpairs[active], sub, k, d)
            cur = _block_value(sub[:, k], F)
            new_k = _best_response(sub[:, k], F)
            new = _block_value(new_k, F)
            take = new >= cur
            ops[active[take], k] = new_k[take]
            Q[active] = np.where(take, new, cur)
        iters[active] += 1
        for b in active:
            traces[b].append(Q[b])
        done = Q[active] - start < tol
        converged[active[done]] = True
        active = active[~done]
    return SeesawBatchResult(ops, Q, iters, converged, traces)


def seesaw_measurements(psi: PureState, T: BellFunctional, A0: Assemblage, max_iters: int = 200):
    """Optimize the measurements for fixed state and functional.

    Returns ``(A*, Q*, trace)`` where ``trace`` holds ``Q`` after every sweep
    and is nondecreasing.
    """
    if T.scenario != A0.scenario:
        raise ScenarioMismatch(f"scenario mismatch: {T.scenario} vs {A0.scenario}")
    if psi.d != A0.d or psi.N != A0.scenario.N:
        raise ValueError("state and assemblage dimensions differ")
    res = seesaw_batch(
        psi.amplitudes[None], to_pairs(T.coeffs, T.scenario)[None], A0.ops[None],
        A0.d, max_iters,
    )
    A = Assemblage(A0.scenario, A0.d, res.ops[0])
    return A, float(res.values[0]), [float(q) for q in res.traces[0]]


def optimize_state(T: BellFunctional, A: Assemblage, tol: float = 1e-12, start=None, rng=0):
    """Top eigenvector of the Bell operator and its eigenvalue ``Q``."""
    q, vec = top_eigenpair(T, A, tol=tol, rng=rng, start=start)
    psi = PureState.from_vector(vec, A.d, A.scenario.N)
    return psi, q


def joint_seesaw(
    T: BellFunctional, d: int, rng=None, max_rounds: int = 100, max_iters: int = 200,
    tol: float = 1e-12, projective: bool = True,
):
    """Alternate measurement see-saw and state optimization from a random start.

    Starts from random projective measurements by default: mixed POVM starts
    often collapse onto deterministic measurements, a fixed point with ``Q``
    equal to the best classical value.  Returns ``(psi, A, Q)``.
    """
    rng = np.random.default_rng(rng)
    sc = T.scenario
    psi = PureState.from_vector(haar_vectors(d, sc.N, 1, rng)[0], d, sc.N)
    A = _random_ops(sc, d, rng, projective)
    A = Assemblage(sc, d, A)
    q = -math.inf
    for _ in range(max_rounds):
        A, _, _ = seesaw_measurements(psi, T, A, max_iters)
        psi_new, q_new = optimize_state(T, A, start=psi.amplitudes)
        psi = psi_new
        if q_new - q < tol:
            q = max(q, q_new)
            break
        q = q_new
    return psi, A, q


# ---------------------------------------------------------------------------
# lower bounds on the optimal violation


def _random_ops(scenario: Scenario, d: int, rng, projective: bool) -> np.ndarray:
    make = random_projective_povm if projective else random_povm
    return np.array([
        [make(d, scenario.v, rng).elements for _ in range(scenario.m)]
        for _ in range(scenario.N)
    ])


def _seed_root(seed) -> int:
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(2**63))
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(2, np.uint64).view(np.uint64)[0] >> np.uint64(1))
    return int(seed)


def _restart_rng(root: int, key: tuple) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(root, spawn_key=key))


def _best_violations(psis, functionals, restarts, root, sample_keys, projective, max_iters):
    """Max ``|Q|`` per state over functionals x restarts x sign.

    ``sample_keys[i]`` prefixes the seeding key of every restart of state
    ``i``, so restart ``r`` always starts from the same measurements.
    Returns arrays (best, best_functional_index, iterations_of_best, hits,
    spread): ``hits`` counts runs ending within ``HIT_TOL`` of the best and
    ``spread`` is best minus the worst restart, a dispersion diagnostic.
    """
    S = psis.shape[0]
    best = np.full(S, -np.inf)
    best_f = np.zeros(S, dtype=int)
    best_it = np.zeros(S, dtype=int)
    per_state: list = [[] for _ in range(S)]
    groups: dict = {}
    for fi, T in enumerate(functionals):
        groups.setdefault(T.scenario, []).append(fi)
    for sc, fidx in groups.items():
        d = int(round(psis.shape[1] ** (1.0 / sc.N)))
        inst_psi, inst_T, inst_ops, owner, fown = [], [], [], [], []
        for i in range(S):
            for fi in fidx:
                Tp = to_pairs(functionals[fi].coeffs, sc)
                for r in range(restarts):
                    ops = _random_ops(sc, d, _restart_rng(root, sample_keys[i] + (fi, r)), projective)
                    for sign in (1.0, -1.0):
                        inst_psi.append(psis[i])
                        inst_T.append(sign * Tp)
                        inst_ops.append(ops)
                        owner.append(i)
                        fown.append(fi)
        res = seesaw_batch(np.array(inst_psi), np.array(inst_T), np.array(inst_ops), d, max_iters)
        # sign-flipped runs maximize -Q, so values are already |Q| candidates
        for n, (i, fi) in enumerate(zip(owner, fown)):
            per_state[i].append(res.values[n])
            if res.values[n] > best[i]:
                best[i] = res.values[n]
                best_f[i] = fi
                best_it[i] = res.iterations[n]
    hits = np.array([np.sum(np.asarray(v) >= b - HIT_TOL) for v, b in zip(per_state, best)])
    spread = np.array([b - min(v) if v else 0.0 for v, b in zip(per_state, best)])
    return best, best_f, best_it, hits, spread


def violation_lower_bound(
    psi: PureState, functionals: Sequence[BellFunctional], restarts: int = 20, rng=0,
    projective: bool = False, max_iters: int = 200,
) -> float:
    """Best ``|Q|`` found by see-saw over the supplied functionals.

    A lower bound on the optimal violation restricted to these functionals.
    Restart ``r`` of functional ``f`` is seeded by ``(seed, f, r)``, so
    raising ``restarts`` only adds runs.
    """
    if not functionals:
        raise ValueError("need at least one functional")
    best = _best_violations(
        psi.amplitudes[None], list(functionals), restarts, _seed_root(rng), [()],
        projective, max_iters,
    )[0]
    return float(best[0])


# ---------------------------------------------------------------------------
# tail experiment


@dataclass
class ExperimentConfig:
    scenario: Scenario
    d: int = 2
    functionals: tuple = ("chsh",)
    use_lp: bool = False
    b: float = 1.0
    c: float = 1.5
    samples: int = 1000
    restarts: int = 20
    max_iters: int = 200
    seed: int = 0
    workers: int = 1
    projective: bool = False
    chunk_size: int = 25
    lp_rounds: int = 3
    time_budget: float | None = None

    def __post_init__(self):
        if self.samples < 1 or self.restarts < 1:
            raise ValueError("samples and restarts must be >= 1")
        if self.max_iters < 1 or self.chunk_size < 1:
            raise ValueError("max_iters and chunk_size must be >= 1")
        if not self.functionals and not self.use_lp:
            raise ValueError("no functional source configured")
        self.functionals = tuple(self.functionals)

    def echo(self) -> dict:
        out = asdict(self)
        out["scenario"] = self.scenario.to_dict()
        out["functionals"] = list(self.functionals)
        out.pop("workers")
        return out


@dataclass
class TailEstimate:
    p_hat: float
    exceed: int
    samples: int
    ci_low: float
    ci_high: float
    values: list
    records: list
    config: dict
    wall_clock: float
    partial: bool = False
    estimator: str = LOWER_BOUND_FLAG
    notes: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "type": "summary",
            "p_hat": self.p_hat,
            "exceed": self.exceed,
            "samples": self.samples,
            "ci95": [self.ci_low, self.ci_high],
            "ci_method": "clopper-pearson",
            "estimator": self.estimator,
            "partial": self.partial,
            "notes": self.notes,
            "config": self.config,
        }


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Exact binomial confidence interval."""
    alpha = 1 - level
    lo = 0.0 if k == 0 else float(beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


def _resolve_functionals(cfg: ExperimentConfig) -> list[BellFunctional]:
    out = []
    for name in cfg.functionals:
        entry = catalog.get(name)
        if entry.scenario != cfg.scenario:
            raise ScenarioMismatch(
                f"catalog functional {name!r} lives in {entry.scenario}, not {cfg.scenario}"
            )
        out.append(entry.normalized())
    return out


def _lp_refine(psi_vec, cfg, A_ops, value):
    """Alternate LP over bounded functionals and measurement see-saw."""
    sc, d = cfg.scenario, cfg.d
    psi = PureState.from_vector(psi_vec, d, sc.N)
    A = Assemblage(sc, d, A_ops)
    best = value
    for _ in range(cfg.lp_rounds):
        P = behaviour_of(psi, A)
        T, val = best_functional(P, cfg.b)
        A, q, _ = seesaw_measurements(psi, T, A, cfg.max_iters)
        if q <= best + CONVERGENCE_TOL:
            best = max(best, q)
            break
        best = q
    return best


def _run_chunk(args):
    cfg, functionals, indices = args
    sc, d = cfg.scenario, cfg.d
    psis = np.array([
        haar_vectors(d, sc.N, 1, _restart_rng(cfg.seed, (i,)))[0] for i in indices
    ])
    keys = [(i,) for i in indices]
    names = list(cfg.functionals)
    if functionals:
        best, best_f, best_it, hits, spread = _best_violations(
            psis, functionals, cfg.restarts, cfg.seed, keys, cfg.projective, cfg.max_iters,
        )
    else:
        best = np.zeros(len(indices))
        best_f = np.zeros(len(indices), dtype=int)
        best_it = np.zeros(len(indices), dtype=int)
        hits = np.zeros(len(indices), dtype=int)
        spread = np.zeros(len(indices))
    records = []
    for n, i in enumerate(indices):
        name = names[best_f[n]] if functionals else ""
        val = float(best[n])
        if cfg.use_lp:
            rng = _restart_rng(cfg.seed, (i, _LP_KEY))
            ops = _random_ops(sc, d, rng, cfg.projective)
            lp_val = _lp_refine(psis[n], cfg, ops, 0.0)
            if lp_val > val:
                val, name = lp_val, "lp"
        records.append({
            "index": int(i),
            "best_Q": val,
            "best_functional_name": name,
            "iterations": int(best_it[n]),
            "restart_hits": int(hits[n]),
            "restart_spread": float(spread[n]),
            "seed": f"{cfg.seed}:{i}",
        })
    return records


def tail_experiment(cfg: ExperimentConfig) -> TailEstimate:
    """Fraction of Haar states whose best found violation exceeds ``c``.

    The per-state value is a lower bound on the optimal violation, so the
    fraction under-estimates the true tail probability.
    """
    t0 = time.perf_counter()
    functionals = _resolve_functionals(cfg)
    chunks = [
        list(range(s, min(s + cfg.chunk_size, cfg.samples)))
        for s in range(0, cfg.samples, cfg.chunk_size)
    ]
    jobs = [(cfg, functionals, ch) for ch in chunks]
    records: list = []
    partial = False
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for recs in pool.map(_run_chunk, jobs):
                records += recs
                if cfg.time_budget is not None and time.perf_counter() - t0 > cfg.time_budget:
                    partial = True
                    break
    else:
        for job in jobs:
            records += _run_chunk(job)
            if cfg.time_budget is not None and time.perf_counter() - t0 > cfg.time_budget:
                partial = True
                break
    records.sort(key=lambda r: r["index"])
    values = [r["best_Q"] for r in records]
    n = len(values)
    k = sum(v > cfg.c for v in values)
    lo, hi = clopper_pearson(k, n)
    notes = [
        "per-state values are see-saw lower bounds on the optimal violation; "
        "p_hat is biased downward",
    ]
    return TailEstimate(
        k / n, k, n, lo, hi, values, records, cfg.echo(),
        time.perf_counter() - t0, partial, LOWER_BOUND_FLAG, notes,
    )


# ---------------------------------------------------------------------------
# concentration


def product_family(N: int, d: int, m: int = 2, v: int = 2, rng=0):
    """Normalized product functional and identical local measurements on ``N`` parties.

    One local coefficient table and one set of local POVMs (drawn from
    ``rng``) are repeated at every party, so the family is the same object
    at every ``N``.  The Bell operator is ``b^{(x)N}`` with ``||b|| <= 1``,
    so ``Var Q = ((tr b^2/d)^N - (tr b/d)^{2N}) / (d^N + 1)``.
    """
    rng = np.random.default_rng(rng)
    sc = Scenario(N, m, v)
    local = rng.normal(size=(v, m))
    povms = [random_povm(d, v, rng).elements for _ in range(m)]
    coeffs = local
    for _ in range(N - 1):
        coeffs = np.multiply.outer(coeffs, local)
    # (a0, x0, a1, x1, ...) -> (a0..aN-1, x0..xN-1)
    order = [2 * i for i in range(N)] + [2 * i + 1 for i in range(N)]
    coeffs = coeffs.transpose(order).reshape(-1)
    T = normalize(BellFunctional(sc, coeffs, name=f"product-N{N}"))
    A = Assemblage(sc, d, np.array([povms] * N))
    return T, A


def concentration_experiment(
    T: BellFunctional, A: Assemblage, samples: int, rng=None, eps_grid=None,
) -> dict:
    """Distribution of ``Q`` over Haar states against the Levy tail bound."""
    rng = np.random.default_rng(rng)
    sc, d = A.scenario, A.d
    N = sc.N
    if eps_grid is None:
        eps_grid = [round(0.1 * i, 10) for i in range(1, 11)]
    qs = np.empty(samples)
    per = 2048
    for s in range(0, samples, per):
        n = min(per, samples - s)
        qs[s : s + n] = evaluate_Q_many(haar_vectors(d, N, n, rng), T, A)
    exact_mean = trace_bell_operator(T, A) / d**N
    mean = float(qs.mean())
    var = float(qs.var(ddof=1)) if samples > 1 else 0.0
    sem = math.sqrt(var / samples)
    Lam = lipschitz_state(N, sc.m)
    D = 2 * d**N - 1
    curve = []
    for eps in eps_grid:
        frac = float(np.mean(qs - exact_mean > eps))
        se = math.sqrt(frac * (1 - frac) / samples)
        log_b = levy_tail(D, Lam, eps)
        curve.append({
            "eps": float(eps),
            "empirical": frac,
            "binomial_se": se,
            "levy_log_bound": log_b,
            "levy_bound": math.exp(log_b),
        })
    return {
        "N": N,
        "d": d,
        "samples": samples,
        "mean": mean,
        "variance": var,
        "sem": sem,
        "trace_mean": exact_mean,
        "lipschitz": Lam,
        "tail": curve,
        "values": qs,
    }
