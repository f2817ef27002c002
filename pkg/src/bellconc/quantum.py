"""States, POVMs, Bell operators and Born-rule behaviours.

Bell operators are never stored as ``d**N x d**N`` matrices.  Behaviours are
obtained by contracting each party's POVM elements against the ket/bra pair of
that party's index, one party at a time; Bell-operator products contract the
coefficient tensor with local operators acting on the state vector.

Internally a party index ``j`` of a functional or behaviour is the pair
``(x, a)`` flattened as ``x * v + a``; :func:`to_pairs` / :func:`from_pairs`
convert from / to the canonical outcomes-major layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Behaviour, BellFunctional, Scenario, ScenarioMismatch

HERM_TOL = 1e-10
MAX_STATE_ENTRIES = 2**26
# ket/bra product workspace, in complex entries, per contraction chunk
_CHUNK_ENTRIES = 2**22


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class PureState:
    d: int
    N: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != self.d**self.N:
            raise ValueError(f"state has {amps.size} amplitudes, expected d^N = {self.d**self.N}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"state norm {norm} != 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_vector(cls, vec, d: int, N: int) -> "PureState":
        vec = np.asarray(vec, dtype=complex).reshape(-1)
        return cls(d, N, vec / np.linalg.norm(vec))

    @classmethod
    def product(cls, locals_) -> "PureState":
        vec = np.ones(1, dtype=complex)
        for phi in locals_:
            vec = np.kron(vec, np.asarray(phi, dtype=complex))
        return cls.from_vector(vec, len(locals_[0]), len(locals_))


def sample_haar_state(d: int, N: int, rng=None) -> PureState:
    """Uniform pure state on ``(C^d)^N``: normalized complex Gaussian vector."""
    if d < 2 or N < 1:
        raise ValueError(f"need d >= 2 and N >= 1, got d={d}, N={N}")
    if d**N > MAX_STATE_ENTRIES:
        raise OverflowError(f"state dimension d^N = {d}^{N} exceeds the memory budget")
    return PureState(d, N, _normalized(haar_vectors(d, N, 1, rng)[0]))


def haar_vectors(d: int, N: int, count: int, rng=None) -> np.ndarray:
    """``count`` unit vectors of dimension ``d**N``, one per row."""
    rng = _rng(rng)
    dim = d**N
    g = rng.standard_normal((count, dim)) + 1j * rng.standard_normal((count, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _normalized(vec):
    return vec / np.linalg.norm(vec)


@dataclass(frozen=True)
class POVM:
    """``v`` positive operators on ``C^d`` summing to the identity."""

    elements: np.ndarray

    def __post_init__(self):
        el = np.array(self.elements, dtype=complex)
        if el.ndim != 3 or el.shape[1] != el.shape[2]:
            raise ValueError(f"POVM elements must have shape (v, d, d), got {el.shape}")
        el.setflags(write=False)
        object.__setattr__(self, "elements", el)

    @property
    def d(self) -> int:
        return self.elements.shape[1]

    @property
    def v(self) -> int:
        return self.elements.shape[0]

    def problems(self, tol: float = HERM_TOL) -> list[str]:
        return povm_problems(self.elements, tol)


def povm_problems(elements: np.ndarray, tol: float = HERM_TOL) -> list[str]:
    out = []
    d = elements.shape[-1]
    for a, E in enumerate(elements):
        if np.max(np.abs(E - E.conj().T)) > tol:
            out.append(f"element {a} not Hermitian")
            continue
        ev = np.linalg.eigvalsh((E + E.conj().T) / 2)
        if ev.min() < -tol:
            out.append(f"element {a} has eigenvalue {ev.min():.3e} < 0")
        if ev.max() > 1 + tol:
            out.append(f"element {a} has norm {ev.max():.6f} > 1")
    if np.max(np.abs(elements.sum(axis=0) - np.eye(d))) > tol:
        out.append("elements do not sum to the identity")
    return out


def _inv_sqrt(S):
    w, U = np.linalg.eigh(S)
    return (U / np.sqrt(w)) @ U.conj().T, w.min()


def random_povm(d: int, v: int, rng=None, max_attempts: int = 10) -> POVM:
    """Gaussian Gram matrices ``G^dag G`` symmetrically rescaled to sum to ``I``."""
    if d < 2 or v < 2:
        raise ValueError(f"need d >= 2 and v >= 2, got d={d}, v={v}")
    rng = _rng(rng)
    for _ in range(max_attempts):
        G = rng.standard_normal((v, d, d)) + 1j * rng.standard_normal((v, d, d))
        E = np.conj(np.swapaxes(G, 1, 2)) @ G
        S_inv_half, wmin = _inv_sqrt(E.sum(axis=0))
        if wmin > 1e-12:
            P = S_inv_half @ E @ S_inv_half
            return POVM((P + np.conj(np.swapaxes(P, 1, 2))) / 2)
    raise RuntimeError(f"singular POVM normalization after {max_attempts} attempts")


def haar_unitary(d: int, rng=None) -> np.ndarray:
    rng = _rng(rng)
    Z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    Q, R = np.linalg.qr(Z)
    ph = np.diagonal(R) / np.abs(np.diagonal(R))
    return Q * ph


def random_projective_povm(d: int, v: int, rng=None) -> POVM:
    """Projective measurement in a Haar-random basis; basis vectors dealt out
    round-robin to the ``v`` outcomes (outcomes beyond ``d`` stay zero)."""
    if d < 2 or v < 2:
        raise ValueError(f"need d >= 2 and v >= 2, got d={d}, v={v}")
    U = haar_unitary(d, rng)
    P = np.zeros((v, d, d), dtype=complex)
    for i in range(d):
        u = U[:, i]
        P[i % v] += np.outer(u, u.conj())
    return POVM(P)


def computational_povm(d: int, v: int) -> POVM:
    P = np.zeros((v, d, d), dtype=complex)
    for i in range(d):
        P[min(i, v - 1), i, i] = 1.0
    return POVM(P)


@dataclass(frozen=True)
class Assemblage:
    """Local measurements: ``ops[k, x, a]`` is the element of party ``k``,
    setting ``x``, outcome ``a``."""

    scenario: Scenario
    d: int
    ops: np.ndarray

    def __post_init__(self):
        sc = self.scenario
        ops = np.array(self.ops, dtype=complex)
        expected = (sc.N, sc.m, sc.v, self.d, self.d)
        if ops.shape != expected:
            raise ValueError(f"assemblage shape {ops.shape} != {expected}")
        ops.setflags(write=False)
        object.__setattr__(self, "ops", ops)

    def povm(self, party: int, setting: int) -> POVM:
        return POVM(self.ops[party, setting])

    def problems(self, tol: float = HERM_TOL) -> list[str]:
        out = []
        for k in range(self.scenario.N):
            for x in range(self.scenario.m):
                out += [f"party {k} setting {x}: {p}" for p in povm_problems(self.ops[k, x], tol)]
        return out

    @classmethod
    def from_povms(cls, scenario: Scenario, povms) -> "Assemblage":
        """``povms[k][x]`` is a :class:`POVM` (or element array)."""
        arr = np.array(
            [[np.asarray(getattr(P, "elements", P)) for P in row] for row in povms],
            dtype=complex,
        )
        return cls(scenario, arr.shape[-1], arr)


def random_assemblage(scenario: Scenario, d: int, rng=None, projective: bool = False) -> Assemblage:
    rng = _rng(rng)
    make = random_projective_povm if projective else random_povm
    ops = [[make(d, scenario.v, rng).elements for _ in range(scenario.m)] for _ in range(scenario.N)]
    return Assemblage(scenario, d, np.array(ops))


# ---------------------------------------------------------------------------
# layout helpers


def to_pairs(coeffs: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Canonical ``(a.., x..)`` layout -> per-party ``(x, a)`` layout, trailing axes.

    Leading batch axes of ``coeffs`` are kept; the result has shape
    ``batch + (m*v,)*N``.
    """
    N, m, v = scenario.N, scenario.m, scenario.v
    coeffs = np.asarray(coeffs)
    batch = coeffs.shape[:-1]
    nb = len(batch)
    t = coeffs.reshape(batch + scenario.shape)
    order = list(range(nb)) + [nb + ax for i in range(N) for ax in (N + i, i)]
    return t.transpose(order).reshape(batch + (m * v,) * N)


def from_pairs(pairs: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Inverse of :func:`to_pairs`; returns flat canonical vectors."""
    N, m, v = scenario.N, scenario.m, scenario.v
    nb = pairs.ndim - N
    batch = pairs.shape[:nb]
    t = pairs.reshape(batch + (m, v) * N)
    # axes now (x0, a0, x1, a1, ...) after the batch axes
    order = list(range(nb)) + [nb + 2 * i + 1 for i in range(N)] + [nb + 2 * i for i in range(N)]
    return t.transpose(order).reshape(batch + (scenario.size,))


def _check_dims(T_scenario: Scenario, A: Assemblage, dim: int | None = None):
    if T_scenario != A.scenario:
        raise ScenarioMismatch(f"scenario mismatch: {T_scenario} vs {A.scenario}")
    if dim is not None and dim != A.d**A.scenario.N:
        raise ValueError(f"state dimension {dim} != d^N = {A.d**A.scenario.N}")


# ---------------------------------------------------------------------------
# Born-rule contractions


def _pair_matrices(ops: np.ndarray) -> np.ndarray:
    """``ops[..., x, a, r, c]`` -> ``M[..., x*v+a, c*d+r]`` so that
    ``p_j = sum_{i,i'} Pi_j[i', i] psi_i conj(psi_{i'})``."""
    *lead, m, v, d, _ = ops.shape
    return np.swapaxes(ops, -1, -2).reshape(*lead, m * v, d * d)


def _ketbra(psi: np.ndarray, d: int, N: int) -> np.ndarray:
    """Interleaved ket/bra tensor ``R[b, i0, i0', i1, i1', ...]``."""
    B = psi.shape[0]
    ket = psi.reshape((B,) + (d,) * N)
    bra = psi.conj().reshape((B,) + (d,) * N)
    ket = ket.reshape((B,) + sum(((d, 1) for _ in range(N)), ()))
    bra = bra.reshape((B,) + sum(((1, d) for _ in range(N)), ()))
    return (ket * bra).reshape(B, d ** (2 * N))


def _contract_parties(R: np.ndarray, mats: list[np.ndarray], d: int) -> np.ndarray:
    """Contract the leading ket/bra pairs of ``R`` with per-party matrices.

    ``R`` has shape ``(B, J, d*d * rest)``; each matrix has shape
    ``(B or 1, mv, d*d)``.  Returns shape ``(B, J*mv**len(mats), rest)``.
    """
    B = R.shape[0]
    for M in mats:
        J = R.shape[1]
        R = R.reshape(B, J, d * d, -1)
        # (B, 1, mv, dd) @ (B, J, dd, rest) -> (B, J, mv, rest)
        R = np.matmul(M[:, None], R)
        R = R.reshape(B, J * M.shape[1], -1)
    return R


def behaviour_tensors(psis: np.ndarray, A: Assemblage) -> np.ndarray:
    """Born probabilities for a batch of state vectors, pair layout.

    Returns real array of shape ``(B,) + (m*v,)*N``.
    """
    sc, d = A.scenario, A.d
    psis = np.atleast_2d(np.asarray(psis, dtype=complex))
    _check_dims(sc, A, psis.shape[1])
    mats = [_pair_matrices(A.ops[k])[None] for k in range(sc.N)]
    per = max(1, _CHUNK_ENTRIES // max(d ** (2 * sc.N), (sc.m * sc.v) ** sc.N))
    out = np.empty((psis.shape[0],) + (sc.m * sc.v,) * sc.N)
    for start in range(0, psis.shape[0], per):
        chunk = psis[start : start + per]
        R = _ketbra(chunk, d, sc.N).reshape(chunk.shape[0], 1, -1)
        P = _contract_parties(R, mats, d)
        out[start : start + per] = P.real.reshape((chunk.shape[0],) + out.shape[1:])
    return out


def behaviour_of(psi: PureState, A: Assemblage) -> Behaviour:
    """Born-rule behaviour ``p(a|x) = <psi| (x)_k Pi^k_{a_k,x_k} |psi>``."""
    if psi.d != A.d or psi.N != A.scenario.N:
        raise ValueError("state and assemblage dimensions differ")
    P = behaviour_tensors(psi.amplitudes[None], A)
    return Behaviour(A.scenario, from_pairs(P, A.scenario)[0])


def evaluate_Q(psi: PureState, T: BellFunctional, A: Assemblage) -> float:
    """``Q(psi, T, A) = <psi| B_{T,A} |psi>``."""
    if psi.d != A.d or psi.N != A.scenario.N:
        raise ValueError("state and assemblage dimensions differ")
    return float(evaluate_Q_many(psi.amplitudes[None], T, A)[0])


def evaluate_Q_many(psis: np.ndarray, T: BellFunctional, A: Assemblage) -> np.ndarray:
    """``Q`` for every row of ``psis`` (fixed functional and assemblage)."""
    _check_dims(T.scenario, A)
    P = behaviour_tensors(psis, A)
    Tp = to_pairs(T.coeffs, T.scenario).reshape(-1)
    return P.reshape(P.shape[0], -1) @ Tp


def bell_operator_apply(T: BellFunctional, A: Assemblage, phi: np.ndarray) -> np.ndarray:
    """``B_{T,A} phi`` by contracting local operators term by term.

    The coefficient tensor is consumed one party at a time: party ``k``'s
    elements act on the ``k``-th tensor factor of the vector, and the party's
    ``(x, a)`` index is then summed against the coefficients.
    """
    sc, d = A.scenario, A.d
    phi = np.asarray(phi, dtype=complex).reshape(-1)
    _check_dims(T.scenario, A, phi.size)
    N, mv = sc.N, sc.m * sc.v
    W = to_pairs(T.coeffs, sc).astype(complex)  # (mv,)*N
    # work[j_k.. j_{N-1}, i_0..i_{N-1}]: remaining coefficient axes then the vector
    work = np.multiply.outer(W, phi).reshape((mv,) * N + (d,) * N)
    for k in range(N):
        ops = A.ops[k].reshape(mv, d, d)
        rest_j = N - k - 1
        # axes: j_k, j_{k+1..}, i_0 .. i_{N-1}; act on i_k with ops[j_k] and sum j_k
        work = np.moveaxis(work, 1 + rest_j + k, 1)  # bring i_k next to j_k
        shp = work.shape
        work = work.reshape(mv, d, -1)
        work = np.einsum("jrc,jcz->rz", ops, work)
        work = work.reshape(shp[1:])
        work = np.moveaxis(work, 0, rest_j + k)
    return work.reshape(-1)


def trace_bell_operator(T: BellFunctional, A: Assemblage) -> float:
    """``Tr B_{T,A}`` from local traces, without touching any state."""
    _check_dims(T.scenario, A)
    sc = T.scenario
    W = to_pairs(T.coeffs, sc).astype(complex)
    for k in range(sc.N):
        tr = np.trace(A.ops[k], axis1=-2, axis2=-1).reshape(-1)
        W = np.tensordot(tr, W, axes=([0], [0]))
    return float(np.real(W))


def _power_top(apply, dim, rng, tol, max_iter, start=None):
    """Power iteration for a PSD operator; returns (rayleigh, vector, residual)."""
    rng = _rng(rng)
    if start is None:
        x = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    else:
        x = np.array(start, dtype=complex)
    x /= np.linalg.norm(x)
    y = apply(x)
    mu = float(np.vdot(x, y).real)
    for it in range(max_iter):
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0, x, 0.0
        x = y / ny
        y = apply(x)
        new = float(np.vdot(x, y).real)
        res = float(np.linalg.norm(y - new * x))
        if abs(new - mu) <= tol * max(abs(new), 1e-300) and res <= np.sqrt(tol) * max(ny, 1e-300):
            return new, x, res
        mu = new
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps", res)


def operator_norm(
    T: BellFunctional,
    A: Assemblage,
    tol: float = 1e-9,
    max_iter: int = 10_000,
    rng=0,
) -> float:
    """Largest ``|eigenvalue|`` of ``B_{T,A}`` by power iteration on ``B^2``."""
    _check_dims(T.scenario, A)
    dim = A.d**A.scenario.N

    def apply2(x):
        return bell_operator_apply(T, A, bell_operator_apply(T, A, x))

    mu, _, _ = _power_top(apply2, dim, rng, tol, max_iter)
    return float(np.sqrt(max(mu, 0.0)))


def top_eigenpair(
    T: BellFunctional,
    A: Assemblage,
    tol: float = 1e-12,
    max_iter: int = 10_000,
    rng=0,
    start=None,
) -> tuple[float, np.ndarray]:
    """Largest (algebraic) eigenvalue of ``B_{T,A}`` and a unit eigenvector.

    Power iteration on ``B + s I`` with ``s = ||B||`` so the spectrum is
    nonnegative and the top of it is the largest eigenvalue of ``B``.
    """
    _check_dims(T.scenario, A)
    dim = A.d**A.scenario.N
    s = 1.01 * operator_norm(T, A, max_iter=max_iter, rng=rng)
    if s == 0.0:
        x = np.zeros(dim, dtype=complex)
        x[0] = 1.0
        return 0.0, x

    def shifted(x):
        return bell_operator_apply(T, A, x) + s * x

    _, x, _ = _power_top(shifted, dim, rng, tol, max_iter, start=start)
    return float(np.vdot(x, bell_operator_apply(T, A, x)).real), x
