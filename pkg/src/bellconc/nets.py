"""Finite nets of hypercube subsets and the parameter cubes of measurements and functionals.

A net is built by streaming samples of the target set through a grid of
``(2l)**n`` cells of edge ``1/l`` (``l = ceil(1/eps)``) and keeping the first
sample that lands in each cell.  Any sampled point then shares a cell with a
stored point, so it lies within ``1/l <= eps`` of the net in the max norm.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .quantum import Assemblage, HERM_TOL, povm_problems
from .scenario import BellFunctional, ScenarioMismatch

MAX_NET_DIM = 12
Sampler = Callable[[np.random.Generator, int], np.ndarray]


class EmptyNetError(RuntimeError):
    """No sample was drawn, so the net is empty."""


@dataclass(frozen=True)
class HypercubeNet:
    n: int
    epsilon: float
    points: np.ndarray
    l: int
    samples_seen: int = 0

    def __len__(self) -> int:
        return len(self.points)

    def to_json(self) -> str:
        return json.dumps({
            "epsilon": self.epsilon,
            "n": self.n,
            "l": self.l,
            "samples_seen": self.samples_seen,
            "points": self.points.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "HypercubeNet":
        data = json.loads(text)
        pts = np.asarray(data["points"], dtype=float).reshape(-1, int(data["n"]))
        return cls(int(data["n"]), float(data["epsilon"]), pts, int(data["l"]),
                   int(data.get("samples_seen", 0)))


def grid_resolution(eps: float) -> int:
    if not 0 < eps < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {eps}")
    return math.ceil(1.0 / eps)


def cell_keys(points: np.ndarray, l: int) -> np.ndarray:
    """Integer cell coordinates; a point on a boundary goes to the lower cell."""
    k = np.ceil(l * (np.asarray(points) + 1.0)).astype(np.int64) - 1
    return np.clip(k, 0, 2 * l - 1)


def net_size_bound(n: int, eps: float) -> float:
    """Log of the cardinality ceiling ``(2/eps + 2)**n``."""
    if not 0 < eps < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {eps}")
    return n * math.log(2.0 / eps + 2.0)


def build_net(sampler: Sampler, eps: float, budget: int, rng=None,
              chunk: int = 1 << 16) -> HypercubeNet:
    """Net of the sampled set with one representative per occupied cell.

    Args:
        sampler: ``sampler(rng, size)`` returns ``size`` points of the set as
            an array of shape ``(size, n)`` inside ``[-1, 1]**n``.
        eps: covering radius in the max norm.
        budget: total number of samples to draw.
    """
    l = grid_resolution(eps)
    rng = np.random.default_rng(rng)
    if budget < 1:
        raise EmptyNetError("sample budget exhausted before any point was drawn")
    reps: dict = {}
    n = None
    seen = 0
    radix = None
    while seen < budget:
        size = min(chunk, budget - seen)
        pts = np.asarray(sampler(rng, size), dtype=float).reshape(size, -1)
        if n is None:
            n = pts.shape[1]
            if n > MAX_NET_DIM:
                raise ValueError(f"net construction limited to n <= {MAX_NET_DIM}, got {n}")
            if (2 * l) ** n < 2**62:
                radix = (2 * l) ** np.arange(n - 1, -1, -1, dtype=np.int64)
        if np.any(np.abs(pts) > 1.0):
            raise ValueError("sampler produced a point outside [-1, 1]^n")
        keys = cell_keys(pts, l)
        if radix is not None:
            flat = keys @ radix
            uniq, first = np.unique(flat, return_index=True)
            for key, i in zip(uniq.tolist(), first.tolist()):
                reps.setdefault(key, (seen + i, pts[i]))
        else:
            for i, row in enumerate(keys):
                reps.setdefault(row.tobytes(), (seen + i, pts[i]))
        seen += size
    ordered = sorted(reps.values(), key=lambda t: t[0])
    points = np.array([p for _, p in ordered]).reshape(-1, n)
    return HypercubeNet(n, float(eps), points, l, seen)


def covering_distance(net: HypercubeNet, probes: np.ndarray) -> np.ndarray:
    """Max-norm distance from each probe to its nearest net point."""
    probes = np.asarray(probes, dtype=float).reshape(-1, net.n)
    if len(net) == 0:
        raise EmptyNetError("net has no points")
    dist, _ = cKDTree(net.points).query(probes, k=1, p=np.inf)
    return dist


def cube_sampler(n: int) -> Sampler:
    return lambda rng, size: rng.uniform(-1.0, 1.0, size=(size, n))


def constant_sampler(x) -> Sampler:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return lambda rng, size: np.repeat(x, size, axis=0)


# ---------------------------------------------------------------------------
# parameter cubes


def povm_to_params(P: np.ndarray, tol: float = HERM_TOL) -> np.ndarray:
    """Real coordinates of a Hermitian ``d x d`` matrix.

    Layout: the ``d`` diagonal entries, then the real parts of the strict upper
    triangle in row-major order, then their imaginary parts.  For
    ``0 <= P <= I`` every coordinate lies in ``[-1, 1]``.
    """
    P = np.asarray(P)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("expected a square matrix")
    if np.max(np.abs(P - P.conj().T), initial=0.0) > tol:
        raise ValueError("matrix is not Hermitian")
    iu = np.triu_indices(P.shape[0], k=1)
    upper = P[iu]
    return np.concatenate([np.diag(P).real, upper.real, upper.imag])


def params_to_hermitian(r: np.ndarray, d: int | None = None) -> tuple[np.ndarray, list[str]]:
    """Inverse of :func:`povm_to_params` plus a list of POVM-element violations."""
    r = np.asarray(r, dtype=float).reshape(-1)
    if d is None:
        d = math.isqrt(r.size)
    if r.size != d * d:
        raise ValueError(f"need {d * d} parameters for d={d}, got {r.size}")
    k = d * (d - 1) // 2
    H = np.diag(r[:d]).astype(complex)
    iu = np.triu_indices(d, k=1)
    H[iu] = r[d : d + k] + 1j * r[d + k :]
    H[(iu[1], iu[0])] = r[d : d + k] - 1j * r[d + k :]
    problems = []
    w = np.linalg.eigvalsh(H)
    if w[0] < -HERM_TOL:
        problems.append(f"not positive semidefinite (min eigenvalue {w[0]:.3g})")
    if w[-1] > 1 + HERM_TOL:
        problems.append(f"exceeds identity (max eigenvalue {w[-1]:.3g})")
    return H, problems


def max_norm(P: np.ndarray) -> float:
    """Largest absolute parameter of a Hermitian matrix."""
    return float(np.max(np.abs(povm_to_params(P)), initial=0.0))


def assemblage_params(A: Assemblage) -> np.ndarray:
    """All POVM elements as one point of ``[-1, 1]**(d^2 m v N)``."""
    N, m, v = A.scenario.N, A.scenario.m, A.scenario.v
    flat = A.ops.reshape(N * m * v, A.d, A.d)
    return np.concatenate([povm_to_params(P) for P in flat])


def assemblage_from_params(r: np.ndarray, like: Assemblage) -> tuple[np.ndarray, list[str]]:
    """Rebuild the operator array from parameters and report POVM violations."""
    sc, d = like.scenario, like.d
    blocks = np.asarray(r, dtype=float).reshape(sc.N * sc.m * sc.v, d * d)
    ops = np.array([params_to_hermitian(b, d)[0] for b in blocks]).reshape(like.ops.shape)
    problems = []
    for k in range(sc.N):
        for x in range(sc.m):
            problems += [f"party {k} setting {x}: {p}" for p in povm_problems(ops[k, x])]
    return ops, problems


def functional_params(T: BellFunctional, b: float) -> np.ndarray:
    """Coefficients scaled into ``[-1, 1]**((mv)^N)``."""
    if b <= 0:
        raise ValueError("coefficient cap must be positive")
    return T.coeffs / b


def dist_assemblages(A: Assemblage, B: Assemblage) -> float:
    if A.ops.shape != B.ops.shape:
        raise ScenarioMismatch("assemblages have different shapes")
    return float(np.max(np.abs(assemblage_params(A) - assemblage_params(B)), initial=0.0))


def dist_functionals(T: BellFunctional, S: BellFunctional, b: float) -> float:
    if T.scenario != S.scenario:
        raise ScenarioMismatch("functionals live in different scenarios")
    if b <= 0:
        raise ValueError("coefficient cap must be positive")
    return float(np.max(np.abs(T.coeffs - S.coeffs), initial=0.0)) / b


def dist_joint(first, second, b: float) -> float:
    """Max of the functional and measurement distances of two ``(T, A)`` pairs."""
    (T, A), (S, B) = first, second
    return max(dist_functionals(T, S, b), dist_assemblages(A, B))
