"""Minimal linear time-varying realizations of causal mixing matrices.

Given a lower-triangular M, ``realize`` builds per-step system matrices
(A_t, B_t, C_t, D_t) of state dimension n = max Hankel rank whose
finite-horizon input-output matrix reproduces M entrywise, and
``io_matrix`` materializes that matrix back.

Convention ("past-only-state"): the state s_t summarizes inputs strictly
before t,

    y_t = s_t C_t + v_t D_t,        s_{t+1} = s_t A_t + v_t B_t,

so the impulse response is T_ij = B_j A_{j+1} ... A_{i-1} C_i for i > j and
T_ii = D_i = M_ii. Under this convention the unit-delay matrix (Hankel rank
1) is realizable at n = 1, which the read-after-write indexing cannot do.

Construction: at each time cut k the reachable future-tail space is
im(H_k) with H_k = M[k:, :k]. Q_k holds an orthonormal basis of that space
(thin-SVD left singular vectors, padded with orthonormal complement
vectors, then zero columns once the ambient dimension T-k is exhausted).
Advancing the cut drops the tail's first coordinate (P_k) and adds the new
input's column, which in coordinates gives

    A_{k+1}^T = Q_{k+1}^+ P_k Q_k,      B_{k+1}^T = Q_{k+1}^+ M[k+1:, k],

with Q^+ = Q^T since the columns are orthonormal or zero. The output reads
the tail's first coordinate: C_k = Q_k^T e_1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .mixing import DEFAULT_RANK_TOL, MixingMatrix, hankel_block, hankel_profile
from .tensorio import obj_to_tensor, tensor_to_obj

CONVENTION = "past-only-state"


@dataclass(frozen=True)
class TimeVaryingRealization:
    """Per-step system matrices; a: (T, n, n), b: (T, n), c: (T, n), d: (T,).

    b[t] is the row vector B_t; c[t] stores the column vector C_t. n = 0
    means pure feedthrough.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    convention: str = CONVENTION

    def __post_init__(self):
        if self.convention != CONVENTION:
            raise ValueError(f"unknown convention tag: {self.convention!r}")
        T, n = self.b.shape
        if self.a.shape != (T, n, n) or self.c.shape != (T, n) or self.d.shape != (T,):
            raise ValueError("inconsistent system matrix shapes")
        for name in ("a", "b", "c", "d"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")

    @property
    def n(self) -> int:
        return self.b.shape[1]

    @property
    def T(self) -> int:
        return self.b.shape[0]


def _complement_pad(cols: np.ndarray, ref: np.ndarray, count: int) -> np.ndarray:
    """Up to `count` orthonormal vectors orthogonal to `cols`, obtained by
    Gram-Schmidt of the reference columns; exhausted directions become zero
    columns (the ambient space can be smaller than the target width)."""
    dim = cols.shape[0]
    basis = [cols[:, i] for i in range(cols.shape[1])]
    out = []
    for cand in ref.T:
        if len(out) == count:
            break
        u = cand[:dim].copy()
        for bvec in basis:
            u -= (bvec @ u) * bvec
        norm = np.linalg.norm(u)
        if norm > 1e-10:
            u /= norm
            basis.append(u)
            out.append(u)
    while len(out) < count:
        out.append(np.zeros(dim))
    return np.column_stack(out) if out else np.zeros((dim, 0))


def realize(m: MixingMatrix | np.ndarray,
            rank_tol: float = DEFAULT_RANK_TOL,
            pad_seed: int = 42) -> TimeVaryingRealization:
    """Construct a state-dimension n_min realization of the causal mixer m.

    pad_seed fixes the reference matrix used to pad rank-deficient cut
    bases; any seed yields the same input-output matrix (basis invariance),
    only the internal system matrices differ.
    """
    mat = m.m if isinstance(m, MixingMatrix) else np.asarray(m, dtype=np.float64)
    profile = hankel_profile(mat, rank_tol)
    T = mat.shape[0]
    n = profile.n_min

    a = np.tile(np.eye(n), (T, 1, 1)) if n else np.zeros((T, 0, 0))
    b = np.zeros((T, n))
    c = np.zeros((T, n))
    d = np.diag(mat).copy()
    if n == 0:
        return TimeVaryingRealization(a=a, b=b, c=c, d=d)

    pad_ref = np.random.default_rng(pad_seed).standard_normal((T, n + T))

    q_bases: list[np.ndarray | None] = [None] * T
    for k in range(1, T):
        hk = hankel_block(mat, k)
        u, s, _ = np.linalg.svd(hk, full_matrices=False)
        rho = int(profile.ranks[k - 1])
        cols = u[:, :rho]
        q_bases[k] = np.hstack([cols, _complement_pad(cols, pad_ref, n - rho)])

    for t in range(1, T):
        c[t] = q_bases[t][0, :]
    for t in range(T - 1):
        q_next = q_bases[t + 1]
        b[t] = q_next.T @ mat[t + 1:, t]
        if t >= 1:
            a[t] = q_bases[t][1:, :].T @ q_next
    return TimeVaryingRealization(a=a, b=b, c=c, d=d)


def io_matrix(r: TimeVaryingRealization, T: int | None = None) -> np.ndarray:
    """Dense finite-horizon input-output matrix of the realization:
    T_ij = B_j A_{j+1} ... A_{i-1} C_i below the diagonal, D_i on it."""
    if T is None:
        T = r.T
    if T != r.T:
        raise ValueError(f"realization has horizon {r.T}, requested {T}")
    out = np.zeros((T, T))
    for j in range(T):
        out[j, j] = r.d[j]
        w = r.b[j]
        for i in range(j + 1, T):
            out[i, j] = w @ r.c[i]
            w = w @ r.a[i]
    return out


@dataclass(frozen=True)
class MinimalityReport:
    reconstruction_error: float
    n: int
    n_min: int
    is_minimal: bool


def verify_minimality(r: TimeVaryingRealization, m: MixingMatrix | np.ndarray,
                      rank_tol: float = DEFAULT_RANK_TOL) -> MinimalityReport:
    """Max-abs reconstruction error of r against m, and whether r's state
    dimension matches m's Hankel-rank lower bound."""
    mat = m.m if isinstance(m, MixingMatrix) else np.asarray(m, dtype=np.float64)
    err = float(np.max(np.abs(io_matrix(r) - mat)))
    n_min = hankel_profile(mat, rank_tol).n_min
    return MinimalityReport(reconstruction_error=err, n=r.n, n_min=n_min,
                            is_minimal=(r.n == n_min))


def save_realization(path: str, r: TimeVaryingRealization) -> None:
    obj = {
        "manifest": {"n": r.n, "T": r.T, "convention": r.convention},
        "a": tensor_to_obj(r.a),
        "b": tensor_to_obj(r.b),
        "c": tensor_to_obj(r.c),
        "d": tensor_to_obj(r.d),
    }
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True)
        f.write("\n")


def load_realization(path: str) -> TimeVaryingRealization:
    with open(path) as f:
        obj = json.load(f)
    r = TimeVaryingRealization(
        a=obj_to_tensor(obj["a"]), b=obj_to_tensor(obj["b"]),
        c=obj_to_tensor(obj["c"]), d=obj_to_tensor(obj["d"]),
        convention=obj["manifest"]["convention"],
    )
    if r.n != obj["manifest"]["n"] or r.T != obj["manifest"]["T"]:
        raise ValueError("manifest disagrees with stored tensors")
    return r
