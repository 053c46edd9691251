"""Causal mixing matrices and their Hankel-rank profiles.

A single attention head applies a T x T lower-triangular, row-stochastic
mixing matrix to its value sequence. The rank of the past-to-future block
at each time cut bounds the state dimension any recurrent model needs to
reproduce the head's input-output map; ``hankel_profile`` computes that
bound. Sliding-window variants are banded, which caps the profile at the
window size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_RANK_TOL = 1e-8


@dataclass(frozen=True)
class TokenSequence:
    """Per-step query/key/value vectors for one head.

    q, k: (T, d_k); v: (T, d_v). All entries finite, T >= 1.
    """

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        k = np.asarray(self.k, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "v", v)
        if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
            raise ValueError("q, k, v must be 2-D (T, dim) arrays")
        if q.shape[0] < 1:
            raise ValueError("need at least one token")
        if q.shape != k.shape:
            raise ValueError(f"q/k dimension mismatch: {q.shape} vs {k.shape}")
        if v.shape[0] != q.shape[0]:
            raise ValueError(f"v length {v.shape[0]} != T {q.shape[0]}")
        for name, arr in (("q", q), ("k", k), ("v", v)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")

    @property
    def T(self) -> int:
        return self.q.shape[0]

    @property
    def d_k(self) -> int:
        return self.q.shape[1]

    @property
    def d_v(self) -> int:
        return self.v.shape[1]


def random_token_sequence(T: int, d_k: int, d_v: int | None = None,
                          scale: float = 1.0,
                          rng: np.random.Generator | None = None) -> TokenSequence:
    rng = rng or np.random.default_rng()
    d_v = d_k if d_v is None else d_v
    return TokenSequence(
        q=scale * rng.standard_normal((T, d_k)),
        k=scale * rng.standard_normal((T, d_k)),
        v=rng.standard_normal((T, d_v)),
    )


@dataclass(frozen=True)
class MixingMatrix:
    """Lower-triangular causal mixer. Rows of softmax-built mixers sum to 1."""

    m: np.ndarray
    kind: str = "custom"  # "attention" | "swa" | "custom"
    window: int | None = None

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        object.__setattr__(self, "m", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"mixing matrix must be square, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("non-finite entries in mixing matrix")
        if np.any(np.triu(m, k=1) != 0.0):
            raise ValueError("mixing matrix must be lower-triangular (exact zeros above diagonal)")

    @property
    def T(self) -> int:
        return self.m.shape[0]

    def row_sum_error(self) -> float:
        return float(np.max(np.abs(self.m.sum(axis=1) - 1.0)))


def _masked_softmax_rows(scores: np.ndarray, lo: np.ndarray) -> np.ndarray:
    """Row-wise softmax of `scores` restricted to columns lo[i]..i.

    Max-subtraction per row keeps the exponentials in range.
    """
    T = scores.shape[0]
    m = np.zeros((T, T))
    for i in range(T):
        row = scores[i, lo[i]:i + 1]
        e = np.exp(row - row.max())
        m[i, lo[i]:i + 1] = e / e.sum()
    return m


def build_attention_mixer(seq: TokenSequence) -> MixingMatrix:
    """Causal softmax mixer: M[i, j] = softmax_j<=i(q_i . k_j)."""
    scores = seq.q @ seq.k.T
    lo = np.zeros(seq.T, dtype=np.int64)
    return MixingMatrix(_masked_softmax_rows(scores, lo), kind="attention")


def build_swa_mixer(seq: TokenSequence, w: int) -> MixingMatrix:
    """Sliding-window mixer: like attention but each row renormalizes over
    the last w positions only (M[i, j] = 0 for j < i - w + 1)."""
    if w < 1:
        raise ValueError(f"window must be >= 1, got {w}")
    scores = seq.q @ seq.k.T
    lo = np.maximum(np.arange(seq.T) - w + 1, 0)
    return MixingMatrix(_masked_softmax_rows(scores, lo), kind="swa", window=w)


def hankel_block(m: np.ndarray, k: int) -> np.ndarray:
    """Past-to-future block at cut k (1 <= k < T): rows k.., columns ..k."""
    return m[k:, :k]


@dataclass(frozen=True)
class HankelProfile:
    """Numerical ranks of every past-to-future block and their maximum,
    the minimal state dimension realizing the mixer."""

    ranks: np.ndarray                      # (T-1,) ints; ranks[i] is cut k=i+1
    n_min: int
    singular_values: list = field(repr=False)  # per-cut singular values

    def top_singular_values(self) -> np.ndarray:
        return np.array([sv[0] if len(sv) else 0.0 for sv in self.singular_values])


def hankel_profile(m: MixingMatrix | np.ndarray,
                   rank_tol: float = DEFAULT_RANK_TOL) -> HankelProfile:
    """Rank of M[k:, :k] for every cut; rank counts singular values above
    rank_tol relative to the block's largest one."""
    mat = m.m if isinstance(m, MixingMatrix) else np.asarray(m, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("need a square matrix")
    if np.any(np.triu(mat, k=1) != 0.0):
        raise ValueError("matrix must be lower-triangular")
    if not 0.0 < rank_tol < 1.0:
        raise ValueError(f"rank_tol must be in (0, 1), got {rank_tol}")
    T = mat.shape[0]
    ranks = np.zeros(max(T - 1, 0), dtype=np.int64)
    svs: list[np.ndarray] = []
    for k in range(1, T):
        s = np.linalg.svd(hankel_block(mat, k), compute_uv=False)
        svs.append(s)
        if s.size and s[0] > 0.0:
            ranks[k - 1] = int(np.count_nonzero(s > rank_tol * s[0]))
    n_min = int(ranks.max()) if ranks.size else 0
    return HankelProfile(ranks=ranks, n_min=n_min, singular_values=svs)
