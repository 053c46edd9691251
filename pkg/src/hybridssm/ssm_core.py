"""The three SSM recurrences (Mamba-2, GDN, GKA), GKA's information form,
exact and Chebyshev output solves, and input-output matrix probing.

All three layers share S_t = S_{t-1} A_t + v_t B_t with y_t = S_t q_t and
differ in the transition/write operators:

    Mamba-2:  A_t = gamma_t I,                        B_t = k_t^T
    GDN:      A_t = gamma_t (I - beta_t k_t k_t^T),   B_t = beta_t k_t^T
    GKA:      A_t = I - k_t g_t^T,                    B_t = g_t^T

GKA's gain g_t = beta_t (H_t + lam_t I)^{-1} k_t folds the whole key history
into the erase direction through the information matrix H_t. The equivalent
information form keeps (H_t, U_t) accumulators and reads the output by
solving (H_t + lam_t I) x = q_t, either densely or with Chebyshev iteration
(the runtime compute knob).

GDN's erase factor (I - beta k k^T) is a contraction only for ||k|| <= 1;
long-horizon runs should feed unit-normalized keys, as the production
layers these recurrences model do.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from . import kernels

DEFAULT_ALPHA = 0.05  # lam_t = alpha * ||H_t||_F adaptive regularization


class SsmKind(Enum):
    MAMBA2 = "mamba2"
    GDN = "gdn"
    GKA = "gka"


def _as_kind(kind: SsmKind | str) -> SsmKind:
    return kind if isinstance(kind, SsmKind) else SsmKind(kind)


@dataclass(frozen=True)
class SsmState:
    """Matrix recurrent state S in R^{d_v x d_k}."""

    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64)
        object.__setattr__(self, "s", s)
        if s.ndim != 2 or not np.all(np.isfinite(s)):
            raise ValueError("state must be a finite 2-D matrix")


@dataclass(frozen=True)
class GkaInfoState:
    """GKA information pair: H (d_k x d_k, symmetric PSD) and U (d_v x d_k)."""

    h: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        u = np.asarray(self.u, dtype=np.float64)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "u", u)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("H must be square")
        if u.ndim != 2 or u.shape[1] != h.shape[0]:
            raise ValueError(f"U trailing dim {u.shape} incompatible with H {h.shape}")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(u))):
            raise ValueError("non-finite info state")
        if np.max(np.abs(h - h.T), initial=0.0) > 1e-12:
            raise ValueError("H must be symmetric within 1e-12")
        if h.size and float(np.linalg.eigvalsh(h)[0]) < -1e-10:
            raise ValueError("H must be PSD (eigenvalues >= -1e-10)")

    @property
    def d_k(self) -> int:
        return self.h.shape[0]

    @property
    def d_v(self) -> int:
        return self.u.shape[0]


def zero_info_state(d_v: int, d_k: int) -> GkaInfoState:
    return GkaInfoState(h=np.zeros((d_k, d_k)), u=np.zeros((d_v, d_k)))


@dataclass(frozen=True)
class GateTrack:
    """Per-step gates: decay gamma_t in (0,1], write gate beta_t in [0,1],
    and (GKA only) regularizer lam_t > 0; lam=None selects the adaptive
    lam_t = alpha ||H_t||_F rule."""

    gamma: np.ndarray
    beta: np.ndarray
    lam: np.ndarray | None = None

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=np.float64)
        beta = np.asarray(self.beta, dtype=np.float64)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "beta", beta)
        if gamma.shape != beta.shape or gamma.ndim != 1:
            raise ValueError("gamma/beta must be 1-D arrays of equal length")
        if np.any(gamma <= 0.0) or np.any(gamma > 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        if np.any(beta < 0.0) or np.any(beta > 1.0):
            raise ValueError("beta must lie in [0, 1]")
        if self.lam is not None:
            lam = np.asarray(self.lam, dtype=np.float64)
            object.__setattr__(self, "lam", lam)
            if lam.shape != gamma.shape or np.any(lam <= 0.0) or not np.all(np.isfinite(lam)):
                raise ValueError("lam must be positive and finite, one per step")

    @property
    def T(self) -> int:
        return self.gamma.shape[0]


def make_default_gates(features: np.ndarray, seed: int = 42,
                       lam: float | None = None) -> GateTrack:
    """Default gate functions: sigmoids of seeded random linear projections
    of the per-step features (T, d)."""
    x = np.asarray(features, dtype=np.float64)
    rng = np.random.default_rng(seed)
    w_gamma = rng.standard_normal(x.shape[1]) / np.sqrt(x.shape[1])
    w_beta = rng.standard_normal(x.shape[1]) / np.sqrt(x.shape[1])
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))
    lam_arr = None if lam is None else np.full(x.shape[0], float(lam))
    return GateTrack(gamma=sig(x @ w_gamma), beta=sig(x @ w_beta), lam=lam_arr)


def ssm_step(kind: SsmKind | str, state: SsmState, k_t: np.ndarray, v_t: np.ndarray,
             *, gamma: float = 1.0, beta: float = 1.0,
             gain: np.ndarray | None = None) -> SsmState:
    """One recurrence step. GKA takes its precomputed gain vector g_t
    (see gka_gain); Mamba-2 ignores beta."""
    kind = _as_kind(kind)
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma out of (0, 1]: {gamma}")
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta out of (0, 1]: {beta}")
    s = state.s
    k_t = np.asarray(k_t, dtype=np.float64)
    v_t = np.asarray(v_t, dtype=np.float64)
    if k_t.shape != (s.shape[1],) or v_t.shape != (s.shape[0],):
        raise ValueError(f"k/v shapes {k_t.shape}/{v_t.shape} incompatible with state {s.shape}")
    if kind is SsmKind.MAMBA2:
        return SsmState(gamma * s + np.outer(v_t, k_t))
    if kind is SsmKind.GDN:
        erased = gamma * (s - beta * np.outer(s @ k_t, k_t))
        return SsmState(erased + beta * np.outer(v_t, k_t))
    if gain is None:
        raise ValueError("GKA step needs the gain vector g_t (see gka_gain)")
    g = np.asarray(gain, dtype=np.float64)
    return SsmState(s - np.outer(s @ k_t, g) + np.outer(v_t, g))


def gka_info_update(info: GkaInfoState, k_t: np.ndarray, v_t: np.ndarray,
                    gamma_t: float, beta_t: float) -> GkaInfoState:
    """H' = gamma H + beta k k^T, U' = gamma U + beta v k^T. beta = 0 leaves
    the state untouched (the token is filtered out); beta = 1 recovers the
    original un-gated update."""
    if not 0.0 <= gamma_t <= 1.0:
        raise ValueError(f"gamma out of [0, 1]: {gamma_t}")
    if not 0.0 <= beta_t <= 1.0:
        raise ValueError(f"beta out of [0, 1]: {beta_t}")
    k_t = np.asarray(k_t, dtype=np.float64)
    v_t = np.asarray(v_t, dtype=np.float64)
    return GkaInfoState(h=gamma_t * info.h + beta_t * np.outer(k_t, k_t),
                        u=gamma_t * info.u + beta_t * np.outer(v_t, k_t))


def gka_gain(info: GkaInfoState, k_t: np.ndarray, beta_t: float, lam_t: float) -> np.ndarray:
    """Erase/write direction g = beta (H + lam I)^{-1} k, by dense solve."""
    if lam_t <= 0.0:
        raise ValueError(f"lam must be > 0, got {lam_t}")
    k_t = np.asarray(k_t, dtype=np.float64)
    return beta_t * np.linalg.solve(info.h + lam_t * np.eye(info.d_k), k_t)


class ShermanMorrisonGain:
    """Incremental gain path for the gamma == 1, constant-lam regime:
    maintains Phi = (sum_i beta_i k_i k_i^T + lam I)^{-1} one rank-1
    downdate at a time. Must agree with the dense-solve path there."""

    def __init__(self, d_k: int, lam: float):
        if lam <= 0.0:
            raise ValueError(f"lam must be > 0, got {lam}")
        self.lam = float(lam)
        self.phi = np.eye(d_k) / lam

    def update(self, k_t: np.ndarray, beta_t: float) -> np.ndarray:
        """Fold in beta_t k_t k_t^T and return the gain g_t = beta_t Phi_t k_t."""
        k_t = np.asarray(k_t, dtype=np.float64)
        pk = self.phi @ k_t
        denom = 1.0 + beta_t * (k_t @ pk)
        self.phi = self.phi - (beta_t / denom) * np.outer(pk, pk)
        return beta_t * (self.phi @ k_t)


def default_spectral_bounds(h: np.ndarray, lam: float) -> tuple[float, float]:
    """[lam, lam + ||H||_F]: the Frobenius norm upper-bounds the spectral
    radius of the PSD information matrix."""
    return lam, lam + float(np.linalg.norm(h))


def chebyshev_solve(apply_h: Callable[[np.ndarray], np.ndarray] | np.ndarray,
                    lam: float, q: np.ndarray, r: int,
                    spectral_bounds: tuple[float, float] | None = None
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev iteration for (H + lam I) x = q, H given as a dense matrix
    or as a matrix-vector operator. spectral_bounds = (a, b) must cover the
    spectrum of H + lam I; defaults to [lam, lam + ||H||_F] for dense H.

    Returns (x_r, residual_history); raises on a non-finite iterate, naming
    the iteration."""
    if r < 1:
        raise ValueError(f"need r >= 1 iterations, got {r}")
    q = np.asarray(q, dtype=np.float64)
    dense = isinstance(apply_h, np.ndarray)
    if spectral_bounds is None:
        if not dense:
            raise ValueError("spectral_bounds are required for operator-form H")
        spectral_bounds = default_spectral_bounds(apply_h, lam)
    a, b = float(spectral_bounds[0]), float(spectral_bounds[1])
    if a <= 0.0:
        raise ValueError(f"lower spectral bound must be > 0, got {a}")
    if b < a:
        raise ValueError(f"invalid spectral interval [{a}, {b}]")

    if dense:
        x, hist = kernels.chebyshev_dense(np.ascontiguousarray(apply_h, dtype=np.float64),
                                          float(lam), np.ascontiguousarray(q), int(r), a, b)
    else:
        theta, delta = 0.5 * (b + a), 0.5 * (b - a)
        x = np.zeros_like(q)
        res = q.copy()
        p = np.zeros_like(q)
        alpha = 0.0
        hist = np.empty(r)
        for it in range(r):
            if it == 0:
                p = res.copy()
                alpha = 1.0 / theta
            else:
                beta = 0.5 * (delta * alpha) ** 2 if it == 1 else (0.5 * delta * alpha) ** 2
                alpha = 1.0 / (theta - beta / alpha)
                p = res + beta * p
            x = x + alpha * p
            res = res - alpha * (apply_h(p) + lam * p)
            hist[it] = np.linalg.norm(res)
    bad = np.flatnonzero(~np.isfinite(hist))
    if bad.size or not np.all(np.isfinite(x)):
        idx = int(bad[0]) + 1 if bad.size else r
        raise FloatingPointError(f"Chebyshev iterate non-finite at iteration {idx}")
    return x, hist


def chebyshev_residual_bound(a: float, b: float, iters: int) -> np.ndarray:
    """Classical relative residual bound 1/C_k((b+a)/(b-a)) per iteration,
    C_k the degree-k Chebyshev polynomial; a point spectrum (a == b) gives 0."""
    ks = np.arange(1, iters + 1, dtype=np.float64)
    if b == a:
        return np.zeros(iters)
    sigma = (b + a) / (b - a)
    return 1.0 / np.cosh(ks * np.arccosh(sigma))


def gka_output(info: GkaInfoState, q_t: np.ndarray, lam_t: float,
               solver: str = "exact", r: int = 30) -> np.ndarray:
    """Read y = U x with (H + lam I) x = q, by dense solve or Chebyshev."""
    if lam_t <= 0.0:
        raise ValueError(f"lam must be > 0, got {lam_t}")
    q_t = np.asarray(q_t, dtype=np.float64)
    if solver == "exact":
        x = np.linalg.solve(info.h + lam_t * np.eye(info.d_k), q_t)
    elif solver == "chebyshev":
        x, _ = chebyshev_solve(info.h, lam_t, q_t, r)
    else:
        raise ValueError(f"unknown solver: {solver!r}")
    return info.u @ x


def ssm_forward(kind: SsmKind | str, k: np.ndarray, v: np.ndarray, q: np.ndarray,
                gates: GateTrack, s0: np.ndarray | None = None,
                solver: str = "exact", r: int = 30, alpha: float = DEFAULT_ALPHA):
    """Sequential layer forward. Returns (y, final_state) where the state is
    an (d_v, d_k) array for Mamba-2/GDN and a GkaInfoState for GKA.

    GKA runs in information form; gates.lam supplies fixed per-step
    regularizers, otherwise lam_t = alpha ||H_t||_F.
    """
    kind = _as_kind(kind)
    k = np.ascontiguousarray(k, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    if gates.T != k.shape[0]:
        raise ValueError(f"gate track length {gates.T} != T {k.shape[0]}")
    if s0 is None:
        s0 = np.zeros((v.shape[1], k.shape[1]))
    if kind is SsmKind.MAMBA2:
        y, s = kernels.mamba2_scan(k, v, q, gates.gamma, np.ascontiguousarray(s0))
        return y, s
    if kind is SsmKind.GDN:
        y, s = kernels.gdn_scan(k, v, q, gates.gamma, gates.beta, np.ascontiguousarray(s0))
        return y, s
    if np.any(np.asarray(s0) != 0.0):
        raise ValueError("GKA forward starts from the zero information state")
    lam = gates.lam if gates.lam is not None else np.zeros(gates.T)
    a = -1.0 if gates.lam is not None else float(alpha)
    solver_r = 0 if solver == "exact" else int(r)
    y, h, u, _ = kernels.gka_info_forward(k, v, q, gates.gamma, gates.beta,
                                          np.ascontiguousarray(lam), a, solver_r, 1.0)
    return y, GkaInfoState(h=h, u=u)


def gka_recurrence_equivalence(k: np.ndarray, v: np.ndarray, q: np.ndarray,
                               gates: GateTrack, solver: str = "exact",
                               r: int = 30) -> float:
    """Max-abs output difference between the state-recurrence form and the
    information form on the same inputs.

    The recurrence path computes gains from the Sherman-Morrison recursion
    (gamma == 1, fixed lam) or from the unrolled closed-form key sum
    otherwise; the information path runs the additive (H, U) recursion with
    its solve. The two are mathematically identical for gamma == 1 and
    fixed lam.
    """
    if gates.lam is None:
        raise ValueError("equivalence check needs a fixed lam track")
    k = np.ascontiguousarray(k, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    T, d_k = k.shape

    lam0 = float(gates.lam[0])
    fixed_lam = bool(np.all(gates.lam == lam0))
    if fixed_lam and np.all(gates.gamma == 1.0):
        y_rec, _, _ = kernels.gka_recurrent_scan(k, v, q, gates.beta, lam0)
    else:
        y_rec = np.empty((T, v.shape[1]))
        state = SsmState(np.zeros((v.shape[1], d_k)))
        weighted = np.zeros((d_k, d_k))
        for t in range(T):
            weighted = gates.gamma[t] * weighted + gates.beta[t] * np.outer(k[t], k[t])
            g = gates.beta[t] * np.linalg.inv(weighted + gates.lam[t] * np.eye(d_k)) @ k[t]
            state = ssm_step(SsmKind.GKA, state, k[t], v[t], gain=g)
            y_rec[t] = state.s @ q[t]

    y_info, _ = ssm_forward(SsmKind.GKA, k, v, q, gates, solver=solver, r=r)
    return float(np.max(np.abs(y_rec - y_info)))


def ssm_io_matrix(kind: SsmKind | str, keys: np.ndarray, queries: np.ndarray,
                  gates: GateTrack, solver: str = "exact", r: int = 30) -> np.ndarray:
    """Finite-horizon input-output matrix of the layer with gates and keys
    frozen: probe with value basis inputs e_j per position (the layer acts
    identically and independently on each value coordinate, so one scalar
    channel suffices)."""
    keys = np.ascontiguousarray(keys, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    T = keys.shape[0]
    out = np.zeros((T, T))
    for j in range(T):
        v = np.zeros((T, 1))
        v[j, 0] = 1.0
        y, _ = ssm_forward(kind, keys, v, queries, gates, solver=solver, r=r)
        out[:, j] = y[:, 0]
    return out
