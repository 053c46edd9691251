"""Training-free state composition for context extension.

Long inputs are split into chunks processed independently; the per-chunk
SSM states are then merged. For any layer with linear transitions the
concatenation state decomposes exactly over chunks,

    S(u_1 ... u_K) = S^(K) + sum_{c<K} S^(c) A^(c+1) ... A^(K),

with A^(c) the chunk's accumulated transition (scalar decay for Mamba-2
and gated GKA, a dense Householder-like product for GDN). That is
``caso_compose``; ``picaso_r`` averages it over the K cyclic chunk orders
in O(K). GKA's information pair additionally composes by plain summation
when decay is off, and by souping (averaging) as the default heuristic.
``chunked_prefill`` runs the whole three-step pipeline on a toy hybrid
stack: chunk with a shared prefix, prefill each chunk with reused position
ids, concatenate KV caches keeping one prefix copy, and merge SSM states.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ssm_core import GateTrack, GkaInfoState, SsmKind, ssm_forward, _as_kind
from . import kernels
from .stack import ToyHybridStack

MERGE_MODES = ("soup", "picaso_r", "gka_sum")


@dataclass(frozen=True)
class ChunkRecord:
    """Final state of one chunk plus its accumulated transition operator.

    state: (d_v, d_k) array or GkaInfoState. a_acc: scalar decay product or
    dense (d_k, d_k) transition product, applied on the state's right.
    """

    state: np.ndarray | GkaInfoState
    a_acc: float | np.ndarray
    length: int

    def __post_init__(self):
        a = self.a_acc
        if isinstance(a, np.ndarray):
            if a.ndim != 2 or not np.all(np.isfinite(a)):
                raise ValueError("dense transition must be a finite matrix")
        elif not np.isfinite(a):
            raise ValueError("transition product must be finite")


def _apply(state, trans):
    """state . trans, for scalar or dense transitions and array or info states."""
    if isinstance(state, GkaInfoState):
        if isinstance(trans, np.ndarray):
            raise ValueError("info states take scalar (decay) transitions only")
        return GkaInfoState(h=state.h * trans, u=state.u * trans)
    if isinstance(trans, np.ndarray):
        return state @ trans
    return state * trans


def _add(a, b):
    if isinstance(a, GkaInfoState):
        return GkaInfoState(h=a.h + b.h, u=a.u + b.u)
    return a + b


def _compose(trans_left, trans_right):
    """Transition product trans_left . trans_right (sequence order)."""
    if isinstance(trans_left, np.ndarray) or isinstance(trans_right, np.ndarray):
        left = trans_left if isinstance(trans_left, np.ndarray) else trans_left * np.eye(trans_right.shape[0])
        right = trans_right if isinstance(trans_right, np.ndarray) else trans_right * np.eye(left.shape[0])
        return left @ right
    return trans_left * trans_right


def _identity_like(trans):
    return np.eye(trans.shape[0]) if isinstance(trans, np.ndarray) else 1.0


def run_chunk(kind: SsmKind | str, k: np.ndarray, v: np.ndarray, gates: GateTrack,
              alpha: float = 0.05) -> ChunkRecord:
    """Process one chunk from the zero state and record (state, A_acc)."""
    kind = _as_kind(kind)
    q = np.zeros_like(k)  # outputs are irrelevant for the record
    _, state = ssm_forward(kind, k, v, q, gates, alpha=alpha)
    if kind is SsmKind.GDN:
        a_acc = kernels.gdn_transition_prefixes(
            np.ascontiguousarray(k, dtype=np.float64), gates.gamma, gates.beta)[-1]
    else:
        a_acc = float(np.prod(gates.gamma))
    return ChunkRecord(state=state, a_acc=a_acc, length=k.shape[0])


def caso_compose(chunks: Sequence[ChunkRecord]):
    """Exact composition of ordered chunk states for linear recurrences."""
    if not chunks:
        raise ValueError("need at least one chunk")
    merged = chunks[-1].state
    suffix = None
    for c in range(len(chunks) - 2, -1, -1):
        nxt = chunks[c + 1].a_acc
        suffix = nxt if suffix is None else _compose(nxt, suffix)
        merged = _add(merged, _apply(chunks[c].state, suffix))
    return merged


def picaso_r(chunks: Sequence[ChunkRecord]):
    """Mean of caso_compose over the K cyclic chunk orderings, via running
    prefix/suffix products (O(K) transition multiplies total)."""
    if not chunks:
        raise ValueError("need at least one chunk")
    K = len(chunks)
    if K == 1:
        return chunks[0].state

    eye = _identity_like(chunks[0].a_acc)
    zero = _apply(chunks[0].state, 0.0)

    # prefix transition products L_s = A^(1..s) and prefix compositions
    # T_s = caso of the first s chunks
    prefix_prod = [eye]
    prefix_caso = [zero]
    for s in range(1, K + 1):
        prefix_prod.append(_compose(prefix_prod[-1], chunks[s - 1].a_acc))
        prefix_caso.append(_add(_apply(prefix_caso[-1], chunks[s - 1].a_acc), chunks[s - 1].state))

    # suffix products R_s = A^(s+1..K) and suffix compositions
    # W_s = sum_{c>s} S^(c) A^(c+1..K)
    suffix_prod = [eye] * (K + 1)
    suffix_caso = [zero] * (K + 1)
    for s in range(K - 1, -1, -1):
        suffix_caso[s] = _add(_apply(chunks[s].state, suffix_prod[s + 1]), suffix_caso[s + 1])
        suffix_prod[s] = _compose(chunks[s].a_acc, suffix_prod[s + 1])

    total = None
    for s in range(K):  # cyclic order starting at chunk s+1
        v_s = _add(_apply(suffix_caso[s], prefix_prod[s]), prefix_caso[s])
        total = v_s if total is None else _add(total, v_s)
    return _apply(total, 1.0 / K)


def gka_compose(infos: Sequence[GkaInfoState], mode: str = "sum") -> GkaInfoState:
    """Merge GKA information states: additive fusion ("sum", exact when
    decay is off) or souping ("soup", each chunk contributes equally)."""
    if not infos:
        raise ValueError("need at least one info state")
    h = sum(i.h for i in infos)
    u = sum(i.u for i in infos)
    if mode == "sum":
        return GkaInfoState(h=h, u=u)
    if mode == "soup":
        return GkaInfoState(h=h / len(infos), u=u / len(infos))
    raise ValueError(f"unknown mode: {mode!r}")


def soup_states(states: Sequence):
    """Arithmetic mean of states (arrays or GkaInfoStates)."""
    if not states:
        raise ValueError("need at least one state")
    if isinstance(states[0], GkaInfoState):
        return gka_compose(states, mode="soup")
    return sum(states) / len(states)


# -- chunked prefill on the toy hybrid stack ------------------------------


@dataclass(frozen=True)
class KvCache:
    keys: np.ndarray
    values: np.ndarray
    pos_ids: np.ndarray


@dataclass(frozen=True)
class PrefillResult:
    layer_kinds: list
    kv_caches: dict = field(default_factory=dict)   # layer index -> KvCache
    ssm_states: dict = field(default_factory=dict)  # layer index -> merged state
    chunk_count: int = 1
    merge_mode: str = "soup"
    padded: int = 0


def _merge_ssm_layer(kind: str, caches: list, merge_mode: str):
    if kind == "gka":
        infos = [GkaInfoState(h=c.info_h, u=c.info_u) for c in caches]
        if merge_mode == "gka_sum":
            return gka_compose(infos, mode="sum")
        if merge_mode == "soup":
            return gka_compose(infos, mode="soup")
        records = [ChunkRecord(state=i, a_acc=c.decay_prod, length=0)
                   for i, c in zip(infos, caches)]
        return picaso_r(records)
    if merge_mode == "gka_sum":
        raise ValueError(f"gka_sum merge is only defined for GKA layers, not {kind!r}")
    if merge_mode == "soup":
        return soup_states([c.state for c in caches])
    records = [ChunkRecord(state=c.state,
                           a_acc=c.trans_prod if kind == "gdn" else c.decay_prod,
                           length=0) for c in caches]
    return picaso_r(records)


def chunked_prefill(model: ToyHybridStack, tokens: np.ndarray, chunk_len: int,
                    prefix: np.ndarray | None = None,
                    merge_mode: str = "soup") -> PrefillResult:
    """Three-step composition pipeline: chunk the body (shared prefix
    prepended to each chunk), prefill chunks independently with position
    ids 0..P+L-1 reused per chunk, concatenate attention KV keeping one
    prefix copy, and merge SSM states per merge_mode.

    A non-divisible tail is padded with zero tokens (they write nothing;
    decay still applies), and the pad count is reported.
    """
    if merge_mode not in MERGE_MODES:
        raise ValueError(f"merge_mode must be one of {MERGE_MODES}")
    tokens = np.asarray(tokens, dtype=np.float64)
    if chunk_len < 1:
        raise ValueError("chunk_len must be >= 1")
    prefix = np.zeros((0, model.d_model)) if prefix is None else np.asarray(prefix, dtype=np.float64)
    pad = (-tokens.shape[0]) % chunk_len
    if pad:
        tokens = np.vstack([tokens, np.zeros((pad, tokens.shape[1]))])
    n_chunks = tokens.shape[0] // chunk_len
    p_len = prefix.shape[0]

    per_layer_caches: list[list] = [[] for _ in model.mixers]
    for c in range(n_chunks):
        body = tokens[c * chunk_len:(c + 1) * chunk_len]
        trace = model.forward(np.vstack([prefix, body]), collect_caches=True)
        for i, cache in enumerate(trace.caches):
            per_layer_caches[i].append(cache)

    kinds = [kind for kind, _ in model.mixers]
    kv_caches = {}
    ssm_states = {}
    for i, kind in enumerate(kinds):
        caches = per_layer_caches[i]
        if kind in ("attn", "swa"):
            keys = [caches[0].keys[:p_len]] + [c.keys[p_len:] for c in caches]
            vals = [caches[0].values[:p_len]] + [c.values[p_len:] for c in caches]
            ids = [caches[0].pos_ids[:p_len]] + [c.pos_ids[p_len:] for c in caches]
            kv_caches[i] = KvCache(keys=np.vstack(keys), values=np.vstack(vals),
                                   pos_ids=np.concatenate(ids))
        else:
            ssm_states[i] = _merge_ssm_layer(kind, caches, merge_mode)
    return PrefillResult(layer_kinds=kinds, kv_caches=kv_caches, ssm_states=ssm_states,
                         chunk_count=n_chunks, merge_mode=merge_mode, padded=pad)


def single_pass_prefill(model: ToyHybridStack, tokens: np.ndarray,
                        prefix: np.ndarray | None = None) -> PrefillResult:
    """Oracle: one forward over prefix + full body."""
    prefix = np.zeros((0, model.d_model)) if prefix is None else np.asarray(prefix, dtype=np.float64)
    trace = model.forward(np.vstack([prefix, np.asarray(tokens, dtype=np.float64)]),
                          collect_caches=True)
    kinds = [kind for kind, _ in model.mixers]
    kv_caches = {}
    ssm_states = {}
    for i, kind in enumerate(kinds):
        cache = trace.caches[i]
        if kind in ("attn", "swa"):
            kv_caches[i] = KvCache(keys=cache.keys, values=cache.values, pos_ids=cache.pos_ids)
        elif kind == "gka":
            ssm_states[i] = GkaInfoState(h=cache.info_h, u=cache.info_u)
        else:
            ssm_states[i] = cache.state
    return PrefillResult(layer_kinds=kinds, kv_caches=kv_caches, ssm_states=ssm_states)


def state_deviation(a, b) -> float:
    """Max-abs difference between two merged states of matching type."""
    if isinstance(a, GkaInfoState):
        return float(max(np.max(np.abs(a.h - b.h), initial=0.0),
                         np.max(np.abs(a.u - b.u), initial=0.0)))
    return float(np.max(np.abs(a - b), initial=0.0))
