"""The model graph shared by all three variants: embedding lookup, average and
attention pooling, two ReLU FC layers, per-task logistic heads, cross-entropy
loss, and the analytic backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .data import AdInstance, FeatureSchema, Query, SfInstance, UserRepr
from .numeric import init_dense_layer, init_embedding_table, substream

PRED_CLAMP = 1e-7

BASIC = "basic"
MULTITASK = "multitask"
AUGMENTED = "augmented"

MAIN = "main"
AUX = "aux"


@dataclass(frozen=True)
class NetworkDims:
    keyword_dim: int = 50
    feature_dim: int = 24
    fc1: int = 256
    fc2: int = 256

    def to_dict(self) -> dict:
        return {"keyword_dim": self.keyword_dim, "feature_dim": self.feature_dim,
                "fc1": self.fc1, "fc2": self.fc2}


@dataclass(frozen=True)
class ModelVariant:
    kind: str
    schema: FeatureSchema | None = None

    def __post_init__(self):
        if self.kind not in (BASIC, MULTITASK, AUGMENTED):
            raise ValueError(f"unknown variant {self.kind!r}")
        if self.kind == AUGMENTED and self.schema is None:
            raise ValueError("augmented variant needs a feature schema")
        if self.kind != AUGMENTED and self.schema is not None:
            raise ValueError(f"{self.kind} variant takes no feature schema")

    @property
    def has_aux(self) -> bool:
        return self.kind in (MULTITASK, AUGMENTED)

    def feature_group_order(self):
        """Concatenation order of pooled feature groups: user groups then query
        groups, each in schema order."""
        if self.schema is None:
            return ()
        return self.schema.entity_groups("user") + self.schema.entity_groups("query")


def input_width(variant: ModelVariant, dims: NetworkDims) -> int:
    return 3 * dims.keyword_dim + dims.feature_dim * len(variant.feature_group_order())


# ---------------------------------------------------------------------------
# Parameters

SHARED_TENSORS = ("keyword_emb", "fc1_w", "fc1_b", "fc2_w", "fc2_b")
ATTENTION_TENSORS = ("att_wu", "att_wq", "att_wa", "att_z")


@dataclass
class NetworkParams:
    """All trainable tensors.

    The auxiliary-task set (theta_1) is the shared tensors plus attention plus
    the aux head; the main-task set (theta_2) is the shared tensors plus the
    main head. Attention never belongs to theta_2, the main head never to
    theta_1.
    """

    variant: ModelVariant
    dims: NetworkDims
    vocab_size: int
    keyword_emb: np.ndarray
    feature_emb: dict[str, np.ndarray]
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray
    head_main_w: np.ndarray
    head_main_b: np.ndarray
    att_wu: np.ndarray | None = None
    att_wq: np.ndarray | None = None
    att_wa: np.ndarray | None = None
    att_z: np.ndarray | None = None
    head_aux_w: np.ndarray | None = None
    head_aux_b: np.ndarray | None = None

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "keyword_emb", self.keyword_emb
        for name in sorted(self.feature_emb):
            yield f"feature_emb/{name}", self.feature_emb[name]
        yield "fc1_w", self.fc1_w
        yield "fc1_b", self.fc1_b
        yield "fc2_w", self.fc2_w
        yield "fc2_b", self.fc2_b
        yield "head_main_w", self.head_main_w
        yield "head_main_b", self.head_main_b
        if self.variant.has_aux:
            yield "att_wu", self.att_wu
            yield "att_wq", self.att_wq
            yield "att_wa", self.att_wa
            yield "att_z", self.att_z
            yield "head_aux_w", self.head_aux_w
            yield "head_aux_b", self.head_aux_b

    def get(self, name: str) -> np.ndarray:
        if name.startswith("feature_emb/"):
            return self.feature_emb[name.split("/", 1)[1]]
        return getattr(self, name)

    def theta(self, task: str) -> tuple[str, ...]:
        shared = ["keyword_emb"]
        shared += [f"feature_emb/{g}" for g in sorted(self.feature_emb)]
        shared += ["fc1_w", "fc1_b", "fc2_w", "fc2_b"]
        if task == MAIN:
            return tuple(shared + ["head_main_w", "head_main_b"])
        if task == AUX:
            if not self.variant.has_aux:
                raise ValueError("variant lacks auxiliary head")
            return tuple(shared + list(ATTENTION_TENSORS) + ["head_aux_w", "head_aux_b"])
        raise ValueError(f"unknown task {task!r}")

    def copy(self) -> "NetworkParams":
        def cp(a):
            return None if a is None else a.copy()
        return NetworkParams(
            variant=self.variant, dims=self.dims, vocab_size=self.vocab_size,
            keyword_emb=self.keyword_emb.copy(),
            feature_emb={k: v.copy() for k, v in self.feature_emb.items()},
            fc1_w=self.fc1_w.copy(), fc1_b=self.fc1_b.copy(),
            fc2_w=self.fc2_w.copy(), fc2_b=self.fc2_b.copy(),
            head_main_w=self.head_main_w.copy(), head_main_b=self.head_main_b.copy(),
            att_wu=cp(self.att_wu), att_wq=cp(self.att_wq), att_wa=cp(self.att_wa),
            att_z=cp(self.att_z), head_aux_w=cp(self.head_aux_w),
            head_aux_b=cp(self.head_aux_b))


def init_network_params(variant: ModelVariant, vocab_size: int,
                        dims: NetworkDims = NetworkDims(), seed: int = 0) -> NetworkParams:
    """Initialize all tensors from independent per-tensor substreams of `seed`.

    Per-tensor streams keep shared tensors bitwise identical across variants
    that share them (e.g. multitask vs augmented-with-empty-schema).
    """
    if vocab_size <= 0:
        raise ValueError("vocab_size must be positive")
    e = dims.keyword_dim
    keyword_emb = init_embedding_table(vocab_size, e, substream(seed, "keyword_emb"))
    feature_emb: dict[str, np.ndarray] = {}
    for g in variant.feature_group_order():
        feature_emb[g.name] = init_embedding_table(
            g.cardinality, dims.feature_dim, substream(seed, f"feature_emb/{g.name}"))
    d_in = input_width(variant, dims)
    fc1_w, fc1_b = init_dense_layer(d_in, dims.fc1, substream(seed, "fc1"))
    fc2_w, fc2_b = init_dense_layer(dims.fc1, dims.fc2, substream(seed, "fc2"))
    hm_w, hm_b = init_dense_layer(dims.fc2, 1, substream(seed, "head_main"))
    params = NetworkParams(
        variant=variant, dims=dims, vocab_size=vocab_size,
        keyword_emb=keyword_emb, feature_emb=feature_emb,
        fc1_w=fc1_w, fc1_b=fc1_b, fc2_w=fc2_w, fc2_b=fc2_b,
        head_main_w=hm_w[:, 0], head_main_b=hm_b)
    if variant.has_aux:
        params.att_wu, _ = init_dense_layer(e, e, substream(seed, "att_wu"))
        params.att_wq, _ = init_dense_layer(e, e, substream(seed, "att_wq"))
        params.att_wa, _ = init_dense_layer(e, e, substream(seed, "att_wa"))
        z, _ = init_dense_layer(e, 1, substream(seed, "att_z"))
        params.att_z = z[:, 0]
        ha_w, ha_b = init_dense_layer(dims.fc2, 1, substream(seed, "head_aux"))
        params.head_aux_w, params.head_aux_b = ha_w[:, 0], ha_b
    return params


# ---------------------------------------------------------------------------
# Batch packing

@dataclass
class _Segments:
    """Flat gather indices for a ragged batch of id collections."""

    flat: np.ndarray      # (n,) int64 ids into an embedding table
    seg: np.ndarray       # (n,) int64 owning instance index
    counts: np.ndarray    # (B,) int64 collection sizes

    @classmethod
    def pack(cls, collections: Sequence[Sequence[int]]) -> "_Segments":
        counts = np.array([len(c) for c in collections], dtype=np.int64)
        flat = np.fromiter((i for c in collections for i in c), dtype=np.int64,
                           count=int(counts.sum()))
        seg = np.repeat(np.arange(len(collections), dtype=np.int64), counts)
        return cls(flat=flat, seg=seg, counts=counts)


def _user_ids(user: UserRepr) -> list[int]:
    ids = sorted(user.interest_keywords())
    if not ids:
        raise ValueError(f"user {user.user_id}: empty interest keyword set")
    return ids


@dataclass
class PackedBatch:
    task: str
    size: int
    labels: np.ndarray
    user: _Segments
    query: _Segments
    target: _Segments | None          # main task: pooled SF/SP phrase
    title: _Segments | None           # aux task: ordered ad-title keywords
    groups: dict[str, _Segments]      # augmented: per feature group


def _group_segments(variant: ModelVariant, users: Sequence[UserRepr],
                    queries: Sequence[Query]) -> dict[str, _Segments]:
    groups: dict[str, _Segments] = {}
    for g in variant.feature_group_order():
        if g.entity == "user":
            cols = [sorted(u.feature_groups.get(g.name)) for u in users]
        else:
            cols = [sorted(q.category_ids) for q in queries]
        groups[g.name] = _Segments.pack(cols)
    return groups


def pack_batch(instances: Sequence[SfInstance] | Sequence[AdInstance],
               task: str, variant: ModelVariant) -> PackedBatch:
    if not instances:
        raise ValueError("empty batch")
    users = [inst.user for inst in instances]
    queries = [inst.query for inst in instances]
    labels = np.array([inst.label for inst in instances], dtype=float)
    user_seg = _Segments.pack([_user_ids(u) for u in users])
    query_seg = _Segments.pack([sorted(q.keywords) for q in queries])
    target = title = None
    if task == MAIN:
        target = _Segments.pack([sorted(inst.sf) for inst in instances])  # type: ignore[union-attr]
    elif task == AUX:
        title = _Segments.pack([list(inst.ad.title_keywords) for inst in instances])  # type: ignore[union-attr]
    else:
        raise ValueError(f"unknown task {task!r}")
    return PackedBatch(task=task, size=len(instances), labels=labels,
                       user=user_seg, query=query_seg, target=target, title=title,
                       groups=_group_segments(variant, users, queries))


# ---------------------------------------------------------------------------
# Forward

def _segment_sum(values: np.ndarray, segs: _Segments) -> np.ndarray:
    """Per-segment sums for the contiguous batch layout (zero-count safe)."""
    n = segs.counts.shape[0]
    out = np.zeros((n,) + values.shape[1:])
    if values.shape[0] == 0:
        return out
    ends = np.cumsum(segs.counts)
    valid = segs.counts > 0
    cs = np.cumsum(values, axis=0)
    upper = cs[ends[valid] - 1]
    starts = ends[valid] - segs.counts[valid]
    lower = np.where(_column(starts > 0, values.ndim), cs[np.maximum(starts - 1, 0)], 0.0)
    out[valid] = upper - lower
    return out


def _column(mask: np.ndarray, ndim: int) -> np.ndarray:
    return mask[:, None] if ndim == 2 else mask


def _scatter_add_rows(out: np.ndarray, rows_idx: np.ndarray, values: np.ndarray) -> None:
    """out[rows_idx[i]] += values[i], with duplicate row indices accumulated."""
    if rows_idx.shape[0] == 0:
        return
    order = np.argsort(rows_idx, kind="stable")
    sorted_rows = rows_idx[order]
    starts = np.flatnonzero(np.r_[True, sorted_rows[1:] != sorted_rows[:-1]])
    out[sorted_rows[starts]] += np.add.reduceat(values[order], starts, axis=0)


def _segment_mean(table: np.ndarray, segs: _Segments, n: int) -> np.ndarray:
    rows = table[segs.flat]
    sums = _segment_sum(rows, segs)
    safe = np.maximum(segs.counts.astype(float), 1.0)
    return sums / safe[:, None]  # zero-count segments stay all-zero


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class AttentionTrace:
    title_rows: np.ndarray   # (n, E) looked-up title embeddings
    tanh_pre: np.ndarray     # (n, E) tanh of W_u e_u + W_q e_q + W_a Em(d_j)
    scores: np.ndarray       # (n,) raw scores b_j
    weights: np.ndarray      # (n,) softmax weights alpha_j


@dataclass
class BatchTrace:
    task: str
    e_u: np.ndarray
    e_q: np.ndarray
    e_t: np.ndarray
    group_means: dict[str, np.ndarray]
    x: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    h2: np.ndarray
    logits: np.ndarray
    probabilities: np.ndarray
    attention: AttentionTrace | None = None


@dataclass
class ForwardTrace:
    """Per-instance view of the cached activations."""

    task: str
    e_u: np.ndarray
    e_q: np.ndarray
    e_t: np.ndarray
    x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    probability: float
    attention_scores: np.ndarray | None = None
    attention_weights: np.ndarray | None = None


def _attention_pool_packed(params: NetworkParams, title: _Segments,
                           e_u: np.ndarray, e_q: np.ndarray,
                           n: int) -> tuple[np.ndarray, AttentionTrace]:
    if np.any(title.counts == 0):
        raise ValueError("empty ad title")
    rows = params.keyword_emb[title.flat]                      # (n_words, E)
    proj = e_u @ params.att_wu.T + e_q @ params.att_wq.T       # (B, E)
    tanh_pre = np.tanh(proj[title.seg] + rows @ params.att_wa.T)
    scores = tanh_pre @ params.att_z                           # (n_words,)
    # segment softmax with max subtraction (titles are never empty)
    starts = np.cumsum(title.counts) - title.counts
    seg_max = np.maximum.reduceat(scores, starts)
    exp = np.exp(scores - seg_max[title.seg])
    denom = _segment_sum(exp, title)
    weights = exp / denom[title.seg]
    pooled = _segment_sum(weights[:, None] * rows, title)
    return pooled, AttentionTrace(title_rows=rows, tanh_pre=tanh_pre,
                                  scores=scores, weights=weights)


def _trunk_forward(params: NetworkParams, task: str, x: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    z1 = x @ params.fc1_w + params.fc1_b
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params.fc2_w + params.fc2_b
    h2 = np.maximum(z2, 0.0)
    if task == MAIN:
        w, b = params.head_main_w, params.head_main_b
    else:
        if not params.variant.has_aux:
            raise ValueError("variant lacks auxiliary head")
        w, b = params.head_aux_w, params.head_aux_b
    logits = h2 @ w + b[0]
    return z1, h1, z2, h2, logits, _sigmoid(logits)


def forward_batch(params: NetworkParams, batch: PackedBatch) -> BatchTrace:
    if batch.task == AUX and not params.variant.has_aux:
        raise ValueError("variant lacks auxiliary head")
    n = batch.size
    e_u = _segment_mean(params.keyword_emb, batch.user, n)
    e_q = _segment_mean(params.keyword_emb, batch.query, n)
    attention = None
    if batch.task == MAIN:
        e_t = _segment_mean(params.keyword_emb, batch.target, n)
    else:
        e_t, attention = _attention_pool_packed(params, batch.title, e_u, e_q, n)
    parts = [e_u, e_q, e_t]
    group_means: dict[str, np.ndarray] = {}
    for g in params.variant.feature_group_order():
        pooled = _segment_mean(params.feature_emb[g.name], batch.groups[g.name], n)
        group_means[g.name] = pooled
        parts.append(pooled)
    x = np.concatenate(parts, axis=1)
    z1, h1, z2, h2, logits, probs = _trunk_forward(params, batch.task, x)
    return BatchTrace(task=batch.task, e_u=e_u, e_q=e_q, e_t=e_t,
                      group_means=group_means, x=x, z1=z1, h1=h1, z2=z2, h2=h2,
                      logits=logits, probabilities=probs, attention=attention)


def forward(params: NetworkParams, task: str,
            instance: SfInstance | AdInstance) -> ForwardTrace:
    """Single-instance forward pass returning the cached activations."""
    batch = pack_batch([instance], task, params.variant)
    tr = forward_batch(params, batch)
    return ForwardTrace(
        task=task, e_u=tr.e_u[0], e_q=tr.e_q[0], e_t=tr.e_t[0], x=tr.x[0],
        h1=tr.h1[0], h2=tr.h2[0], probability=float(tr.probabilities[0]),
        attention_scores=None if tr.attention is None else tr.attention.scores,
        attention_weights=None if tr.attention is None else tr.attention.weights)


def embed_and_pool(ids, table: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the table rows indexed by a non-empty id set."""
    ids = sorted(set(ids))
    if not ids:
        raise ValueError("empty id set")
    if ids[0] < 0 or ids[-1] >= table.shape[0]:
        raise ValueError(f"id out of range for table with {table.shape[0]} rows")
    return table[ids].mean(axis=0)


def attention_pool(title_ids: Sequence[int], e_u: np.ndarray, e_q: np.ndarray,
                   params: NetworkParams) -> tuple[np.ndarray, np.ndarray]:
    """Attention-weighted pooling of title-word embeddings; returns (e_a, weights)."""
    if len(title_ids) == 0:
        raise ValueError("empty title")
    segs = _Segments.pack([list(title_ids)])
    pooled, trace = _attention_pool_packed(params, segs, e_u[None, :], e_q[None, :], 1)
    return pooled[0], trace.weights


# ---------------------------------------------------------------------------
# Loss and backward

def loss(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy with predictions clamped away from {0, 1}."""
    p = np.asarray(probabilities, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    pc = np.clip(p, PRED_CLAMP, 1.0 - PRED_CLAMP)
    return float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))


def backward_batch(params: NetworkParams, batch: PackedBatch,
                   trace: BatchTrace) -> dict[str, np.ndarray]:
    """Analytic gradients of the batch-mean cross-entropy over theta(task).

    Embedding gradients accumulate only into looked-up rows; tensors outside
    the task's parameter set are absent from the result.
    """
    n = batch.size
    y = batch.labels
    p = trace.probabilities
    inside = (p > PRED_CLAMP) & (p < 1.0 - PRED_CLAMP)
    g_logit = np.where(inside, p - y, 0.0) / n

    head_w = params.head_main_w if batch.task == MAIN else params.head_aux_w
    g_head_w = trace.h2.T @ g_logit
    g_head_b = np.array([g_logit.sum()])
    g_h2 = g_logit[:, None] * head_w[None, :]
    g_z2 = g_h2 * (trace.z2 > 0)
    g_fc2_w = trace.h1.T @ g_z2
    g_fc2_b = g_z2.sum(axis=0)
    g_h1 = g_z2 @ params.fc2_w.T
    g_z1 = g_h1 * (trace.z1 > 0)
    g_fc1_w = trace.x.T @ g_z1
    g_fc1_b = g_z1.sum(axis=0)
    g_x = g_z1 @ params.fc1_w.T

    e = params.dims.keyword_dim
    g_eu = g_x[:, :e]
    g_eq = g_x[:, e:2 * e]
    g_et = g_x[:, 2 * e:3 * e]

    grads: dict[str, np.ndarray] = {
        "fc1_w": g_fc1_w, "fc1_b": g_fc1_b, "fc2_w": g_fc2_w, "fc2_b": g_fc2_b}
    if batch.task == MAIN:
        grads["head_main_w"], grads["head_main_b"] = g_head_w, g_head_b
    else:
        grads["head_aux_w"], grads["head_aux_b"] = g_head_w, g_head_b

    # feature-group tables
    offset = 3 * e
    f = params.dims.feature_dim
    for g in params.variant.feature_group_order():
        g_pool = g_x[:, offset:offset + f]
        offset += f
        segs = batch.groups[g.name]
        counts = np.maximum(segs.counts.astype(float), 1.0)
        g_tab = np.zeros_like(params.feature_emb[g.name])
        _scatter_add_rows(g_tab, segs.flat, (g_pool / counts[:, None])[segs.seg])
        grads[f"feature_emb/{g.name}"] = g_tab

    emb_rows = [batch.user.flat, batch.query.flat]
    emb_vals = [(g_eu / batch.user.counts[:, None])[batch.user.seg],
                (g_eq / batch.query.counts[:, None])[batch.query.seg]]

    if batch.task == AUX:
        att = trace.attention
        title = batch.title
        rows, weights = att.title_rows, att.weights
        # e_a = sum_j alpha_j * m_j
        g_ea_rows = g_et[title.seg]                                  # (n_words, E)
        u_val = np.einsum("ij,ij->i", g_ea_rows, rows)               # dL/dalpha
        seg_dot = _segment_sum(weights * u_val, title)
        g_b = weights * (u_val - seg_dot[title.seg])                 # softmax backward
        g_tanh = g_b[:, None] * params.att_z[None, :]
        g_pre = g_tanh * (1.0 - att.tanh_pre ** 2)
        grads["att_z"] = att.tanh_pre.T @ g_b
        grads["att_wa"] = g_pre.T @ rows
        g_proj = _segment_sum(g_pre, title)                          # (B, E)
        grads["att_wu"] = g_proj.T @ trace.e_u
        grads["att_wq"] = g_proj.T @ trace.e_q
        emb_vals[0] += (g_proj @ params.att_wu / batch.user.counts[:, None])[batch.user.seg]
        emb_vals[1] += (g_proj @ params.att_wq / batch.query.counts[:, None])[batch.query.seg]
        emb_rows.append(title.flat)
        emb_vals.append(weights[:, None] * g_ea_rows + g_pre @ params.att_wa)
    else:
        emb_rows.append(batch.target.flat)
        emb_vals.append((g_et / batch.target.counts[:, None])[batch.target.seg])

    g_emb = np.zeros_like(params.keyword_emb)
    _scatter_add_rows(g_emb, np.concatenate(emb_rows), np.concatenate(emb_vals))
    grads["keyword_emb"] = g_emb
    return grads


def batch_loss_and_grads(params: NetworkParams, batch: PackedBatch
                         ) -> tuple[float, dict[str, np.ndarray]]:
    trace = forward_batch(params, batch)
    return loss(trace.probabilities, batch.labels), backward_batch(params, batch, trace)


# ---------------------------------------------------------------------------
# Scoring

def predict_sp_scores(params: NetworkParams, user: UserRepr, query: Query,
                      sp_candidates: Sequence[frozenset[int]] | Sequence[Sequence[int]]
                      ) -> np.ndarray:
    """Main-task attraction probability for each candidate SP phrase.

    The user and query channels are pooled once and reused across candidates;
    the score depends on (user, query, phrase) only, never on an owning ad.
    """
    if len(sp_candidates) == 0:
        raise ValueError("empty candidate list")
    m = len(sp_candidates)
    e_u = embed_and_pool(_user_ids(user), params.keyword_emb)
    e_q = embed_and_pool(sorted(query.keywords), params.keyword_emb)
    target = _Segments.pack([sorted(set(c)) for c in sp_candidates])
    if np.any(target.counts == 0):
        raise ValueError("empty SP phrase")
    e_t = _segment_mean(params.keyword_emb, target, m)
    parts = [np.broadcast_to(e_u, (m, e_u.size)), np.broadcast_to(e_q, (m, e_q.size)), e_t]
    for g in params.variant.feature_group_order():
        if g.entity == "user":
            active = sorted(user.feature_groups.get(g.name))
        else:
            active = sorted(query.category_ids)
        table = params.feature_emb[g.name]
        pooled = table[active].mean(axis=0) if active else np.zeros(table.shape[1])
        parts.append(np.broadcast_to(pooled, (m, pooled.size)))
    x = np.concatenate(parts, axis=1)
    *_, probs = _trunk_forward(params, MAIN, x)
    return probs


def score_sf_instances(params: NetworkParams, instances: Sequence[SfInstance],
                       batch_size: int = 2048) -> np.ndarray:
    """Main-task probabilities for a list of SF instances, in order."""
    scores = np.empty(len(instances))
    for start in range(0, len(instances), batch_size):
        chunk = instances[start:start + batch_size]
        batch = pack_batch(chunk, MAIN, params.variant)
        scores[start:start + len(chunk)] = forward_batch(params, batch).probabilities
    return scores
