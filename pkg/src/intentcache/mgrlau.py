"""Gated recurrent scorer with multi-head learnable attention.

Each candidate is scored from a short input sequence ``[query features,
intent one-hot, candidate features]``.  The recurrent cell uses separate
input and recurrent weights for the reset gate, update gate and candidate
state.  Its output step is ``(1 - u) * h_prev + r * c``, with the second
term gated by the reset gate.  ``standard_gru=True`` switches to the usual
``u * c``.  Heads attend over the hidden trajectory with per-head
projections and a learnable gain, are concatenated and mapped back by an
output transform.  The last attended state is dotted with a projection of
the candidate features.

Forward and backward passes are batched over candidates.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .encoder import softmax_rows, unispec_init
from .errors import TrainingError
from .serialization import read_params, write_params

GRU_NAMES = ("w_rx", "w_rh", "w_ux", "w_uh", "w_cx", "w_ch")
MHA_NAMES = ("w_q", "w_k", "w_v", "gains", "l_out")


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class GruParams:
    w_rx: np.ndarray  # (m, D)
    w_rh: np.ndarray  # (m, m)
    w_ux: np.ndarray
    w_uh: np.ndarray
    w_cx: np.ndarray
    w_ch: np.ndarray

    @property
    def hidden(self) -> int:
        return self.w_rh.shape[0]

    @property
    def input_width(self) -> int:
        return self.w_rx.shape[1]


@dataclass
class MhaLahParams:
    w_q: np.ndarray  # (heads, m, head_dim)
    w_k: np.ndarray
    w_v: np.ndarray
    gains: np.ndarray  # (heads,)
    l_out: np.ndarray  # (heads * head_dim, m_out)

    @property
    def heads(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.w_q.shape[2]


@dataclass
class MgrLau:
    gru: GruParams
    mha: MhaLahParams
    proj: np.ndarray  # (m_out, D)
    standard_gru: bool = False
    use_attention: bool = True

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"gru.{n}": getattr(self.gru, n) for n in GRU_NAMES}
        out.update({f"mha.{n}": getattr(self.mha, n) for n in MHA_NAMES})
        out["proj"] = self.proj
        return out

    def copy(self) -> "MgrLau":
        return MgrLau(
            gru=GruParams(*(getattr(self.gru, n).copy() for n in GRU_NAMES)),
            mha=MhaLahParams(*(getattr(self.mha, n).copy() for n in MHA_NAMES)),
            proj=self.proj.copy(),
            standard_gru=self.standard_gru,
            use_attention=self.use_attention,
        )

    def ablated(self) -> "MgrLau":
        """Same weights, attention replaced by the identity on the final state."""
        m = self.copy()
        m.use_attention = False
        return m


def init_mgrlau(
    input_width: int,
    hidden: int = 32,
    heads: int = 4,
    head_dim: int = 8,
    seed: int = 0,
    a: float = -0.5,
    b: float = 0.5,
    standard_gru: bool = False,
) -> MgrLau:
    seeds = iter(range(seed * 1000 + 1, seed * 1000 + 1000))

    def mat(rows, cols):
        return unispec_init(rows, cols, a, b, next(seeds))

    gru = GruParams(
        w_rx=mat(hidden, input_width), w_rh=mat(hidden, hidden),
        w_ux=mat(hidden, input_width), w_uh=mat(hidden, hidden),
        w_cx=mat(hidden, input_width), w_ch=mat(hidden, hidden),
    )
    mha = MhaLahParams(
        w_q=np.stack([mat(hidden, head_dim) for _ in range(heads)]),
        w_k=np.stack([mat(hidden, head_dim) for _ in range(heads)]),
        w_v=np.stack([mat(hidden, head_dim) for _ in range(heads)]),
        gains=np.ones(heads),
        l_out=mat(heads * head_dim, hidden),
    )
    return MgrLau(gru=gru, mha=mha, proj=mat(hidden, input_width), standard_gru=standard_gru)


def zeros_mgrlau(input_width: int, hidden: int = 32, heads: int = 4, head_dim: int = 8) -> MgrLau:
    model = init_mgrlau(input_width, hidden, heads, head_dim)
    for arr in model.arrays().values():
        arr[...] = 0.0
    return model


# ---------------------------------------------------------------------------
# single-step operations
# ---------------------------------------------------------------------------

def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite value in recurrent step")


def gates(params: GruParams, x, h_prev) -> tuple[np.ndarray, np.ndarray]:
    """Reset and update gates."""
    x, h_prev = np.asarray(x, dtype=np.float64), np.asarray(h_prev, dtype=np.float64)
    _check_finite(x, h_prev)
    r = sigmoid(x @ params.w_rx.T + h_prev @ params.w_rh.T)
    u = sigmoid(x @ params.w_ux.T + h_prev @ params.w_uh.T)
    return r, u


def candidate(params: GruParams, x, r, h_prev) -> np.ndarray:
    return np.tanh(np.asarray(x) @ params.w_cx.T + np.asarray(r) * (np.asarray(h_prev) @ params.w_ch.T))


def output_step(u, r, h_prev, cand, standard: bool = False) -> np.ndarray:
    u, r, h_prev, cand = (np.asarray(v, dtype=np.float64) for v in (u, r, h_prev, cand))
    if standard:
        return (1.0 - u) * h_prev + u * cand
    return (1.0 - u) * h_prev + r * cand


def mha_lah(params: MhaLahParams, h: np.ndarray, return_heads: bool = False):
    """Per-head gained self-attention over ``h`` (T, m), concatenated and
    mapped through the output transform."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ValueError("mha_lah needs a non-empty (T, m) sequence")
    blocks = []
    for v in range(params.heads):
        q, k, val = h @ params.w_q[v], h @ params.w_k[v], h @ params.w_v[v]
        a = softmax_rows(q @ k.T / math.sqrt(params.head_dim))
        blocks.append(params.gains[v] * (a @ val))
    concat = np.concatenate(blocks, axis=1)
    out = concat @ params.l_out
    return (out, concat) if return_heads else out


# ---------------------------------------------------------------------------
# batched forward / backward
# ---------------------------------------------------------------------------

@dataclass
class _Cache:
    x: np.ndarray  # (B, T, D)
    hs: list  # h_0 .. h_T, each (B, m)
    steps: list  # per step (r, u, c, hc)
    h: np.ndarray  # (B, T, m)
    heads: list = field(default_factory=list)  # per head (q, k, v, a, o)
    concat: np.ndarray | None = None
    final: np.ndarray | None = None
    cand_proj: np.ndarray | None = None


def forward(model: MgrLau, x: np.ndarray) -> tuple[np.ndarray, _Cache]:
    """Scores for a batch of input sequences ``x`` (B, T, D); the last step
    of each sequence is the candidate's own feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input features")
    g = model.gru
    bsz, steps, _ = x.shape
    h = np.zeros((bsz, g.hidden))
    hs, cache_steps = [h], []
    for t in range(steps):
        xt = x[:, t, :]
        r = sigmoid(xt @ g.w_rx.T + h @ g.w_rh.T)
        u = sigmoid(xt @ g.w_ux.T + h @ g.w_uh.T)
        hc = h @ g.w_ch.T
        c = np.tanh(xt @ g.w_cx.T + r * hc)
        h = (1.0 - u) * h + (u if model.standard_gru else r) * c
        hs.append(h)
        cache_steps.append((r, u, c, hc))
    hseq = np.stack(hs[1:], axis=1)  # (B, T, m)
    cache = _Cache(x=x, hs=hs, steps=cache_steps, h=hseq)
    if model.use_attention:
        mp = model.mha
        blocks = []
        scale = 1.0 / math.sqrt(mp.head_dim)
        for v in range(mp.heads):
            q = hseq @ mp.w_q[v]
            k = hseq @ mp.w_k[v]
            val = hseq @ mp.w_v[v]
            a = softmax_rows(q @ np.swapaxes(k, 1, 2) * scale)
            o = a @ val
            cache.heads.append((q, k, val, a, o))
            blocks.append(mp.gains[v] * o)
        cache.concat = np.concatenate(blocks, axis=2)
        final = (cache.concat @ mp.l_out)[:, -1, :]
    else:
        final = hseq[:, -1, :]
    cand_proj = x[:, -1, :] @ model.proj.T
    cache.final, cache.cand_proj = final, cand_proj
    return (final * cand_proj).sum(axis=1), cache


def backward(model: MgrLau, cache: _Cache, dscores: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of ``sum(dscores * scores)`` with respect to every array."""
    g, mp = model.gru, model.mha
    grads = {name: np.zeros_like(arr) for name, arr in model.arrays().items()}
    ds = np.asarray(dscores, dtype=np.float64)[:, None]
    d_final = ds * cache.cand_proj
    grads["proj"] = (ds * cache.final).T @ cache.x[:, -1, :]

    bsz, steps, m = cache.h.shape
    dh_seq = np.zeros_like(cache.h)
    if model.use_attention:
        hd = mp.head_dim
        scale = 1.0 / math.sqrt(hd)
        dy = np.zeros((bsz, steps, mp.l_out.shape[1]))
        dy[:, -1, :] = d_final
        grads["mha.l_out"] = np.einsum("btk,btm->km", cache.concat, dy)
        dconcat = dy @ mp.l_out.T
        for v in range(mp.heads):
            q, k, val, a, o = cache.heads[v]
            dblock = dconcat[:, :, v * hd : (v + 1) * hd]
            grads["mha.gains"][v] = float((dblock * o).sum())
            do = mp.gains[v] * dblock
            da = do @ np.swapaxes(val, 1, 2)
            dval = np.swapaxes(a, 1, 2) @ do
            dsc = a * (da - (da * a).sum(axis=2, keepdims=True)) * scale
            dq = dsc @ k
            dk = np.swapaxes(dsc, 1, 2) @ q
            grads["mha.w_q"][v] = np.einsum("btm,bth->mh", cache.h, dq)
            grads["mha.w_k"][v] = np.einsum("btm,bth->mh", cache.h, dk)
            grads["mha.w_v"][v] = np.einsum("btm,bth->mh", cache.h, dval)
            dh_seq += dq @ mp.w_q[v].T + dk @ mp.w_k[v].T + dval @ mp.w_v[v].T
    else:
        dh_seq[:, -1, :] = d_final

    dh_next = np.zeros((bsz, m))
    for t in range(steps - 1, -1, -1):
        r, u, c, hc = cache.steps[t]
        h_prev = cache.hs[t]
        xt = cache.x[:, t, :]
        dh = dh_seq[:, t, :] + dh_next
        if model.standard_gru:
            du = dh * (c - h_prev)
            dc = dh * u
            dr = np.zeros_like(r)
        else:
            du = -dh * h_prev
            dc = dh * r
            dr = dh * c
        dh_prev = dh * (1.0 - u)
        dac = dc * (1.0 - c * c)
        dr = dr + dac * hc
        dhc = dac * r
        grads["gru.w_cx"] += dac.T @ xt
        grads["gru.w_ch"] += dhc.T @ h_prev
        dh_prev += dhc @ g.w_ch
        dar = dr * r * (1.0 - r)
        grads["gru.w_rx"] += dar.T @ xt
        grads["gru.w_rh"] += dar.T @ h_prev
        dh_prev += dar @ g.w_rh
        dau = du * u * (1.0 - u)
        grads["gru.w_ux"] += dau.T @ xt
        grads["gru.w_uh"] += dau.T @ h_prev
        dh_prev += dau @ g.w_uh
        dh_next = dh_prev
    return grads


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------

@dataclass
class QueryInputs:
    """Shared leading steps of the input sequence for one query."""

    query_features: np.ndarray  # (D,)
    intent_step: np.ndarray  # (D,)


def intent_step(intent: str, width: int) -> np.ndarray:
    step = np.zeros(width)
    step[("I", "N", "T").index(intent)] = 1.0
    return step


def build_sequences(q: QueryInputs, candidates: np.ndarray) -> np.ndarray:
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    n = candidates.shape[0]
    lead = np.broadcast_to(np.stack([q.query_features, q.intent_step]), (n, 2, candidates.shape[1]))
    return np.concatenate([lead, candidates[:, None, :]], axis=1)


@dataclass
class RetrievalResult:
    ids: list[int]
    scores: list[float]
    latency_ms: float

    @property
    def top(self) -> int:
        return self.ids[0]


def rank(ids: list[int], scores: np.ndarray) -> tuple[list[int], list[float]]:
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [ids[i] for i in order], [float(scores[i]) for i in order]


def process_query(model: MgrLau, q: QueryInputs, candidate_ids: list[int], candidates: np.ndarray) -> RetrievalResult:
    if len(candidate_ids) == 0:
        raise ValueError("process_query needs at least one candidate")
    t0 = time.perf_counter()
    scores, _ = forward(model, build_sequences(q, candidates))
    ids, ranked = rank(list(candidate_ids), scores)
    return RetrievalResult(ids=ids, scores=ranked, latency_ms=(time.perf_counter() - t0) * 1000.0)


def plain_gru_ablation(model: MgrLau, q: QueryInputs, candidate_ids: list[int], candidates: np.ndarray) -> RetrievalResult:
    return process_query(model.ablated(), q, candidate_ids, candidates)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainingQuery:
    inputs: QueryInputs
    relevant: set[int]


def hinge_loss_and_dscores(
    scores: np.ndarray, ids: list[int], relevant: set[int], negatives: list[int] | None, margin: float = 1.0
) -> tuple[float, np.ndarray, int]:
    """Summed pairwise hinge loss, its score gradient and the number of pairs."""
    pos = [i for i, cid in enumerate(ids) if cid in relevant]
    neg = negatives if negatives is not None else [i for i, cid in enumerate(ids) if cid not in relevant]
    ds = np.zeros_like(scores)
    loss = 0.0
    for p in pos:
        for n in neg:
            viol = margin - scores[p] + scores[n]
            if viol > 0:
                loss += viol
                ds[p] -= 1.0
                ds[n] += 1.0
    return loss, ds, len(pos) * len(neg)


def train(
    model: MgrLau,
    queries: list[TrainingQuery],
    candidate_ids: list[int],
    candidates: np.ndarray,
    epochs: int,
    lr: float,
    seed: int = 0,
    negatives: int | None = None,
    margin: float = 1.0,
) -> MgrLau:
    """Full-batch gradient descent on the mean pairwise hinge loss.

    ``negatives`` irrelevant candidates are sampled per query each epoch;
    ``None`` uses every irrelevant candidate.
    """
    if not queries:
        raise ValueError("training needs at least one query")
    model = model.copy()
    if epochs <= 0:
        return model
    rng = np.random.default_rng(seed)
    ids = list(candidate_ids)
    seqs = [build_sequences(q.inputs, candidates) for q in queries]
    arrays = model.arrays()
    for epoch in range(epochs):
        total = {name: np.zeros_like(arr) for name, arr in arrays.items()}
        loss, pairs = 0.0, 0
        for q, x in zip(queries, seqs):
            scores, cache = forward(model, x)
            if not np.all(np.isfinite(scores)):
                raise TrainingError(f"non-finite scores at epoch {epoch}; lower the learning rate")
            neg_pool = [i for i, cid in enumerate(ids) if cid not in q.relevant]
            if negatives is not None and negatives < len(neg_pool):
                neg = sorted(rng.choice(neg_pool, size=negatives, replace=False).tolist())
            else:
                neg = neg_pool
            q_loss, ds, q_pairs = hinge_loss_and_dscores(scores, ids, q.relevant, neg, margin)
            loss += q_loss
            pairs += q_pairs
            if q_loss > 0:
                for name, grad in backward(model, cache, ds).items():
                    total[name] += grad
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite ranking loss at epoch {epoch}")
        if pairs == 0 or loss == 0.0:
            break  # every pair already clears the margin
        for name, arr in arrays.items():
            arr -= lr * total[name] / pairs
    return model


def mean_reciprocal_rank(results: list[tuple[list[int], set[int]]]) -> float:
    """MRR of the first relevant id in each ranked list."""
    if not results:
        return 0.0
    total = 0.0
    for ranked, relevant in results:
        for pos, cid in enumerate(ranked, start=1):
            if cid in relevant:
                total += 1.0 / pos
                break
    return total / len(results)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_mgrlau(path, model: MgrLau, seed: int = 0) -> None:
    sections = dict(model.arrays())
    sections["flags"] = np.array([float(model.standard_gru), float(model.use_attention)])
    write_params(path, sections, seed)


def load_mgrlau(path) -> MgrLau:
    sections, _ = read_params(path)
    flags = sections.pop("flags", np.array([0.0, 1.0]))
    return MgrLau(
        gru=GruParams(*(sections[f"gru.{n}"] for n in GRU_NAMES)),
        mha=MhaLahParams(*(sections[f"mha.{n}"] for n in MHA_NAMES)),
        proj=sections["proj"],
        standard_gru=bool(flags[0]),
        use_attention=bool(flags[1]),
    )
