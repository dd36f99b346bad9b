"""Online CBOW embeddings over hostname windows, trained with negative sampling.

Every real (non-PAD) position of a window is a target; its context is the mean
input embedding of all other real tokens in the window.  One call to
:meth:`EmbeddingModel.update` takes a single SGD step on the summed
negative-sampling loss of the window's positions, with all gradients taken at
the parameters as they were before the call.
"""

from __future__ import annotations

import copy
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence as Seq

import numpy as np
from numba import njit

from .splitter import PAD, Sequence

PAD_ID = 0
OOV_ID = 1
OOV = "<oov>"
N_RESERVED = 2

MAGIC = b"NV2V"
FORMAT_VERSION = 1


class DegenerateSequence(ValueError):
    pass


class EmptyContext(ValueError):
    pass


class OutOfRange(IndexError):
    pass


class ModelFileError(Exception):
    pass


class CorruptFile(ModelFileError):
    pass


class VersionMismatch(ModelFileError):
    pass


class Vocabulary:
    def __init__(self, capacity: int = 2**20):
        if capacity < N_RESERVED:
            raise ValueError("capacity must leave room for the reserved ids")
        self.capacity = capacity
        self.id_to_token: list[str] = [PAD, OOV]
        self.token_to_id: dict[str, int] = {}
        self.counts: list[int] = [0, 0]

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def get(self, token: str) -> int | None:
        return self.token_to_id.get(token)

    def lookup(self, token: str) -> int:
        """Id of ``token`` without counting it; PAD maps to 0, unknown to OOV."""
        if token == PAD:
            return PAD_ID
        return self.token_to_id.get(token, OOV_ID)

    def intern(self, token: str) -> int:
        i = self.token_to_id.get(token)
        if i is None:
            if len(self.id_to_token) >= self.capacity:
                self.counts[OOV_ID] += 1
                return OOV_ID
            i = len(self.id_to_token)
            self.token_to_id[token] = i
            self.id_to_token.append(token)
            self.counts.append(0)
        self.counts[i] += 1
        return i


def intern(vocab: Vocabulary, hostname: str) -> int:
    return vocab.intern(hostname)


@dataclass
class TrainStats:
    sequences_seen: int = 0
    tokens_seen: int = 0
    updates: int = 0
    last_loss: float = 0.0


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def ns_loss_and_grads(E_in, E_out, window, targets, negatives, neg_mask=None):
    """Negative-sampling CBOW loss of one window and its sparse gradients.

    window: (m,) token ids of the real tokens, m >= 2.
    targets: (P,) positions into ``window`` that are predicted.
    negatives: (P, k) negative token ids per target; ``neg_mask`` (P, k) marks
    the valid ones.

    Returns ``(losses, in_ids, in_grad, out_ids, out_grad)`` where ``losses``
    holds the per-target loss and the gradients are of ``losses.sum()``.
    Duplicate ids in the index arrays must be accumulated (``np.add.at``).
    Arithmetic is done in float64 whatever the storage dtype.
    """
    window = np.asarray(window)
    targets = np.asarray(targets)
    negatives = np.asarray(negatives).reshape(len(targets), -1)
    m = len(window)
    ctx_n = m - 1
    rows = E_in[window].astype(np.float64)  # (m, d)
    total = rows.sum(axis=0)
    ctx = (total - rows[targets]) / ctx_n  # (P, d)

    tgt_ids = window[targets]
    o_pos = E_out[tgt_ids].astype(np.float64)  # (P, d)
    o_neg = E_out[negatives].astype(np.float64)  # (P, k, d)
    s_pos = np.einsum("pd,pd->p", ctx, o_pos)
    s_neg = np.einsum("pd,pkd->pk", ctx, o_neg)
    if neg_mask is None:
        neg_mask = np.ones(s_neg.shape, dtype=bool)
    w_neg = neg_mask.astype(np.float64)

    losses = _softplus(-s_pos) + (_softplus(s_neg) * w_neg).sum(axis=1)
    g_pos = _sigmoid(s_pos) - 1.0  # dL/ds_pos
    g_neg = _sigmoid(s_neg) * w_neg  # dL/ds_neg

    out_ids = np.concatenate([tgt_ids, negatives.ravel()])
    out_grad = np.concatenate([g_pos[:, None] * ctx, (g_neg[:, :, None] * ctx[:, None, :]).reshape(-1, ctx.shape[1])])

    d_ctx = g_pos[:, None] * o_pos + np.einsum("pk,pkd->pd", g_neg, o_neg)  # (P, d)
    d_ctx /= ctx_n
    # every window position receives the context gradient of every target but itself
    in_grad = np.broadcast_to(d_ctx.sum(axis=0), rows.shape).copy()
    in_grad[targets] -= d_ctx
    return losses, window, in_grad, out_ids, out_grad


@njit(cache=True)
def _softplus1(x):
    if x > 0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True)
def _sgd_window(E_in, E_out, window, targets, negatives, neg_mask, lr):
    """Fused equivalent of ``ns_loss_and_grads`` followed by the SGD step.

    All gradients are read before any row is written.  Returns the summed loss.
    """
    m = window.shape[0]
    d = E_in.shape[1]
    P = targets.shape[0]
    K = negatives.shape[1]
    inv = 1.0 / (m - 1)
    total = np.zeros(d)
    for j in range(m):
        for a in range(d):
            total[a] += E_in[window[j], a]
    ctx = np.empty((P, d))
    d_ctx = np.zeros((P, d))
    g_pos = np.empty(P)
    g_neg = np.zeros((P, K))
    loss = 0.0
    for p in range(P):
        w = window[targets[p]]
        s = 0.0
        for a in range(d):
            ctx[p, a] = (total[a] - E_in[w, a]) * inv
            s += ctx[p, a] * E_out[w, a]
        loss += _softplus1(-s)
        g = 0.5 * (1.0 + np.tanh(0.5 * s)) - 1.0
        g_pos[p] = g
        for a in range(d):
            d_ctx[p, a] += g * E_out[w, a]
        for k in range(K):
            if not neg_mask[p, k]:
                continue
            n = negatives[p, k]
            s = 0.0
            for a in range(d):
                s += ctx[p, a] * E_out[n, a]
            loss += _softplus1(s)
            g = 0.5 * (1.0 + np.tanh(0.5 * s))
            g_neg[p, k] = g
            for a in range(d):
                d_ctx[p, a] += g * E_out[n, a]
    for p in range(P):
        w = window[targets[p]]
        for a in range(d):
            E_out[w, a] -= lr * g_pos[p] * ctx[p, a]
        for k in range(K):
            if neg_mask[p, k]:
                n = negatives[p, k]
                for a in range(d):
                    E_out[n, a] -= lr * g_neg[p, k] * ctx[p, a]
    tpos = np.full(m, -1)
    for p in range(P):
        tpos[targets[p]] = p
    G = np.zeros(d)
    for p in range(P):
        for a in range(d):
            G[a] += d_ctx[p, a]
    for j in range(m):
        w = window[j]
        for a in range(d):
            g = G[a]
            if tpos[j] >= 0:
                g -= d_ctx[tpos[j], a]
            E_in[w, a] -= lr * g * inv
    return loss


def sgd_step_numpy(E_in, E_out, window, targets, negatives, neg_mask, lr):
    """Reference SGD step built on ``ns_loss_and_grads``; returns the summed loss."""
    losses, in_ids, in_grad, out_ids, out_grad = ns_loss_and_grads(E_in, E_out, window, targets, negatives, neg_mask)
    np.add.at(E_out, out_ids, (-lr * out_grad).astype(E_out.dtype))
    np.add.at(E_in, in_ids, (-lr * in_grad).astype(E_in.dtype))
    return float(losses.sum())


class EmbeddingModel:
    """Vocabulary plus input/output embedding matrices, trained online.

    ``init="uniform"`` draws new input rows from U(-0.5/d, 0.5/d); ``init="zero"``
    leaves everything at zero (useful for analytic checks).  Output rows always
    start at zero.
    """

    def __init__(
        self,
        dim: int = 64,
        lr: float = 0.025,
        k_neg: int = 5,
        unigram_power: float = 0.75,
        capacity: int = 2**20,
        seed: int = 0,
        init: str = "uniform",
        newest_only: bool = False,
        subsample: float = 0.0,
        table_refresh: int = 1024,
    ):
        if init not in ("uniform", "zero"):
            raise ValueError(f"unknown init {init!r}")
        self.dim = dim
        self.lr = lr
        self.k_neg = k_neg
        self.unigram_power = unigram_power
        self.seed = seed
        self.init = init
        self.newest_only = newest_only
        self.subsample = subsample
        self.table_refresh = table_refresh
        self.vocab = Vocabulary(capacity)
        self.stats = TrainStats()
        self.rng = np.random.Generator(np.random.PCG64(seed))
        rows = 64
        self._in = np.zeros((rows, dim), dtype=np.float32)
        self._out = np.zeros((rows, dim), dtype=np.float32)
        self._cdf = np.zeros(0)
        self._table_built_size = 0
        self._since_refresh = 0

    # -- storage -----------------------------------------------------------------

    @property
    def size(self) -> int:
        return len(self.vocab)

    @property
    def E_in(self) -> np.ndarray:
        return self._in[: self.size]

    @property
    def E_out(self) -> np.ndarray:
        return self._out[: self.size]

    def _grow(self, need: int) -> None:
        rows = self._in.shape[0]
        if need <= rows:
            return
        while rows < need:
            rows *= 2
        for name in ("_in", "_out"):
            old = getattr(self, name)
            new = np.zeros((rows, self.dim), dtype=np.float32)
            new[: old.shape[0]] = old
            setattr(self, name, new)

    def intern(self, hostname: str) -> int:
        before = self.size
        i = self.vocab.intern(hostname)
        if self.size > before:
            self._grow(self.size)
            if self.init == "uniform":
                half = 0.5 / self.dim
                self._in[i] = self.rng.uniform(-half, half, self.dim)
        return i

    def token_id(self, hostname: str) -> int | None:
        return self.vocab.get(hostname)

    # -- negative sampling ---------------------------------------------------------

    def _refresh_table(self) -> None:
        counts = np.asarray(self.vocab.counts[N_RESERVED:], dtype=np.float64)
        self._cdf = np.cumsum(counts**self.unigram_power)
        self._table_built_size = self.size
        self._since_refresh = 0

    def _table_stale(self) -> bool:
        return (
            self._since_refresh >= self.table_refresh
            or self.size > self._table_built_size * 1.01
        )

    def _sample_negatives(self, tgt_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        shape = (len(tgt_ids), self.k_neg)
        if len(self._cdf) == 0 or self._cdf[-1] <= 0:
            return np.full(shape, OOV_ID), np.zeros(shape, dtype=bool)
        top = self._cdf[-1]
        neg = np.searchsorted(self._cdf, self.rng.random(shape) * top, side="right") + N_RESERVED
        bad = neg == tgt_ids[:, None]
        for _ in range(8):
            if not bad.any():
                break
            neg[bad] = np.searchsorted(self._cdf, self.rng.random(int(bad.sum())) * top, side="right") + N_RESERVED
            bad = neg == tgt_ids[:, None]
        return neg, ~bad

    # -- training ------------------------------------------------------------------

    def _window_ids(self, seq) -> list[str]:
        tokens = seq.real_tokens if isinstance(seq, Sequence) else [t for t in seq if t != PAD]
        return list(tokens)

    def update(self, seq: Sequence | Seq[str]) -> float:
        """One SGD step on a window; returns the mean per-target loss."""
        tokens = self._window_ids(seq)
        if len(tokens) < 2:
            raise DegenerateSequence(f"need >= 2 real tokens, got {len(tokens)}")
        window = np.fromiter((self.intern(t) for t in tokens), dtype=np.int64, count=len(tokens))
        self.stats.sequences_seen += 1
        self.stats.tokens_seen += len(tokens)

        if self.newest_only:
            targets = np.array([len(window) - 1]) if window[-1] != OOV_ID else np.zeros(0, dtype=np.int64)
        else:
            targets = np.flatnonzero(window != OOV_ID)
        if self.subsample > 0 and len(targets):
            targets = self._subsample(window, targets)
        if len(targets) == 0:
            self.stats.last_loss = 0.0
            return 0.0

        if self._table_stale():
            self._refresh_table()
        self._since_refresh += 1
        neg, mask = self._sample_negatives(window[targets])
        loss = _sgd_window(self._in, self._out, window, targets.astype(np.int64), neg.astype(np.int64), mask,
                           float(self.lr)) / len(targets)
        self.stats.updates += 1
        self.stats.last_loss = loss
        return loss

    def _subsample(self, window, targets):
        counts = np.asarray(self.vocab.counts, dtype=np.float64)
        freq = counts[window[targets]] / max(counts.sum(), 1.0)
        keep_p = np.minimum(1.0, np.sqrt(self.subsample / np.maximum(freq, 1e-12)))
        return targets[self.rng.random(len(targets)) < keep_p]

    def fit(self, sequences: Iterable[Sequence]) -> EmbeddingModel:
        for seq in sequences:
            try:
                self.update(seq)
            except DegenerateSequence:
                pass
        return self

    # -- queries -------------------------------------------------------------------

    def context_vector(self, context: Iterable[str | int]) -> np.ndarray:
        ids = []
        for c in context:
            i = c if isinstance(c, (int, np.integer)) else self.vocab.lookup(c)
            if i != PAD_ID:
                if not 0 <= i < self.size:
                    raise OutOfRange(i)
                ids.append(i)
        if not ids:
            raise EmptyContext("no real context tokens")
        return self.E_in[ids].astype(np.float64).mean(axis=0)

    def predict_scores(self, context: Iterable[str | int]) -> np.ndarray:
        """Full softmax over the non-reserved vocabulary; reserved ids score 0."""
        c = self.context_vector(context)
        scores = np.zeros(self.size)
        if self.size <= N_RESERVED:
            return scores
        logits = self.E_out[N_RESERVED:].astype(np.float64) @ c
        logits -= logits.max()
        p = np.exp(logits)
        scores[N_RESERVED:] = p / p.sum()
        return scores

    def predict(self, context: Iterable[str | int]) -> str:
        return self.vocab.id_to_token[int(np.argmax(self.predict_scores(context)))]

    def embedding(self, token_id: int) -> np.ndarray:
        if not 0 <= token_id < self.size:
            raise OutOfRange(token_id)
        return self.E_in[token_id].copy()

    def snapshot(self) -> EmbeddingModel:
        return copy.deepcopy(self)

    # -- persistence ---------------------------------------------------------------

    def to_bytes(self) -> bytes:
        V, d = self.size, self.dim
        bg = self.rng.bit_generator.state
        st, inc = bg["state"]["state"], bg["state"]["inc"]
        m64 = (1 << 64) - 1
        parts = [
            MAGIC,
            struct.pack(
                "<IIQQdIdQBBdI",
                FORMAT_VERSION, d, V, self.vocab.capacity, self.lr, self.k_neg,
                self.unigram_power, self.seed, self.init == "zero", self.newest_only,
                self.subsample, self.table_refresh,
            ),
            struct.pack(
                "<QQQdQQ",
                self.stats.sequences_seen, self.stats.tokens_seen, self.stats.updates,
                self.stats.last_loss, self._since_refresh, self._table_built_size,
            ),
            struct.pack("<QQQQBI", st >> 64, st & m64, inc >> 64, inc & m64, bg["has_uint32"], bg["uinteger"]),
            struct.pack(f"<{V}Q", *self.vocab.counts),
        ]
        for tok in self.vocab.id_to_token[N_RESERVED:]:
            raw = tok.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<Q", len(self._cdf)))
        parts.append(self._cdf.astype("<f8").tobytes())
        parts.append(self.E_in.astype("<f4").tobytes())
        parts.append(self.E_out.astype("<f4").tobytes())
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> EmbeddingModel:
        if len(data) < 8 or data[:4] != MAGIC:
            raise CorruptFile("not a model file")
        (version,) = struct.unpack_from("<I", data, 4)
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"model format version {version}, expected {FORMAT_VERSION}")
        body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
        if zlib.crc32(body) != crc:
            raise CorruptFile("checksum mismatch")
        try:
            return cls._parse(body)
        except (struct.error, ValueError, UnicodeDecodeError) as exc:
            raise CorruptFile(str(exc)) from None

    @classmethod
    def _parse(cls, body: bytes) -> EmbeddingModel:
        off = 4
        head = struct.Struct("<IIQQdIdQBBdI")
        (_, d, V, cap, lr, k_neg, power, seed, zero, newest, subsample, refresh) = head.unpack_from(body, off)
        off += head.size
        model = cls(dim=d, lr=lr, k_neg=k_neg, unigram_power=power, capacity=cap, seed=seed,
                    init="zero" if zero else "uniform", newest_only=bool(newest),
                    subsample=subsample, table_refresh=refresh)
        stats = struct.Struct("<QQQdQQ")
        seen, toks, upd, last, since, built = stats.unpack_from(body, off)
        off += stats.size
        model.stats = TrainStats(seen, toks, upd, last)
        model._since_refresh, model._table_built_size = since, built
        rs = struct.Struct("<QQQQBI")
        sh, sl, ih, il, has32, uint = rs.unpack_from(body, off)
        off += rs.size
        state = model.rng.bit_generator.state
        state["state"] = {"state": (sh << 64) | sl, "inc": (ih << 64) | il}
        state["has_uint32"], state["uinteger"] = has32, uint
        model.rng.bit_generator.state = state
        model.vocab.counts = list(struct.unpack_from(f"<{V}Q", body, off))
        off += 8 * V
        for i in range(N_RESERVED, V):
            (n,) = struct.unpack_from("<H", body, off)
            tok = body[off + 2: off + 2 + n].decode("utf-8")
            if len(tok.encode()) != n:
                raise CorruptFile("truncated vocabulary")
            off += 2 + n
            model.vocab.token_to_id[tok] = i
            model.vocab.id_to_token.append(tok)
        (tlen,) = struct.unpack_from("<Q", body, off)
        off += 8
        model._cdf = np.frombuffer(body, dtype="<f8", count=tlen, offset=off).astype(np.float64)
        off += 8 * tlen
        model._grow(V)
        for name in ("_in", "_out"):
            mat = np.frombuffer(body, dtype="<f4", count=V * d, offset=off).reshape(V, d)
            getattr(model, name)[:V] = mat
            off += 4 * V * d
        if off != len(body):
            raise CorruptFile("trailing bytes")
        return model

    @classmethod
    def load(cls, path: str | Path) -> EmbeddingModel:
        return cls.from_bytes(Path(path).read_bytes())


def update(model: EmbeddingModel, seq: Sequence) -> float:
    return model.update(seq)


def predict_scores(model: EmbeddingModel, context) -> np.ndarray:
    return model.predict_scores(context)


def embedding(model: EmbeddingModel, token_id: int) -> np.ndarray:
    return model.embedding(token_id)


def save(model: EmbeddingModel, path: str | Path) -> None:
    model.save(path)


def load(path: str | Path) -> EmbeddingModel:
    return EmbeddingModel.load(path)
