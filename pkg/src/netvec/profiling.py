"""User profiles over a category taxonomy.

Two profilers live here: the embedding profiler, which labels hostnames by
k-nearest-neighbour search among the labeled hostnames of the vocabulary, and
the accumulate-everything baseline that keeps each user's full history.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

from .embed import N_RESERVED, EmbeddingModel
from .splitter import PAD, Sequence
from .tuple_gen import InvalidHostname, normalize_hostname


class NoProfile(LookupError):
    pass


class NotInVocabulary(KeyError):
    pass


class EmptyStore(ValueError):
    pass


class TaxonomyMismatch(ValueError):
    pass


class CategoryFileError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class UnknownCategory(CategoryFileError):
    pass


class MalformedLine(CategoryFileError):
    pass


class CategoryTaxonomy:
    def __init__(self, categories: Iterable[str]):
        self.categories = [c.strip() for c in categories]
        if any(not c for c in self.categories):
            raise ValueError("empty category name")
        if len(set(self.categories)) != len(self.categories):
            raise ValueError("duplicate category names")
        self.index = {c: i for i, c in enumerate(self.categories)}

    def __len__(self) -> int:
        return len(self.categories)

    def __eq__(self, other) -> bool:
        return isinstance(other, CategoryTaxonomy) and self.categories == other.categories

    @classmethod
    def load(cls, path: str | Path) -> CategoryTaxonomy:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(l for l in lines if l.strip())

    @classmethod
    def default(cls) -> CategoryTaxonomy:
        text = resources.files("netvec").joinpath("data/iab_tier1.txt").read_text(encoding="utf-8")
        return cls(l for l in text.splitlines() if l.strip())

    def parse_list(self, field_: str) -> list[int]:
        """Split a comma-separated category list.

        Some names contain commas themselves ("Law, Gov't & Politics"), so
        adjacent pieces are merged until they form a known name.
        """
        pieces = field_.split(",")
        out: list[int] = []
        i = 0
        while i < len(pieces):
            name = pieces[i]
            j = i + 1
            while name.strip() not in self.index and j < len(pieces):
                name = name + "," + pieces[j]
                j += 1
            if name.strip() not in self.index:
                raise KeyError(pieces[i].strip())
            out.append(self.index[name.strip()])
            i = j
        return out


@dataclass
class CategoryStore:
    taxonomy: CategoryTaxonomy
    labels: dict[str, frozenset[int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, hostname: str) -> bool:
        return hostname in self.labels

    def get(self, hostname: str) -> frozenset[int] | None:
        return self.labels.get(hostname)

    def indicator(self, hostname: str) -> np.ndarray:
        v = np.zeros(len(self.taxonomy))
        v[list(self.labels[hostname])] = 1.0
        return v

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for host, cats in sorted(self.labels.items()):
                names = ",".join(self.taxonomy.categories[c] for c in sorted(cats))
                fh.write(f"{host}\t{names}\n")


def load_categories(path: str | Path, taxonomy: CategoryTaxonomy) -> CategoryStore:
    store = CategoryStore(taxonomy)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            host, sep, cats = line.partition("\t")
            if not sep or not cats.strip():
                raise MalformedLine(lineno, "expected hostname<TAB>categories")
            try:
                host = normalize_hostname(host, allow_port=False)
            except InvalidHostname as exc:
                raise MalformedLine(lineno, str(exc)) from None
            try:
                ids = taxonomy.parse_list(cats)
            except KeyError as exc:
                raise UnknownCategory(lineno, f"unknown category {exc.args[0]!r}") from None
            store.labels[host] = store.labels.get(host, frozenset()) | frozenset(ids)
    return store


@dataclass
class Profile:
    key: object
    weights: np.ndarray
    support: int
    ts_micros: int = 0

    def top(self, n: int = 3) -> list[int]:
        return [int(i) for i in np.argsort(-self.weights, kind="stable")[:n]]


def _normalized(v: np.ndarray) -> np.ndarray:
    return v / v.sum()


class KnnIndex:
    """Flat exact kNN over the labeled hostnames that are in the model's vocabulary.

    ``metric`` is "cosine" (default) or "dot".  Ties in similarity are broken
    by lower token id.
    """

    def __init__(self, model: EmbeddingModel, store: CategoryStore, k: int = 10, metric: str = "cosine"):
        if k < 1:
            raise ValueError("k must be >= 1")
        if metric not in ("cosine", "dot"):
            raise ValueError(f"unknown metric {metric!r}")
        if len(store) == 0:
            raise EmptyStore("category store is empty")
        self.model = model
        self.store = store
        self.k = k
        self.metric = metric
        ids = sorted(i for h in store.labels if (i := model.token_id(h)) is not None)
        self.ids = np.array(ids, dtype=np.int64)
        self.labeled = {int(i) for i in ids}
        vocab = model.vocab.id_to_token
        C = len(store.taxonomy)
        self.Y = np.zeros((len(ids), C))
        for r, i in enumerate(ids):
            self.Y[r, list(store.labels[vocab[i]])] = 1.0
        self.U = self._prep(model.E_in[self.ids].astype(np.float64))
        self._matrix: np.ndarray | None = None

    def _prep(self, X: np.ndarray) -> np.ndarray:
        if self.metric == "dot":
            return X
        norms = np.linalg.norm(X, axis=-1, keepdims=True)
        return np.divide(X, norms, out=np.zeros_like(X), where=norms > 0)

    def _combine(self, sims: np.ndarray, k: int) -> np.ndarray:
        order = np.argsort(-sims, kind="stable")[:k]
        w = np.clip(sims[order], 0.0, None)
        if w.sum() <= 0:
            w = np.ones(len(order))
        return _normalized(w @ self.Y[order])

    def categories_for_id(self, token_id: int, k: int | None = None) -> np.ndarray:
        if k is not None and k < 1:
            raise ValueError("k must be >= 1")
        if len(self.ids) == 0:
            raise EmptyStore("no labeled hostname is in the vocabulary")
        host = self.model.vocab.id_to_token[token_id]
        labels = self.store.get(host)
        if labels is not None:
            return _normalized(self.store.indicator(host))
        q = self._prep(self.model.E_in[token_id].astype(np.float64))
        return self._combine(self.U @ q, self.k if k is None else k)

    def categories(self, hostname: str, k: int | None = None) -> np.ndarray:
        """Category vector of ``hostname``; ``k`` overrides the index default for this query."""
        i = self.model.token_id(hostname)
        if i is None:
            raise NotInVocabulary(hostname)
        return self.categories_for_id(i, k)

    def category_matrix(self, chunk: int = 4096) -> np.ndarray:
        """Category vectors of every vocabulary id (reserved rows are zero), cached."""
        if self._matrix is not None:
            return self._matrix
        if len(self.ids) == 0:
            raise EmptyStore("no labeled hostname is in the vocabulary")
        V = self.model.size
        out = np.zeros((V, self.Y.shape[1]))
        Q = self._prep(self.model.E_in.astype(np.float64))
        for lo in range(N_RESERVED, V, chunk):
            hi = min(V, lo + chunk)
            S = Q[lo:hi] @ self.U.T
            order = np.argsort(-S, axis=1, kind="stable")[:, : self.k]
            w = np.clip(np.take_along_axis(S, order, axis=1), 0.0, None)
            dead = w.sum(axis=1) <= 0
            w[dead] = 1.0
            agg = np.einsum("rk,rkc->rc", w, self.Y[order])
            out[lo:hi] = agg / agg.sum(axis=1, keepdims=True)
        vocab = self.model.vocab.id_to_token
        for i in self.labeled:
            out[i] = _normalized(self.store.indicator(vocab[i]))
        self._matrix = out
        return out

    def profile(self, seq: Sequence, key=None) -> Profile:
        ids = [i for t in seq.real_tokens if t != PAD and (i := self.model.token_id(t)) is not None]
        if not ids:
            raise NoProfile("no in-vocabulary token in sequence")
        if self._matrix is not None:
            acc = self._matrix[ids].sum(axis=0)
        else:
            acc = sum(self.categories_for_id(i) for i in ids)
        return Profile(seq.key if key is None else key, _normalized(acc), len(ids), seq.ts_micros)


def knn_categories(model: EmbeddingModel, store: CategoryStore, hostname: str, k: int = 10,
                   metric: str = "cosine") -> np.ndarray:
    return KnnIndex(model, store, k, metric).categories(hostname)


def profile_model(model: EmbeddingModel, store: CategoryStore, seq: Sequence, k: int = 10,
                  index: KnnIndex | None = None) -> Profile:
    if seq.real_len < 1:
        raise NoProfile("empty sequence")
    index = index or KnnIndex(model, store, k)
    return index.profile(seq)


class BaselineProfiler:
    """Tracker-style baseline: every visit is retained and categories re-counted.

    History grows without bound on purpose; profiling cost grows with it.
    """

    def __init__(self, store: CategoryStore):
        self.store = store
        self.history: dict[object, list[str]] = {}
        self._cats: dict[object, np.ndarray] = {}
        self._fill: dict[object, int] = {}
        self._support: dict[object, int] = {}

    def update(self, key, hostname: str) -> None:
        self.history.setdefault(key, []).append(hostname)
        labels = self.store.get(hostname)
        if not labels:
            return
        self._support[key] = self._support.get(key, 0) + 1
        buf = self._cats.get(key)
        fill = self._fill.get(key, 0)
        if buf is None:
            buf = self._cats[key] = np.empty(16, dtype=np.int32)
        if fill + len(labels) > len(buf):
            grown = np.empty(max(2 * len(buf), fill + len(labels)), dtype=np.int32)
            grown[:fill] = buf[:fill]
            buf = self._cats[key] = grown
        buf[fill:fill + len(labels)] = sorted(labels)
        self._fill[key] = fill + len(labels)

    def profile(self, key, ts_micros: int = 0) -> Profile:
        fill = self._fill.get(key, 0)
        if fill == 0:
            raise NoProfile(f"no labeled visit for {key}")
        counts = np.bincount(self._cats[key][:fill], minlength=len(self.store.taxonomy)).astype(np.float64)
        return Profile(key, counts / counts.sum(), self._support[key], ts_micros)

    def retained(self) -> int:
        return sum(len(h) for h in self.history.values())


def baseline_update(state: BaselineProfiler, key, hostname: str, store: CategoryStore | None = None) -> None:
    state.update(key, hostname)


def baseline_profile(state: BaselineProfiler, key) -> Profile:
    return state.profile(key)


def profile_distance(p: Profile | np.ndarray, q: Profile | np.ndarray, metric: str = "tv") -> float:
    a = p.weights if isinstance(p, Profile) else np.asarray(p, dtype=np.float64)
    b = q.weights if isinstance(q, Profile) else np.asarray(q, dtype=np.float64)
    if a.shape != b.shape:
        raise TaxonomyMismatch(f"{a.shape} vs {b.shape}")
    if metric == "tv":
        return float(0.5 * np.abs(a - b).sum())
    if metric == "l2":
        return float(np.sqrt(((a - b) ** 2).sum()))
    raise ValueError(f"unknown distance {metric!r}")


class ProfileAccumulator:
    """Running mean of per-request profiles for one user (constant memory)."""

    def __init__(self, n_categories: int):
        self.total = np.zeros(n_categories)
        self.count = 0

    def add(self, profile: Profile) -> None:
        self.total += profile.weights
        self.count += 1

    def current(self, key=None) -> Profile:
        if self.count == 0:
            raise NoProfile("nothing accumulated")
        return Profile(key, self.total / self.total.sum(), self.count)


def write_profiles_csv(path: str | Path, taxonomy: CategoryTaxonomy, profiles: Iterable[Profile]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", *taxonomy.categories, "support", "ts_micros"])
        for p in profiles:
            user = p.key[0] if isinstance(p.key, tuple) and len(p.key) == 1 else p.key
            if isinstance(user, tuple):
                user = "|".join(user)
            w.writerow([user, *map(float, p.weights), p.support, p.ts_micros])
