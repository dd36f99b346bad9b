"""Desk-scale experiments: time-to-profile, profile similarity, throughput and persona profiles.

Each experiment trains the embedding model on the first half of a synthetic
trace ("day 1") and profiles the users active in the second half ("day 2"),
starting every user with an empty window and an empty baseline history.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embed import EmbeddingModel
from .pipeline import ModelConfig
from .profiling import (BaselineProfiler, CategoryStore, EmptyStore, KnnIndex, NoProfile, Profile,
                        ProfileAccumulator, profile_distance)
from .splitter import Splitter
from .synth import HOUR_MICROS, TRACE_EPOCH_MICROS, World, WorldSpec, generate_tuples, generate_world
from .tuple_gen import FlowTuple

TIME_BUCKETS = (("1req", None), ("1min", 60), ("10min", 600), ("1h", 3600), ("6h", 6 * 3600), ("24h", 24 * 3600))
DEFAULT_FRACTIONS = (0.005, 0.05, 0.25, 0.5)
DEFAULT_CHECKPOINTS = (10, 100, 1000)

CSV_HEADERS = {
    "time_to_profile": ("fraction", "elapsed_bucket", "pct_users_profiled_model", "pct_users_profiled_baseline"),
    "similarity": ("fraction", "requests_seen", "mean_distance_to_reference"),
    "throughput": ("bucket", "tuples_per_sec_model", "tuples_per_sec_baseline"),
    "persona": ("persona", "rank", "category", "weight", "is_interest", "top1_match", "confident"),
}


@dataclass
class EvalConfig:
    world: dict
    queue_size: int = 16
    k: int = 10
    fractions: tuple = DEFAULT_FRACTIONS
    checkpoints: tuple = DEFAULT_CHECKPOINTS
    throughput_buckets: int = 10
    train_limit: int | None = None
    min_updates: int = 1000  # below this the persona report is flagged as low confidence
    model: ModelConfig = field(default_factory=ModelConfig)

    @classmethod
    def from_dict(cls, d: dict) -> EvalConfig:
        d = dict(d)
        if isinstance(d.get("model"), dict):
            d["model"] = ModelConfig(**d["model"])
        for key in ("fractions", "checkpoints"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> EvalConfig:
        d = json.loads(Path(path).read_text())
        return cls.from_dict(d.get("eval", d))


@dataclass
class Experiment:
    """A generated world, its two-day trace and a model trained on day 1."""

    world: World
    day1: list[FlowTuple]
    day2: list[FlowTuple]
    model: EmbeddingModel
    queue_size: int

    @classmethod
    def prepare(cls, world: World | WorldSpec, queue_size: int = 16, model_cfg: ModelConfig | None = None,
                train_limit: int | None = None, model: EmbeddingModel | None = None) -> Experiment:
        if isinstance(world, WorldSpec):
            world = generate_world(world)
        tuples = generate_tuples(world)
        split = TRACE_EPOCH_MICROS + int(world.spec.duration / 2 * HOUR_MICROS)
        cut = next((i for i, t in enumerate(tuples) if t.ts_micros >= split), len(tuples))
        day1, day2 = tuples[:cut], tuples[cut:]
        if model is None:
            model = train_model(day1[:train_limit] if train_limit else day1, queue_size, model_cfg or ModelConfig())
        return cls(world, day1, day2, model, queue_size)

    def index(self, fraction: float, k: int) -> KnnIndex | None:
        store = self.world.store_for_fraction(fraction)
        if len(store) == 0:
            return None
        idx = KnnIndex(self.model, store, k)
        if len(idx.ids) == 0:
            return None
        idx.category_matrix()
        return idx


def train_model(tuples, queue_size: int = 16, model_cfg: ModelConfig | None = None) -> EmbeddingModel:
    model = (model_cfg or ModelConfig()).build()
    splitter = Splitter(queue_size)
    for t in tuples:
        seq = splitter.push(t)
        if seq is not None:
            model.update(seq)
    return model


def persona_purity(model: EmbeddingModel, world: World) -> float:
    """Share of persona-pool hostnames whose cosine nearest neighbour (among the
    other in-vocabulary pool hostnames) belongs to the same persona."""
    hosts = [h for h in world.persona_of if model.token_id(h) is not None]
    if len(hosts) < 2:
        return 0.0
    ids = np.array([model.token_id(h) for h in hosts])
    owner = np.array([world.persona_of[h] for h in hosts])
    E = model.E_in[ids].astype(np.float64)
    norms = np.linalg.norm(E, axis=1, keepdims=True)
    E = np.divide(E, norms, out=np.zeros_like(E), where=norms > 0)
    S = E @ E.T
    np.fill_diagonal(S, -np.inf)
    return float((owner[S.argmax(axis=1)] == owner).mean())


# -- time to profile ----------------------------------------------------------------

def _first_profile_times(exp: Experiment, fraction: float, k: int):
    """Per user: (first request ts, model profiled ts or None, baseline profiled ts or None, model at 1st req)."""
    index = exp.index(fraction, k)
    store = exp.world.store_for_fraction(fraction)
    splitter = Splitter(exp.queue_size)
    baseline = BaselineProfiler(store)
    first: dict = {}
    model_at: dict = {}
    base_at: dict = {}
    for t in exp.day2:
        key = splitter.key_spec.key_of(t)
        first.setdefault(key, t.ts_micros)
        splitter.push(t, key)
        baseline.update(key, t.hostname)
        if index is not None and key not in model_at:
            try:
                index.profile(splitter.snapshot(key))
                model_at[key] = t.ts_micros
            except NoProfile:
                pass
        if key not in base_at:
            try:
                baseline.profile(key)
                base_at[key] = t.ts_micros
            except NoProfile:
                pass
    return first, model_at, base_at


def eval_time_to_profile(exp: Experiment, fractions=DEFAULT_FRACTIONS, k: int = 10) -> list[dict]:
    rows = []
    for f in fractions:
        first, model_at, base_at = _first_profile_times(exp, f, k)
        users = len(first)
        for name, limit in TIME_BUCKETS:
            def covered(at):
                if limit is None:
                    return sum(1 for u, ts in at.items() if ts == first[u])
                return sum(1 for u, ts in at.items() if ts - first[u] <= limit * 1_000_000)
            rows.append({
                "fraction": f,
                "elapsed_bucket": name,
                "pct_users_profiled_model": 100.0 * covered(model_at) / users if users else 0.0,
                "pct_users_profiled_baseline": 100.0 * covered(base_at) / users if users else 0.0,
            })
    return rows


# -- similarity to reference --------------------------------------------------------

def _checkpoint_profiles(exp: Experiment, index: KnnIndex | None, checkpoints) -> dict:
    """(user, r) -> running-mean model profile after the user's r-th day-2 request."""
    out: dict = {}
    if index is None:
        return out
    wanted = set(checkpoints)
    splitter = Splitter(exp.queue_size)
    acc: dict = {}
    seen: dict = {}
    C = index.Y.shape[1]
    for t in exp.day2:
        key = splitter.key_spec.key_of(t)
        splitter.push(t, key)
        n = seen[key] = seen.get(key, 0) + 1
        a = acc.get(key)
        if a is None:
            a = acc[key] = ProfileAccumulator(C)
        try:
            a.add(index.profile(splitter.snapshot(key)))
        except NoProfile:
            pass
        if n in wanted and a.count:
            out[(key, n)] = a.current(key)
    return out


def eval_similarity(exp: Experiment, fractions=DEFAULT_FRACTIONS, checkpoints=DEFAULT_CHECKPOINTS,
                    k: int = 10, metric: str = "tv") -> list[dict]:
    ref_fraction = max(fractions)
    ref = _checkpoint_profiles(exp, exp.index(ref_fraction, k), checkpoints)
    rows = []
    for f in fractions:
        got = ref if f == ref_fraction else _checkpoint_profiles(exp, exp.index(f, k), checkpoints)
        for r in checkpoints:
            dists = [profile_distance(got[key], ref[key], metric)
                     for key in ref if key[1] == r and key in got]
            # users the reference profiles but this fraction cannot count as maximally distant
            missing = sum(1 for key in ref if key[1] == r and key not in got)
            dists += [1.0] * missing
            rows.append({
                "fraction": f,
                "requests_seen": r,
                "mean_distance_to_reference": float(np.mean(dists)) if dists else float("nan"),
            })
    return rows


# -- throughput ---------------------------------------------------------------------

def eval_throughput_vs_baseline(exp: Experiment, buckets: int = 10, fraction: float | None = None,
                                k: int = 10) -> list[dict]:
    """Tuples/sec of each profiler over equal-sized consecutive slices of day 2."""
    fraction = exp.world.spec.labeled_fraction if fraction is None else fraction
    index = exp.index(fraction, k)
    if index is None:
        raise EmptyStore("no labeled hostname in vocabulary")
    store = exp.world.store_for_fraction(fraction)
    day2 = exp.day2
    edges = np.linspace(0, len(day2), buckets + 1).astype(int)
    splitter = Splitter(exp.queue_size)
    baseline = BaselineProfiler(store)
    key_of = splitter.key_spec.key_of
    keys = [key_of(t) for t in day2]
    rows = []
    for b in range(buckets):
        lo, hi = edges[b], edges[b + 1]
        t0 = time.perf_counter()
        for i in range(lo, hi):
            t, key = day2[i], keys[i]
            splitter.push(t, key)
            try:
                index.profile(splitter.snapshot(key))
            except NoProfile:
                pass
        t_model = time.perf_counter() - t0
        t0 = time.perf_counter()
        for i in range(lo, hi):
            t, key = day2[i], keys[i]
            baseline.update(key, t.hostname)
            try:
                baseline.profile(key)
            except NoProfile:
                pass
        t_base = time.perf_counter() - t0
        n = hi - lo
        rows.append({
            "bucket": b,
            "tuples_per_sec_model": n / t_model if t_model > 0 else float("inf"),
            "tuples_per_sec_baseline": n / t_base if t_base > 0 else float("inf"),
        })
    return rows


def coefficient_of_variation(xs) -> float:
    xs = np.asarray(xs, dtype=np.float64)
    return float(xs.std() / xs.mean())


# -- persona profiles ---------------------------------------------------------------

@dataclass
class PersonaReport:
    persona: str
    profile: Profile | None
    interests: list[int]
    confident: bool

    @property
    def top(self) -> list[int]:
        return self.profile.top(len(self.profile.weights)) if self.profile is not None else []

    @property
    def top1_match(self) -> bool:
        return bool(self.top) and self.top[0] in self.interests


def eval_persona_profile(exp: Experiment, persona: int, fraction: float | None = None, k: int = 10,
                         min_updates: int = 1000) -> PersonaReport:
    """Aggregate day-2 model profile of a persona's users."""
    spec = exp.world.spec.personas[persona]
    interests = [exp.world.taxonomy.index[c] for c in spec.interest_categories]
    confident = exp.model.stats.updates >= min_updates
    fraction = exp.world.spec.labeled_fraction if fraction is None else fraction
    index = exp.index(fraction, k)
    if index is None:
        return PersonaReport(spec.name, None, interests, False)
    members = {(str(u.src_ip),) for u in exp.world.users if u.persona == persona}
    splitter = Splitter(exp.queue_size)
    total = np.zeros(len(exp.world.taxonomy))
    count = 0
    for t in exp.day2:
        key = splitter.key_spec.key_of(t)
        splitter.push(t, key)
        if key in members:
            try:
                total += index.profile(splitter.snapshot(key)).weights
                count += 1
            except NoProfile:
                pass
    prof = Profile(spec.name, total / total.sum(), count) if count else None
    return PersonaReport(spec.name, prof, interests, confident and prof is not None)


def persona_rows(reports: list[PersonaReport], exp: Experiment, top_n: int = 6) -> list[dict]:
    names = exp.world.taxonomy.categories
    rows = []
    for rep in reports:
        for rank, c in enumerate(rep.top[:top_n], 1):
            rows.append({
                "persona": rep.persona, "rank": rank, "category": names[c],
                "weight": float(rep.profile.weights[c]), "is_interest": c in rep.interests,
                "top1_match": rep.top1_match, "confident": rep.confident,
            })
    return rows


def write_csv(path: str | Path, experiment: str, rows: list[dict]) -> None:
    header = CSV_HEADERS[experiment]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({h: r[h] for h in header})


EXPERIMENTS = ("time_to_profile", "similarity", "throughput", "persona")


def run_experiment(name: str, cfg: EvalConfig, out_dir: str | Path, exp: Experiment | None = None) -> list[dict]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if exp is None:
        exp = Experiment.prepare(WorldSpec.from_config(cfg.world), cfg.queue_size, cfg.model, cfg.train_limit)
    if name == "time_to_profile":
        rows = eval_time_to_profile(exp, cfg.fractions, cfg.k)
    elif name == "similarity":
        rows = eval_similarity(exp, cfg.fractions, cfg.checkpoints, cfg.k)
    elif name == "throughput":
        rows = eval_throughput_vs_baseline(exp, cfg.throughput_buckets, k=cfg.k)
    elif name == "persona":
        reports = [eval_persona_profile(exp, i, k=cfg.k, min_updates=cfg.min_updates)
                   for i in range(len(exp.world.spec.personas))]
        rows = persona_rows(reports, exp)
    else:
        raise ValueError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    write_csv(out / f"{name}.csv", name, rows)
    return rows


def world_config(spec: WorldSpec) -> dict:
    d = dataclasses.asdict(spec)
    d.pop("taxonomy")
    return d
