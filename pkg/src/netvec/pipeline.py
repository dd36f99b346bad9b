"""Stage wiring: source -> filter -> tuple_gen -> splitter -> {trainer, profiler}.

With one shard and ``threaded`` off everything runs in the calling thread and
a run is fully deterministic.  Otherwise tuples are routed by key hash into
bounded per-shard channels, each shard runs in its own thread, and full
windows flow over another bounded channel to a single trainer thread.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import queue
import threading
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from .capture import PacketRecord, PcapReader, TruncatedRecord, discard_sink, open_pcap, pcap_bytes
from .embed import DegenerateSequence, EmbeddingModel
from .flow_filter import DropPacket, FilterSpec, Truncated, decode_headers, matches
from .profiling import CategoryStore, CategoryTaxonomy, KnnIndex, NoProfile, Profile, load_categories, write_profiles_csv
from .splitter import KeySpec, Splitter, UnknownKey, shard_of
from .synth import WorldSpec, generate_tuples, generate_world, sized_frame
from .tuple_gen import FlowTuple, NoTuple, TupleCsvSource, make_tuple

log = logging.getLogger(__name__)

COUNTERS = (
    "packets_in", "bytes", "matched", "filtered_out", "parse_failures", "truncated",
    "tuples_out", "dropped", "sequences_emitted", "updates_applied", "profiles_emitted",
)
GAUGES = ("live_keys", "channel_depth", "retained_tokens")
BENCH_BUCKETS = (64, 256, 512, 1024, 1500)


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    dim: int = 64
    lr: float = 0.025
    k_neg: int = 5
    unigram_power: float = 0.75
    capacity: int = 2**20
    seed: int = 0
    init: str = "uniform"
    newest_only: bool = False
    subsample: float = 0.0

    def build(self) -> EmbeddingModel:
        return EmbeddingModel(**dataclasses.asdict(self))


@dataclass
class ProfilerConfig:
    enabled: bool = True
    k: int = 10
    metric: str = "cosine"
    snapshot_interval: int = 1000
    mode: str = "request"  # "request" | "interval"
    interval_seconds: float = 60.0
    categories: str | None = None
    taxonomy: str | None = None


@dataclass
class OutputConfig:
    dir: str = "out"
    metrics: str = "metrics.csv"
    profiles: str = "profiles.csv"
    model: str = "model.nv2v"


@dataclass
class PipelineConfig:
    source: dict = field(default_factory=lambda: {"type": "tuple-csv", "path": None})
    filter: dict = field(default_factory=lambda: {"proto": "tcp", "dst_ports": [80, 443]})
    key: list = field(default_factory=lambda: ["src_ip"])
    queue_size: int = 16
    stride: int = 1
    shards: int = 1
    threaded: bool = False
    ttl_seconds: float = 3600.0
    max_keys: int = 1_000_000
    channel_capacity: int = 1024
    backpressure: str = "block"  # "block" | "drop"
    realtime: bool = False
    realtime_speed: float = 1.0
    train: bool = True
    model_in: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    profiler: ProfilerConfig = field(default_factory=ProfilerConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            for name, sub in (("model", ModelConfig), ("profiler", ProfilerConfig), ("output", OutputConfig)):
                if name in d and isinstance(d[name], dict):
                    d[name] = sub(**d[name])
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: str | Path, overrides: dict[str, Any] | None = None) -> PipelineConfig:
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = Path(path).parent
        for k, v in (overrides or {}).items():
            set_dotted(d, k, v)
        cfg = cls.from_dict(d)
        cfg._resolve_paths(base)
        return cfg

    def _resolve_paths(self, base: Path) -> None:
        def fix(p):
            return None if p is None or Path(p).is_absolute() else str(base / p)
        if self.source.get("path"):
            self.source["path"] = fix(self.source["path"])
        for attr in ("categories", "taxonomy"):
            if getattr(self.profiler, attr):
                setattr(self.profiler, attr, fix(getattr(self.profiler, attr)))
        if self.model_in:
            self.model_in = fix(self.model_in)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        st = self.source.get("type")
        if st not in ("pcap", "tuple-csv", "synth"):
            raise ConfigError(f"source.type must be pcap|tuple-csv|synth, got {st!r}")
        if st in ("pcap", "tuple-csv") and not self.source.get("path"):
            raise ConfigError("source.path required")
        if st == "synth" and "world" not in self.source:
            raise ConfigError("synth source needs a 'world'")
        if self.queue_size < 2:
            raise ConfigError("queue_size must be >= 2")
        if not 1 <= self.stride <= self.queue_size:
            raise ConfigError("stride must be in [1, queue_size]")
        if self.shards < 1 or self.channel_capacity < 1 or self.max_keys < 1:
            raise ConfigError("shards, channel_capacity and max_keys must be >= 1")
        if self.backpressure not in ("block", "drop"):
            raise ConfigError("backpressure must be block|drop")
        if self.profiler.mode not in ("request", "interval"):
            raise ConfigError("profiler.mode must be request|interval")
        if self.profiler.k < 1 or self.profiler.snapshot_interval < 1:
            raise ConfigError("profiler.k and snapshot_interval must be >= 1")
        if not 0 < self.model.lr <= 1 or self.model.dim < 1 or self.model.k_neg < 0:
            raise ConfigError("model hyperparameters out of range")
        try:
            FilterSpec.from_config(self.filter)
            KeySpec(tuple(self.key))
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None

    def check_files(self) -> None:
        paths = [self.source.get("path"), self.profiler.categories, self.profiler.taxonomy, self.model_in]
        for p in paths:
            if p and not Path(p).exists():
                raise ConfigError(f"missing file {p}")


def set_dotted(d: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
    d[parts[-1]] = value


@dataclass
class RunMetrics:
    totals: Counter = field(default_factory=Counter)
    per_second: dict[int, Counter] = field(default_factory=lambda: defaultdict(Counter))
    gauges: dict[int, dict] = field(default_factory=dict)
    losses: list = field(default_factory=list)
    peak_retained: int = 0
    wall_seconds: float = 0.0

    def count(self, name: str, ts_micros: int, n: int = 1) -> None:
        self.totals[name] += n
        self.per_second[ts_micros // 1_000_000][name] += n

    def merge(self, other: RunMetrics) -> None:
        self.totals.update(other.totals)
        for sec, c in other.per_second.items():
            self.per_second[sec].update(c)
        self.losses.extend(other.losses)

    def __getitem__(self, name: str) -> int:
        return self.totals[name]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ts", *COUNTERS, *GAUGES, "mean_loss"])
            for sec in sorted(self.per_second):
                c = self.per_second[sec]
                g = self.gauges.get(sec, {})
                n_upd = c["updates_applied"]
                mean_loss = c["loss_sum_x1e6"] / 1e6 / n_upd if n_upd else ""
                w.writerow([sec, *(c[k] for k in COUNTERS), *(g.get(k, "") for k in GAUGES), mean_loss])


# -- sources ----------------------------------------------------------------------

class TupleStage:
    """Packets -> tuples with drop accounting (filter + tuple_gen)."""

    def __init__(self, spec: FilterSpec, metrics: RunMetrics):
        self.spec = spec
        self.metrics = metrics

    def __call__(self, pkt: PacketRecord) -> FlowTuple | None:
        m = self.metrics
        m.count("packets_in", pkt.ts_micros)
        m.count("bytes", pkt.ts_micros, pkt.original_len)
        try:
            hdrs = decode_headers(pkt)
        except Truncated:
            m.count("truncated", pkt.ts_micros)
            return None
        except DropPacket:
            m.count("filtered_out", pkt.ts_micros)
            return None
        if not matches(self.spec, hdrs):
            m.count("filtered_out", pkt.ts_micros)
            return None
        try:
            t = make_tuple(pkt, hdrs)
        except NoTuple:
            m.count("parse_failures", pkt.ts_micros)
            return None
        m.count("matched", pkt.ts_micros)
        return t


def packet_tuples(packets, spec: FilterSpec, metrics: RunMetrics) -> Iterator[FlowTuple]:
    stage = TupleStage(spec, metrics)
    try:
        for pkt in packets:
            t = stage(pkt)
            if t is not None:
                yield t
    except TruncatedRecord as exc:
        log.warning("truncated pcap record: %s", exc)
        metrics.totals["truncated_records"] += 1


def tuple_source(cfg: PipelineConfig, metrics: RunMetrics) -> tuple[Iterator[FlowTuple], CategoryStore | None]:
    src = cfg.source
    if src["type"] == "pcap":
        reader = open_pcap(src["path"])
        return packet_tuples(reader, FilterSpec.from_config(cfg.filter), metrics), None
    if src["type"] == "tuple-csv":
        return iter(TupleCsvSource(src["path"])), None
    world = generate_world(WorldSpec.from_config(src["world"]))
    return iter(generate_tuples(world)), world.store


def paced(tuples, speed: float = 1.0) -> Iterator[FlowTuple]:
    """Replay at trace pace: sleep so trace time maps to wall time / speed."""
    t0_trace = t0_wall = None
    for t in tuples:
        if t0_trace is None:
            t0_trace, t0_wall = t.ts_micros, time.monotonic()
        lag = (t.ts_micros - t0_trace) / 1e6 / speed - (time.monotonic() - t0_wall)
        if lag > 0:
            time.sleep(lag)
        yield t


# -- model side -------------------------------------------------------------------

class Trainer:
    """Owns the live model; publishes read-only snapshots for profilers."""

    def __init__(self, model: EmbeddingModel, store: CategoryStore | None, pcfg: ProfilerConfig,
                 metrics: RunMetrics, train: bool = True):
        self.model = model
        self.store = store
        self.pcfg = pcfg
        self.metrics = metrics
        self.train = train
        self._lock = threading.Lock()
        self.index: KnnIndex | None = None
        self.publish()

    def publish(self) -> None:
        index = None
        if self.store is not None and len(self.store) and self.pcfg.enabled:
            index = KnnIndex(self.model.snapshot(), self.store, self.pcfg.k, self.pcfg.metric)
            if len(index.ids):
                index.category_matrix()
            else:
                index = None
        with self._lock:
            self.index = index

    def current_index(self) -> KnnIndex | None:
        with self._lock:
            return self.index

    def consume(self, seq) -> None:
        m = self.metrics
        m.count("sequences_emitted", seq.ts_micros)
        if not self.train:
            return
        try:
            loss = self.model.update(seq)
        except DegenerateSequence:
            return
        m.count("updates_applied", seq.ts_micros)
        m.count("loss_sum_x1e6", seq.ts_micros, int(round(loss * 1e6)))
        if self.model.stats.updates % self.pcfg.snapshot_interval == 0:
            self.publish()


class ShardWorker:
    """Splitter shard plus per-request profiling."""

    def __init__(self, splitter: Splitter, trainer: Trainer, cfg: PipelineConfig, metrics: RunMetrics):
        self.splitter = splitter
        self.trainer = trainer
        self.cfg = cfg
        self.metrics = metrics
        self.profiles: list[Profile] = []
        self._last_evict = None
        self._next_interval: dict = {}

    def handle(self, t: FlowTuple, key, emit) -> None:
        seq = self.splitter.push(t, key)
        if seq is not None:
            emit(seq)
        p = self.cfg.profiler
        if p.enabled:
            if p.mode == "request":
                self._profile(key, t.ts_micros)
            else:
                due = self._next_interval.get(key)
                if due is None or t.ts_micros >= due:
                    self._next_interval[key] = t.ts_micros + int(p.interval_seconds * 1e6)
                    self._profile(key, t.ts_micros)
        cap = max(1, self.cfg.max_keys // max(1, self.cfg.shards))
        sec = t.ts_micros // 1_000_000
        if self._last_evict != sec:
            self._last_evict = sec
            self.splitter.evict_idle(t.ts_micros, int(self.cfg.ttl_seconds * 1e6), cap)
        elif len(self.splitter) > cap:
            self.splitter.evict_idle(t.ts_micros, int(self.cfg.ttl_seconds * 1e6), cap)

    def _profile(self, key, ts: int) -> None:
        index = self.trainer.current_index()
        if index is None:
            return
        try:
            prof = index.profile(self.splitter.snapshot(key), key)
        except (NoProfile, UnknownKey):
            return
        prof.ts_micros = ts
        self.profiles.append(prof)
        self.metrics.count("profiles_emitted", ts)


def load_store(cfg: PipelineConfig, fallback: CategoryStore | None) -> CategoryStore | None:
    if cfg.profiler.categories:
        tax = CategoryTaxonomy.load(cfg.profiler.taxonomy) if cfg.profiler.taxonomy else CategoryTaxonomy.default()
        return load_categories(cfg.profiler.categories, tax)
    return fallback


def run(cfg: PipelineConfig, out_dir: str | Path | None = None) -> RunMetrics:
    """Execute the pipeline and write metrics, profiles and the final model."""
    cfg.validate()
    cfg.check_files()
    out = Path(out_dir or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = RunMetrics()
    t0 = time.perf_counter()
    tuples, world_store = tuple_source(cfg, metrics)
    if cfg.realtime:
        tuples = paced(tuples, cfg.realtime_speed)
    store = load_store(cfg, world_store)
    model = EmbeddingModel.load(cfg.model_in) if cfg.model_in else cfg.model.build()

    if cfg.shards == 1 and not cfg.threaded:
        profiles = _run_inline(cfg, tuples, model, store, metrics)
    else:
        profiles = _run_threaded(cfg, tuples, model, store, metrics)

    metrics.wall_seconds = time.perf_counter() - t0
    taxonomy = store.taxonomy if store is not None else CategoryTaxonomy.default()
    profiles.sort(key=lambda p: (p.ts_micros, str(p.key)))
    write_profiles_csv(out / cfg.output.profiles, taxonomy, profiles)
    metrics.write_csv(out / cfg.output.metrics)
    model.save(out / cfg.output.model)
    log.info("run done: %s", dict(metrics.totals))
    return metrics


def _run_inline(cfg, tuples, model, store, metrics) -> list[Profile]:
    trainer = Trainer(model, store, cfg.profiler, metrics, cfg.train)
    splitter = Splitter(cfg.queue_size, KeySpec(tuple(cfg.key)), cfg.stride)
    worker = ShardWorker(splitter, trainer, cfg, metrics)
    key_of = splitter.key_spec.key_of
    last_sec = None
    for t in tuples:
        metrics.count("tuples_out", t.ts_micros)
        worker.handle(t, key_of(t), trainer.consume)
        sec = t.ts_micros // 1_000_000
        if sec != last_sec:
            last_sec = sec
            retained = splitter.retained_tokens
            metrics.peak_retained = max(metrics.peak_retained, retained)
            metrics.gauges[sec] = {"live_keys": len(splitter), "channel_depth": 0, "retained_tokens": retained}
    return worker.profiles


_STOP = object()


def _run_threaded(cfg, tuples, model, store, metrics) -> list[Profile]:
    trainer_metrics = RunMetrics()
    trainer = Trainer(model, store, cfg.profiler, trainer_metrics, cfg.train)
    key_spec = KeySpec(tuple(cfg.key))
    shard_q = [queue.Queue(cfg.channel_capacity) for _ in range(cfg.shards)]
    train_q: queue.Queue = queue.Queue(cfg.channel_capacity)
    workers = [ShardWorker(Splitter(cfg.queue_size, key_spec, cfg.stride), trainer, cfg, RunMetrics())
               for _ in range(cfg.shards)]
    errors: list[BaseException] = []

    def shard_loop(i: int) -> None:
        w, q = workers[i], shard_q[i]
        try:
            while (item := q.get()) is not _STOP:
                t, key = item
                w.handle(t, key, train_q.put)
        except BaseException as exc:  # surfaced after join
            errors.append(exc)

    def train_loop() -> None:
        try:
            while (seq := train_q.get()) is not _STOP:
                trainer.consume(seq)
        except BaseException as exc:
            errors.append(exc)

    threads = [threading.Thread(target=shard_loop, args=(i,), daemon=True) for i in range(cfg.shards)]
    tthread = threading.Thread(target=train_loop, daemon=True)
    for th in threads:
        th.start()
    tthread.start()
    last_sec = None
    for t in tuples:
        metrics.count("tuples_out", t.ts_micros)
        key = key_spec.key_of(t)
        q = shard_q[shard_of(key, cfg.shards)]
        if cfg.backpressure == "block":
            q.put((t, key))
        else:
            try:
                q.put_nowait((t, key))
            except queue.Full:
                metrics.count("dropped", t.ts_micros)
        sec = t.ts_micros // 1_000_000
        if sec != last_sec:
            last_sec = sec
            depth = sum(x.qsize() for x in shard_q) + train_q.qsize()
            metrics.gauges[sec] = {"live_keys": sum(len(w.splitter) for w in workers), "channel_depth": depth}
    for q in shard_q:
        q.put(_STOP)
    for th in threads:
        th.join()
    train_q.put(_STOP)
    tthread.join()
    if errors:
        raise errors[0]
    profiles: list[Profile] = []
    for w in workers:
        metrics.merge(w.metrics)
        profiles.extend(w.profiles)
    metrics.merge(trainer_metrics)
    return profiles


# -- capture benchmark ------------------------------------------------------------

@dataclass
class BenchRow:
    size: int
    mode: str
    packets: int
    tuples: int
    seconds: float

    @property
    def mpps(self) -> float:
        return self.packets / self.seconds / 1e6 if self.seconds > 0 else 0.0

    @property
    def gbps(self) -> float:
        return self.packets * self.size * 8 / self.seconds / 1e9 if self.seconds > 0 else 0.0


def bucket_of(length: int) -> int:
    for b in BENCH_BUCKETS:
        if length <= b:
            return b
    return BENCH_BUCKETS[-1]


def synthetic_bench_traces(count: int = 200_000, sizes=BENCH_BUCKETS) -> dict[int, bytes]:
    return {s: pcap_bytes([PacketRecord.from_frame(sized_frame(s))] * count) for s in sizes}


def traces_from_pcap(path: str | Path) -> dict[int, bytes]:
    groups: dict[int, list[PacketRecord]] = defaultdict(list)
    with open_pcap(path) as reader:
        try:
            for pkt in reader:
                groups[bucket_of(pkt.original_len)].append(pkt)
        except TruncatedRecord:
            pass
    return {size: pcap_bytes(pkts) for size, pkts in sorted(groups.items())}


def _parse_path(buf: bytes, spec: FilterSpec) -> tuple[int, int]:
    packets = tuples = 0
    for pkt in PcapReader(buf):
        packets += 1
        try:
            hdrs = decode_headers(pkt)
            if matches(spec, hdrs):
                make_tuple(pkt, hdrs)
                tuples += 1
        except (DropPacket, NoTuple):
            pass
    return packets, tuples


def bench_capture(traces: dict[int, bytes], mode: str = "discard", spec: FilterSpec | None = None,
                  repeat: int = 1) -> list[BenchRow]:
    """Throughput of the discard or parse path, one row per packet-size bucket (best of ``repeat``)."""
    if mode not in ("discard", "parse"):
        raise ValueError("mode must be discard|parse")
    spec = spec or FilterSpec.from_config({"proto": "tcp", "dst_ports": [80]})
    rows = []
    for size, buf in sorted(traces.items()):
        best = None
        for _ in range(repeat):
            t0 = time.perf_counter()
            if mode == "discard":
                stats = discard_sink(PcapReader(buf))
                packets, tuples = stats.packets, 0
            else:
                packets, tuples = _parse_path(buf, spec)
            dt = time.perf_counter() - t0
            if best is None or dt < best.seconds:
                best = BenchRow(size, mode, packets, tuples, dt)
        rows.append(best)
    return rows


def write_bench_csv(path: str | Path, rows: list[BenchRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "size", "packets", "tuples", "seconds", "mpps", "gbps"])
        for r in rows:
            w.writerow([r.mode, r.size, r.packets, r.tuples, f"{r.seconds:.6f}", f"{r.mpps:.4f}", f"{r.gbps:.4f}"])
