"""Per-key bounded queues over the global tuple stream.

Each key (by default the source IP) owns a FIFO of at most ``n`` hostname
tokens.  When the queue fills, its content is emitted as a :class:`Sequence`
and the oldest ``stride`` tokens are dropped, so with ``stride=1`` every push
after warm-up emits a sliding window.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict, deque
from dataclasses import dataclass, field

from .tuple_gen import FlowTuple

PAD = "<pad>"
KEY_ATTRIBUTES = ("src_ip", "hostname")

Key = tuple[str, ...]


class UnknownKey(KeyError):
    pass


@dataclass(frozen=True)
class KeySpec:
    attributes: tuple[str, ...] = ("src_ip",)

    def __post_init__(self):
        attrs = tuple(self.attributes)
        if not attrs:
            raise ValueError("key needs at least one attribute")
        bad = [a for a in attrs if a not in KEY_ATTRIBUTES]
        if bad:
            raise ValueError(f"unknown key attributes {bad}")
        object.__setattr__(self, "attributes", attrs)

    def key_of(self, t: FlowTuple) -> Key:
        return tuple(str(getattr(t, a)) for a in self.attributes)


@dataclass(frozen=True)
class Sequence:
    key: Key
    tokens: tuple[str, ...]
    real_len: int
    ts_micros: int = 0  # timestamp of the newest token

    @property
    def real_tokens(self) -> tuple[str, ...]:
        return self.tokens[len(self.tokens) - self.real_len:]


@dataclass
class KeyQueue:
    key: Key
    buffer: deque = field(default_factory=deque)  # (hostname, ts_micros)
    last_seen: int = 0


def stable_hash(key: Key) -> int:
    h = hashlib.blake2b("\x1f".join(key).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def shard_of(key: Key, shards: int) -> int:
    return stable_hash(key) % shards


class Splitter:
    """Single-writer splitter state for one shard."""

    def __init__(self, queue_size: int = 16, key: KeySpec | None = None, stride: int = 1):
        if queue_size < 2:
            raise ValueError("queue_size must be >= 2")
        if not 1 <= stride <= queue_size:
            raise ValueError("stride must be in [1, queue_size]")
        self.n = queue_size
        self.stride = stride
        self.key_spec = key or KeySpec()
        self.queues: OrderedDict[Key, KeyQueue] = OrderedDict()
        self.emitted = 0

    def __len__(self) -> int:
        return len(self.queues)

    @property
    def retained_tokens(self) -> int:
        return sum(len(q.buffer) for q in self.queues.values())

    def push(self, t: FlowTuple, key: Key | None = None) -> Sequence | None:
        if key is None:
            key = self.key_spec.key_of(t)
        q = self.queues.get(key)
        if q is None:
            q = self.queues[key] = KeyQueue(key)
        else:
            self.queues.move_to_end(key)
        q.buffer.append((t.hostname, t.ts_micros))
        q.last_seen = t.ts_micros
        if len(q.buffer) < self.n:
            return None
        seq = Sequence(key, tuple(h for h, _ in q.buffer), self.n, t.ts_micros)
        for _ in range(self.stride):
            q.buffer.popleft()
        self.emitted += 1
        return seq

    def snapshot(self, key: Key) -> Sequence:
        q = self.queues.get(key)
        if q is None or not q.buffer:
            raise UnknownKey(key)
        real = [h for h, _ in q.buffer]
        pad = (PAD,) * (self.n - len(real))
        return Sequence(key, pad + tuple(real), len(real), q.buffer[-1][1])

    def evict_idle(self, now: int, ttl: int, max_keys: int | None = None) -> list[Key]:
        """Drop keys idle for more than ``ttl`` microseconds, then LRU down to ``max_keys``."""
        evicted = [k for k, q in self.queues.items() if now - q.last_seen > ttl]
        for k in evicted:
            del self.queues[k]
        if max_keys is not None:
            while len(self.queues) > max_keys:
                k, _ = self.queues.popitem(last=False)
                evicted.append(k)
        return evicted


class ShardedSplitter:
    """Routes keys to ``shards`` independent splitters by a stable 64-bit hash."""

    def __init__(self, queue_size: int = 16, key: KeySpec | None = None, stride: int = 1, shards: int = 1):
        if shards < 1:
            raise ValueError("shards must be >= 1")
        self.key_spec = key or KeySpec()
        self.shards = [Splitter(queue_size, self.key_spec, stride) for _ in range(shards)]

    def route(self, t: FlowTuple) -> tuple[int, Key]:
        key = self.key_spec.key_of(t)
        return (shard_of(key, len(self.shards)) if len(self.shards) > 1 else 0), key

    def push(self, t: FlowTuple) -> Sequence | None:
        i, key = self.route(t)
        return self.shards[i].push(t, key)

    def snapshot(self, key: Key) -> Sequence:
        i = shard_of(key, len(self.shards)) if len(self.shards) > 1 else 0
        return self.shards[i].snapshot(key)

    def evict_idle(self, now: int, ttl: int, max_keys: int | None = None) -> list[Key]:
        per_shard = None if max_keys is None else max(1, max_keys // len(self.shards))
        out: list[Key] = []
        for s in self.shards:
            out.extend(s.evict_idle(now, ttl, per_shard))
        return out

    @property
    def live_keys(self) -> int:
        return sum(len(s) for s in self.shards)

    @property
    def retained_tokens(self) -> int:
        return sum(s.retained_tokens for s in self.shards)

    @property
    def emitted(self) -> int:
        return sum(s.emitted for s in self.shards)
