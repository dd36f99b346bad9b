"""Persona-driven synthetic worlds and traces.

A world is a hostname universe split into one disjoint pool per persona (one
sub-pool per interest category) plus a shared background pool of CDN/tracker
style hostnames that never carry labels.  Users belong to one persona and
issue requests as a Poisson process; each request goes to the background pool
with probability ``background_ratio`` and otherwise to the persona pool, with
Zipf popularity inside either pool.
"""

from __future__ import annotations

import hashlib
import ipaddress
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .capture import PacketRecord, write_pcap
from .profiling import CategoryStore, CategoryTaxonomy
from .tuple_gen import FlowTuple, write_tuple_csv

TRACE_EPOCH_MICROS = 1_500_000_000 * 1_000_000
HOUR_MICROS = 3600 * 1_000_000


class InfeasibleSpec(ValueError):
    pass


@dataclass
class PersonaSpec:
    name: str
    interest_categories: tuple[str, ...]
    num_hostnames_per_category: int = 200
    background_ratio: float = 0.3
    request_rate: float = 20.0  # requests per user-hour
    zipf_s: float = 1.0

    def __post_init__(self):
        self.interest_categories = tuple(self.interest_categories)
        if not self.interest_categories:
            raise ValueError(f"persona {self.name}: interest set is empty")
        if not 0.0 <= self.background_ratio < 1.0:
            raise ValueError(f"persona {self.name}: background_ratio must be in [0, 1)")
        if self.request_rate < 0:
            raise ValueError(f"persona {self.name}: negative request rate")


@dataclass
class WorldSpec:
    personas: list[PersonaSpec]
    total_hostnames: int = 2000
    labeled_fraction: float = 0.25
    users_per_persona: int = 10
    duration: float = 24.0  # hours
    seed: int = 0
    user_rate_sigma: float = 0.0  # lognormal spread of per-user rates; > 0 gives heavy tails
    taxonomy: CategoryTaxonomy = field(default_factory=CategoryTaxonomy.default)

    def __post_init__(self):
        if not 0.0 <= self.labeled_fraction <= 1.0:
            raise ValueError("labeled_fraction must be in [0, 1]")
        for p in self.personas:
            for c in p.interest_categories:
                if c not in self.taxonomy.index:
                    raise ValueError(f"persona {p.name}: unknown category {c!r}")

    @classmethod
    def from_config(cls, cfg: dict) -> WorldSpec:
        cfg = dict(cfg)
        personas = [PersonaSpec(**p) for p in cfg.pop("personas")]
        tax = cfg.pop("taxonomy", None)
        taxonomy = CategoryTaxonomy.load(tax) if tax else CategoryTaxonomy.default()
        return cls(personas=personas, taxonomy=taxonomy, **cfg)


@dataclass
class User:
    index: int
    src_ip: ipaddress.IPv4Address
    persona: int
    rate: float  # requests per hour


@dataclass
class World:
    spec: WorldSpec
    hostnames: list[str]
    pools: list[list[str]]  # per persona, in popularity order
    background: list[str]  # popularity order
    truth: dict[str, int]  # pool hostname -> category id
    persona_of: dict[str, int]  # pool hostname -> persona index
    label_order: list[str]
    users: list[User]

    @property
    def taxonomy(self) -> CategoryTaxonomy:
        return self.spec.taxonomy

    def labeled_count(self, fraction: float) -> int:
        return math.floor(fraction * self.spec.total_hostnames + 1e-9)

    def store_for_fraction(self, fraction: float) -> CategoryStore:
        """Labels for the first ``floor(fraction * total)`` hostnames of a fixed order.

        Stores for increasing fractions are nested.
        """
        n = self.labeled_count(fraction)
        if n > len(self.label_order):
            raise InfeasibleSpec(f"{n} labels requested but only {len(self.label_order)} pool hostnames")
        return CategoryStore(self.taxonomy, {h: frozenset([self.truth[h]]) for h in self.label_order[:n]})

    @property
    def store(self) -> CategoryStore:
        return self.store_for_fraction(self.spec.labeled_fraction)

    def user_persona(self) -> dict[str, int]:
        return {str(u.src_ip): u.persona for u in self.users}


def generate_world(spec: WorldSpec) -> World:
    rng = np.random.default_rng(spec.seed)
    tax = spec.taxonomy
    pool_total = sum(p.num_hostnames_per_category * len(p.interest_categories) for p in spec.personas)
    if pool_total > spec.total_hostnames:
        raise InfeasibleSpec(f"persona pools need {pool_total} hostnames, universe has {spec.total_hostnames}")
    n_labeled = math.floor(spec.labeled_fraction * spec.total_hostnames + 1e-9)
    if n_labeled > pool_total:
        raise InfeasibleSpec(f"{n_labeled} labels requested but pools only hold {pool_total} hostnames")

    width = len(str(spec.total_hostnames))
    hostnames = [f"h{i:0{width}d}.example" for i in range(spec.total_hostnames)]
    order = rng.permutation(spec.total_hostnames)
    pools: list[list[str]] = []
    truth: dict[str, int] = {}
    persona_of: dict[str, int] = {}
    at = 0
    for pi, p in enumerate(spec.personas):
        pool = []
        for cat in p.interest_categories:
            for _ in range(p.num_hostnames_per_category):
                h = hostnames[order[at]]
                at += 1
                truth[h] = tax.index[cat]
                persona_of[h] = pi
                pool.append(h)
        pools.append([pool[i] for i in rng.permutation(len(pool))])
    background = [hostnames[i] for i in order[at:]]
    pool_hosts = [h for pool in pools for h in pool]
    label_order = [pool_hosts[i] for i in rng.permutation(len(pool_hosts))]

    users = []
    base = int(ipaddress.IPv4Address("10.0.0.1"))
    for pi, p in enumerate(spec.personas):
        for _ in range(spec.users_per_persona):
            i = len(users)
            mult = rng.lognormal(-0.5 * spec.user_rate_sigma**2, spec.user_rate_sigma) if spec.user_rate_sigma > 0 else 1.0
            users.append(User(i, ipaddress.IPv4Address(base + i), pi, p.request_rate * mult))
    return World(spec, hostnames, pools, background, truth, persona_of, label_order, users)


def _zipf_cdf(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** s
    c = np.cumsum(w)
    return c / c[-1]


def generate_tuples(world: World) -> list[FlowTuple]:
    """All requests of all users, merged by timestamp (ties by user index)."""
    spec = world.spec
    span = int(spec.duration * HOUR_MICROS)
    bg_cdf = _zipf_cdf(len(world.background), 1.0) if world.background else None
    events: list[tuple[int, int, FlowTuple]] = []
    for u in world.users:
        p = spec.personas[u.persona]
        rng = np.random.default_rng([spec.seed, 1, u.index])
        n = int(rng.poisson(u.rate * spec.duration)) if u.rate > 0 and span > 0 else 0
        if n == 0:
            continue
        ts = np.sort(rng.integers(0, span, n)) + TRACE_EPOCH_MICROS
        pool = world.pools[u.persona]
        pool_cdf = _zipf_cdf(len(pool), p.zipf_s)
        to_bg = rng.random(n) < p.background_ratio if bg_cdf is not None else np.zeros(n, dtype=bool)
        u01 = rng.random(n)
        pool_pick = np.minimum(np.searchsorted(pool_cdf, u01, side="right"), len(pool) - 1)
        if bg_cdf is not None:
            bg_pick = np.minimum(np.searchsorted(bg_cdf, u01, side="right"), len(world.background) - 1)
        for j in range(n):
            host = world.background[bg_pick[j]] if to_bg[j] else pool[pool_pick[j]]
            events.append((int(ts[j]), u.index, FlowTuple(u.src_ip, host, int(ts[j]))))
    events.sort(key=lambda e: (e[0], e[1]))
    return [e[2] for e in events]


# -- packet synthesis ------------------------------------------------------------

def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\0"
    s = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def server_ip(hostname: str) -> ipaddress.IPv4Address:
    h = hashlib.blake2b(hostname.encode(), digest_size=2).digest()
    return ipaddress.IPv4Address(bytes([198, 18, h[0], h[1] or 1]))


def tcp_frame(
    src_ip,
    dst_ip,
    payload: bytes = b"",
    src_port: int = 40000,
    dst_port: int = 80,
    seq: int = 1,
    vlan: int | None = None,
) -> bytes:
    """Ethernet + IPv4 + TCP frame with valid IP and TCP checksums."""
    src = ipaddress.IPv4Address(src_ip).packed
    dst = ipaddress.IPv4Address(dst_ip).packed
    tcp_len = 20 + len(payload)
    tcp = struct.pack("!HHIIBBHHH", src_port, dst_port, seq, 0, 5 << 4, 0x18, 65535, 0, 0) + payload
    pseudo = src + dst + struct.pack("!BBH", 0, 6, tcp_len)
    tcp = tcp[:16] + struct.pack("!H", _checksum(pseudo + tcp)) + tcp[18:]
    ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + tcp_len, 0, 0x4000, 64, 6, 0, src, dst)
    ip = ip[:10] + struct.pack("!H", _checksum(ip)) + ip[12:]
    eth = b"\x02\x00\x00\x00\x00\x02" + b"\x02\x00\x00\x00\x00\x01"
    if vlan is not None:
        eth += struct.pack("!HH", 0x8100, vlan & 0x0FFF)
    return eth + struct.pack("!H", 0x0800) + ip + tcp


def http_request(hostname: str, path: str = "/", pad_to: int = 0) -> bytes:
    head = f"GET {path} HTTP/1.1\r\nHost: {hostname}\r\nUser-Agent: netvec-synth\r\n"
    req = (head + "\r\n").encode()
    if pad_to > len(req):
        filler = pad_to - len(req) - len("X-Pad: \r\n")
        if filler >= 0:
            req = (head + "X-Pad: " + "a" * filler + "\r\n\r\n").encode()
    return req


def http_frame(src_ip, hostname: str, src_port: int = 40000, seq: int = 1) -> bytes:
    return tcp_frame(src_ip, server_ip(hostname), http_request(hostname), src_port, 80, seq)


ETH_IP_TCP_OVERHEAD = 14 + 20 + 20


def sized_frame(size: int, src_ip="10.0.0.1", hostname: str = "bench.example") -> bytes:
    """Frame of exactly ``size`` bytes; carries an HTTP GET when there is room."""
    room = size - ETH_IP_TCP_OVERHEAD
    req = http_request(hostname, pad_to=room)
    if len(req) != room:
        req = b"\0" * max(room, 0)
    frame = tcp_frame(src_ip, server_ip(hostname), req)
    return frame[:size] if len(frame) > size else frame


def client_hello(hostname: str | None, extra_extensions: bool = True) -> bytes:
    """A TLS 1.2 ClientHello record carrying ``hostname`` in SNI (for parser tests)."""
    body = struct.pack("!H", 0x0303) + bytes(range(32))
    body += b"\x20" + bytes(32)  # session id
    suites = struct.pack("!HHH", 0x1301, 0xC02F, 0x009C)
    body += struct.pack("!H", len(suites)) + suites
    body += b"\x01\x00"  # compression: null
    exts = b""
    if extra_extensions:
        groups = struct.pack("!HH", 0x001D, 0x0017)
        exts += struct.pack("!HHH", 10, len(groups) + 2, len(groups)) + groups
    if hostname is not None:
        name = hostname.encode()
        entry = b"\x00" + struct.pack("!H", len(name)) + name
        sni = struct.pack("!H", len(entry)) + entry
        exts += struct.pack("!HH", 0, len(sni)) + sni
    if hostname is not None or extra_extensions:
        body += struct.pack("!H", len(exts)) + exts
    hs = b"\x01" + len(body).to_bytes(3, "big") + body
    return b"\x16\x03\x01" + struct.pack("!H", len(hs)) + hs


def tuples_to_packets(tuples: list[FlowTuple]) -> list[PacketRecord]:
    out = []
    seqs: dict[str, int] = {}
    for t in tuples:
        key = str(t.src_ip)
        n = seqs.get(key, 0)
        seqs[key] = n + 1
        port = 1024 + (int(t.src_ip) % 60000)
        frame = http_frame(t.src_ip, t.hostname, port, 1 + n * 1000)
        out.append(PacketRecord(t.ts_micros, len(frame), len(frame), frame))
    return out


def generate_trace(world: World, path: str | Path, fmt: str = "tuple-csv") -> list[FlowTuple]:
    """Write the world's trace as pcap or tuple CSV; returns the generated tuples."""
    tuples = generate_tuples(world)
    if fmt == "pcap":
        write_pcap(path, tuples_to_packets(tuples))
    elif fmt in ("tuple-csv", "csv"):
        write_tuple_csv(path, tuples)
    else:
        raise ValueError(f"unknown trace format {fmt!r}")
    return tuples


def default_world_spec(
    seed: int = 7,
    users_per_persona: int = 67,
    duration: float = 48.0,
    request_rate: float = 10.5,
    labeled_fraction: float = 0.25,
    user_rate_sigma: float = 0.0,
) -> WorldSpec:
    """Desk-scale default: 3 personas, 2k hostnames, ~200 users, ~1e5 requests."""
    personas = [
        PersonaSpec("gamer", ("Technology & Computing", "Hobbies & Interests"), 200, 0.3, request_rate),
        PersonaSpec("sports-fan", ("Sports", "Health & Fitness"), 200, 0.3, request_rate),
        PersonaSpec("traveller", ("Travel", "Food & Drink"), 200, 0.3, request_rate),
    ]
    return WorldSpec(
        personas=personas,
        total_hostnames=2000,
        labeled_fraction=labeled_fraction,
        users_per_persona=users_per_persona,
        duration=duration,
        seed=seed,
        user_rate_sigma=user_rate_sigma,
    )
