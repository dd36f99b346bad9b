import math
from collections import Counter

import pytest

from netvec.capture import open_pcap
from netvec.flow_filter import FilterSpec
from netvec.pipeline import RunMetrics, packet_tuples
from netvec.synth import (
    InfeasibleSpec,
    PersonaSpec,
    WorldSpec,
    default_world_spec,
    generate_trace,
    generate_tuples,
    generate_world,
)
from netvec.tuple_gen import read_tuple_csv


def small_spec(**kw):
    personas = [
        PersonaSpec("p0", ("Sports",), 100, 0.3, 30.0),
        PersonaSpec("p1", ("Travel", "Food & Drink"), 100, 0.2, 30.0),
    ]
    args = dict(personas=personas, total_hostnames=1000, labeled_fraction=0.25, users_per_persona=5,
                duration=2.0, seed=3)
    args.update(kw)
    return WorldSpec(**args)


def test_labeled_count():
    w = generate_world(small_spec())
    assert len(w.store) == 250
    assert all(h in w.truth for h in w.store.labels)
    assert not set(w.store.labels) & set(w.background)


def test_infeasible():
    personas = [PersonaSpec("a", ("Sports",), 600), PersonaSpec("b", ("Travel",), 600)]
    with pytest.raises(InfeasibleSpec):
        generate_world(WorldSpec(personas, total_hostnames=1000))
    with pytest.raises(InfeasibleSpec):
        generate_world(small_spec(labeled_fraction=0.9))


def test_spec_validation():
    with pytest.raises(ValueError):
        PersonaSpec("x", ())
    with pytest.raises(ValueError):
        PersonaSpec("x", ("Sports",), background_ratio=1.0)
    with pytest.raises(ValueError):
        small_spec(labeled_fraction=1.5)
    with pytest.raises(ValueError):
        WorldSpec([PersonaSpec("x", ("Not A Category",))])


def test_pools_disjoint():
    w = generate_world(small_spec())
    a, b = set(w.pools[0]), set(w.pools[1])
    assert not a & b
    assert not (a | b) & set(w.background)
    assert len(a) == 100 and len(b) == 200
    assert len({str(u.src_ip) for u in w.users}) == len(w.users)


def test_nested_label_sets():
    w = generate_world(small_spec())
    prev = set()
    for f in (0.0, 0.05, 0.1, 0.25, 0.3):
        cur = set(w.store_for_fraction(f).labels)
        assert prev <= cur and len(cur) == math.floor(f * 1000 + 1e-9)
        prev = cur


def test_determinism():
    a, b = generate_world(small_spec()), generate_world(small_spec())
    assert a.pools == b.pools and a.label_order == b.label_order
    assert generate_tuples(a) == generate_tuples(b)
    assert generate_tuples(a) != generate_tuples(generate_world(small_spec(seed=4)))


def test_trace_ordering_and_rates():
    w = generate_world(small_spec(duration=10.0))
    ts = generate_tuples(w)
    assert [t.ts_micros for t in ts] == sorted(t.ts_micros for t in ts)
    per_user = Counter(str(t.src_ip) for t in ts)
    # 300 expected per user; Poisson sd ~17
    assert all(200 < c < 400 for c in per_user.values())
    # requests stay inside the persona's pool or the background
    ip_persona = w.user_persona()
    bg = set(w.background)
    for t in ts:
        assert t.hostname in bg or w.persona_of[t.hostname] == ip_persona[str(t.src_ip)]


def test_background_ratio():
    w = generate_world(small_spec(duration=20.0))
    ts = generate_tuples(w)
    bg = set(w.background)
    frac = sum(t.hostname in bg for t in ts) / len(ts)
    assert abs(frac - 0.25) < 0.03


def test_label_coverage_chi_square():
    # labels are spread over the pools in proportion to pool size
    w = generate_world(default_world_spec())
    counts = Counter(w.persona_of[h] for h in w.store.labels)
    n = len(w.store)
    sizes = [len(p) for p in w.pools]
    exp = [n * s / sum(sizes) for s in sizes]
    chi2 = sum((counts[i] - e) ** 2 / e for i, e in enumerate(exp))
    # two degrees of freedom: survival function is exp(-x/2)
    assert math.exp(-chi2 / 2) > 0.001


def test_rate_zero_is_empty(tmp_path):
    spec = small_spec(personas=[PersonaSpec("p", ("Sports",), 300, 0.3, 0.0)])
    assert generate_tuples(generate_world(spec)) == []
    generate_trace(generate_world(spec), tmp_path / "e.csv")
    assert read_tuple_csv(tmp_path / "e.csv") == []


def test_csv_round_trip(tmp_path):
    w = generate_world(small_spec())
    ts = generate_trace(w, tmp_path / "t.csv", "tuple-csv")
    assert read_tuple_csv(tmp_path / "t.csv") == ts


def test_pcap_round_trip(tmp_path):
    w = generate_world(small_spec())
    ts = generate_trace(w, tmp_path / "t.pcap", "pcap")
    m = RunMetrics()
    with open_pcap(tmp_path / "t.pcap") as r:
        back = list(packet_tuples(r, FilterSpec.from_config({"proto": "tcp", "dst_ports": [80]}), m))
    assert back == ts
    assert m["packets_in"] == m["matched"] == len(ts)


def test_default_world_scale():
    w = generate_world(default_world_spec())
    assert len(w.users) == 201 and len(w.hostnames) == 2000
    assert len(w.background) == 800
    assert len(generate_tuples(w)) >= 100_000


def test_from_config():
    cfg = {"personas": [{"name": "p", "interest_categories": ["Sports"], "num_hostnames_per_category": 10}],
           "total_hostnames": 50, "users_per_persona": 2, "duration": 1.0, "labeled_fraction": 0.1}
    spec = WorldSpec.from_config(cfg)
    assert spec.personas[0].num_hostnames_per_category == 10
    assert len(generate_world(spec).store) == 5
