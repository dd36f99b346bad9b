import ipaddress
import struct

import pytest
from hypothesis import given, strategies as st

from netvec.capture import PacketRecord
from netvec.flow_filter import (
    FilterSpec,
    Fragment,
    NotIP,
    ParsedHeaders,
    Truncated,
    decode_headers,
    matches,
)
from netvec.synth import tcp_frame


def eth(etype, body):
    return bytes(6) + bytes(6) + struct.pack("!H", etype) + body


def ipv4(proto, l4, frag=0, options=b""):
    ihl = 5 + len(options) // 4
    return struct.pack("!BBHHHBBH4s4s", 0x40 | ihl, 0, ihl * 4 + len(l4), 0, frag, 64, proto, 0,
                       bytes([10, 0, 0, 7]), bytes([93, 184, 216, 34])) + options + l4


def tcp(dport, payload=b"", sport=5555):
    return struct.pack("!HHIIBBHHH", sport, dport, 0, 0, 5 << 4, 0x10, 1024, 0, 0) + payload


def test_minimal_tcp_frame():
    frame = eth(0x0800, ipv4(6, tcp(80)))
    assert len(frame) == 54
    h = decode_headers(PacketRecord.from_frame(frame))
    assert (h.ip_proto, h.dst_port, h.src_port, h.payload_len, h.payload_offset) == (6, 80, 5555, 0, 54)
    assert h.src_ip == ipaddress.ip_address("10.0.0.7")


def test_arp_is_not_ip():
    with pytest.raises(NotIP):
        decode_headers(eth(0x0806, bytes(28)))


def test_truncated_mid_tcp_header():
    frame = eth(0x0800, ipv4(6, tcp(80)))[:44]
    with pytest.raises(Truncated):
        decode_headers(frame)


def test_ipv4_options_and_payload():
    frame = eth(0x0800, ipv4(6, tcp(8080, b"hello"), options=bytes(8)))
    h = decode_headers(frame)
    assert h.payload_offset == 14 + 28 + 20
    assert frame[h.payload_offset:h.payload_offset + h.payload_len] == b"hello"


def test_ethernet_padding_excluded_by_ip_length():
    frame = eth(0x0800, ipv4(6, tcp(80))) + bytes(6)  # padded to 60 bytes
    assert decode_headers(frame).payload_len == 0


def test_single_vlan_tag_and_qinq():
    f = tcp_frame("10.1.1.1", "10.2.2.2", b"x", dst_port=80, vlan=42)
    h = decode_headers(f)
    assert h.dst_port == 80 and h.payload_len == 1
    qinq = f[:12] + struct.pack("!HHHH", 0x8100, 1, 0x8100, 2) + f[16:]
    with pytest.raises(NotIP):
        decode_headers(qinq)


def test_non_first_fragment_dropped():
    with pytest.raises(Fragment):
        decode_headers(eth(0x0800, ipv4(6, tcp(80), frag=0x0010)))
    # first fragment (MF set, offset 0) is decoded
    assert decode_headers(eth(0x0800, ipv4(6, tcp(80), frag=0x2000))).dst_port == 80


def ipv6(nxt, l4, ext=b""):
    src = ipaddress.IPv6Address("2001:db8::1").packed
    dst = ipaddress.IPv6Address("2001:db8::2").packed
    return struct.pack("!IHBB", 6 << 28, len(ext) + len(l4), nxt, 64) + src + dst + ext + l4


def test_ipv6_with_hop_by_hop():
    hbh = bytes([6, 0]) + bytes(6)
    h = decode_headers(eth(0x86DD, ipv6(0, tcp(443, b"abc"), hbh)))
    assert (h.ip_proto, h.dst_port, h.payload_len) == (6, 443, 3)
    assert str(h.src_ip) == "2001:db8::1"


def test_ipv6_non_first_fragment():
    frag = bytes([6, 0]) + struct.pack("!H", 8 << 3) + bytes(4)
    with pytest.raises(Fragment):
        decode_headers(eth(0x86DD, ipv6(44, tcp(80), frag)))


def _hdrs(proto=6, dport=80):
    a = ipaddress.ip_address("10.0.0.1")
    return ParsedHeaders(a, a, proto, 1234, dport, 54, 0)


def test_filter_matches():
    spec = FilterSpec(6, frozenset({80}))
    assert matches(spec, _hdrs(6, 80))
    assert not matches(spec, _hdrs(6, 443))
    assert not matches(spec, _hdrs(17, 80))
    assert matches(FilterSpec(), _hdrs(1, None))


def test_filter_from_config():
    spec = FilterSpec.from_config({"proto": "tcp", "dst_ports": [80, 443]})
    assert spec == FilterSpec(6, frozenset({80, 443}))
    assert FilterSpec.from_config(spec.to_config()) == spec
    with pytest.raises(ValueError):
        FilterSpec(6, frozenset())


@given(st.binary(max_size=200))
def test_decode_is_total(data):
    try:
        h = decode_headers(data)
    except (NotIP, Truncated, Fragment):
        return
    assert h.payload_offset + h.payload_len <= len(data)
    if h.ip_proto not in (6, 17):
        assert h.src_port is None and h.dst_port is None


@given(st.binary(min_size=54, max_size=120), st.integers(0, 53))
def test_decode_total_on_mutated_frames(noise, pos):
    base = bytearray(tcp_frame("10.0.0.1", "10.0.0.2", b"GET / HTTP/1.1\r\n\r\n"))
    base[pos] = noise[0]
    try:
        h = decode_headers(bytes(base[: len(noise)]))
    except (NotIP, Truncated, Fragment):
        return
    assert h.payload_offset + h.payload_len <= len(noise)


@given(st.sampled_from([None, 6, 17]), st.sets(st.integers(0, 65535), min_size=1, max_size=4),
       st.integers(0, 65535))
def test_matches_is_pure(proto, ports, dport):
    spec = FilterSpec(proto, frozenset(ports))
    h = _hdrs(6, dport)
    assert matches(spec, h) == matches(spec, h)
