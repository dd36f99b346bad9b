"""Random and mutated inputs for the capture -> filter -> tuple_gen path."""

import struct

import numpy as np

from netvec.capture import CaptureError, PacketRecord, PcapReader, pcap_bytes
from netvec.flow_filter import DropPacket, decode_headers
from netvec.synth import client_hello, http_request, tcp_frame
from netvec.tuple_gen import NoTuple, make_tuple, normalize_hostname


def seed_frames():
    ipv6 = bytes(12) + b"\x86\xdd" + struct.pack("!IHBB", 6 << 28, 20 + 19, 6, 64) + bytes(32) + \
        struct.pack("!HHIIBBHHH", 1, 80, 0, 0, 0x50, 0, 0, 0, 0) + b"GET / HTTP/1.1\r\nH:\r\n"
    return [
        tcp_frame("10.0.0.1", "10.0.0.2", http_request("seed.example"), dst_port=80),
        tcp_frame("10.0.0.1", "10.0.0.2", b"GET / HTTP/1.1\r\nHost: a\r\n b.example:8080\r\n\r\n", dst_port=80),
        tcp_frame("10.0.0.1", "10.0.0.2", client_hello("tls.example"), dst_port=443),
        tcp_frame("10.0.0.1", "10.0.0.2", client_hello("other.example"), dst_port=8443, vlan=7),
        tcp_frame("10.0.0.1", "10.0.0.2", b"", dst_port=80),
        ipv6,
    ]


def check_frame(data: bytes) -> int:
    """Run one frame through the parsers; return 1 if a tuple came out."""
    pkt = PacketRecord(0, len(data), len(data), data)
    try:
        h = decode_headers(pkt)
    except DropPacket:
        return 0
    assert 0 <= h.payload_offset and h.payload_offset + h.payload_len <= len(data)
    try:
        t = make_tuple(pkt, h)
    except NoTuple:
        return 0
    assert normalize_hostname(t.hostname) == t.hostname
    return 1


def check_pcap(buf: bytes) -> int:
    n = 0
    try:
        for pkt in PcapReader(buf):
            n += 1
            assert len(pkt.data) == pkt.captured_len
    except CaptureError:
        pass
    return n


def mutate(rng, base: bytes) -> bytes:
    b = bytearray(base)
    op = rng.integers(5)
    if op == 0:  # flip bytes
        for pos in rng.integers(0, len(b), rng.integers(1, 6)):
            b[pos] = rng.integers(256)
    elif op == 1:  # truncate
        del b[rng.integers(0, len(b) + 1):]
    elif op == 2:  # insert junk
        pos = rng.integers(0, len(b) + 1)
        b[pos:pos] = rng.bytes(int(rng.integers(1, 16)))
    elif op == 3:  # overwrite a 16-bit length-ish field with an extreme value
        pos = rng.integers(0, max(1, len(b) - 1))
        b[pos:pos + 2] = rng.choice([b"\x00\x00", b"\xff\xff", b"\x00\x01", b"\x7f\xff"])
    else:  # fully random
        return rng.bytes(int(rng.integers(0, 200)))
    return bytes(b)


def run_fuzz(n: int, seed: int = 0) -> dict:
    """Feed ``n`` inputs (about 1 in 20 a mutated pcap file) through the parsers."""
    rng = np.random.default_rng(seed)
    frames = seed_frames()
    pcap_seed = pcap_bytes([PacketRecord.from_frame(f) for f in frames[:3]])
    tuples = packets = 0
    for i in range(n):
        if i % 20 == 0:
            packets += check_pcap(mutate(rng, pcap_seed))
        else:
            tuples += check_frame(mutate(rng, frames[i % len(frames)]))
    return {"inputs": n, "tuples": tuples, "pcap_packets": packets}
