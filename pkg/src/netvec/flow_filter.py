"""L2-L4 header decoding and the port/protocol filter."""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field
from typing import Union

from .capture import PacketRecord

IPAddress = Union[ipaddress.IPv4Address, ipaddress.IPv6Address]

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
ETH_VLAN = 0x8100
ETH_QINQ = 0x88A8

PROTO_TCP = 6
PROTO_UDP = 17
PROTO_NAMES = {"tcp": PROTO_TCP, "udp": PROTO_UDP, "icmp": 1}

_IPV6_HOP_BY_HOP = 0
_IPV6_ROUTING = 43
_IPV6_FRAGMENT = 44


class DropPacket(Exception):
    """Packet is not decodable into IP headers; the pipeline drops it."""


class NotIP(DropPacket):
    pass


class Truncated(DropPacket):
    pass


class Fragment(DropPacket):
    """Non-first IP fragment (no reassembly)."""


@dataclass(frozen=True, slots=True)
class ParsedHeaders:
    src_ip: IPAddress
    dst_ip: IPAddress
    ip_proto: int
    src_port: int | None
    dst_port: int | None
    payload_offset: int
    payload_len: int


_u16 = struct.Struct("!H").unpack_from
_ports = struct.Struct("!HH").unpack_from


def decode_headers(pkt: PacketRecord | bytes) -> ParsedHeaders:
    """Decode Ethernet (one optional 802.1Q tag), IPv4/IPv6 and TCP/UDP ports.

    Raises NotIP, Truncated or Fragment.  Never indexes past the captured bytes.
    """
    data = pkt if isinstance(pkt, (bytes, bytearray, memoryview)) else pkt.data
    n = len(data)
    if n < 14:
        raise Truncated("ethernet header")
    (etype,) = _u16(data, 12)
    off = 14
    if etype == ETH_VLAN:
        if n < 18:
            raise Truncated("vlan tag")
        (etype,) = _u16(data, 16)
        off = 18
        if etype in (ETH_VLAN, ETH_QINQ):
            raise NotIP("stacked vlan tags")

    if etype == ETH_IPV4:
        if n < off + 20:
            raise Truncated("ipv4 header")
        vihl = data[off]
        if vihl >> 4 != 4:
            raise NotIP("ipv4 ethertype with bad version")
        ihl = (vihl & 0x0F) * 4
        if ihl < 20:
            raise NotIP("ipv4 ihl < 5")
        if n < off + ihl:
            raise Truncated("ipv4 options")
        (total_len,) = _u16(data, off + 2)
        (frag,) = _u16(data, off + 6)
        if frag & 0x1FFF:
            raise Fragment("non-first ipv4 fragment")
        proto = data[off + 9]
        src = ipaddress.IPv4Address(bytes(data[off + 12:off + 16]))
        dst = ipaddress.IPv4Address(bytes(data[off + 16:off + 20]))
        l4 = off + ihl
        ip_end = min(n, off + total_len) if total_len >= ihl else n
    elif etype == ETH_IPV6:
        if n < off + 40:
            raise Truncated("ipv6 header")
        if data[off] >> 4 != 6:
            raise NotIP("ipv6 ethertype with bad version")
        (plen,) = _u16(data, off + 4)
        proto = data[off + 6]
        src = ipaddress.IPv6Address(bytes(data[off + 8:off + 24]))
        dst = ipaddress.IPv6Address(bytes(data[off + 24:off + 40]))
        l4 = off + 40
        ip_end = min(n, l4 + plen)
        while proto in (_IPV6_HOP_BY_HOP, _IPV6_ROUTING, _IPV6_FRAGMENT):
            if l4 + 8 > n:
                raise Truncated("ipv6 extension header")
            nxt = data[l4]
            if proto == _IPV6_FRAGMENT:
                (fo,) = _u16(data, l4 + 2)
                if fo & 0xFFF8:
                    raise Fragment("non-first ipv6 fragment")
                ext_len = 8
            else:
                ext_len = (data[l4 + 1] + 1) * 8
            l4 += ext_len
            proto = nxt
        if l4 > n:
            raise Truncated("ipv6 extension header")
    else:
        raise NotIP(f"ethertype 0x{etype:04x}")

    sport = dport = None
    if proto == PROTO_TCP:
        if n < l4 + 20:
            raise Truncated("tcp header")
        sport, dport = _ports(data, l4)
        doff = (data[l4 + 12] >> 4) * 4
        if doff < 20:
            raise Truncated("tcp data offset < 5")
        if n < l4 + doff:
            raise Truncated("tcp options")
        payload = l4 + doff
    elif proto == PROTO_UDP:
        if n < l4 + 8:
            raise Truncated("udp header")
        sport, dport = _ports(data, l4)
        payload = l4 + 8
    else:
        payload = l4
    ip_end = max(ip_end, payload)
    return ParsedHeaders(src, dst, proto, sport, dport, payload, ip_end - payload)


@dataclass(frozen=True)
class FilterSpec:
    proto: int | None = None
    dst_ports: frozenset[int] | None = field(default=None)

    def __post_init__(self):
        if self.dst_ports is not None:
            ports = frozenset(int(p) for p in self.dst_ports)
            if not ports:
                raise ValueError("dst_ports must be non-empty when given")
            if any(not 0 <= p <= 0xFFFF for p in ports):
                raise ValueError("dst_ports must be 16-bit")
            object.__setattr__(self, "dst_ports", ports)

    @classmethod
    def from_config(cls, cfg: dict | None) -> FilterSpec:
        if not cfg:
            return cls()
        proto = cfg.get("proto")
        if isinstance(proto, str):
            proto = PROTO_NAMES[proto.lower()]
        ports = cfg.get("dst_ports")
        return cls(proto, frozenset(ports) if ports is not None else None)

    def to_config(self) -> dict:
        names = {v: k for k, v in PROTO_NAMES.items()}
        out: dict = {}
        if self.proto is not None:
            out["proto"] = names.get(self.proto, self.proto)
        if self.dst_ports is not None:
            out["dst_ports"] = sorted(self.dst_ports)
        return out


def matches(spec: FilterSpec, hdrs: ParsedHeaders) -> bool:
    if spec.proto is not None and hdrs.ip_proto != spec.proto:
        return False
    if spec.dst_ports is not None and hdrs.dst_port not in spec.dst_ports:
        return False
    return True
