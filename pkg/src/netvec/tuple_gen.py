"""Turn filtered packets into ``<src ip, hostname>`` tuples.

Hostnames come from the Host header of an HTTP/1.x request or from the SNI
extension of a TLS ClientHello.  Only the first request in a packet is looked
at; there is no TCP reassembly.
"""

from __future__ import annotations

import csv
import ipaddress
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .capture import PacketRecord
from .flow_filter import IPAddress, ParsedHeaders

TUPLE_CSV_HEADER = ("ts_micros", "src_ip", "hostname")
MAX_HOSTNAME_LEN = 253


class NoHost(ValueError):
    pass


class NoSni(ValueError):
    pass


class NoTuple(ValueError):
    pass


class InvalidHostname(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class FlowTuple:
    src_ip: IPAddress
    hostname: str
    ts_micros: int


_HOST_OK = re.compile(r"[a-z0-9._-]+")
_PORT_SUFFIX = re.compile(r":[0-9]*$")


def normalize_hostname(raw: str | bytes, allow_port: bool = True) -> str:
    """Trim, drop a ``:port`` suffix, lowercase and whitelist-check a hostname."""
    if isinstance(raw, (bytes, bytearray, memoryview)):
        try:
            raw = bytes(raw).decode("ascii")
        except UnicodeDecodeError:
            raise InvalidHostname("non-ascii hostname") from None
    elif not raw.isascii():
        raise InvalidHostname("non-ascii hostname")
    host = raw.strip(" \t")
    if allow_port:
        host = _PORT_SUFFIX.sub("", host, count=1)
    host = host.lower()
    if host.endswith("."):
        host = host[:-1]
    if not host or len(host) > MAX_HOSTNAME_LEN:
        raise InvalidHostname(f"bad hostname length {len(host)}")
    if not _HOST_OK.fullmatch(host):
        raise InvalidHostname(f"disallowed characters in {host!r}")
    return host


_REQUEST_LINE = re.compile(rb"(?:\r?\n)*[!#$%&'*+\-.^_`|~0-9A-Za-z]+ [^ \r\n]+ HTTP/1\.[01]\r?\n")
_TOKEN = re.compile(rb"[!#$%&'*+\-.^_`|~0-9A-Za-z]+")


def extract_http_host(payload: bytes) -> str:
    """Return the normalized value of the first Host header of an HTTP/1.x request.

    Only complete header lines (terminated by LF) count.  Folded continuation
    lines are joined with a single space before normalization.
    """
    payload = bytes(payload)
    m = _REQUEST_LINE.match(payload)
    if m is None:
        raise NoHost("not an HTTP/1.x request")
    pos = m.end()
    n = len(payload)
    value: bytes | None = None
    while pos < n:
        eol = payload.find(b"\n", pos)
        if eol < 0:
            break
        line = payload[pos:eol]
        pos = eol + 1
        if line.endswith(b"\r"):
            line = line[:-1]
        if not line:
            break
        if line[0] in b" \t":
            if value is not None:
                value = value + b" " + line.strip(b" \t")
            continue
        if value is not None:
            break
        name, sep, rest = line.partition(b":")
        if sep and _TOKEN.fullmatch(name) and name.lower() == b"host":
            value = rest
    if value is None:
        raise NoHost("no Host header in captured bytes")
    try:
        return normalize_hostname(value)
    except InvalidHostname as exc:
        raise NoHost(str(exc)) from None


_u16 = struct.Struct("!H").unpack_from


def extract_tls_sni(payload: bytes) -> str:
    """Return the first host_name entry of the SNI extension of a TLS ClientHello."""
    p = bytes(payload)
    n = len(p)
    if n < 9 or p[0] != 0x16 or p[1] != 0x03:
        raise NoSni("not a TLS handshake record")
    (rec_len,) = _u16(p, 3)
    end = min(n, 5 + rec_len)
    if p[5] != 0x01:
        raise NoSni("not a ClientHello")
    hs_len = int.from_bytes(p[6:9], "big")
    end = min(end, 9 + hs_len)
    pos = 9 + 2 + 32  # client_version, random
    if pos + 1 > end:
        raise NoSni("truncated ClientHello")
    pos += 1 + p[pos]  # session_id
    if pos + 2 > end:
        raise NoSni("truncated ClientHello")
    pos += 2 + _u16(p, pos)[0]  # cipher_suites
    if pos + 1 > end:
        raise NoSni("truncated ClientHello")
    pos += 1 + p[pos]  # compression_methods
    if pos + 2 > end:
        raise NoSni("ClientHello without extensions")
    (ext_total,) = _u16(p, pos)
    pos += 2
    ext_end = min(end, pos + ext_total)
    while pos + 4 <= ext_end:
        ext_type, ext_len = struct.unpack_from("!HH", p, pos)
        pos += 4
        if ext_type != 0:
            pos += ext_len
            continue
        stop = min(ext_end, pos + ext_len)
        if pos + 2 > stop:
            break
        list_end = min(stop, pos + 2 + _u16(p, pos)[0])
        pos += 2
        while pos + 3 <= list_end:
            name_type = p[pos]
            (name_len,) = _u16(p, pos + 1)
            pos += 3
            if pos + name_len > list_end:
                break
            if name_type == 0:
                try:
                    return normalize_hostname(p[pos:pos + name_len], allow_port=False)
                except InvalidHostname as exc:
                    raise NoSni(str(exc)) from None
            pos += name_len
        break
    raise NoSni("no server_name extension")


def make_tuple(pkt: PacketRecord, hdrs: ParsedHeaders) -> FlowTuple:
    start = hdrs.payload_offset
    payload = pkt.data[start:start + hdrs.payload_len]
    if not payload:
        raise NoTuple("empty payload")
    if hdrs.dst_port == 80:
        extractors = (extract_http_host,)
    elif hdrs.dst_port == 443:
        extractors = (extract_tls_sni,)
    else:
        extractors = (extract_http_host, extract_tls_sni)
    for extract in extractors:
        try:
            return FlowTuple(hdrs.src_ip, extract(payload), pkt.ts_micros)
        except (NoHost, NoSni):
            continue
    raise NoTuple("no hostname in payload")


class TupleCsvSource:
    """Offline tuple source reading ``ts_micros,src_ip,hostname`` CSV logs.

    Malformed rows are skipped and counted in ``invalid``.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.invalid = 0

    def __iter__(self) -> Iterator[FlowTuple]:
        with open(self.path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                return
            if tuple(header) != TUPLE_CSV_HEADER:
                raise ValueError(f"{self.path}: expected header {','.join(TUPLE_CSV_HEADER)}")
            for row in reader:
                try:
                    ts, ip, host = row
                    yield FlowTuple(ipaddress.ip_address(ip), normalize_hostname(host, allow_port=False), int(ts))
                except ValueError:
                    self.invalid += 1


def read_tuple_csv(path: str | Path) -> list[FlowTuple]:
    return list(TupleCsvSource(path))


def write_tuple_csv(path: str | Path, tuples: Iterable[FlowTuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TUPLE_CSV_HEADER)
        for t in tuples:
            w.writerow((t.ts_micros, str(t.src_ip), t.hostname))
