"""Packet sources: classic pcap files and in-memory synthetic traffic.

Only the classic libpcap format is handled (no pcapng), and only Ethernet
link types are accepted.  Readers work over a buffer (an mmap for files) and
hand out :class:`PacketRecord` values in file order.
"""

from __future__ import annotations

import mmap
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

MAGIC_MICRO = 0xA1B2C3D4
MAGIC_NANO = 0xA1B23C4D
LINKTYPE_ETHERNET = 1

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16


class CaptureError(Exception):
    pass


class BadMagic(CaptureError):
    pass


class UnsupportedLinkType(CaptureError):
    pass


class TruncatedHeader(CaptureError):
    pass


class TruncatedRecord(CaptureError):
    pass


@dataclass(frozen=True, slots=True)
class PacketRecord:
    ts_micros: int
    captured_len: int
    original_len: int
    data: bytes

    @classmethod
    def from_frame(cls, frame: bytes, ts_micros: int = 0, original_len: int | None = None) -> PacketRecord:
        return cls(ts_micros, len(frame), len(frame) if original_len is None else original_len, frame)


@dataclass(frozen=True)
class PcapHeader:
    magic: int
    endianness: str  # "little" | "big"
    ts_resolution: str  # "micro" | "nano"
    snaplen: int
    linktype: int
    version: tuple[int, int] = (2, 4)

    @property
    def byte_order(self) -> str:
        return "<" if self.endianness == "little" else ">"


def parse_global_header(buf: bytes | memoryview) -> PcapHeader:
    if len(buf) < GLOBAL_HEADER_LEN:
        raise TruncatedHeader(f"pcap global header needs {GLOBAL_HEADER_LEN} bytes, got {len(buf)}")
    raw = bytes(buf[:4])
    for order, endianness in (("<", "little"), (">", "big")):
        (magic,) = struct.unpack(order + "I", raw)
        if magic in (MAGIC_MICRO, MAGIC_NANO):
            break
    else:
        raise BadMagic(f"unrecognized pcap magic {raw.hex()}")
    major, minor, _zone, _sigfigs, snaplen, linktype = struct.unpack_from(order + "HHiIII", buf, 4)
    if linktype != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"linktype {linktype} (only Ethernet=1 supported)")
    return PcapHeader(
        magic=magic,
        endianness=endianness,
        ts_resolution="micro" if magic == MAGIC_MICRO else "nano",
        snaplen=snaplen,
        linktype=linktype,
        version=(major, minor),
    )


class PcapReader:
    """Single-consumer reader over a pcap image held in memory (or mmapped).

    ``next_packet`` returns ``None`` at end of stream.  A record whose body is
    cut short raises :class:`TruncatedRecord` exactly once; the reader is
    exhausted afterwards.
    """

    def __init__(self, buf: bytes | bytearray | memoryview | mmap.mmap, name: str = "<memory>"):
        self._buf = buf
        self._view = memoryview(buf)
        self.name = name
        self.header = parse_global_header(self._view)
        self._rec = struct.Struct(self.header.byte_order + "IIII")
        self._offset = GLOBAL_HEADER_LEN
        self._end = len(self._view)
        self._nano = self.header.ts_resolution == "nano"
        self._done = False
        self.truncated = False

    @property
    def endianness(self) -> str:
        return self.header.endianness

    @property
    def ts_resolution(self) -> str:
        return self.header.ts_resolution

    def _fail_truncated(self, msg: str) -> None:
        self._done = True
        self.truncated = True
        raise TruncatedRecord(msg)

    def next_packet(self) -> PacketRecord | None:
        if self._done:
            return None
        off = self._offset
        if off >= self._end:
            self._done = True
            return None
        if off + RECORD_HEADER_LEN > self._end:
            self._fail_truncated(f"record header at offset {off} cut short")
        sec, sub, incl, orig = self._rec.unpack_from(self._view, off)
        start = off + RECORD_HEADER_LEN
        stop = start + incl
        if stop > self._end:
            self._fail_truncated(f"record at offset {off} wants {incl} bytes, {self._end - start} remain")
        self._offset = stop
        if self._nano:
            sub //= 1000
        return PacketRecord(sec * 1_000_000 + sub, incl, max(orig, incl), bytes(self._view[start:stop]))

    def __iter__(self) -> Iterator[PacketRecord]:
        while (pkt := self.next_packet()) is not None:
            yield pkt

    def drain(self) -> tuple[int, int]:
        """Skip to end of stream, counting packets and wire bytes without copying.

        Raises TruncatedRecord (once) like ``next_packet``; the partial counts
        are kept on ``self.drained``.
        """
        unpack = struct.Struct(self.header.byte_order + "II").unpack_from
        view, end, off = self._view, self._end, self._offset
        packets = nbytes = 0
        self.drained = (0, 0)
        if self._done:
            return 0, 0
        try:
            while off < end:
                if off + RECORD_HEADER_LEN > end:
                    self._offset = off
                    self._fail_truncated(f"record header at offset {off} cut short")
                incl, orig = unpack(view, off + 8)
                off += RECORD_HEADER_LEN + incl
                if off > end:
                    self._fail_truncated("record body cut short")
                packets += 1
                nbytes += orig
        finally:
            self.drained = (packets, nbytes)
        self._offset = off
        self._done = True
        return packets, nbytes

    def close(self) -> None:
        self._view.release()
        if isinstance(self._buf, mmap.mmap):
            self._buf.close()

    def __enter__(self) -> PcapReader:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_pcap(path: str | Path) -> PcapReader:
    path = Path(path)
    size = path.stat().st_size
    if size < GLOBAL_HEADER_LEN:
        raise TruncatedHeader(f"{path}: {size} bytes is shorter than a pcap global header")
    with open(path, "rb") as fh:
        buf = mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ)
    return PcapReader(buf, name=str(path))


def next_packet(source) -> PacketRecord | None:
    return source.next_packet()


class SyntheticSource:
    """In-memory packet source over a list of records (or a repeated frame)."""

    def __init__(self, records: Iterable[PacketRecord]):
        self._records = list(records)
        self._i = 0

    @classmethod
    def repeat(cls, frame: bytes, count: int, original_len: int | None = None) -> SyntheticSource:
        rec = PacketRecord.from_frame(frame, 0, original_len)
        src = cls(())
        src._records = [rec] * count
        return src

    def next_packet(self) -> PacketRecord | None:
        if self._i >= len(self._records):
            return None
        rec = self._records[self._i]
        self._i += 1
        return rec

    def __iter__(self) -> Iterator[PacketRecord]:
        while (pkt := self.next_packet()) is not None:
            yield pkt

    def drain(self) -> tuple[int, int]:
        rest = self._records[self._i:]
        self._i = len(self._records)
        return len(rest), sum(r.original_len for r in rest)


@dataclass
class CaptureStats:
    packets: int = 0
    bytes: int = 0
    elapsed: float = 0.0
    truncated: bool = False

    @property
    def mpps(self) -> float:
        return self.packets / self.elapsed / 1e6 if self.elapsed > 0 else 0.0

    @property
    def gbps(self) -> float:
        return self.bytes * 8 / self.elapsed / 1e9 if self.elapsed > 0 else 0.0


def discard_sink(source) -> CaptureStats:
    """Drain ``source``, counting packets and wire bytes, then drop everything.

    A truncated trailing record sets ``truncated`` instead of raising; other
    source errors propagate.
    """
    stats = CaptureStats()
    t0 = time.perf_counter()
    if hasattr(source, "drain"):
        try:
            stats.packets, stats.bytes = source.drain()
        except TruncatedRecord:
            stats.packets, stats.bytes = source.drained
            stats.truncated = True
    else:
        try:
            for pkt in source:
                stats.packets += 1
                stats.bytes += pkt.original_len
        except TruncatedRecord:
            stats.truncated = True
    stats.elapsed = time.perf_counter() - t0
    return stats


def pcap_bytes(
    records: Iterable[PacketRecord],
    endianness: str = "little",
    ts_resolution: str = "micro",
    snaplen: int = 65535,
) -> bytes:
    order = "<" if endianness == "little" else ">"
    magic = MAGIC_MICRO if ts_resolution == "micro" else MAGIC_NANO
    scale = 1 if ts_resolution == "micro" else 1000
    rec = struct.Struct(order + "IIII")
    parts = [struct.pack(order + "IHHiIII", magic, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET)]
    for r in records:
        sec, usec = divmod(r.ts_micros, 1_000_000)
        parts.append(rec.pack(sec, usec * scale, r.captured_len, r.original_len))
        parts.append(r.data)
    return b"".join(parts)


def write_pcap(
    dest: str | Path | BinaryIO,
    records: Iterable[PacketRecord],
    endianness: str = "little",
    ts_resolution: str = "micro",
    snaplen: int = 65535,
) -> None:
    data = pcap_bytes(records, endianness, ts_resolution, snaplen)
    if hasattr(dest, "write"):
        dest.write(data)
    else:
        Path(dest).write_bytes(data)
