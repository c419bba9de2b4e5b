"""Classic pcap reading/writing and Ethernet/IPv4/TCP/Modbus dissection."""

from __future__ import annotations

import csv
import io
import logging
import os
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from .errors import FormatError

log = logging.getLogger(__name__)

MODBUS_PORT = 502
LINKTYPE_ETHERNET = 1

MAGIC_US = 0xA1B2C3D4
MAGIC_NS = 0xA1B23C4D

ETH_LEN = 14
IPV4_MIN_LEN = 20
TCP_MIN_LEN = 20
MBAP_LEN = 7

# skip reasons returned by dissect()
NON_IP = "non-ip"
NON_TCP = "non-tcp"
NON_502 = "non-502"
NO_MBAP = "no-mbap-payload"
IP_OPTIONS = "ip-options"
MALFORMED = "malformed"
SKIP_REASONS = (NON_IP, NON_TCP, NON_502, NO_MBAP, IP_OPTIONS, MALFORMED)

CAPTURE_CLASSES = ("benign", "external", "compromised-scada", "compromised-ied")


@dataclass(frozen=True, slots=True)
class RawPacket:
    capture_ts: int  # microseconds since epoch
    link_bytes: bytes


@dataclass(slots=True)
class PacketFields:
    """Decoded header fields of one Modbus TCP packet (first ADU of the segment)."""

    ip_version_ihl: int
    ip_dscp_ecn: int
    ip_total_len: int
    ip_id: int
    ip_flags_fragoff: int
    ip_ttl: int
    ip_protocol: int
    tcp_src_port: int
    tcp_dst_port: int
    tcp_seq: int
    tcp_ack: int
    tcp_offset_flags: int
    tcp_window: int
    mbap_transaction_id: int
    mbap_protocol_id: int
    mbap_length: int
    mbap_unit_id: int
    func_code: int
    pdu_bytes: bytes
    frame_count: int = 1
    byte_cnt: int | None = None
    capture_ts: int = 0

    @property
    def is_response(self) -> bool:
        return self.tcp_src_port == MODBUS_PORT


# ---------------------------------------------------------------------------
# pcap container


_GLOBAL = struct.Struct("IHHiIII")
_RECORD = struct.Struct("IIII")


def _open(src) -> tuple[BinaryIO, bool]:
    if isinstance(src, (str, os.PathLike)):
        return open(src, "rb"), True
    if isinstance(src, (bytes, bytearray, memoryview)):
        return io.BytesIO(bytes(src)), True
    return src, False


def read_pcap(src) -> Iterator[RawPacket]:
    """Yield packets of a classic pcap file in file order.

    ``src`` may be a path, a bytes object or a binary stream. Timestamps are
    converted to integer microseconds; nanosecond captures are truncated.
    """
    fh, owned = _open(src)
    try:
        head = fh.read(24)
        if len(head) < 24:
            raise FormatError("file shorter than the 24-byte pcap global header")
        magic_le = struct.unpack("<I", head[:4])[0]
        if magic_le in (MAGIC_US, MAGIC_NS):
            endian = "<"
            magic = magic_le
        else:
            magic = struct.unpack(">I", head[:4])[0]
            if magic not in (MAGIC_US, MAGIC_NS):
                raise FormatError(f"bad pcap magic 0x{magic_le:08x}")
            endian = ">"
        nanos = magic == MAGIC_NS
        _, _, _, _, _, _, linktype = struct.unpack(endian + _GLOBAL.format, head)
        if linktype != LINKTYPE_ETHERNET:
            raise FormatError(f"unsupported link type {linktype} (only Ethernet=1)")
        rec = struct.Struct(endian + _RECORD.format)
        offset = 24
        last_ts = None
        while True:
            hdr = fh.read(16)
            if not hdr:
                return
            if len(hdr) < 16:
                raise FormatError(f"truncated record header at byte offset {offset}")
            ts_sec, ts_sub, incl_len, _orig = rec.unpack(hdr)
            data = fh.read(incl_len)
            if len(data) < incl_len:
                raise FormatError(
                    f"truncated record at byte offset {offset}: "
                    f"expected {incl_len} bytes, got {len(data)}"
                )
            ts = ts_sec * 1_000_000 + (ts_sub // 1000 if nanos else ts_sub)
            if last_ts is not None and ts < last_ts:
                log.warning("timestamp decreased at byte offset %d", offset)
            last_ts = ts
            offset += 16 + incl_len
            yield RawPacket(ts, data)
    finally:
        if owned:
            fh.close()


def write_pcap(
    packets: Iterable[RawPacket],
    dest,
    *,
    nanosecond: bool = False,
    big_endian: bool = False,
    snaplen: int = 65535,
) -> int:
    """Write packets as a classic pcap file. Returns the number of records."""
    endian = ">" if big_endian else "<"
    own = isinstance(dest, (str, os.PathLike))
    fh = open(dest, "wb") if own else dest
    try:
        magic = MAGIC_NS if nanosecond else MAGIC_US
        fh.write(struct.pack(endian + _GLOBAL.format, magic, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))
        rec = struct.Struct(endian + _RECORD.format)
        n = 0
        for p in packets:
            sec, usec = divmod(p.capture_ts, 1_000_000)
            sub = usec * 1000 if nanosecond else usec
            fh.write(rec.pack(sec, sub, len(p.link_bytes), len(p.link_bytes)))
            fh.write(p.link_bytes)
            n += 1
        return n
    finally:
        if own:
            fh.close()


# ---------------------------------------------------------------------------
# dissection

_ETH = struct.Struct("!6s6sH")
_IP = struct.Struct("!BBHHHBBH4s4s")
_TCP = struct.Struct("!HHIIHHHH")
_MBAP = struct.Struct("!HHHB")

# (function code, is_response) -> offset of the byte-count field inside the PDU
_BYTE_CNT_OFFSET = {
    (1, True): 0,
    (2, True): 0,
    (3, True): 0,
    (4, True): 0,
    (23, True): 0,
    (15, False): 4,
    (16, False): 4,
    (23, False): 8,
}


def byte_count_of(func_code: int, pdu: bytes, is_response: bool) -> int | None:
    off = _BYTE_CNT_OFFSET.get((func_code, is_response))
    if off is None or off >= len(pdu):
        return None
    return pdu[off]


def dissect(pkt: RawPacket) -> PacketFields | str:
    """Decode a captured frame, or return one of ``SKIP_REASONS``.

    Never raises on malformed input; anything inconsistent maps to ``MALFORMED``.
    """
    b = pkt.link_bytes
    if len(b) < ETH_LEN:
        return MALFORMED
    ethertype = _ETH.unpack_from(b, 0)[2]
    if ethertype != 0x0800:
        return NON_IP
    if len(b) < ETH_LEN + IPV4_MIN_LEN:
        return MALFORMED
    ver_ihl, dscp, total_len, ip_id, flags_frag, ttl, proto, _csum, _src, _dst = _IP.unpack_from(b, ETH_LEN)
    if ver_ihl >> 4 != 4:
        return NON_IP
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < IPV4_MIN_LEN:
        return MALFORMED
    if total_len > len(b) - ETH_LEN or total_len < ihl:
        return MALFORMED
    if proto != 6:
        return NON_TCP
    if ihl != IPV4_MIN_LEN:
        return IP_OPTIONS
    if flags_frag & 0x3FFF:
        # fragments carry no reliable TCP header
        return MALFORMED
    tcp_off = ETH_LEN + ihl
    if total_len < ihl + TCP_MIN_LEN:
        return MALFORMED
    sport, dport, seq, ack, off_flags, window, _tcs, _urg = _TCP.unpack_from(b, tcp_off)
    if sport != MODBUS_PORT and dport != MODBUS_PORT:
        return NON_502
    doff = (off_flags >> 12) * 4
    if doff < TCP_MIN_LEN or ihl + doff > total_len:
        return MALFORMED
    payload_start = tcp_off + doff
    payload_end = ETH_LEN + total_len
    if payload_end - payload_start < MBAP_LEN + 1:
        return NO_MBAP
    txid, proto_id, mlen, unit = _MBAP.unpack_from(b, payload_start)
    if mlen < 2:
        return MALFORMED
    first_end = payload_start + 6 + mlen
    if first_end > payload_end:
        return MALFORMED
    func = b[payload_start + MBAP_LEN]
    pdu = bytes(b[payload_start + MBAP_LEN + 1 : first_end])

    frames = 1
    pos = first_end
    while pos + MBAP_LEN + 1 <= payload_end:
        nlen = (b[pos + 4] << 8) | b[pos + 5]
        if nlen < 2 or pos + 6 + nlen > payload_end:
            break
        frames += 1
        pos += 6 + nlen

    is_resp = sport == MODBUS_PORT
    return PacketFields(
        ip_version_ihl=ver_ihl,
        ip_dscp_ecn=dscp,
        ip_total_len=total_len,
        ip_id=ip_id,
        ip_flags_fragoff=flags_frag,
        ip_ttl=ttl,
        ip_protocol=proto,
        tcp_src_port=sport,
        tcp_dst_port=dport,
        tcp_seq=seq,
        tcp_ack=ack,
        tcp_offset_flags=off_flags,
        tcp_window=window,
        mbap_transaction_id=txid,
        mbap_protocol_id=proto_id,
        mbap_length=mlen,
        mbap_unit_id=unit,
        func_code=func,
        pdu_bytes=pdu,
        frame_count=frames,
        byte_cnt=byte_count_of(func, pdu, is_resp),
        capture_ts=pkt.capture_ts,
    )


# ---------------------------------------------------------------------------
# columnar form used by the rest of the pipeline

FIELD_DTYPE = np.dtype(
    [
        ("ip_version_ihl", "u1"),
        ("ip_dscp_ecn", "u1"),
        ("ip_total_len", "<u2"),
        ("ip_id", "<u2"),
        ("ip_flags_fragoff", "<u2"),
        ("ip_ttl", "u1"),
        ("ip_protocol", "u1"),
        ("tcp_src_port", "<u2"),
        ("tcp_dst_port", "<u2"),
        ("tcp_seq", "<u4"),
        ("tcp_ack", "<u4"),
        ("tcp_offset_flags", "<u2"),
        ("tcp_window", "<u2"),
        ("mbap_transaction_id", "<u2"),
        ("mbap_protocol_id", "<u2"),
        ("mbap_length", "<u2"),
        ("mbap_unit_id", "u1"),
        ("func_code", "u1"),
        ("pdu_len", "<u2"),
        ("pdu4", "u1", (4,)),
        ("frame_count", "<u2"),
        ("byte_cnt", "<i2"),  # -1 when absent
        ("capture_ts", "<u8"),
    ]
)

_SCALARS = [n for n in FIELD_DTYPE.names if n not in ("pdu_len", "pdu4", "byte_cnt")]


def to_table(records: Iterable[PacketFields]) -> np.ndarray:
    recs = list(records)
    out = np.zeros(len(recs), dtype=FIELD_DTYPE)
    if not recs:
        return out
    for name in _SCALARS:
        out[name] = [getattr(r, name) for r in recs]
    out["pdu_len"] = [len(r.pdu_bytes) for r in recs]
    out["byte_cnt"] = [-1 if r.byte_cnt is None else r.byte_cnt for r in recs]
    pdu4 = np.zeros((len(recs), 4), dtype=np.uint8)
    for i, r in enumerate(recs):
        head = r.pdu_bytes[:4]
        pdu4[i, : len(head)] = np.frombuffer(head, dtype=np.uint8)
    out["pdu4"] = pdu4
    return out


def from_row(row) -> PacketFields:
    """Rebuild a PacketFields from one table row (PDU limited to its first 4 bytes)."""
    kw = {name: int(row[name]) for name in _SCALARS}
    n = min(int(row["pdu_len"]), 4)
    bc = int(row["byte_cnt"])
    return PacketFields(pdu_bytes=bytes(row["pdu4"][:n]), byte_cnt=None if bc < 0 else bc, **kw)


# ---------------------------------------------------------------------------
# file- and directory-level extraction


@dataclass
class ExtractResult:
    path: str
    fields: list[PacketFields] = field(default_factory=list)
    frames: list[bytes] = field(default_factory=list)
    skips: Counter = field(default_factory=Counter)
    total: int = 0
    error: str | None = None


def extract_file(path, keep_frames: bool = False) -> ExtractResult:
    res = ExtractResult(str(path))
    for pkt in read_pcap(path):
        res.total += 1
        out = dissect(pkt)
        if isinstance(out, str):
            res.skips[out] += 1
            continue
        res.fields.append(out)
        if keep_frames:
            res.frames.append(pkt.link_bytes)
    return res


@dataclass
class ManifestEntry:
    file_path: str
    capture_class: str
    scenario: str


def read_manifest(path) -> dict[str, ManifestEntry]:
    """Read ``file_path,capture_class,scenario`` CSV keyed by resolved path."""
    entries: dict[str, ManifestEntry] = {}
    base = Path(path).parent
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                fp = row["file_path"].strip()
                cls = row["capture_class"].strip()
            except (KeyError, AttributeError) as exc:
                raise FormatError(f"manifest {path}: missing column ({exc})") from None
            p = Path(fp)
            if not p.is_absolute():
                p = base / p
            entries[str(p.resolve())] = ManifestEntry(fp, cls, (row.get("scenario") or "").strip())
    return entries


@dataclass
class SurveyRow:
    file: str
    capture_class: str
    scenario: str
    total_packets: int
    modbus_packets: int
    skips: dict
    error: str | None = None


def list_pcaps(path, pattern: str = "*.pcap*") -> list[Path]:
    p = Path(path)
    if p.is_file():
        return [p]
    return sorted(q for q in p.rglob(pattern) if q.is_file())


def scan_directory(path, pattern: str = "*.pcap*", manifest=None) -> list[SurveyRow]:
    """Survey every capture under ``path``; unreadable files are recorded, not raised."""
    entries = read_manifest(manifest) if manifest else {}
    rows = []
    for f in list_pcaps(path, pattern):
        ent = entries.get(str(f.resolve()))
        cls = ent.capture_class if ent else "unknown"
        scen = ent.scenario if ent else ""
        try:
            res = extract_file(f)
        except (OSError, FormatError) as exc:
            log.warning("cannot read %s: %s", f, exc)
            rows.append(SurveyRow(str(f), cls, scen, 0, 0, {}, str(exc)))
            continue
        rows.append(SurveyRow(str(f), cls, scen, res.total, len(res.fields), dict(res.skips)))
    return rows


def survey_by_class(rows: list[SurveyRow]) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = {}
    for r in rows:
        g = out.setdefault(r.capture_class, {"files": 0, "modbus_packets": 0})
        g["files"] += 1
        g["modbus_packets"] += r.modbus_packets
    return out
