"""30-byte header reconstruction, approach byte selection and bit-image encoding.

Byte layout (positions):

    0      version/IHL            10-11  TCP source port
    1      DSCP/ECN               12-13  TCP destination port
    2-3    IP total length        14-15  TCP data offset + flags
    4-5    IP identification      16-17  TCP window
    6-7    IP flags + frag offset 18-19  MBAP transaction id
    8      TTL                    20-21  MBAP protocol id
    9      protocol               22-23  MBAP length
                                  24     MBAP unit id
                                  25     function code
                                  26-29  first four PDU operand bytes (zero padded)

Addresses and checksums are left out on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .pcap import ETH_LEN, PacketFields

N_BYTES = 30
IP_VER_POS = 0
IP_PROTO_POS = 9
MBAP_POS = 18
FUNC_POS = 25


@dataclass(frozen=True)
class Approach:
    id: str
    start: int
    stop: int
    image_h: int
    image_w: int
    description: str = ""

    @property
    def n_bytes(self) -> int:
        return self.stop - self.start

    @property
    def shape(self) -> tuple[int, int]:
        return (self.image_h, self.image_w)


APPROACHES: dict[str, Approach] = {
    "1": Approach("1", 0, 18, 12, 12, "TCP/IP only"),
    "2": Approach("2", 0, 26, 16, 13, "TCP/IP+MBAP+FC"),
    "2b": Approach("2b", 0, 30, 16, 15, "TCP/IP+MBAP+FC+PDU"),
    "3": Approach("3", 18, 26, 8, 8, "MBAP+FC"),
    "3b": Approach("3b", 18, 30, 12, 8, "MBAP+FC+PDU"),
}


def get_approach(a) -> Approach:
    if isinstance(a, Approach):
        return a
    try:
        return APPROACHES[str(a)]
    except KeyError:
        raise ContractError(f"unknown approach {a!r}; expected one of {sorted(APPROACHES)}") from None


def _hi_lo(v: int) -> tuple[int, int]:
    return (v >> 8) & 0xFF, v & 0xFF


def reconstruct(f: PacketFields) -> bytes:
    """Rebuild the 30 raw bytes from decoded fields (network byte order)."""
    out = bytearray(N_BYTES)
    out[0] = f.ip_version_ihl
    out[1] = f.ip_dscp_ecn
    out[2:4] = _hi_lo(f.ip_total_len)
    out[4:6] = _hi_lo(f.ip_id)
    out[6:8] = _hi_lo(f.ip_flags_fragoff)
    out[8] = f.ip_ttl
    out[9] = f.ip_protocol
    out[10:12] = _hi_lo(f.tcp_src_port)
    out[12:14] = _hi_lo(f.tcp_dst_port)
    out[14:16] = _hi_lo(f.tcp_offset_flags)
    out[16:18] = _hi_lo(f.tcp_window)
    out[18:20] = _hi_lo(f.mbap_transaction_id)
    out[20:22] = _hi_lo(f.mbap_protocol_id)
    out[22:24] = _hi_lo(f.mbap_length)
    out[24] = f.mbap_unit_id
    out[25] = f.func_code
    pdu = f.pdu_bytes[:4]
    out[26 : 26 + len(pdu)] = pdu
    return bytes(out)


def reconstruct_from_decoded(
    ip_hdr_len: int, ip_version: int = 4, tcp_hdr_len: int = 20, tcp_flags: int = 0, **fields
) -> bytes:
    """Reconstruct from tshark-style decoded values.

    The decoder reports lengths in bytes (``ip.hdr_len=20``, ``tcp.hdr_len=20``)
    and TCP flags separately; this packs them back into the wire nibbles.
    """
    ver_ihl = ((ip_version & 0xF) << 4) | ((ip_hdr_len // 4) & 0xF)
    off_flags = (((tcp_hdr_len // 4) & 0xF) << 12) | (tcp_flags & 0x0FFF)
    return reconstruct(PacketFields(ip_version_ihl=ver_ihl, tcp_offset_flags=off_flags, **fields))


def _be16(col: np.ndarray) -> np.ndarray:
    c = col.astype(np.uint16)
    return np.stack([(c >> 8).astype(np.uint8), (c & 0xFF).astype(np.uint8)], axis=1)


def reconstruct_table(table: np.ndarray) -> np.ndarray:
    """Vectorised ``reconstruct`` over a ``pcap.FIELD_DTYPE`` table -> (n, 30) uint8."""
    n = len(table)
    out = np.zeros((n, N_BYTES), dtype=np.uint8)
    out[:, 0] = table["ip_version_ihl"]
    out[:, 1] = table["ip_dscp_ecn"]
    out[:, 2:4] = _be16(table["ip_total_len"])
    out[:, 4:6] = _be16(table["ip_id"])
    out[:, 6:8] = _be16(table["ip_flags_fragoff"])
    out[:, 8] = table["ip_ttl"]
    out[:, 9] = table["ip_protocol"]
    out[:, 10:12] = _be16(table["tcp_src_port"])
    out[:, 12:14] = _be16(table["tcp_dst_port"])
    out[:, 14:16] = _be16(table["tcp_offset_flags"])
    out[:, 16:18] = _be16(table["tcp_window"])
    out[:, 18:20] = _be16(table["mbap_transaction_id"])
    out[:, 20:22] = _be16(table["mbap_protocol_id"])
    out[:, 22:24] = _be16(table["mbap_length"])
    out[:, 24] = table["mbap_unit_id"]
    out[:, 25] = table["func_code"]
    out[:, 26:30] = table["pdu4"]
    return out


# frame offsets of the 30 positions, assuming a 20-byte IP header
_IP = ETH_LEN
_TCP = ETH_LEN + 20
_RAW_OFFSETS = (
    list(range(_IP, _IP + 10))
    + [_TCP + 0, _TCP + 1, _TCP + 2, _TCP + 3, _TCP + 12, _TCP + 13, _TCP + 14, _TCP + 15]
)


def slice_raw(frame: bytes) -> bytes:
    """Read the 30 positions straight out of a captured frame.

    Independent of the decode path; PDU bytes stop at the end of the first ADU.
    """
    out = bytearray(frame[o] for o in _RAW_OFFSETS)
    doff = (frame[_TCP + 12] >> 4) * 4
    mb = _TCP + doff
    out += frame[mb : mb + 8]
    mlen = (frame[mb + 4] << 8) | frame[mb + 5]
    pdu_end = mb + 6 + mlen
    ops = frame[mb + 8 : min(mb + 12, pdu_end)]
    out += ops + bytes(4 - len(ops))
    return bytes(out)


def select(v, a) -> np.ndarray:
    """Contiguous byte subset of a 30-byte vector (or an (n, 30) batch)."""
    a = get_approach(a)
    arr = np.asarray(bytearray(v) if isinstance(v, (bytes, bytearray)) else v, dtype=np.uint8)
    if arr.shape[-1] != N_BYTES:
        raise ContractError(f"expected {N_BYTES} bytes, got {arr.shape[-1]}")
    return arr[..., a.start : a.stop]


def encode(b, a) -> np.ndarray:
    """Unpack bytes MSB-first into a row-major (h, w) bit image of 0/1 uint8.

    Accepts one byte sequence or an (n, k) batch, returning (h, w) or (n, h, w).
    """
    a = get_approach(a)
    arr = np.asarray(bytearray(b) if isinstance(b, (bytes, bytearray)) else b, dtype=np.uint8)
    if arr.shape[-1] != a.n_bytes:
        raise ContractError(
            f"approach {a.id} takes {a.n_bytes} bytes, got {arr.shape[-1]}"
        )
    bits = np.unpackbits(arr, axis=-1, bitorder="big")
    return bits.reshape(arr.shape[:-1] + a.shape)


def decode(img: np.ndarray) -> np.ndarray:
    """Inverse of ``encode``: pack a bit image back into bytes."""
    img = np.asarray(img, dtype=np.uint8)
    flat = img.reshape(img.shape[:-2] + (-1,))
    return np.packbits(flat, axis=-1, bitorder="big")


def images(vectors: np.ndarray, a, dtype=np.float32) -> np.ndarray:
    """(n, 30) byte vectors -> (n, 1, h, w) float network input."""
    a = get_approach(a)
    return encode(select(vectors, a), a)[:, None, :, :].astype(dtype)
