"""Per-packet Modbus TCP intrusion detection on binary header images."""

__version__ = "0.1.0"

from .codec import APPROACHES, Approach, encode, reconstruct, select
from .labeling import CLASS_NAMES, Label, label_packet
from .pcap import PacketFields, RawPacket, dissect, read_pcap, write_pcap

__all__ = [
    "APPROACHES",
    "Approach",
    "CLASS_NAMES",
    "Label",
    "PacketFields",
    "RawPacket",
    "dissect",
    "encode",
    "label_packet",
    "read_pcap",
    "reconstruct",
    "select",
    "write_pcap",
    "__version__",
]
