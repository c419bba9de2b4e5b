import struct

import pytest
from hypothesis import settings

from sphbi.pcap import RawPacket

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def mbap(txid, unit, func, data, length=None):
    length = 2 + len(data) if length is None else length
    return struct.pack(">HHHBB", txid, 0, length, unit, func) + bytes(data)


def frame(payload=b"", sport=49200, dport=502, proto=6, ihl=5, ttl=64, ip_id=0x1234,
          window=1024, tcp_doff=5, flags=0x18, ethertype=0x0800, total_len=None, frag=0x4000):
    """Ethernet/IPv4/TCP frame assembled field by field (checksums left zero)."""
    eth = bytes.fromhex("ffffffffffff") + bytes.fromhex("020000000001") + struct.pack(">H", ethertype)
    opts = bytes(4 * (ihl - 5))
    if proto == 6:
        l4 = struct.pack(">HHIIHHHH", sport, dport, 1, 1, (tcp_doff << 12) | flags, window, 0, 0)
        l4 += bytes(4 * (tcp_doff - 5)) + payload
    else:
        l4 = struct.pack(">HHHH", sport, dport, 8 + len(payload), 0) + payload
    tl = 4 * ihl + len(l4) if total_len is None else total_len
    ip = struct.pack(">BBHHHBBH4s4s", 0x40 | ihl, 0, tl, ip_id, frag, ttl, proto, 0,
                     bytes([10, 0, 0, 1]), bytes([10, 0, 0, 2])) + opts
    return eth + ip + l4


@pytest.fixture
def poll_packet():
    return RawPacket(1_000_000, frame(mbap(1, 1, 3, b"\x00\x00\x00\x0a")))


# ---------------------------------------------------------------------------
# acceptance report: one line per criterion after the run

CRITERIA = {}


def note(n, text):
    """Attach a measured value to criterion ``n``'s summary line."""
    CRITERIA.setdefault(n, {"title": "", "outcomes": []}).setdefault("notes", []).append(text)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = CRITERIA.setdefault(n, {"title": title, "outcomes": []})
    entry["title"] = title
    if call.when == "call":
        entry["outcomes"].append("fail" if call.excinfo is not None and not call.excinfo.errisinstance(
            pytest.skip.Exception) else ("skip" if call.excinfo is not None else "pass"))
    elif call.when == "setup" and call.excinfo is not None:
        entry["outcomes"].append("skip" if call.excinfo.errisinstance(pytest.skip.Exception) else "fail")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(CRITERIA):
        e = CRITERIA[n]
        outs = e["outcomes"]
        if "fail" in outs:
            status = "FAIL"
        elif outs and all(o == "skip" for o in outs):
            status = "SKIP"
        elif outs:
            status = "PASS"
        else:
            status = "NOT RUN"
        tr.write_line(f"criterion {n}: {status}  {e['title']}")
        for line in e.get("notes", []):
            tr.write_line(f"    {line}")
