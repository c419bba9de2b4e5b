import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sphbi import labeling as lb
from sphbi.errors import FormatError
from sphbi.labeling import CLASS_INDEX, AttackWindow, label_corpus, label_packet
from sphbi.pcap import RawPacket, dissect, to_table

from conftest import frame, mbap

US = 1_000_000
T0 = 1_700_000_000 * US


def _req(func=3, ts=T0, **kw):
    f = dissect(RawPacket(ts, frame(mbap(1, 1, func, b"\x00\x00\x00\x0a"))))
    return replace(f, **kw)


def _resp(byte_cnt, ts=T0):
    return dissect(RawPacket(ts, frame(mbap(1, 1, 3, bytes([byte_cnt]) + bytes(byte_cnt)), sport=502, dport=49200)))


def win(kind, start=T0 - US, end=T0 + US):
    return AttackWindow(start, end, kind, "s")


def test_brute_force_needs_window_and_func5():
    assert label_packet(_req(5), [win("BruteForce")]).name == "BruteForce"
    assert label_packet(_req(5), []).name == "Normal"
    assert label_packet(_req(3), [win("BruteForce")]).name == "Normal"


def test_fdi_is_self_identifying():
    f = _resp(171)
    assert f.byte_cnt == 171
    lab = label_packet(f, [])
    assert lab.name == "FDI" and lab.binary == 1
    assert label_packet(_resp(20), []).binary == 0


def test_stacking_beats_flooding_window():
    f = _req(frame_count=2)
    assert label_packet(f, [win("QueryFlooding")]).name == "FrameStacking"


def test_delay_response_windows_never_label():
    assert label_packet(_req(3), [win("DelayResponse")]).name == "Normal"
    assert label_packet(_req(5), [win("DelayResponse")]).name == "Normal"


def test_length_manipulation_needs_anomalous_length():
    assert label_packet(_req(3, mbap_length=9), [win("LengthManip")]).name == "LengthManip"
    assert label_packet(_req(3), [win("LengthManip")]).name == "Normal"
    assert label_packet(_req(3, mbap_length=9), []).name == "Normal"


PRIORITY = ["FDI", "FrameStacking", "BruteForce", "LengthManip",
            "QueryFlooding", "Recon", "Replay", "PayloadInjection"]


def test_priority_by_exhaustive_enumeration():
    # every subset of the eight signatures on one packet; the expected label is
    # the first signature present in priority order
    for bits in itertools.product([False, True], repeat=8):
        present = dict(zip(PRIORITY, bits))
        f = _req(5 if present["BruteForce"] else 3,
                 byte_cnt=171 if present["FDI"] else None,
                 frame_count=2 if present["FrameStacking"] else 1,
                 mbap_length=9 if present["LengthManip"] else 6)
        windows = [win(k) for k in PRIORITY[2:] if present[k]]
        expect = next((k for k in PRIORITY if present[k]), "Normal")
        assert label_packet(f, windows).name == expect, present
        labels, _ = label_corpus(to_table([f]), windows)
        assert lb.CLASS_NAMES[labels[0]] == expect


def test_corpus_counts_and_zero_windows():
    pkts = [_req(5, ts=T0 + i) for i in range(100)] + [_req(3, ts=T0 + 10 * US + i) for i in range(900)]
    table = to_table(pkts)
    labels, summary = label_corpus(table, [AttackWindow(T0, T0 + 99, "BruteForce")])
    assert summary["per_class"]["BruteForce"] == 100
    assert summary["per_class"]["Normal"] == 900
    assert summary["attack"] == 100 and summary["total"] == 1000
    labels, summary = label_corpus(table, [])
    assert summary["normal"] == 1000
    one = to_table([_resp(171)])
    assert label_corpus(one, [])[1]["per_class"]["FDI"] == 1


def test_unclosed_window_closes_at_capture_end(caplog):
    pkts = [_req(3, ts=T0 + i * US) for i in range(10)]
    labels, summary = label_corpus(to_table(pkts), [AttackWindow(T0 + 5 * US, None, "Recon")])
    assert summary["per_class"]["Recon"] == 5
    assert "unclosed" in caplog.text


def test_rerun_is_byte_identical():
    rng = np.random.default_rng(0)
    pkts = [_req(int(rng.choice([3, 5])), ts=T0 + int(t)) for t in np.sort(rng.integers(0, 10 * US, 300))]
    ws = [win("BruteForce", T0, T0 + 3 * US), win("Replay", T0 + 4 * US, T0 + 6 * US)]
    a, _ = label_corpus(to_table(pkts), ws)
    b, _ = label_corpus(to_table(pkts), ws)
    assert a.tobytes() == b.tobytes()


fields_st = st.fixed_dictionaries({
    "func": st.sampled_from([1, 3, 4, 5, 6, 16, 23, 43, 0x83]),
    "mlen": st.integers(2, 20),
    "resp": st.booleans(),
    "byte_cnt": st.one_of(st.none(), st.sampled_from([4, 20, 171, 250])),
    "frames": st.sampled_from([1, 1, 1, 2]),
    "t": st.integers(0, 100),
})
window_st = st.tuples(st.sampled_from(lb.ATTACK_TYPES), st.integers(0, 100), st.integers(0, 30))


@given(st.lists(fields_st, min_size=1, max_size=40), st.lists(window_st, max_size=6))
def test_vectorised_labels_match_per_packet_rule(rows, wins):
    pkts = []
    for r in rows:
        f = _req(3)
        pkts.append(replace(f, func_code=r["func"], mbap_length=r["mlen"], byte_cnt=r["byte_cnt"],
                            frame_count=r["frames"], capture_ts=T0 + r["t"],
                            tcp_src_port=502 if r["resp"] else 49200,
                            tcp_dst_port=49200 if r["resp"] else 502))
    windows = [AttackWindow(T0 + s, T0 + s + d, k) for k, s, d in wins]
    labels, _ = label_corpus(to_table(pkts), windows)
    for f, lab in zip(pkts, labels):
        assert label_packet(f, windows).multiclass == lab
    assert CLASS_INDEX.get("DelayResponse") is None
    assert np.array_equal(lb.binary_labels(labels), (labels != 0).astype(np.uint8))


@pytest.mark.parametrize("fc, mlen, resp, bc, anomalous", [
    (3, 6, False, None, False),
    (3, 7, False, None, True),
    (3, 23, True, 20, False),
    (3, 24, True, 20, True),
    (16, 11, False, 4, False),
    (16, 6, True, None, False),
    (0x83, 3, True, None, False),
    (0x83, 4, True, None, True),
    (99, 40, False, None, False),
])
def test_expected_length_table(fc, mlen, resp, bc, anomalous):
    t = lb.load_length_table()
    assert lb.is_length_anomalous(fc, mlen, resp, bc, t) is anomalous


def test_attack_log_round_trip_and_formats(tmp_path):
    p = tmp_path / "log.csv"
    p.write_text("start_ts,end_ts,attack_type,scenario\n"
                 "2023-11-14T22:13:20Z,1700000100.5,Recon,a\n"
                 "1699999000,,BruteForce,b\n")
    ws = lb.read_attack_log(p)
    assert ws[0] == AttackWindow(1_699_999_000 * US, None, "BruteForce", "b")
    assert ws[1] == AttackWindow(1_700_000_000 * US, 1_700_000_100_500_000, "Recon", "a")
    q = tmp_path / "again.csv"
    lb.write_attack_log(ws, q)
    assert lb.read_attack_log(q) == ws


def test_attack_log_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("start_ts,end_ts,attack_type\n10,5,Recon\n")
    with pytest.raises(FormatError):
        lb.read_attack_log(p)
    p.write_text("start_ts,end_ts,attack_type\n10,20,Teleport\n")
    with pytest.raises(FormatError):
        lb.read_attack_log(p)
    p.write_text("begin,end\n1,2\n")
    with pytest.raises(FormatError, match="missing columns"):
        lb.read_attack_log(p)


def _capture_ts():
    return {"cap.pcap": T0 + np.arange(0, 3600 * US, 10 * US)}


def test_offset_zero_when_windows_span_packets():
    ts = _capture_ts()
    rep = lb.check_offset(ts, [AttackWindow(T0, T0 + 3600 * US, "Recon")])
    r = rep["cap.pcap"]
    assert r["best_offset_us"] == 0 and r["overlap_fraction"] == 1.0 and r["warning"] is None


def test_offset_recovers_shift():
    # sparse polling plus dense attack bursts at 600-900 s and 1800-1900 s
    bursts = [np.arange(a * US, b * US, US // 10) for a, b in ((600, 900), (1800, 1900))]
    ts = {"cap.pcap": T0 + np.sort(np.concatenate([np.arange(0, 3600 * US, 10 * US)] + bursts))}
    # the log is one hour late; adding -3600 s to it realigns the windows
    shifted = [AttackWindow(T0 + (600 + 3600) * US, T0 + (900 + 3600) * US, "Recon"),
               AttackWindow(T0 + (1800 + 3600) * US, T0 + (1900 + 3600) * US, "Replay")]
    r = lb.check_offset(ts, shifted)["cap.pcap"]
    assert r["best_offset_us"] == -3600 * US
    assert r["coverage_at_zero"] == 0 and r["coverage_at_best"] > 0


def test_offset_disjoint_warns():
    r = lb.check_offset(_capture_ts(), [AttackWindow(T0 - 10**6 * US, T0 - 10**6 * US + 1, "Recon")])["cap.pcap"]
    assert r["coverage_at_best"] == 0 and r["overlap_fraction"] == 0.0
    assert r["warning"]
