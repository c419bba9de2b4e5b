"""Synthetic Modbus TCP captures with attack logs and per-packet ground truth.

Benign traffic is a single SCADA master polling a few IEDs (function codes
3/4) plus occasional operator writes (function code 6). Attack segments
inject traffic carrying each class's signature inside a logged time window.
All traffic shares the master's connections, so IP/TCP headers stay almost
uniform across classes.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .labeling import ATTACK_TYPES, CLASS_INDEX, CLASS_NAMES, AttackWindow, write_attack_log
from .pcap import MODBUS_PORT, RawPacket, write_pcap

US = 1_000_000

MASTER_IP = bytes([192, 168, 1, 10])
MASTER_MAC = bytes.fromhex("02005e000a01")
IED_MAC = bytes.fromhex("02005e000b01")
MASTER_WINDOW = 64240
IED_WINDOW = 8192
TTL = 64


@dataclass
class Segment:
    type: str
    start: float  # seconds after scenario start
    duration: float
    intensity: float = 50.0  # attack requests per second, where applicable


@dataclass
class ScenarioConfig:
    seed: int = 0
    mode: str = "easy"  # "easy" or "hard"
    start_ts: float = 1_700_000_000.0
    duration: float = 3600.0
    poll_interval: float = 0.5
    n_ieds: int = 3
    write_interval: float = 60.0
    func_mix: dict = field(default_factory=lambda: {"3": 0.6, "4": 0.4})
    segments: list = field(default_factory=list)
    scenario: str = "synthetic"

    def __post_init__(self):
        self.segments = [s if isinstance(s, Segment) else Segment(**s) for s in self.segments]
        if self.mode not in ("easy", "hard"):
            raise ConfigError(f"mode must be 'easy' or 'hard', got {self.mode!r}")
        for s in self.segments:
            if s.type not in ATTACK_TYPES:
                raise ConfigError(f"unknown segment type {s.type!r}")
            if s.start < 0 or s.duration <= 0 or s.start + s.duration > self.duration:
                raise ConfigError(f"segment {s} outside scenario duration {self.duration}")
        spans = sorted((s.start, s.start + s.duration, s.type) for s in self.segments)
        for (a0, a1, ta), (b0, b1, tb) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ConfigError(f"segments {ta} and {tb} overlap")

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        return cls(**json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["segments"] = [asdict(s) for s in self.segments]
        return d


def default_config(mode: str = "easy", seed: int = 0, scale: float = 1.0) -> ScenarioConfig:
    """All nine classes plus a delay-response window, roughly 200k packets at scale 1."""
    lm_rate = 30.0 if mode == "easy" else 3.0
    segs = [
        Segment("BruteForce", 2000, 30, 100),
        Segment("QueryFlooding", 5000, 10, 250),
        Segment("Recon", 8000, 8, 80),
        Segment("Replay", 12000, 10, 20),
        Segment("PayloadInjection", 16000, 8, 80),
        Segment("FDI", 20000, 400),
        Segment("FrameStacking", 25000, 300),
        Segment("LengthManip", 30000, 10, lm_rate),
        Segment("DelayResponse", 35000, 300),
        Segment("BruteForce", 40000, 20, 100),
    ]
    dur = 45000.0
    if scale != 1.0:
        for s in segs:
            s.start *= scale
            s.duration *= scale
        dur *= scale
    return ScenarioConfig(seed=seed, mode=mode, duration=dur, segments=segs, scenario=f"synthetic-{mode}")


# ---------------------------------------------------------------------------
# frame construction


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    s = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def build_frame(src_ip, dst_ip, sport, dport, seq, ack, payload, ip_id, window, src_mac, dst_mac) -> bytes:
    tcp_len = 20 + len(payload)
    total = 20 + tcp_len
    ip = bytearray(struct.pack("!BBHHHBBH4s4s", 0x45, 0, total, ip_id, 0x4000, TTL, 6, 0, src_ip, dst_ip))
    ip[10:12] = struct.pack("!H", _checksum(bytes(ip)))
    tcp = bytearray(struct.pack("!HHIIHHHH", sport, dport, seq, ack, 0x5018, window, 0, 0))
    pseudo = src_ip + dst_ip + struct.pack("!BBH", 0, 6, tcp_len)
    tcp[16:18] = struct.pack("!H", _checksum(pseudo + bytes(tcp) + payload))
    frame = dst_mac + src_mac + b"\x08\x00" + bytes(ip) + bytes(tcp) + payload
    if len(frame) < 60:
        frame += bytes(60 - len(frame))
    return frame


def adu(txid: int, unit: int, func: int, data: bytes, length: int | None = None) -> bytes:
    """MBAP header + function code + data; ``length`` overrides the MBAP length field."""
    mlen = 2 + len(data) if length is None else length
    return struct.pack("!HHHBB", txid & 0xFFFF, 0, mlen, unit, func) + data


@dataclass
class _Event:
    ts: int
    ied: int
    response: bool
    payload: bytes
    label: int
    kind: str = ""
    frame: bytes | None = None


class _Gen:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.t0 = int(round(cfg.start_ts * US))
        self.sport = [int(x) for x in self.rng.integers(49152, 65535, cfg.n_ieds)]
        self.sensor = [self.rng.integers(200, 800, 16).astype(np.int64) for _ in range(cfg.n_ieds)]
        self.events: list[_Event] = []
        self.windows = [
            (self.t0 + int(s.start * US), self.t0 + int((s.start + s.duration) * US), s)
            for s in cfg.segments
        ]

    def in_segment(self, ts, kind):
        for a, b, s in self.windows:
            if s.type == kind and a <= ts <= b:
                return s
        return None

    def next_txid(self, ied):
        # random ids keep the field stationary over the capture
        return int(self.rng.integers(0, 65536))

    def reply_delay(self):
        return int(self.rng.integers(1500, 6000))

    def emit(self, ts, ied, response, payload, label=0, kind=""):
        self.events.append(_Event(int(ts), ied, response, payload, label, kind))

    # -- benign --------------------------------------------------------------

    def read_response(self, ied, txid, unit, func, count):
        # stationary readings: fixed operating point plus measurement noise
        regs = np.resize(self.sensor[ied], count) + self.rng.integers(-20, 21, count)
        data = regs.astype(">u2").tobytes()
        return adu(txid, unit, func, bytes([len(data)]) + data)

    def benign(self):
        cfg = self.cfg
        n_polls = int(cfg.duration / cfg.poll_interval)
        funcs = [int(k) for k in cfg.func_mix]
        probs = np.array([cfg.func_mix[k] for k in cfg.func_mix], dtype=float)
        probs /= probs.sum()
        jitter = self.rng.integers(0, int(cfg.poll_interval * US * 0.2), n_polls)
        choice = self.rng.choice(len(funcs), size=n_polls, p=probs)
        for i in range(n_polls):
            ts = self.t0 + int(i * cfg.poll_interval * US) + int(jitter[i])
            ied = i % cfg.n_ieds
            unit = ied + 1
            func = funcs[choice[i]]
            addr, count = (0, 10) if func == 3 else (100, 8)
            tx = self.next_txid(ied)
            fs = self.in_segment(ts, "FrameStacking")
            if fs is not None:
                tx2 = self.next_txid(ied)
                req = adu(tx, unit, func, struct.pack("!HH", addr, count)) + adu(
                    tx2, unit, func, struct.pack("!HH", addr, count))
                self.emit(ts, ied, False, req, CLASS_INDEX["FrameStacking"], "stacked")
                t = ts + self.reply_delay()
                self.emit(t, ied, True, self.read_response(ied, tx, unit, func, count), 0, "poll")
                self.emit(t + 300, ied, True, self.read_response(ied, tx2, unit, func, count), 0, "poll")
                continue
            self.emit(ts, ied, False, adu(tx, unit, func, struct.pack("!HH", addr, count)), 0, "poll")
            t = ts + self.reply_delay()
            if self.in_segment(t, "DelayResponse") is not None:
                t += int(self.rng.integers(150_000, 400_000))
            if func == 3 and self.in_segment(t, "FDI") is not None:
                forged = self.rng.integers(0, 256, 171, dtype=np.uint8).tobytes()
                self.emit(t, ied, True, adu(tx, unit, 3, bytes([171]) + forged), CLASS_INDEX["FDI"], "fdi")
            else:
                self.emit(t, ied, True, self.read_response(ied, tx, unit, func, count), 0, "poll")
        n_writes = int(cfg.duration / cfg.write_interval)
        for i in range(n_writes):
            ts = self.t0 + int((i + 0.37) * cfg.write_interval * US)
            ied = int(self.rng.integers(0, cfg.n_ieds))
            unit = ied + 1
            body = struct.pack("!HH", 200 + int(self.rng.integers(0, 4)), 1000 + int(self.rng.integers(0, 100)))
            tx = self.next_txid(ied)
            self.emit(ts, ied, False, adu(tx, unit, 6, body), 0, "write")
            self.emit(ts + self.reply_delay(), ied, True, adu(tx, unit, 6, body), 0, "write")

    # -- attacks ---------------------------------------------------------------

    def _times(self, s: Segment):
        n = max(1, int(round(s.duration * s.intensity)))
        start = self.t0 + int(s.start * US)
        step = s.duration * US / n
        return [start + int(k * step) for k in range(n)]

    def attacks(self):
        for s in self.cfg.segments:
            label = CLASS_INDEX.get(s.type, 0)
            gen = getattr(self, "_att_" + s.type, None)
            if gen is not None:
                gen(s, label)

    def _pair(self, ts, ied, req, resp, label, kind):
        self.emit(ts, ied, False, req, label, kind)
        if resp is not None:
            self.emit(ts + self.reply_delay(), ied, True, resp, label, kind)

    def _att_BruteForce(self, s, label):
        for k, ts in enumerate(self._times(s)):
            ied = int(self.rng.integers(0, self.cfg.n_ieds))
            # sweep the coil range 0..999 and toggle each coil
            body = struct.pack("!HH", k % 1000, 0xFF00 if k % 2 == 0 else 0x0000)
            tx = self.next_txid(ied)
            self._pair(ts, ied, adu(tx, ied + 1, 5, body), adu(tx, ied + 1, 5, body), label, "bf")

    def _att_QueryFlooding(self, s, label):
        for k, ts in enumerate(self._times(s)):
            ied = k % self.cfg.n_ieds
            func = 3 if k % 2 == 0 else 4
            tx = self.next_txid(ied)
            req = adu(tx, ied + 1, func, struct.pack("!HH", 0, 125))
            self._pair(ts, ied, req, self.read_response(ied, tx, ied + 1, func, 125), label, "flood")

    def _att_Recon(self, s, label):
        scan = [1, 2, 7, 8, 11, 12, 17, 20, 21, 22, 24, 43, 65, 66, 67, 100, 101]
        for k, ts in enumerate(self._times(s)):
            ied = int(self.rng.integers(0, self.cfg.n_ieds))
            unit = 1 + (k * 7) % 247
            func = scan[k % len(scan)]
            if func == 43:
                data = bytes([14, 1, 0])
            elif func in (7, 11, 12, 17):
                data = b""
            else:
                data = struct.pack("!HH", 0, 1)
            tx = self.next_txid(ied)
            resp = adu(tx, unit, func | 0x80, bytes([1]))
            self._pair(ts, ied, adu(tx, unit, func, data), resp, label, "recon")

    def _att_PayloadInjection(self, s, label):
        for ts in self._times(s):
            ied = int(self.rng.integers(0, self.cfg.n_ieds))
            addr = int(self.rng.integers(0x9000, 0xA000))
            vals = self.rng.integers(0xC000, 0x10000, 2).astype(">u2").tobytes()
            tx = self.next_txid(ied)
            req = adu(tx, ied + 1, 16, struct.pack("!HHB", addr, 2, 4) + vals)
            resp = adu(tx, ied + 1, 16, struct.pack("!HH", addr, 2))
            self._pair(ts, ied, req, resp, label, "inject")

    def _att_LengthManip(self, s, label):
        for ts in self._times(s):
            ied = int(self.rng.integers(0, self.cfg.n_ieds))
            pad = int(self.rng.integers(1, 5))
            data = struct.pack("!HH", 0, 10) + bytes(pad)
            tx = self.next_txid(ied)
            # length covers the padding, so the frame stays well formed; no reply
            self._pair(ts, ied, adu(tx, ied + 1, 3, data), None, label, "lenmanip")

    # -- framing ------------------------------------------------------------

    def frames(self) -> list[_Event]:
        evs = sorted(self.events, key=lambda e: e.ts)
        seq_m = [int(x) for x in self.rng.integers(0, 2**32, self.cfg.n_ieds)]
        seq_s = [int(x) for x in self.rng.integers(0, 2**32, self.cfg.n_ieds)]
        ip_ids = self.rng.integers(0, 65536, len(evs))
        for e, ip_id in zip(evs, ip_ids):
            i = e.ied
            ied_ip = bytes([192, 168, 1, 101 + i])
            if e.response:
                e.frame = build_frame(ied_ip, MASTER_IP, MODBUS_PORT, self.sport[i], seq_s[i], seq_m[i],
                                      e.payload, int(ip_id), IED_WINDOW, IED_MAC, MASTER_MAC)
                seq_s[i] = (seq_s[i] + len(e.payload)) & 0xFFFFFFFF
            else:
                e.frame = build_frame(MASTER_IP, ied_ip, self.sport[i], MODBUS_PORT, seq_m[i], seq_s[i],
                                      e.payload, int(ip_id), MASTER_WINDOW, MASTER_MAC, IED_MAC)
                seq_m[i] = (seq_m[i] + len(e.payload)) & 0xFFFFFFFF
        return evs

    def replays(self, evs: list[_Event]) -> list[_Event]:
        """Bit-identical copies of earlier benign exchanges, sent inside Replay windows."""
        out = []
        source_kind = "write" if self.cfg.mode == "easy" else "poll"
        for s in self.cfg.segments:
            if s.type != "Replay":
                continue
            start = self.t0 + int(s.start * US)
            pool = [k for k, e in enumerate(evs) if e.ts < start and e.kind == source_kind
                    and not e.response and e.label == 0]
            if not pool:
                raise ConfigError("Replay segment has no earlier benign traffic to copy")
            for ts in self._times(s):
                k = pool[int(self.rng.integers(0, len(pool)))]
                out.append(_Event(ts, evs[k].ied, False, evs[k].payload, CLASS_INDEX["Replay"], "replay", evs[k].frame))
                # the recorded reply is replayed right behind the request
                nxt = next((j for j in range(k + 1, min(k + 50, len(evs)))
                            if evs[j].response and evs[j].ied == evs[k].ied), None)
                if nxt is not None:
                    out.append(_Event(ts + 2000, evs[nxt].ied, True, evs[nxt].payload,
                                      CLASS_INDEX["Replay"], "replay", evs[nxt].frame))
        return out


@dataclass
class Synthetic:
    packets: list[RawPacket]
    labels: np.ndarray  # generator intent per packet (multiclass codes)
    windows: list[AttackWindow]
    config: ScenarioConfig

    def ground_truth_names(self):
        return [CLASS_NAMES[i] for i in self.labels]


def generate(cfg: ScenarioConfig) -> Synthetic:
    g = _Gen(cfg)
    g.benign()
    g.attacks()
    evs = g.frames()
    evs = sorted(evs + g.replays(evs), key=lambda e: e.ts)
    packets = [RawPacket(e.ts, e.frame) for e in evs]
    labels = np.array([e.label for e in evs], dtype=np.uint8)
    windows = []
    ts = np.array([e.ts for e in evs], dtype=np.int64)
    for a, b, s in g.windows:
        # replies to the last attack requests can land after the nominal end
        lab = CLASS_INDEX.get(s.type)
        if lab is not None:
            near = (labels == lab) & (ts >= a) & (ts <= b + US)
            if near.any():
                b = max(b, int(ts[near].max()))
        windows.append(AttackWindow(a, b, s.type, cfg.scenario))
    return Synthetic(packets, labels, windows, cfg)


def write_outputs(syn: Synthetic, out_dir) -> dict:
    """Write capture.pcap, attack_log.csv, ground_truth.csv, manifest.csv, config.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "pcap": out / "capture.pcap",
        "attack_log": out / "attack_log.csv",
        "ground_truth": out / "ground_truth.csv",
        "manifest": out / "manifest.csv",
        "config": out / "config.json",
    }
    write_pcap(syn.packets, paths["pcap"])
    write_attack_log(syn.windows, paths["attack_log"])
    with open(paths["ground_truth"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["packet_index", "true_label"])
        for i, lab in enumerate(syn.labels):
            w.writerow([i, CLASS_NAMES[lab]])
    cls = "compromised-scada" if any(s.type != "DelayResponse" for s in syn.config.segments) else "benign"
    with open(paths["manifest"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file_path", "capture_class", "scenario"])
        w.writerow(["capture.pcap", cls, syn.config.scenario])
    paths["config"].write_text(json.dumps(syn.config.to_dict(), indent=2, sort_keys=True) + "\n")
    return {k: str(v) for k, v in paths.items()}


def read_ground_truth(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([CLASS_INDEX[r["true_label"]] for r in rows], dtype=np.uint8)
