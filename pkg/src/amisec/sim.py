"""Discrete-event simulation of the key-distribution and transport protocol.

Nodes: the control center, a master server that issues key pairs, an
auxiliary server that recovers each session's random sequence, a data
concentrator, and smart meters on a radio mesh. Control messages travel over
a backhaul link; data blocks travel hop by hop over the mesh toward the
concentrator. The first meter that hears a data burst directly from its
claimed sender checks it against that sender's learned traffic profile.

Everything random is drawn from purpose-specific streams, and events are
ordered by (tick, insertion number), so a seed fully determines the trace.
"""
from __future__ import annotations

import csv
import enum
import heapq
import io
import math
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import auth
from .core import (AUXILIARY_SERVER, CONTROL_CENTER, DATA_CONCENTRATOR, FIRST_METER_ID,
                   MASTER_SERVER, TICKS_PER_SECOND, MsgType, PacketHeader, RngStream, Stream,
                   WireError, decode_frame, encode_frame, trace_line)
from .crypto import (CipherBlob, CryptoError, KeyPair, SecretKey, decrypt, encrypt, keygen,
                     parse_key)
from .localization import (Anchor, GeometryError, PsoConfig, RssConfig, UnderdeterminedError,
                           localize, simulate_rss)
from .ocsvm import Kernel
from .sequencer import (RandomSequence, SequencerError, apply_order, derive_order,
                        gen_sequence, invert_order, segment)

ADVERSARY_BASE_ID = 900
SERVERS = (CONTROL_CENTER, MASTER_SERVER, AUXILIARY_SERVER)


class ConfigError(ValueError):
    """Scenario file problem; ``key`` and ``line`` point at the offending entry."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = ""
        if key is not None:
            where += f"{key}: "
        if line is not None:
            where = f"line {line}: " + where
        super().__init__(where + message)
        self.key = key
        self.line = line


class ProtocolError(RuntimeError):
    pass


class SemiTrustViolation(AssertionError):
    pass


class Phase(enum.Enum):
    AWAIT_KEY = "await_key"
    AWAIT_SEQ_ACK = "await_seq_ack"
    TRANSMITTING = "transmitting"
    DONE = "done"
    FAILED = "failed"


class AlertReason(enum.IntEnum):
    AUTH_REJECT = 1
    UNREGISTERED = 2
    UNKNOWN_SESSION = 3
    TAMPERED_SEQUENCE = 4


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class AdversarySpec:
    kind: str  # rogue | eavesdropper | replayer
    activation_tick: int = 0
    victim: int | None = None
    position: tuple[float, float] | None = None
    offset: tuple[float, float] | None = None
    rate_s: float = 900.0
    count: int = 10
    link: tuple[int, int] | None = None
    delay_ticks: int = 1000


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    topology: str = "grid"
    rows: int = 2
    cols: int = 5
    spacing: float = 30.0
    positions: dict | None = None  # explicit topology: id -> (x, y)
    edges: tuple | None = None
    meters: int | None = None
    sessions: int = 100
    blocks: int = 32
    key_bits: int = 256
    payload_bytes: int = 31
    nu: float = 0.1
    kernel: str = "median"
    sigma_db: float = 12.0
    gamma: float = 2.93
    c_true: float = -10.0
    loss: float = 0.0
    hop_delay_ticks: int = 5
    backhaul_delay_ticks: int = 20
    radio_range: float = 45.0
    report_interval_s: float = 900.0
    jitter_s: float = 30.0
    bootstrap_records: int = 100
    bootstrap_days: float = 7.0
    session_timeout_s: float = 60.0
    quarantine_alerts: int = 3
    auth: bool = True
    adversaries: tuple[AdversarySpec, ...] = ()

    def kernel_obj(self) -> Kernel | None:
        return None if self.kernel == "median" else Kernel.parse(self.kernel)

    def validate(self) -> None:
        checks = [
            ("sessions", self.sessions >= 0, "must be >= 0"),
            ("blocks", self.blocks >= 2, "must be >= 2"),
            ("key_bits", self.key_bits >= 64 and self.key_bits % 2 == 0, "must be even and >= 64"),
            ("payload_bytes", self.payload_bytes >= 1, "must be >= 1"),
            ("nu", 0 < self.nu <= 1, "must lie in (0, 1]"),
            ("sigma_db", self.sigma_db >= 0, "must be >= 0"),
            ("gamma", self.gamma > 0, "must be > 0"),
            ("loss", 0 <= self.loss < 1, "must lie in [0, 1)"),
            ("hop_delay_ticks", self.hop_delay_ticks >= 1, "must be >= 1"),
            ("backhaul_delay_ticks", self.backhaul_delay_ticks >= 1, "must be >= 1"),
            ("report_interval_s", self.report_interval_s > 0, "must be > 0"),
            ("jitter_s", 0 <= self.jitter_s < self.report_interval_s, "must lie in [0, report_interval_s)"),
            ("radio_range", self.radio_range > 0, "must be > 0"),
            ("topology", self.topology in ("grid", "explicit"), "must be grid or explicit"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(msg, key)
        try:
            self.kernel_obj()
        except ValueError as exc:
            raise ConfigError(str(exc), "kernel") from None
        if self.topology == "grid":
            if self.rows < 1 or self.cols < 1:
                raise ConfigError("grid needs rows, cols >= 1", "rows")
            if self.meters is not None and not 1 <= self.meters <= self.rows * self.cols:
                raise ConfigError(f"must lie in [1, {self.rows * self.cols}]", "meters")
        elif not self.positions:
            raise ConfigError("explicit topology needs positions", "positions")
        for a in self.adversaries:
            if a.kind not in ("rogue", "eavesdropper", "replayer"):
                raise ConfigError(f"unknown adversary kind {a.kind!r}", "adversaries")
            if a.kind == "rogue" and a.victim is None:
                raise ConfigError("rogue adversary needs a victim", "adversaries")
            if a.kind != "rogue" and a.link is None:
                raise ConfigError(f"{a.kind} needs a link", "adversaries")


_SCALARS = {f for f in ScenarioConfig.__dataclass_fields__} - {"topology", "positions", "edges",
                                                              "adversaries", "rows", "cols",
                                                              "spacing"}
_ADVERSARY_KEYS = set(AdversarySpec.__dataclass_fields__)


def _line_of(node: yaml.Node | None, key: str) -> int | None:
    if isinstance(node, yaml.MappingNode):
        for k, _ in node.value:
            if k.value == key:
                return k.start_mark.line + 1
    return None


def _child(node, key):
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            if k.value == key:
                return v
    return None


def parse_config(text: str) -> ScenarioConfig:
    """Build a ScenarioConfig from YAML text; errors carry key and line number."""
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=1)
    kw: dict = {}
    for key, value in data.items():
        line = _line_of(root, key)
        if key == "topology":
            kw.update(_parse_topology(value, _child(root, key), line))
        elif key == "adversaries":
            kw["adversaries"] = _parse_adversaries(value, _child(root, key), line)
        elif key in _SCALARS:
            kw[key] = _coerce(key, value, line)
        else:
            raise ConfigError("unknown key", key, line)
    cfg = ScenarioConfig(**kw)
    try:
        cfg.validate()
    except ConfigError as exc:
        if exc.line is None and exc.key is not None:
            raise ConfigError(str(exc).split(": ", 1)[-1], exc.key,
                              _line_of(root, exc.key) or _line_of(_child(root, "topology"), exc.key)) from None
        raise
    return cfg


def _coerce(key, value, line):
    default = ScenarioConfig.__dataclass_fields__[key].default
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if key == "meters":
            return int(value)
        if isinstance(default, int):
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {value!r}", key, line) from None
    return value


def _parse_topology(value, node, line):
    if not isinstance(value, dict):
        raise ConfigError("must be a mapping", "topology", line)
    kind = value.get("kind", "grid")
    out: dict = {"topology": kind}
    for k, v in value.items():
        kline = _line_of(node, k) or line
        if k == "kind":
            continue
        if k in ("rows", "cols"):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"bad value {v!r}", f"topology.{k}", kline)
            out[k] = v
        elif k == "spacing":
            out[k] = float(v)
        elif k == "positions":
            try:
                out[k] = {int(i): (float(p[0]), float(p[1])) for i, p in v.items()}
            except (TypeError, ValueError, IndexError, AttributeError):
                raise ConfigError("expected id: [x, y] entries", "topology.positions", kline) from None
        elif k == "edges":
            try:
                out[k] = tuple((int(a), int(b)) for a, b in v)
            except (TypeError, ValueError):
                raise ConfigError("expected [a, b] pairs", "topology.edges", kline) from None
        else:
            raise ConfigError("unknown key", f"topology.{k}", kline)
    return out


def _parse_adversaries(value, node, line):
    if not isinstance(value, list):
        raise ConfigError("must be a list", "adversaries", line)
    out = []
    for i, item in enumerate(value):
        inode = node.value[i] if isinstance(node, yaml.SequenceNode) else None
        iline = inode.start_mark.line + 1 if inode is not None else line
        if not isinstance(item, dict) or "kind" not in item:
            raise ConfigError("entry needs a kind", f"adversaries[{i}]", iline)
        for k in item:
            if k not in _ADVERSARY_KEYS:
                raise ConfigError("unknown key", f"adversaries[{i}].{k}", _line_of(inode, k) or iline)
        kw = dict(item)
        try:
            for k in ("position", "offset"):
                if kw.get(k) is not None:
                    kw[k] = (float(kw[k][0]), float(kw[k][1]))
            if kw.get("link") is not None:
                kw["link"] = (int(kw["link"][0]), int(kw["link"][1]))
            for k in ("activation_tick", "count", "delay_ticks", "victim"):
                if kw.get(k) is not None:
                    kw[k] = int(kw[k])
            if "rate_s" in kw:
                kw["rate_s"] = float(kw["rate_s"])
        except (TypeError, ValueError, IndexError):
            raise ConfigError("bad value", f"adversaries[{i}]", iline) from None
        out.append(AdversarySpec(**kw))
    return tuple(out)


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}") from None
    return parse_config(text)


# ---------------------------------------------------------------- topology

@dataclass
class Topology:
    positions: dict[int, tuple[float, float]]
    neighbors: dict[int, list[int]]
    next_hop: dict[int, int]
    meters: list[int]


def build_topology(cfg: ScenarioConfig) -> Topology:
    if cfg.topology == "grid":
        count = cfg.meters or cfg.rows * cfg.cols
        pos = {FIRST_METER_ID + k: (cfg.spacing * (k % cfg.cols), cfg.spacing * (k // cfg.cols))
               for k in range(count)}
        pos[DATA_CONCENTRATOR] = (-cfg.spacing, 0.0)
    else:
        pos = dict(cfg.positions)
        if DATA_CONCENTRATOR not in pos:
            raise ConfigError("explicit topology must place the data concentrator (id 3)",
                              "topology.positions")
    meters = sorted(i for i in pos if i >= FIRST_METER_ID)
    if not meters:
        raise ConfigError("no meters", "meters")
    nbr: dict[int, list[int]] = {i: [] for i in pos}
    if cfg.topology == "explicit" and cfg.edges:
        for a, b in cfg.edges:
            if a not in pos or b not in pos or a == b:
                raise ConfigError(f"bad edge ({a}, {b})", "topology.edges")
            nbr[a].append(b)
            nbr[b].append(a)
    else:
        ids = sorted(pos)
        for i in ids:
            for j in ids:
                if i < j and math.dist(pos[i], pos[j]) <= cfg.radio_range:
                    nbr[i].append(j)
                    nbr[j].append(i)
    for i in nbr:
        nbr[i] = sorted(set(nbr[i]))
    # breadth-first shortest paths toward the concentrator; ties go to the lowest id
    next_hop = {}
    dist = {DATA_CONCENTRATOR: 0}
    queue = deque([DATA_CONCENTRATOR])
    while queue:
        u = queue.popleft()
        for v in nbr[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                next_hop[v] = u
                queue.append(v)
    unreachable = [m for m in meters if m not in next_hop]
    if unreachable:
        raise ConfigError(f"meters {unreachable} cannot reach the concentrator", "topology")
    return Topology(pos, nbr, next_hop, meters)


# ---------------------------------------------------------------- node state

class _GuardedStore(dict):
    """Session store that refuses values a semi-trusted server must never hold."""

    def __init__(self, owner: str, forbidden: tuple[type, ...]):
        super().__init__()
        self.owner = owner
        self.forbidden = forbidden

    def __setitem__(self, key, value):
        if isinstance(value, self.forbidden) or (isinstance(value, tuple) and any(
                isinstance(v, self.forbidden) for v in value)):
            raise SemiTrustViolation(f"{self.owner} must not hold {type(value).__name__}")
        super().__setitem__(key, value)


@dataclass
class MeterSession:
    session: int
    phase: Phase
    started: int


@dataclass
class CcSession:
    meter: int
    session: int
    phase: Phase = Phase.AWAIT_SEQ_ACK
    sk: SecretKey | None = None
    sequence: RandomSequence | None = None
    pad_len: int = 0
    plain_len: int = 0
    blocks: dict = field(default_factory=dict)
    total: int | None = None


@dataclass
class VerifierState:
    histories: dict = field(default_factory=dict)
    approved: set = field(default_factory=set)
    requested: set = field(default_factory=set)
    decisions: dict = field(default_factory=dict)


@dataclass
class SimResult:
    trace: list[str]
    metrics: dict
    link_frames: dict
    alerts: list[tuple]
    originals: dict
    retrieved: dict

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("metric", "value"))
        for k, v in self.metrics.items():
            w.writerow((k, format(v, ".17g") if isinstance(v, float) else v))
        for (a, b), n in sorted(self.link_frames.items()):
            w.writerow((f"link_frames:{a}->{b}", n))
        return buf.getvalue()

    def alerts_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(auth.ALERT_COLUMNS)
        for tick, verifier, sender, score, reason in self.alerts:
            w.writerow((tick, verifier, sender, format(score, ".17g"), reason))
        return buf.getvalue()

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.log").write_text("\n".join(self.trace) + ("\n" if self.trace else ""))
        (out / "metrics.csv").write_text(self.metrics_csv())
        (out / "alerts.csv").write_text(self.alerts_csv())


# ---------------------------------------------------------------- payload helpers

def _pack_descriptor(seq: RandomSequence, pad_len: int, plain_len: int) -> bytes:
    return seq.to_bytes() + struct.pack(">HH", pad_len, plain_len)


def _unpack_descriptor(data: bytes) -> tuple[RandomSequence, int, int]:
    seq = RandomSequence.from_bytes(data)
    off = 2 + 2 * seq.n
    if len(data) != off + 4:
        raise SequencerError("descriptor has trailing or missing bytes")
    pad_len, plain_len = struct.unpack_from(">HH", data, off)
    return seq, pad_len, plain_len


def alert_payload(claimed: int, reason: AlertReason, score: float = 0.0,
                  features: auth.FeatureVector | None = None) -> bytes:
    fv = features.to_bytes() if features is not None else b"\x00"
    return struct.pack(">IBd", claimed, int(reason), score) + fv


def parse_alert(payload: bytes) -> tuple[int, AlertReason, float, auth.FeatureVector | None]:
    claimed, reason, score = struct.unpack_from(">IBd", payload)
    rest = payload[13:]
    fv = auth.FeatureVector.from_bytes(rest) if rest and rest[0] else None
    return claimed, AlertReason(reason), score, fv


# ---------------------------------------------------------------- simulator

class Simulator:
    def __init__(self, cfg: ScenarioConfig, registered: set[int] | None = None):
        cfg.validate()
        self.cfg = cfg
        self.topo = build_topology(cfg)
        self.registered = set(self.topo.meters) if registered is None else set(registered)
        self.rss = RssConfig(gamma=cfg.gamma, sigma=cfg.sigma_db, c_true=cfg.c_true)
        self.pso = PsoConfig()
        self.window = auth.BootstrapWindow(
            cfg.bootstrap_records, int(cfg.bootstrap_days * 86400 * TICKS_PER_SECOND))
        self.kernel = cfg.kernel_obj()
        self.timeout = int(cfg.session_timeout_s * TICKS_PER_SECOND)
        self.streams = {s: RngStream(cfg.seed, int(s)) for s in Stream}
        self.net_gen = self.streams[Stream.NETWORK].generator()
        self.queue: list = []
        self.counter = 0
        self.now = 0
        self.trace: list[str] = []
        self.alerts: list[tuple] = []
        self.link_frames: dict = defaultdict(int)
        self.m = defaultdict(int)
        self.m["rogue_detection_frame"] = -1
        self.originals: dict = {}
        self.retrieved: dict = {}
        # per-node state
        self.meter_state: dict[int, MeterSession | None] = {i: None for i in self.topo.meters}
        self.meter_prev_seq: dict[int, RandomSequence | None] = {i: None for i in self.topo.meters}
        self.meter_seq_gen = {i: self.streams[Stream.SEQUENCER].child(i).generator()
                              for i in self.topo.meters}
        self.meter_data_gen = {i: self.streams[Stream.DATA].child(i).generator()
                               for i in self.topo.meters}
        self.meter_pending: dict = {}
        self.master_keys = _GuardedStore("master", (RandomSequence,))
        self.aux_store = _GuardedStore("auxiliary", (bytes, bytearray))
        self.cc_sessions: dict = {}
        self.cc_alert_count: dict = defaultdict(int)
        self.quarantined: set = set()
        self.verifiers: dict = defaultdict(VerifierState)
        self.captured: dict = defaultdict(list)
        self.rogue_after_approval: dict = defaultdict(int)
        self.replayed: set = set()
        self.next_session = 1

    # -- event plumbing
    def _push(self, tick: int, kind: str, *args) -> None:
        self.counter += 1
        heapq.heappush(self.queue, (tick, self.counter, kind, args))

    def _is_backhaul(self, a: int, b: int) -> bool:
        return a in SERVERS or b in SERVERS

    def send(self, src: int, dest: int, header: PacketHeader, payload: bytes = b"",
             tick: int | None = None, phys: int | None = None, claimed_tx: int | None = None) -> None:
        """Queue a frame on link src -> dest; loss is drawn per frame."""
        if header.msg_type == MsgType.DATA_BLOCK and dest in (MASTER_SERVER, AUXILIARY_SERVER):
            raise SemiTrustViolation(f"data block routed to server {dest}")
        tick = self.now if tick is None else tick
        frame = encode_frame(header, payload)
        self.link_frames[(src, dest)] += 1
        self.m["frames_sent"] += 1
        if self.cfg.loss > 0 and self.net_gen.random() < self.cfg.loss:
            self.m["frames_lost"] += 1
            return
        delay = self.cfg.backhaul_delay_ticks if self._is_backhaul(src, dest) else self.cfg.hop_delay_ticks
        self._push(tick + delay, "deliver", src, dest, frame,
                   src if phys is None else phys, src if claimed_tx is None else claimed_tx)

    def _header(self, mtype: MsgType, sender: int, session: int, payload: bytes = b"",
                seq: int = 0, total: int = 0, tick: int | None = None) -> PacketHeader:
        return PacketHeader(mtype, sender, session, seq, total, len(payload),
                            self.now if tick is None else tick)

    def _position(self, node: int) -> tuple[float, float]:
        if node >= ADVERSARY_BASE_ID:
            return self.adv_positions[node]
        return self.topo.positions[node]

    # -- scheduling
    def _schedule(self) -> None:
        cfg = self.cfg
        meters = self.topo.meters
        per = [cfg.sessions // len(meters) + (1 if k < cfg.sessions % len(meters) else 0)
               for k in range(len(meters))]
        interval = int(cfg.report_interval_s * TICKS_PER_SECOND)
        jitter = int(cfg.jitter_s * TICKS_PER_SECOND)
        gen = self.streams[Stream.NETWORK].child(1).generator()
        for meter, count in zip(meters, per):
            t = int(gen.integers(0, interval))
            for _ in range(count):
                self._push(t, "start", meter)
                t += interval + (int(gen.integers(-jitter, jitter + 1)) if jitter else 0)
        self.adv_positions = {}
        for k, a in enumerate(cfg.adversaries):
            aid = ADVERSARY_BASE_ID + k
            if a.kind == "rogue":
                if a.victim not in self.topo.positions:
                    raise ConfigError(f"victim {a.victim} is not a meter", "adversaries")
                if a.position is not None:
                    self.adv_positions[aid] = a.position
                else:
                    vx, vy = self.topo.positions[a.victim]
                    dx, dy = a.offset or (30.0, 0.0)
                    self.adv_positions[aid] = (vx + dx, vy + dy)
                gap = int(a.rate_s * TICKS_PER_SECOND)
                for j in range(a.count):
                    self._push(a.activation_tick + j * gap, "rogue", k, j)

    # -- main loop
    def run(self) -> SimResult:
        self._schedule()
        while self.queue:
            tick, _, kind, args = heapq.heappop(self.queue)
            self.now = tick
            if kind == "deliver":
                self._deliver(*args)
            elif kind == "start":
                self._meter_start(*args)
            elif kind == "rogue":
                self._rogue_emit(*args)
            elif kind == "timeout":
                self._cc_timeout(*args)
        self._finish()
        return SimResult(self.trace, dict(self.m), dict(self.link_frames), self.alerts,
                         self.originals, self.retrieved)

    def _finish(self) -> None:
        m = self.m
        m["quarantined_senders"] = len(self.quarantined)
        m["plaintext_mismatches"] = sum(1 for k, v in self.retrieved.items()
                                        if self.originals.get(k) != v)
        forwarded = m["legit_forwarded"]
        judged = forwarded + m["auth_false_rejects"]
        m["legit_forward_rate"] = float(forwarded / judged) if judged else 1.0
        order = ["sessions_initiated", "sessions_completed", "sessions_failed",
                 "sessions_abandoned", "plaintext_mismatches", "alerts",
                 "auth_true_accepts", "auth_false_rejects", "auth_true_rejects",
                 "auth_false_accepts", "legit_forwarded", "legit_forward_rate",
                 "bootstrap_forwards", "unverifiable_forwards", "models_trained",
                 "rogue_detection_frame", "quarantined_senders", "quarantined_drops",
                 "frames_sent", "frames_lost", "frames_delivered", "replays_ignored",
                 "eavesdropped_frames", "orphan_frames", "retransmit_requests",
                 "protocol_errors"]
        self.m = {k: m[k] for k in order} | {k: m[k] for k in sorted(m) if k not in order}

    def _deliver(self, src, dest, frame, phys, claimed_tx) -> None:
        self.m["frames_delivered"] += 1
        self.trace.append(trace_line(self.now, frame))
        for k, a in enumerate(self.cfg.adversaries):
            if a.link == (src, dest) and self.now >= a.activation_tick:
                if a.kind == "eavesdropper":
                    self.captured[k].append(frame)
                    self.m["eavesdropped_frames"] += 1
                elif a.kind == "replayer" and frame not in self.replayed:
                    self.replayed.add(frame)
                    self._push(self.now + a.delay_ticks, "deliver", src, dest, frame, phys, claimed_tx)
        try:
            h, payload = decode_frame(frame)
        except WireError:
            self.m["protocol_errors"] += 1
            return
        if dest == MASTER_SERVER:
            self._master(h, payload)
        elif dest == AUXILIARY_SERVER:
            self._aux(h, payload)
        elif dest == CONTROL_CENTER:
            self._cc(h, payload)
        elif dest == DATA_CONCENTRATOR:
            if h.msg_type == MsgType.DATA_BLOCK:
                self.send(DATA_CONCENTRATOR, CONTROL_CENTER, h, payload)
        else:
            self._meter_receive(dest, h, payload, phys, claimed_tx)

    # -- meter behaviour
    def _meter_start(self, meter: int) -> None:
        state = self.meter_state[meter]
        if state is not None and state.phase == Phase.AWAIT_KEY:
            state.phase = Phase.FAILED
            self.m["sessions_abandoned"] += 1
        session = self.next_session
        self.next_session += 1
        self.meter_state[meter] = MeterSession(session, Phase.AWAIT_KEY, self.now)
        self.m["sessions_initiated"] += 1
        self.send(meter, MASTER_SERVER, self._header(MsgType.KEY_REQUEST, meter, session))

    def meter_prepare_transmission(self, meter: int, pk, data: bytes):
        """Steps on the meter once its public key arrives; returns (sequence cipher, blocks)."""
        state = self.meter_state[meter]
        if state is None or state.phase != Phase.AWAIT_KEY:
            raise ProtocolError(f"meter {meter} has no session awaiting a key")
        state.phase = Phase.AWAIT_SEQ_ACK
        seq = gen_sequence(self.meter_seq_gen[meter], self.cfg.blocks, self.meter_prev_seq[meter])
        self.meter_prev_seq[meter] = seq
        blob = encrypt(pk, data)
        bs = segment(blob.to_bytes(pk.n), self.cfg.blocks)
        ordered = apply_order(bs, derive_order(seq))
        desc = _pack_descriptor(seq, bs.pad_len, blob.plain_len)
        seq_cipher = struct.pack(">H", len(desc)) + encrypt(pk, desc).to_bytes(pk.n)
        state.phase = Phase.TRANSMITTING
        return seq_cipher, ordered

    def _meter_receive(self, me: int, h: PacketHeader, payload: bytes, phys: int, claimed_tx: int) -> None:
        if h.msg_type == MsgType.PUBLIC_KEY:
            state = self.meter_state.get(me)
            if state is None or state.session != h.session or state.phase != Phase.AWAIT_KEY:
                self.m["protocol_errors"] += 1
                return
            pk = parse_key(payload.decode())
            data = self.meter_data_gen[me].bytes(self.cfg.payload_bytes)
            self.originals[(me, h.session)] = data
            seq_cipher, ordered = self.meter_prepare_transmission(me, pk, data)
            self.send(me, AUXILIARY_SERVER,
                      self._header(MsgType.SEQUENCE_CIPHER, me, h.session, seq_cipher), seq_cipher)
            hop = self.topo.next_hop[me]
            n = len(ordered)
            for k, block in enumerate(ordered):
                t = self.now + k
                self.send(me, hop, self._header(MsgType.DATA_BLOCK, me, h.session, block, k, n, t),
                          block, tick=t)
            state = self.meter_state[me]
            state.phase = Phase.DONE
        elif h.msg_type == MsgType.ATTACH_APPROVAL:
            (sender,) = struct.unpack(">I", payload)
            self.verifiers[me].approved.add(sender)
        elif h.msg_type == MsgType.DATA_BLOCK:
            self.forward_hop(me, h, payload, phys, claimed_tx)

    def forward_hop(self, me: int, h: PacketHeader, payload: bytes, phys: int, claimed_tx: int) -> bool:
        """Relay a data block toward the concentrator, gated by authentication on the first hop."""
        first_hop = claimed_tx == h.sender and self.topo.next_hop.get(h.sender) == me
        if first_hop and self.cfg.auth:
            key = (h.sender, h.session, phys)
            v = self.verifiers[me]
            if key not in v.decisions:
                v.decisions[key] = self._authenticate(me, h, payload, phys)
            if not v.decisions[key]:
                return False
        self.send(me, self.topo.next_hop[me], h, payload)
        return True

    def _authenticate(self, me: int, h: PacketHeader, payload: bytes, phys: int) -> bool:
        """Check a burst on its first block; the decision covers the whole burst."""
        v = self.verifiers[me]
        sender = h.sender
        rogue = phys >= ADVERSARY_BASE_ID
        anchors = [Anchor(i, *self.topo.positions[i]) for i in [me] + self.topo.neighbors[me]
                   if i >= FIRST_METER_ID and i != sender]
        hist = v.histories.setdefault(sender, auth.NeighborHistory(sender))
        tag = (me, sender, h.session, phys)
        try:
            meas = simulate_rss(self._position(phys), self.rss, anchors,
                                self.streams[Stream.NOISE].child(*tag), samples=h.total_blocks)
            est = localize(meas, anchors, self.rss, self.pso, self.streams[Stream.PSO].child(*tag))
        except (UnderdeterminedError, GeometryError):
            self.m["unverifiable_forwards"] += 1
            return True
        record = hist.next_record(self.now, est.position, h.total_blocks * h.payload_len)
        if sender not in v.approved:
            if rogue and hist.model is None:
                self.m["bootstrap_rogue_forwards"] += 1
            hist.add(record)
            self.m["bootstrap_forwards"] += 1
            if hist.model is None and sender not in v.requested and hist.bootstrap_due(self.window):
                auth.bootstrap(hist, self.window, self.cfg.nu, self.kernel)
                if hist.model is not None:
                    self.m["models_trained"] += 1
                    v.requested.add(sender)
                    body = struct.pack(">I", sender)
                    self.send(me, CONTROL_CENTER, self._header(MsgType.ATTACH_REQUEST, me, 0, body), body)
            return True
        decision = auth.verify(hist, record)
        if rogue:
            self.rogue_after_approval[sender] += 1
        if decision.forward:
            if rogue:
                self.m["auth_false_accepts"] += 1
            else:
                self.m["auth_true_accepts"] += 1
                self.m["legit_forwarded"] += 1
            return True
        if rogue:
            self.m["auth_true_rejects"] += 1
            if self.m["rogue_detection_frame"] < 0:
                self.m["rogue_detection_frame"] = self.rogue_after_approval[sender]
        else:
            self.m["auth_false_rejects"] += 1
        self.alerts.append((self.now, me, sender, decision.score, decision.reason))
        body = alert_payload(sender, AlertReason.AUTH_REJECT, decision.score, decision.features)
        self.send(me, CONTROL_CENTER, self._header(MsgType.ALERT, me, h.session, body), body)
        return False

    # -- adversaries
    def _rogue_emit(self, k: int, j: int) -> None:
        a = self.cfg.adversaries[k]
        aid = ADVERSARY_BASE_ID + k
        gen = self.streams[Stream.ADVERSARY].child(k, j).generator()
        session = int(gen.integers(1 << 20, 1 << 31))
        n = self.cfg.blocks
        width = (self.cfg.key_bits + 7) // 8
        chunks = math.ceil(self.cfg.payload_bytes / max(1, (self.cfg.key_bits - 8) // 8))
        block_len = math.ceil(chunks * width / n)
        hop = self.topo.next_hop[a.victim]
        for b in range(n):
            block = gen.bytes(block_len)
            t = self.now + b
            self.send(aid, hop, self._header(MsgType.DATA_BLOCK, a.victim, session, block, b, n, t),
                      block, tick=t, phys=aid, claimed_tx=a.victim)

    # -- servers
    def master_handle_key_request(self, h: PacketHeader) -> list[tuple[int, PacketHeader, bytes]]:
        """Issue a fresh key pair: public key to the meter, secret key to auxiliary and CC."""
        if h.msg_type != MsgType.KEY_REQUEST:
            raise ProtocolError(f"master cannot handle {h.msg_type.name}")
        if h.sender not in self.registered:
            body = alert_payload(h.sender, AlertReason.UNREGISTERED)
            return [(CONTROL_CENTER, self._header(MsgType.ALERT, MASTER_SERVER, h.session, body), body)]
        kp: KeyPair = keygen(self.cfg.key_bits, self.streams[Stream.CRYPTO].child(h.sender, h.session))
        self.master_keys[(h.sender, h.session)] = kp
        pub = kp.public.serialize().encode()
        sec = struct.pack(">I", h.sender) + kp.secret.serialize().encode()
        return [
            (h.sender, self._header(MsgType.PUBLIC_KEY, MASTER_SERVER, h.session, pub), pub),
            (AUXILIARY_SERVER, self._header(MsgType.PRIVATE_KEY_DIST, MASTER_SERVER, h.session, sec), sec),
            (CONTROL_CENTER, self._header(MsgType.PRIVATE_KEY_DIST, MASTER_SERVER, h.session, sec), sec),
        ]

    def _master(self, h: PacketHeader, payload: bytes) -> None:
        if h.msg_type != MsgType.KEY_REQUEST:
            self.m["protocol_errors"] += 1
            return
        for dest, hdr, body in self.master_handle_key_request(h):
            self.send(MASTER_SERVER, dest, hdr, body)
        # the key pair has been handed out; the master keeps nothing afterwards
        self.master_keys.pop((h.sender, h.session), None)

    def aux_handle_sequence(self, h: PacketHeader, payload: bytes) -> tuple[int, PacketHeader, bytes]:
        """Decrypt a session's sequence and forward it, or raise an alert."""
        sk = self.aux_store.get(("sk", h.sender, h.session))
        reason = None
        if sk is None:
            reason = AlertReason.UNKNOWN_SESSION
        else:
            try:
                (dlen,) = struct.unpack_from(">H", payload)
                blob = CipherBlob.from_bytes(payload[2:], sk.n, dlen)
                seq, pad_len, plain_len = _unpack_descriptor(decrypt(sk, blob))
            except (CryptoError, SequencerError, struct.error):
                reason = AlertReason.TAMPERED_SEQUENCE
        if reason is not None:
            body = alert_payload(h.sender, reason)
            return CONTROL_CENTER, self._header(MsgType.ALERT, AUXILIARY_SERVER, h.session, body), body
        self.aux_store[("seq", h.sender, h.session)] = seq
        self.aux_store.pop(("sk", h.sender, h.session), None)
        body = struct.pack(">I", h.sender) + _pack_descriptor(seq, pad_len, plain_len)
        return CONTROL_CENTER, self._header(MsgType.SEQUENCE_FORWARD, AUXILIARY_SERVER, h.session, body), body

    def _aux(self, h: PacketHeader, payload: bytes) -> None:
        if h.msg_type == MsgType.PRIVATE_KEY_DIST:
            (meter,) = struct.unpack_from(">I", payload)
            self.aux_store[("sk", meter, h.session)] = parse_key(payload[4:].decode())
        elif h.msg_type == MsgType.SEQUENCE_CIPHER:
            dest, hdr, body = self.aux_handle_sequence(h, payload)
            self.send(AUXILIARY_SERVER, dest, hdr, body)
            self.aux_store.pop(("seq", h.sender, h.session), None)
        else:
            self.m["protocol_errors"] += 1

    def _cc_session(self, meter: int, session: int) -> CcSession:
        key = (meter, session)
        s = self.cc_sessions.get(key)
        if s is None:
            s = self.cc_sessions[key] = CcSession(meter, session)
            self._push(self.now + self.timeout, "timeout", meter, session)
        return s

    def _cc(self, h: PacketHeader, payload: bytes) -> None:
        mt = h.msg_type
        if mt == MsgType.PRIVATE_KEY_DIST:
            (meter,) = struct.unpack_from(">I", payload)
            self._cc_session(meter, h.session).sk = parse_key(payload[4:].decode())
        elif mt == MsgType.SEQUENCE_FORWARD:
            (meter,) = struct.unpack_from(">I", payload)
            s = self._cc_session(meter, h.session)
            s.sequence, s.pad_len, s.plain_len = _unpack_descriptor(payload[4:])
            s.phase = Phase.TRANSMITTING
        elif mt == MsgType.DATA_BLOCK:
            if h.sender in self.quarantined:
                self.m["quarantined_drops"] += 1
                return
            key = (h.sender, h.session)
            if key in self.retrieved:
                self.m["replays_ignored"] += 1
                return
            s = self._cc_session(h.sender, h.session)
            if s.phase in (Phase.DONE, Phase.FAILED):
                self.m["replays_ignored"] += 1
                return
            if h.seq_index in s.blocks:
                self.m["replays_ignored"] += 1
                return
            s.blocks[h.seq_index] = payload
            s.total = h.total_blocks
        elif mt == MsgType.ALERT:
            claimed, reason, score, _ = parse_alert(payload)
            self.m["alerts"] += 1
            if reason == AlertReason.AUTH_REJECT:
                self.cc_alert_count[claimed] += 1
                if self.cc_alert_count[claimed] >= self.cfg.quarantine_alerts:
                    self.quarantined.add(claimed)
            else:
                self.alerts.append((self.now, h.sender, claimed, score, reason.name.lower()))
            return
        elif mt == MsgType.ATTACH_REQUEST:
            body = payload
            self.send(CONTROL_CENTER, h.sender, self._header(MsgType.ATTACH_APPROVAL, CONTROL_CENTER, 0, body), body)
            return
        else:
            self.m["protocol_errors"] += 1
            return
        meter = h.sender if mt == MsgType.DATA_BLOCK else struct.unpack_from(">I", payload)[0]
        self._cc_try_complete(self.cc_sessions[(meter, h.session)])

    def cc_retrieve(self, s: CcSession) -> bytes:
        """Reorder, join and decrypt a session whose blocks, sequence and key are all present."""
        if s.sk is None or s.sequence is None or s.total is None or len(s.blocks) != s.total:
            raise ProtocolError("session incomplete")
        order = derive_order(s.sequence)
        h = [s.blocks.get(k) for k in range(s.total)]
        bs = invert_order(h, order, s.pad_len)
        return decrypt(s.sk, CipherBlob.from_bytes(bs.join(), s.sk.n, s.plain_len))

    def _cc_try_complete(self, s: CcSession) -> None:
        if s.phase in (Phase.DONE, Phase.FAILED):
            return
        if s.sk is None or s.sequence is None or s.total is None or len(s.blocks) < s.total:
            return
        try:
            data = self.cc_retrieve(s)
        except (CryptoError, SequencerError, ProtocolError):
            s.phase = Phase.FAILED
            self.m["sessions_failed"] += 1
            return
        s.phase = Phase.DONE
        self.retrieved[(s.meter, s.session)] = data
        self.m["sessions_completed"] += 1
        self.cc_alert_count[s.meter] = 0
        s.blocks = {}

    def _cc_timeout(self, meter: int, session: int) -> None:
        s = self.cc_sessions.pop((meter, session), None)
        if s is None or s.phase == Phase.DONE:
            return
        if s.sk is None:
            # frames with no key issued: injected or replayed traffic
            self.m["orphan_frames"] += len(s.blocks)
            return
        s.phase = Phase.FAILED
        self.m["sessions_failed"] += 1
        self.m["retransmit_requests"] += 1


def run_scenario(cfg: ScenarioConfig) -> SimResult:
    return Simulator(cfg).run()
