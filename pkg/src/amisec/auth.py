"""Per-neighbour traffic authentication with one-class SVMs.

A meter that relays traffic keeps, for each neighbour it hears, a history of
(estimated position, inter-arrival time, packet size). Once the bootstrap
window closes, a one-class SVM is trained on the standardized history and
every later packet claiming that neighbour's identity is scored against it.
Identity is not a feature: it selects which model is used.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import TICKS_PER_SECOND
from .ocsvm import Kernel, OcsvmModel, decide, median_heuristic, train

MIN_RECORDS = 20
CONFIDENT_RECORDS = 50
FEATURE_NAMES = ("x", "y", "inter_arrival_s", "packet_size")
SECONDS_PER_DAY = 86400


class AuthError(RuntimeError):
    pass


class VerificationUnavailable(AuthError):
    pass


@dataclass(frozen=True)
class TransmissionRecord:
    sender: int
    est_position: tuple[float, float]
    inter_arrival: float | None  # seconds; None marks the sender's first packet
    packet_size: int
    tick: int

    def __post_init__(self):
        if self.packet_size <= 0:
            raise ValueError("packet_size must be > 0")
        if self.inter_arrival is not None and not self.inter_arrival > 0:
            raise ValueError("inter_arrival must be > 0")

    @property
    def first(self) -> bool:
        return self.inter_arrival is None


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]

    def __post_init__(self):
        if not all(np.isfinite(self.values)):
            raise ValueError("feature vector has non-finite entries")

    def array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def to_bytes(self) -> bytes:
        return struct.pack(f">B{len(self.values)}d", len(self.values), *self.values)

    @classmethod
    def from_bytes(cls, data: bytes) -> "FeatureVector":
        (k,) = struct.unpack_from(">B", data)
        return cls(struct.unpack_from(f">{k}d", data, 1))


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension affine map frozen at training time."""
    mean: tuple[float, ...]
    scale: tuple[float, ...]

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        # a constant feature (fixed packet size) keeps unit scale
        scale = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
        return cls(tuple(mean.tolist()), tuple(scale.tolist()))

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - np.asarray(self.mean)) / np.asarray(self.scale)


@dataclass(frozen=True)
class BootstrapWindow:
    """Training window: ``records`` transmissions or ``ticks`` of time, whichever comes first."""
    records: int = 100
    ticks: int = 7 * SECONDS_PER_DAY * TICKS_PER_SECOND


@dataclass
class NeighborHistory:
    sender: int
    records: list[TransmissionRecord] = field(default_factory=list)
    bootstrap_until: int | None = None
    model: OcsvmModel | None = None
    standardizer: Standardizer | None = None
    low_confidence: bool = False
    extended: bool = False
    last_heard: int | None = None

    def next_record(self, tick: int, position, packet_size: int) -> TransmissionRecord:
        """Build the record for a packet heard at ``tick``.

        The inter-arrival time is measured from the previous packet heard under
        this identity, accepted or not, so one rejection does not inflate the
        gap of every later packet.
        """
        gap = None
        if self.last_heard is not None:
            gap = max(tick - self.last_heard, 1) / TICKS_PER_SECOND
        self.last_heard = int(tick)
        return TransmissionRecord(self.sender, (float(position[0]), float(position[1])),
                                  gap, int(packet_size), int(tick))

    def add(self, r: TransmissionRecord) -> None:
        if r.sender != self.sender:
            raise AuthError(f"record for {r.sender} added to history of {self.sender}")
        if self.records and r.tick < self.records[-1].tick:
            raise AuthError("records must be time-ordered")
        self.records.append(r)

    def bootstrap_due(self, window: BootstrapWindow) -> bool:
        if not self.records:
            return False
        span = self.records[-1].tick - self.records[0].tick
        return len(self.records) >= window.records or span >= window.ticks


class Verdict(enum.Enum):
    FORWARD = "forward"
    CEASE_AND_REPORT = "cease_and_report"


@dataclass(frozen=True)
class AuthDecision:
    verdict: Verdict
    score: float
    features: FeatureVector
    reason: str = ""

    @property
    def forward(self) -> bool:
        return self.verdict is Verdict.FORWARD


def raw_features(r: TransmissionRecord) -> FeatureVector | None:
    """(x, y, inter_arrival, packet_size) before standardization; None for a first packet."""
    if r.first:
        return None
    return FeatureVector((r.est_position[0], r.est_position[1], float(r.inter_arrival),
                          float(r.packet_size)))


def extract_features(r: TransmissionRecord, history: NeighborHistory | None = None) -> FeatureVector | None:
    """Raw features, standardized with ``history``'s frozen statistics when it has them."""
    fv = raw_features(r)
    if fv is None or history is None or history.standardizer is None:
        return fv
    return FeatureVector(tuple(history.standardizer.apply(fv.array()).tolist()))


def bootstrap(history: NeighborHistory, h: BootstrapWindow | None = None, nu: float = 0.1,
              kernel: Kernel | None = None) -> NeighborHistory:
    """Train the sender's model on the bootstrap window.

    Fewer than ``MIN_RECORDS`` records leaves the history without a model and
    sets ``extended``; fewer than ``CONFIDENT_RECORDS`` sets ``low_confidence``.
    ``kernel=None`` uses an RBF width from the median heuristic on the
    standardized features.
    """
    h = h or BootstrapWindow()
    window = [r for r in history.records
              if r.tick - history.records[0].tick <= h.ticks][:h.records]
    if len(window) < MIN_RECORDS:
        history.extended = True
        return history
    X = np.array([raw_features(r).values for r in window if not r.first], dtype=float)
    std = Standardizer.fit(X)
    Z = std.apply(X)
    kernel = kernel or Kernel.rbf(median_heuristic(Z))
    history.model = train(Z, nu, kernel)
    history.standardizer = std
    history.bootstrap_until = window[-1].tick
    history.low_confidence = len(window) < CONFIDENT_RECORDS
    history.extended = False
    return history


def verify(history: NeighborHistory, r: TransmissionRecord) -> AuthDecision:
    """Score ``r`` against the frozen model; accepted records join the history."""
    if history.model is None:
        raise VerificationUnavailable(f"no model for sender {history.sender}")
    if r.sender != history.sender:
        raise AuthError(f"record for {r.sender} checked against model of {history.sender}")
    raw = raw_features(r)
    if raw is None:
        raise VerificationUnavailable("first packet carries no inter-arrival time")
    fv = extract_features(r, history)
    label, score = decide(history.model, fv.array())
    if label > 0:
        history.add(r)
        return AuthDecision(Verdict.FORWARD, score, raw)
    return AuthDecision(Verdict.CEASE_AND_REPORT, score, raw, "outside_learned_region")


ALERT_COLUMNS = ("tick", "verifier_id", "claimed_sender", "score", "reason")
