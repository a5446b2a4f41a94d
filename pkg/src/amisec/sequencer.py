"""Random transmission sequences and block ordering.

A sequence ``S`` is a permutation of 1..n. Its weights ``p_i ~ 1/s_i`` drive a
weighted draw without replacement that fixes the order in which ciphertext
blocks go on the air. The draw is seeded from a hash of ``S`` alone, so the
control center rebuilds the identical order from ``S`` and nothing else.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import RngStream

_ORDER_DOMAIN = b"amisec/derive-order/v1"


class SequencerError(ValueError):
    pass


class SegmentationError(SequencerError):
    pass


class OrderingError(SequencerError):
    pass


@dataclass(frozen=True)
class RandomSequence:
    values: tuple[int, ...]

    def __post_init__(self):
        n = len(self.values)
        if n < 2:
            raise SequencerError(f"a random sequence needs n >= 2, got {n}")
        if sorted(self.values) != list(range(1, n + 1)):
            raise SequencerError(f"{self.values!r} is not a permutation of 1..{n}")

    @property
    def n(self) -> int:
        return len(self.values)

    def to_bytes(self) -> bytes:
        return struct.pack(f">H{self.n}H", self.n, *self.values)

    @classmethod
    def from_bytes(cls, data: bytes) -> "RandomSequence":
        if len(data) < 2:
            raise SequencerError("sequence bytes truncated")
        (n,) = struct.unpack_from(">H", data)
        if len(data) < 2 + 2 * n:
            raise SequencerError("sequence bytes truncated")
        return cls(struct.unpack_from(f">{n}H", data, 2))


@dataclass(frozen=True)
class TransmissionOrder:
    """``order[k]`` is the 1-based source block sent at position k."""
    order: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.order) != list(range(1, len(self.order) + 1)):
            raise OrderingError(f"{self.order!r} is not a bijection")

    def __len__(self) -> int:
        return len(self.order)


@dataclass(frozen=True)
class BlockSet:
    blocks: tuple[bytes, ...]
    block_bits: int
    pad_len: int = 0

    def join(self) -> bytes:
        data = b"".join(self.blocks)
        return data[:len(data) - self.pad_len] if self.pad_len else data


def gen_sequence(rng: RngStream | np.random.Generator, n: int,
                 prev: RandomSequence | None = None) -> RandomSequence:
    """Fisher-Yates shuffle of 1..n, redrawn while it equals ``prev``."""
    if n < 2:
        raise SequencerError(f"n must be >= 2, got {n}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    while True:
        vals = list(range(1, n + 1))
        for i in range(n - 1, 0, -1):
            j = int(gen.integers(0, i + 1))
            vals[i], vals[j] = vals[j], vals[i]
        seq = RandomSequence(tuple(vals))
        if prev is None or seq != prev:
            return seq


def block_weights(S: RandomSequence) -> np.ndarray:
    inv = 1.0 / np.asarray(S.values, dtype=float)
    return inv / inv.sum()


def _hash_uniforms(seed_material: bytes, count: int) -> list[float]:
    key = hashlib.sha256(_ORDER_DOMAIN + seed_material).digest()
    out = []
    for k in range(count):
        word = hashlib.sha256(key + k.to_bytes(4, "big")).digest()[:8]
        out.append((int.from_bytes(word, "big") >> 11) * (1.0 / (1 << 53)))
    return out


def weighted_order(weights: Sequence[float], uniforms: Sequence[float]) -> tuple[int, ...]:
    """Draw indices without replacement; step k renormalizes over what is left.

    Returns 1-based indices. ``uniforms`` must hold at least len(weights) - 1
    values in [0, 1).
    """
    remaining = list(range(len(weights)))
    w = [float(x) for x in weights]
    picked = []
    for u in uniforms[:len(weights) - 1]:
        total = sum(w[i] for i in remaining)
        target = u * total
        acc = 0.0
        choice = remaining[-1]
        for i in remaining:
            acc += w[i]
            if target < acc:
                choice = i
                break
        picked.append(choice)
        remaining.remove(choice)
    picked.extend(remaining)
    return tuple(i + 1 for i in picked)


def derive_order(S: RandomSequence) -> TransmissionOrder:
    us = _hash_uniforms(S.to_bytes(), S.n - 1)
    return TransmissionOrder(weighted_order(block_weights(S), us))


def segment(c: bytes, n: int) -> BlockSet:
    """Split ``c`` into ``n`` equal blocks, zero-padding the tail if needed."""
    if n < 2:
        raise SegmentationError(f"block count must be >= 2, got {n}")
    if n > 8 * len(c):
        raise SegmentationError(f"{n} blocks from {8 * len(c)} bits")
    pad = -len(c) % n
    data = c + b"\x00" * pad
    size = len(data) // n
    blocks = tuple(data[k * size:(k + 1) * size] for k in range(n))
    return BlockSet(blocks, 8 * size, pad)


def apply_order(b: BlockSet | Sequence[bytes], o: TransmissionOrder) -> list[bytes]:
    blocks = b.blocks if isinstance(b, BlockSet) else tuple(b)
    if len(blocks) != len(o):
        raise OrderingError(f"{len(blocks)} blocks vs order of length {len(o)}")
    return [blocks[src - 1] for src in o.order]


def invert_order(h: Sequence[bytes], o: TransmissionOrder, pad_len: int = 0) -> BlockSet:
    if len(h) != len(o):
        raise OrderingError(f"{len(h)} blocks received, order expects {len(o)}")
    if any(x is None for x in h):
        raise OrderingError("missing block")
    out: list[bytes] = [b""] * len(o)
    for pos, src in enumerate(o.order):
        out[src - 1] = h[pos]
    size = len(out[0])
    if any(len(x) != size for x in out):
        raise OrderingError("blocks differ in length")
    return BlockSet(tuple(out), 8 * size, pad_len)


def shannon_entropy(dist: Sequence[float]) -> float:
    """-sum p log2 p in bits."""
    p = np.asarray(dist, dtype=float)
    if p.ndim != 1 or p.size == 0 or not np.all(np.isfinite(p)):
        raise ValueError("distribution must be a non-empty finite vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probabilities must be >= 0 and sum to 1")
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum()) + 0.0


def uniform_entropy(count: int) -> float:
    """Entropy of a uniform law on ``count`` outcomes, exact for powers of two."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if count & (count - 1) == 0:
        return float(count.bit_length() - 1)
    return math.log2(count)


def permutation_entropy(k: int) -> float:
    return math.fsum(math.log2(i) for i in range(2, k + 1))


@dataclass(frozen=True)
class StrengthReport:
    packet_bits: int
    block_count: int
    key_bits: int
    strength: int
    log2_terms: tuple[int, int]
    permutation_entropy_bits: float

    CSV_COLUMNS = ("packet_bits", "block_count", "key_bits",
                   "paper_strength_decimal", "permutation_entropy_bits")

    @property
    def terms(self) -> str:
        return f"2^{self.log2_terms[0]} + 2^{self.log2_terms[1]}"

    def csv_row(self) -> list[str]:
        return [str(self.packet_bits), str(self.block_count), str(self.key_bits),
                str(self.strength), format(self.permutation_entropy_bits, ".17g")]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        w.writerow(self.csv_row())
        return buf.getvalue()

    def render(self) -> str:
        return "\n".join([
            f"packet_bits={self.packet_bits} block_count={self.block_count} "
            f"key_bits={self.key_bits}",
            f"strength = {self.terms}",
            f"strength_decimal = {self.strength}",
            f"permutation_entropy_bits = {self.permutation_entropy_bits:.2f}",
        ])


def strength_report(packet_bits: int, block_count: int, key_bits: int) -> StrengthReport:
    """Packet strength 2^packet_bits plus key strength 2^(key_bits/2)."""
    if packet_bits <= 0 or block_count <= 0 or key_bits <= 0:
        raise ValueError("sizes must be positive")
    if packet_bits % block_count:
        raise ValueError(f"{packet_bits} bits do not split into {block_count} blocks")
    if key_bits % 2:
        raise ValueError(f"key_bits must be even, got {key_bits}")
    half = key_bits // 2
    return StrengthReport(packet_bits, block_count, key_bits,
                          (1 << packet_bits) + (1 << half), (packet_bits, half),
                          permutation_entropy(block_count))
