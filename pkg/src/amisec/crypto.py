"""Desk-scale asymmetric encryption: textbook RSA without padding.

Not secure. It exists so that the key-distribution protocol has a real,
deterministic public/secret key pair to move around.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .core import RngStream

DEFAULT_BITS = 256
DEFAULT_EXPONENT = 65537
MR_WITNESSES = (
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71,
    73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151,
    157, 163, 167, 173,
)
_SMALL_PRIMES = MR_WITNESSES + (179, 181, 191, 193, 197, 199, 211, 223, 227, 229)


class CryptoError(ValueError):
    pass


class KeyGenerationError(CryptoError):
    pass


class CorruptCiphertextError(CryptoError):
    pass


@dataclass(frozen=True)
class PublicKey:
    n: int
    e: int

    @property
    def bits(self) -> int:
        return self.n.bit_length()

    def serialize(self) -> str:
        return f"n={self.n:x} e={self.e:x}"


@dataclass(frozen=True)
class SecretKey:
    n: int
    d: int

    @property
    def bits(self) -> int:
        return self.n.bit_length()

    def serialize(self) -> str:
        return f"n={self.n:x} d={self.d:x}"


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    secret: SecretKey
    bits: int


@dataclass(frozen=True)
class CipherBlob:
    chunks: tuple[int, ...]
    plain_len: int

    def to_bytes(self, n: int) -> bytes:
        """Fixed-width big-endian serialization (one modulus width per chunk)."""
        width = (n.bit_length() + 7) // 8
        return b"".join(c.to_bytes(width, "big") for c in self.chunks)

    @classmethod
    def from_bytes(cls, data: bytes, n: int, plain_len: int) -> "CipherBlob":
        width = (n.bit_length() + 7) // 8
        if len(data) % width:
            raise CorruptCiphertextError(
                f"ciphertext length {len(data)} is not a multiple of {width}")
        chunks = tuple(int.from_bytes(data[k:k + width], "big")
                       for k in range(0, len(data), width))
        return cls(chunks, plain_len)


_KEY_RE = re.compile(r"^n=([0-9a-fA-F]+) ([ed])=([0-9a-fA-F]+)$")


def parse_key(line: str) -> PublicKey | SecretKey:
    m = _KEY_RE.match(line.strip())
    if not m:
        raise CryptoError(f"unparseable key line: {line!r}")
    n, kind, x = int(m.group(1), 16), m.group(2), int(m.group(3), 16)
    return PublicKey(n, x) if kind == "e" else SecretKey(n, x)


def is_probable_prime(n: int) -> bool:
    """Miller-Rabin with the fixed witness set ``MR_WITNESSES``."""
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in MR_WITNESSES:
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, gen: np.random.Generator, cap: int) -> int:
    nbytes = (bits + 7) // 8
    top = (1 << (bits - 1)) | (1 << (bits - 2))
    mask = (1 << bits) - 1
    for _ in range(cap):
        cand = (int.from_bytes(gen.bytes(nbytes), "big") & mask) | top | 1
        if is_probable_prime(cand):
            return cand
    raise KeyGenerationError(f"no {bits}-bit prime found in {cap} candidates")


def keypair_from_primes(p: int, q: int, e: int = DEFAULT_EXPONENT) -> KeyPair:
    if p == q:
        raise KeyGenerationError("p and q must be distinct")
    lam = math.lcm(p - 1, q - 1)
    if math.gcd(e, lam) != 1:
        raise KeyGenerationError(f"e={e} is not invertible mod lcm(p-1, q-1)")
    n = p * q
    d = pow(e, -1, lam)
    return KeyPair(PublicKey(n, e), SecretKey(n, d), n.bit_length())


def keygen(bits: int = DEFAULT_BITS, rng: RngStream | np.random.Generator | None = None,
           e: int = DEFAULT_EXPONENT) -> KeyPair:
    """Generate a ``bits``-bit modulus from two ``bits/2``-bit primes.

    The prime search is capped at ``10 * bits`` candidates per prime.
    """
    if bits < 64 or bits % 2:
        raise CryptoError(f"bits must be even and >= 64, got {bits}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if gen is None:
        raise CryptoError("keygen needs an rng")
    half = bits // 2
    cap = 10 * bits
    for _ in range(cap):
        p = _random_prime(half, gen, cap)
        q = _random_prime(half, gen, cap)
        if p == q or math.gcd(e, math.lcm(p - 1, q - 1)) != 1:
            continue
        kp = keypair_from_primes(p, q, e)
        if kp.bits == bits:
            return kp
    raise KeyGenerationError(f"could not assemble a {bits}-bit key")


def chunk_bytes(n: int) -> int:
    return max(1, (n.bit_length() - 8) // 8)


def encrypt(pk: PublicKey, m: bytes) -> CipherBlob:
    if not m:
        raise CryptoError("cannot encrypt an empty message")
    size = chunk_bytes(pk.n)
    if 256 ** size > pk.n:
        raise CryptoError(f"modulus too small for {size}-byte chunks")
    padded = m + b"\x00" * (-len(m) % size)
    chunks = tuple(pow(int.from_bytes(padded[k:k + size], "big"), pk.e, pk.n)
                   for k in range(0, len(padded), size))
    return CipherBlob(chunks, len(m))


def decrypt(sk: SecretKey, c: CipherBlob) -> bytes:
    size = chunk_bytes(sk.n)
    out = bytearray()
    for chunk in c.chunks:
        if not 0 <= chunk < sk.n:
            raise CorruptCiphertextError(f"chunk {chunk:#x} outside [0, n)")
        m = pow(chunk, sk.d, sk.n)
        if m >= 256 ** size:
            raise CorruptCiphertextError("decrypted chunk overflows the chunk width")
        out += m.to_bytes(size, "big")
    if c.plain_len > len(out):
        raise CorruptCiphertextError(
            f"plain_len {c.plain_len} exceeds decrypted length {len(out)}")
    return bytes(out[:c.plain_len])
