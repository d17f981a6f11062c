"""Bit-domain polar code primitives.

Butterfly transform (natural order, no bit-reversal), CRC attachment and
verification, and frozen-set bookkeeping. Everything here is a pure function
of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class CrcConfig:
    """CRC settings. length == 0 disables the CRC entirely.

    generator holds the low-order coefficient bits of g(x), highest power
    first, with the leading x^length term implicit. Example: x^4 + x + 1
    is length=4, generator=(0, 0, 1, 1).
    """

    length: int = 0
    generator: tuple = ()

    def __post_init__(self):
        if self.length < 0:
            raise ValueError("CRC length must be >= 0")
        if len(self.generator) != self.length:
            raise ValueError("generator must hold exactly `length` coefficient bits")
        if any(b not in (0, 1) for b in self.generator):
            raise ValueError("generator bits must be 0 or 1")

    @property
    def enabled(self):
        return self.length > 0

    def digest(self) -> str:
        if not self.enabled:
            return "crcoff"
        bits = "".join(str(b) for b in self.generator)
        return f"crc{self.length}g{bits}"


CRC_NONE = CrcConfig()
# The 4-bit CRC "0x3": g(x) = x^4 + x + 1.
CRC4_0X3 = CrcConfig(length=4, generator=(0, 0, 1, 1))


@dataclass(frozen=True)
class CodeConfig:
    """An (N, K) polar code: block length, non-frozen count, frozen set, CRC.

    K counts every non-frozen position, so with a CRC of length r the payload
    carries K - r bits.
    """

    N: int
    K: int
    frozen: frozenset = field(default_factory=frozenset)
    crc: CrcConfig = CRC_NONE

    def __post_init__(self):
        n = self.N
        if n < 2 or n & (n - 1):
            raise ValueError("N must be a power of two >= 2")
        fro = frozenset(int(i) for i in self.frozen)
        object.__setattr__(self, "frozen", fro)
        if not 1 <= self.K <= n:
            raise ValueError("K out of range")
        if len(fro) != n - self.K:
            raise ValueError("|frozen| must equal N - K")
        if fro and (min(fro) < 0 or max(fro) >= n):
            raise ValueError("frozen indices out of range")
        if self.crc.enabled and self.K < self.crc.length:
            raise ValueError("K must be at least the CRC length when CRC is enabled")

    @property
    def stages(self) -> int:
        return self.N.bit_length() - 1

    @property
    def payload_bits(self) -> int:
        return self.K - self.crc.length

    def info_positions(self) -> np.ndarray:
        """Non-frozen positions in ascending order."""
        mask = np.ones(self.N, dtype=bool)
        if self.frozen:
            mask[np.fromiter(self.frozen, dtype=np.int64)] = False
        return np.nonzero(mask)[0]

    def frozen_mask(self) -> np.ndarray:
        mask = np.zeros(self.N, dtype=bool)
        if self.frozen:
            mask[np.fromiter(self.frozen, dtype=np.int64)] = True
        return mask


def polar_transform(u) -> np.ndarray:
    """Multiply u by G_N = G_2^(x n) over GF(2) via the in-place butterfly.

    Operates on the last axis, so batches of source words work unchanged.
    The transform is its own inverse.
    """
    x = np.array(u, dtype=np.uint8) & 1
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError("length must be a power of two")
    span = 2
    while span <= n:
        half = span // 2
        v = x.reshape(x.shape[:-1] + (n // span, span))
        v[..., :half] ^= v[..., half:]
        span *= 2
    return x


def _divide(bits: np.ndarray, crc: CrcConfig) -> np.ndarray:
    """Remainder of bits(x) mod g(x), MSB first, zero initial register."""
    r = crc.length
    work = np.array(bits, dtype=np.uint8) & 1
    g_full = np.concatenate([np.ones(1, np.uint8), np.asarray(crc.generator, dtype=np.uint8)])
    for i in range(work.size - r):
        if work[i]:
            work[i : i + r + 1] ^= g_full
    return work[-r:] if r else work[:0]


def crc_append(payload, crc: CrcConfig) -> np.ndarray:
    """Return payload || CRC, the remainder of payload * x^r mod g(x)."""
    if not crc.enabled:
        raise ValueError("CRC is disabled")
    p = np.asarray(payload, dtype=np.uint8) & 1
    rem = _divide(np.concatenate([p, np.zeros(crc.length, np.uint8)]), crc)
    return np.concatenate([p, rem])


def crc_check(bits, crc: CrcConfig) -> bool:
    """True iff the whole vector divides cleanly by the generator."""
    if not crc.enabled:
        return True
    b = np.asarray(bits, dtype=np.uint8)
    if b.size < crc.length:
        raise ValueError("vector shorter than the CRC")
    return not _divide(b, crc).any()


@lru_cache(maxsize=None)
def _remainder_matrix(width: int, crc: CrcConfig, shift: int) -> np.ndarray:
    """Rows: remainder of x^shift * x^(width-1-i) mod g. CRC is linear, so
    any remainder is a GF(2) matrix product with these rows."""
    rows = np.zeros((width, crc.length), dtype=np.uint8)
    for i in range(width):
        e = np.zeros(width + shift, dtype=np.uint8)
        e[i] = 1
        rows[i] = _divide(e, crc)
    return rows


def crc_append_many(payloads: np.ndarray, crc: CrcConfig) -> np.ndarray:
    """Batched crc_append over rows. Matches crc_append bit for bit."""
    p = np.asarray(payloads, dtype=np.uint8) & 1
    if not crc.enabled:
        raise ValueError("CRC is disabled")
    mat = _remainder_matrix(p.shape[1], crc, crc.length)
    rem = (p @ mat) & 1
    return np.concatenate([p, rem.astype(np.uint8)], axis=1)


def crc_check_many(bits: np.ndarray, crc: CrcConfig) -> np.ndarray:
    """Batched crc_check over rows; returns a boolean vector."""
    b = np.asarray(bits, dtype=np.uint8) & 1
    if not crc.enabled:
        return np.ones(b.shape[0], dtype=bool)
    mat = _remainder_matrix(b.shape[1], crc, 0)
    rem = (b @ mat) & 1
    return ~rem.any(axis=1)


def encode(message, cfg: CodeConfig) -> np.ndarray:
    """Encode a payload of K - r bits into a length-N codeword.

    Appends the CRC when enabled, scatters the K bits into non-frozen
    positions in ascending index order, zeros the frozen set, and applies
    the polar transform.
    """
    m = np.asarray(message, dtype=np.uint8)
    if m.shape != (cfg.payload_bits,):
        raise ValueError(f"message must have length {cfg.payload_bits}")
    bits = crc_append(m, cfg.crc) if cfg.crc.enabled else m
    u = np.zeros(cfg.N, dtype=np.uint8)
    u[cfg.info_positions()] = bits
    return polar_transform(u)


def encode_many(messages: np.ndarray, cfg: CodeConfig) -> np.ndarray:
    """Batched encode over rows of payloads."""
    m = np.asarray(messages, dtype=np.uint8)
    if m.ndim != 2 or m.shape[1] != cfg.payload_bits:
        raise ValueError(f"messages must be (batch, {cfg.payload_bits})")
    bits = crc_append_many(m, cfg.crc) if cfg.crc.enabled else m
    u = np.zeros((m.shape[0], cfg.N), dtype=np.uint8)
    u[:, cfg.info_positions()] = bits
    return polar_transform(u)


def info_set_from_sequence(order, K: int) -> frozenset:
    """Frozen set for rate K/N from a most-reliable-first index order.

    Accepts a ReliabilitySequence or any permutation of [0, N).
    """
    idx = getattr(order, "order", order)
    idx = np.asarray(idx, dtype=np.int64)
    N = idx.size
    if not 1 <= K <= N:
        raise ValueError("K out of range")
    if not np.array_equal(np.sort(idx), np.arange(N)):
        raise ValueError("order must be a permutation of [0, N)")
    return frozenset(int(i) for i in idx[K:])


def config_from_info_set(N: int, info_set, crc: CrcConfig = CRC_NONE) -> CodeConfig:
    """CodeConfig whose non-frozen positions are exactly info_set."""
    info = frozenset(int(i) for i in info_set)
    if not info:
        raise ValueError("info set must be non-empty")
    if not all(0 <= i < N for i in info):
        raise ValueError(f"info set indices must lie in [0, {N})")
    frozen = frozenset(range(N)) - info
    return CodeConfig(N=N, K=len(info), frozen=frozen, crc=crc)
