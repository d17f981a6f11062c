"""BPSK over AWGN and Rayleigh fading, LLR demodulation, SNR bookkeeping.

Randomness comes from counter-based Philox streams so that any frame's
draws are fixed by (seed, stream index) alone, independent of evaluation
order or parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AWGN = "awgn"
RAYLEIGH = "rayleigh"
_KINDS = (AWGN, RAYLEIGH)

_MASK128 = (1 << 128) - 1


@dataclass(frozen=True)
class ChannelModel:
    kind: str
    sigma2: float

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


@dataclass(frozen=True)
class ReceivedFrame:
    """Channel output y and the fading amplitudes h that produced it.

    h is all ones for AWGN. Arrays may carry a leading batch axis.
    """

    y: np.ndarray
    h: np.ndarray


def frame_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent Philox stream; (seed, stream) pins every draw.

    Streams are disjoint 2^128-draw counter ranges, so simulations can be
    sharded across workers and merged without any draw depending on order.
    """
    if stream < 0:
        raise ValueError("stream must be non-negative")
    bg = np.random.Philox(key=int(seed) & _MASK128, counter=int(stream) << 128)
    return np.random.Generator(bg)


def bpsk_modulate(x) -> np.ndarray:
    """Bit 0 -> +1.0, bit 1 -> -1.0 (sign convention fixed repo-wide)."""
    b = np.asarray(x)
    return 1.0 - 2.0 * b.astype(np.float64)


def transmit(symbols, model: ChannelModel, rng: np.random.Generator) -> ReceivedFrame:
    """Push symbols through the channel, drawing fading first, then noise.

    AWGN: y = s + n, n ~ Normal(0, sigma2), h = 1.
    Rayleigh: h i.i.d. Rayleigh amplitude with E[h^2] = 1, y = h*s + n.
    """
    s = np.asarray(symbols, dtype=np.float64)
    if model.kind == RAYLEIGH:
        h = rng.rayleigh(scale=np.sqrt(0.5), size=s.shape)
    else:
        h = np.ones_like(s)
    n = rng.standard_normal(s.shape) * np.sqrt(model.sigma2)
    return ReceivedFrame(y=h * s + n, h=h)


def llr_demodulate(frame: ReceivedFrame, sigma2: float) -> np.ndarray:
    """Coherent LLRs log P(x=0|y)/P(x=1|y) = 2*h*y/sigma2 (perfect CSI)."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    return 2.0 * frame.h * frame.y / sigma2


def ebno_db_to_sigma2(ebno_db: float, rate: float, es_n0: bool = False) -> float:
    """Per-dimension noise variance for BPSK at the given Eb/N0.

    sigma2 = 1 / (2 * R * 10^(ebno_db/10)). With es_n0=True the axis is
    treated as Es/N0 instead, i.e. the rate term drops out.
    """
    if not 0 < rate <= 1:
        raise ValueError("rate must be in (0, 1]")
    r = 1.0 if es_n0 else rate
    return 1.0 / (2.0 * r * 10.0 ** (ebno_db / 10.0))
