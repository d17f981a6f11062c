"""Non-learned reliability sequence generators.

Three baselines: density evolution under the Gaussian approximation, the
universal 5G-NR table, and genie-aided Monte-Carlo error counting.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .channel import AWGN, ChannelModel, ebno_db_to_sigma2, frame_rng, transmit
from .decode import LLR_CLIP, f_combine
from .sequences import ReliabilitySequence

NR_TABLE_FILE = "nr_sequence_1024.txt"
NR_TABLE_SHA256 = "aaf141df91f46b9d06d3d54188a39da37843b6000367f91b24c2f72ba5920958"
_PHI_SEAM = 10.0


@dataclass(frozen=True)
class BitChannelStats:
    """Per-index reliability evidence behind a constructed sequence."""

    means: np.ndarray = None  # DE/GA mean LLRs
    errors: np.ndarray = None  # MC first-error counts
    trials: int = 0


def _log_phi(m: float) -> float:
    """log of the two-piece phi approximation; phi is decreasing in m."""
    if m < _PHI_SEAM:
        return -0.4527 * m**0.859 + 0.0218
    return -m / 4.0 + 0.5 * math.log(math.pi / m) + math.log1p(-10.0 / (7.0 * m))


def phi(m: float) -> float:
    if m < 0:
        raise ValueError("phi domain is m >= 0")
    return math.exp(_log_phi(m))


def _phi_inv_log(log_target: float, tol: float = 1e-9) -> float:
    """Bisection inverse of log-phi, to absolute tolerance in m.

    Staying in log space keeps deeply polarized channels (where phi
    underflows double precision) resolvable.
    """
    if log_target >= _log_phi(0.0):
        return 0.0
    hi = 1.0
    while _log_phi(hi) > log_target:
        hi *= 2.0
    lo = hi / 2.0 if hi > 1.0 else 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _log_phi(mid) > log_target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def phi_inv(target: float, tol: float = 1e-9) -> float:
    if not target > 0:
        raise ValueError("target must be positive")
    return _phi_inv_log(math.log(target), tol)


def _mean_worse(m: float) -> float:
    """Check-side mean update m -> phi_inv(1 - (1 - phi(m))^2).

    The target equals phi(m)*(2 - phi(m)); once phi(m) is tiny that is
    2*phi(m) to double precision, so the log form never underflows.
    """
    if m == 0.0:
        return 0.0
    log_z = _log_phi(m)
    if log_z < -30:
        log_t = log_z + math.log(2.0)
    else:
        z = math.exp(log_z)
        log_t = math.log(z * (2.0 - z))
    return _phi_inv_log(log_t)


def dega_means(N: int, sigma2: float) -> np.ndarray:
    """Per-index mean LLRs from density evolution with the Gaussian
    approximation, natural-order layout (first half of a block is the
    check side)."""
    if N < 2 or N & (N - 1):
        raise ValueError("N must be a power of two")
    means = [2.0 / sigma2]
    while len(means) < N:
        nxt = []
        for m in means:
            nxt.append(_mean_worse(m))
            nxt.append(2.0 * m)
        means = nxt
    return np.asarray(means)


def dega_sequence(N: int, design_ebno_db: float, rate_for_sigma: float = 0.5) -> ReliabilitySequence:
    """DE/GA construction at a design Eb/N0 (rate fixes the sigma mapping)."""
    sigma2 = ebno_db_to_sigma2(design_ebno_db, rate_for_sigma)
    means = dega_means(N, sigma2)
    # descending mean = most reliable first; ties broken by lower index
    order = np.lexsort((np.arange(N), -means))
    prov = {
        "scheme": "DEGA",
        "design_ebno_db": float(design_ebno_db),
        "rate_for_sigma": float(rate_for_sigma),
    }
    return ReliabilitySequence(N=N, order=tuple(int(i) for i in order), provenance=prov)


def load_nr_table() -> np.ndarray:
    """The embedded 1024-entry universal order, ascending reliability."""
    data = resources.files(__package__).joinpath("data").joinpath(NR_TABLE_FILE).read_bytes()
    digest = hashlib.sha256(data).hexdigest()
    if digest != NR_TABLE_SHA256:
        raise RuntimeError("NR table file failed its checksum")
    lines = data.decode().splitlines()
    if not lines or lines[0] != "#nr-universal-v1":
        raise RuntimeError("NR table header missing")
    table = np.array([int(s) for s in lines[1:]], dtype=np.int64)
    if table.size != 1024:
        raise RuntimeError("NR table must hold 1024 entries")
    return table


def nr_sequence(N: int) -> ReliabilitySequence:
    """Universal order filtered to indices < N, most reliable first."""
    if N < 2 or N & (N - 1):
        raise ValueError("N must be a power of two")
    if N > 1024:
        raise ValueError("the universal table covers N <= 1024")
    table = load_nr_table()
    kept = table[table < N]  # ascending reliability, relative order kept
    order = kept[::-1].copy()
    return ReliabilitySequence(N=N, order=tuple(int(i) for i in order),
                               provenance={"scheme": "NR"})


def genie_leaf_llrs(chan_llrs: np.ndarray) -> np.ndarray:
    """Decision LLRs of every bit index under genie-aided SC for the
    all-zero codeword: every partial sum is zero, so the extend side
    reduces to a plain sum."""
    v = np.asarray(chan_llrs, dtype=np.float64)
    M = v.shape[-1]
    if M == 1:
        return v
    half = M // 2
    a, b = v[..., :half], v[..., half:]
    left = genie_leaf_llrs(f_combine(a, b))
    right = genie_leaf_llrs(a + b)
    return np.concatenate([left, right], axis=-1)


def mc_sequence(N: int, ebno_db: float, trials: int, seed: int,
                rate_for_sigma: float = 0.5, channel: str = AWGN,
                chunk: int = 10000) -> ReliabilitySequence:
    """Genie-aided Monte-Carlo construction.

    Transmits the all-zero codeword, runs SC with every earlier decision
    corrected to the truth, and counts first-decision errors per index
    (decision LLR < 0). Ranks by error count ascending, ties by index.
    """
    stats = mc_error_counts(N, ebno_db, trials, seed, rate_for_sigma, channel, chunk)
    # fewest first-decision errors = most reliable; ties go to the lower index
    order = np.lexsort((np.arange(N), stats.errors))
    prov = {
        "scheme": "MC",
        "ebno_db": float(ebno_db),
        "trials": int(trials),
        "seed": int(seed),
        "rate_for_sigma": float(rate_for_sigma),
        "channel": channel,
    }
    return ReliabilitySequence(N=N, order=tuple(int(i) for i in order), provenance=prov)


def mc_error_counts(N: int, ebno_db: float, trials: int, seed: int,
                    rate_for_sigma: float = 0.5, channel: str = AWGN,
                    chunk: int = 10000) -> BitChannelStats:
    """Raw genie-aided error counts behind mc_sequence."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if N < 2 or N & (N - 1):
        raise ValueError("N must be a power of two")
    sigma2 = ebno_db_to_sigma2(ebno_db, rate_for_sigma)
    model = ChannelModel(kind=channel, sigma2=sigma2)
    counts = np.zeros(N, dtype=np.int64)
    done = 0
    stream = 0
    symbols = np.ones((chunk, N))
    while done < trials:
        take = min(chunk, trials - done)
        rng = frame_rng(seed, stream)
        frame = transmit(symbols, model, rng)
        llr = 2.0 * frame.h * frame.y / sigma2
        leaf = genie_leaf_llrs(llr[:take])
        counts += (leaf < 0).sum(axis=0)
        done += take
        stream += 1
    return BitChannelStats(errors=counts, trials=trials)
