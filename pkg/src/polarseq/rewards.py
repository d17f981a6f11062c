"""Monte-Carlo BLER estimation, the persistent reward cache, and
training-SNR calibration.

Every estimate is keyed by (info set, channel, milli-dB SNR, decoder
digest, stop-rule digest); the per-key random streams derive from the key
itself, so cached and freshly simulated runs are interchangeable.
"""

from __future__ import annotations

import hashlib
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import AWGN, ChannelModel, ebno_db_to_sigma2, frame_rng, llr_demodulate, transmit
from .decode import DecoderConfig, decode_payloads_many
from .polar import CRC4_0X3, CRC_NONE, CodeConfig, CrcConfig, config_from_info_set, encode_many
from .sequences import ReliabilitySequence


@dataclass(frozen=True)
class StopRule:
    """Stop at target_errors block errors or max_frames frames, whichever
    comes first. target_errors=0 disables the error stop. chunk sets the
    simulation granularity and is part of the stream layout."""

    target_errors: int = 100
    max_frames: int = 100000
    chunk: int = 1000

    def __post_init__(self):
        if self.max_frames < 1 or self.chunk < 1:
            raise ValueError("max_frames and chunk must be >= 1")
        if self.target_errors < 0:
            raise ValueError("target_errors must be >= 0")

    def digest(self) -> str:
        return f"e{self.target_errors}-f{self.max_frames}-c{self.chunk}"


@dataclass(frozen=True)
class BlerEstimate:
    errors: int
    frames: int

    def __post_init__(self):
        if self.frames < 1 or not 0 <= self.errors <= self.frames:
            raise ValueError("need 0 <= errors <= frames, frames >= 1")

    @property
    def bler(self) -> float:
        return self.errors / self.frames

    @property
    def stderr(self) -> float:
        p = self.bler
        return math.sqrt(p * (1.0 - p) / self.frames)


@dataclass(frozen=True)
class RewardKey:
    """Identity of one simulated operating point."""

    mask_hex: str
    channel: str
    snr_millidb: int
    dec_digest: str
    stop_digest: str

    def line(self, est: BlerEstimate) -> str:
        return (f"v1 {self.mask_hex} {self.channel} {self.snr_millidb} "
                f"{self.dec_digest} {self.stop_digest} {est.errors} {est.frames}")


def info_set_mask_hex(N: int, info_set) -> str:
    mask = 0
    for i in info_set:
        i = int(i)
        if not 0 <= i < N:
            raise ValueError("info set index out of range")
        mask |= 1 << i
    width = (N + 3) // 4
    return f"{mask:0{width}x}"


def make_reward_key(N, info_set, channel, ebno_db, dec_digest, stop: StopRule) -> RewardKey:
    return RewardKey(
        mask_hex=info_set_mask_hex(N, info_set),
        channel=channel,
        snr_millidb=int(round(ebno_db * 1000)),
        dec_digest=dec_digest,
        stop_digest=stop.digest(),
    )


def _key_philox_seed(base_seed: int, key: RewardKey) -> int:
    """128-bit Philox key derived from (base seed, reward key) only, so the
    draws for a setting never depend on evaluation order."""
    text = f"{key.mask_hex}|{key.channel}|{key.snr_millidb}|{key.dec_digest}|{key.stop_digest}"
    words = np.frombuffer(hashlib.sha256(text.encode()).digest(), dtype=np.uint32)
    ss = np.random.SeedSequence(entropy=int(base_seed) & ((1 << 64) - 1),
                                spawn_key=tuple(int(w) for w in words))
    state = ss.generate_state(2, np.uint64)
    return int(state[0]) | (int(state[1]) << 64)


class RewardCache:
    """Append-only on-disk store of BLER estimates; first value sticks.

    path=None keeps the cache purely in memory. Corrupt lines in the file
    are skipped with a warning and never returned.
    """

    def __init__(self, path=None):
        self.path = path
        self._mem: dict = {}
        self.hits = 0
        self.misses = 0
        if path is not None and os.path.exists(path):
            self._load()

    def _load(self):
        with open(self.path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 8 or parts[0] != "v1":
                    warnings.warn(f"{self.path}:{lineno}: skipping corrupt cache record")
                    continue
                try:
                    key = RewardKey(mask_hex=parts[1], channel=parts[2],
                                    snr_millidb=int(parts[3]), dec_digest=parts[4],
                                    stop_digest=parts[5])
                    est = BlerEstimate(errors=int(parts[6]), frames=int(parts[7]))
                except (ValueError, OverflowError):
                    warnings.warn(f"{self.path}:{lineno}: skipping corrupt cache record")
                    continue
                self._mem.setdefault(key, est)

    def get(self, key: RewardKey):
        est = self._mem.get(key)
        if est is None:
            self.misses += 1
        else:
            self.hits += 1
        return est

    def put(self, key: RewardKey, est: BlerEstimate):
        if key in self._mem:
            return
        self._mem[key] = est
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(key.line(est) + "\n")
                fh.flush()

    def __len__(self):
        return len(self._mem)

    def stats(self) -> dict:
        frames = sum(e.frames for e in self._mem.values())
        return {"records": len(self._mem), "frames": frames,
                "hits": self.hits, "misses": self.misses}

    def compact(self):
        """Rewrite the file keeping the first record per key."""
        if self.path is None:
            return
        tmp = self.path + ".tmp"
        with open(tmp, "w") as fh:
            for key, est in self._mem.items():
                fh.write(key.line(est) + "\n")
        os.replace(tmp, self.path)


def _effective_configs(N: int, info_set, dec: DecoderConfig, crc: CrcConfig):
    """The code/decoder pair actually simulated for a rate.

    The CRC rides inside K, so tiny rates cannot carry it; those fall back
    to a plain code with best-path selection. Without CRC-aided selection
    the code stays plain as well.
    """
    k = len(info_set)
    if dec.crc_aided and crc.enabled and k > crc.length:
        return config_from_info_set(N, info_set, crc), dec
    return config_from_info_set(N, info_set, CRC_NONE), replace(dec, crc_aided=False)


def _dec_digest(cfg: CodeConfig, dec: DecoderConfig) -> str:
    return f"{dec.digest()}-{cfg.crc.digest()}"


def _sim_chunk(cfg: CodeConfig, dec: DecoderConfig, model: ChannelModel,
               philox_key: int, chunk_index: int, chunk: int) -> np.ndarray:
    """Per-frame block-error flags for one chunk of frames.

    Draw order per chunk: payload bits, fading (Rayleigh only), noise.
    """
    rng = frame_rng(philox_key, chunk_index)
    payload = rng.integers(0, 2, size=(chunk, cfg.payload_bits), dtype=np.uint8)
    x = encode_many(payload, cfg)
    frame = transmit(1.0 - 2.0 * x.astype(np.float64), model, rng)
    llr = llr_demodulate(frame, model.sigma2)
    pay_hat, _ = decode_payloads_many(llr, cfg, dec)
    return (pay_hat != payload).any(axis=1)


def _sim_chunk_task(args):
    return _sim_chunk(*args)


def estimate_bler(N: int, info_set, channel: str, ebno_db: float,
                  dec: DecoderConfig = DecoderConfig(),
                  stop: StopRule = StopRule(), seed: int = 0,
                  crc: CrcConfig = CRC4_0X3, es_n0: bool = False,
                  cache: RewardCache = None, jobs: int = 1) -> BlerEstimate:
    """Monte-Carlo block error rate of the code defined by info_set.

    Simulates random payloads through encode, channel, and decode until the
    stop rule fires. Deterministic given (seed, arguments); the number of
    worker jobs never changes the result.
    """
    info = frozenset(int(i) for i in info_set)
    if not info:
        raise ValueError("info set must be non-empty")
    cfg, eff_dec = _effective_configs(N, info, dec, crc)
    key = make_reward_key(N, info, channel, ebno_db, _dec_digest(cfg, eff_dec), stop)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    rate = cfg.K / cfg.N
    sigma2 = ebno_db_to_sigma2(ebno_db, rate, es_n0=es_n0)
    model = ChannelModel(kind=channel, sigma2=sigma2)
    philox_key = _key_philox_seed(seed, key)

    errors = 0
    frames = 0
    n_chunks = -(-stop.max_frames // stop.chunk)
    est = None
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        idx = 0
        while idx < n_chunks and est is None:
            wave = list(range(idx, min(idx + max(1, jobs), n_chunks)))
            idx = wave[-1] + 1
            tasks = [(cfg, eff_dec, model, philox_key, c, stop.chunk) for c in wave]
            if pool is None:
                results = [_sim_chunk_task(t) for t in tasks]
            else:
                results = list(pool.map(_sim_chunk_task, tasks))
            for err in results:
                take = min(err.size, stop.max_frames - frames)
                err = err[:take]
                if stop.target_errors:
                    cum = errors + np.cumsum(err)
                    reached = np.nonzero(cum >= stop.target_errors)[0]
                    if reached.size:
                        cut = reached[0] + 1
                        est = BlerEstimate(errors=int(cum[cut - 1]), frames=frames + cut)
                        break
                errors += int(err.sum())
                frames += take
                if frames >= stop.max_frames:
                    est = BlerEstimate(errors=errors, frames=frames)
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    assert est is not None
    if cache is not None:
        cache.put(key, est)
    return est


@dataclass
class RateWeights:
    """Objective weights c_k and the per-rate training SNRs, indexed by k
    in [1, N]; slot 0 is unused."""

    c: np.ndarray
    snr_db: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        self.snr_db = np.asarray(self.snr_db, dtype=np.float64)
        if self.c.ndim != 1 or self.c.shape != self.snr_db.shape:
            raise ValueError("c and snr_db must be equal-length vectors")
        if (self.c < 0).any():
            raise ValueError("weights must be nonnegative")
        if not (self.c > 0).any():
            raise ValueError("at least one weight must be positive")

    @property
    def N(self) -> int:
        return self.c.size - 1

    def active_rates(self) -> np.ndarray:
        return np.nonzero(self.c > 0)[0]

    @classmethod
    def joint(cls, N: int, stride: int = 1) -> "RateWeights":
        c = np.zeros(N + 1)
        c[stride::stride] = 1.0
        return cls(c=c, snr_db=np.full(N + 1, np.nan))

    @classmethod
    def target_rate(cls, N: int, k: int, weight: float = 10.0,
                    base: float = 1.0) -> "RateWeights":
        c = np.full(N + 1, base)
        c[0] = 0.0
        c[k] = weight
        return cls(c=c, snr_db=np.full(N + 1, np.nan))


def reward(N: int, info_set, k: int, weights: RateWeights, channel: str,
           dec: DecoderConfig, stop: StopRule, seed: int,
           crc: CrcConfig = CRC4_0X3, es_n0: bool = False,
           cache: RewardCache = None, jobs: int = 1) -> float:
    """-c_k * BLER at the rate-k training SNR; 0 without simulating when
    c_k is zero."""
    if k != len(info_set):
        raise ValueError("k must equal |info_set|")
    if weights.c[k] == 0.0:
        return 0.0
    snr = float(weights.snr_db[k])
    if not np.isfinite(snr):
        raise ValueError(f"no training SNR calibrated for k={k}")
    est = estimate_bler(N, info_set, channel, snr, dec, stop, seed,
                        crc=crc, es_n0=es_n0, cache=cache, jobs=jobs)
    return -float(weights.c[k]) * est.bler


class CalibrationError(RuntimeError):
    pass


def calibrate_training_snr(seq: ReliabilitySequence, k: int, channel: str,
                           dec: DecoderConfig, target_bler: float = 0.01,
                           bracket=(-4.0, 40.0), stop: StopRule = StopRule(),
                           seed: int = 0, crc: CrcConfig = CRC4_0X3,
                           es_n0: bool = False, cache: RewardCache = None,
                           jobs: int = 1, max_iter: int = 30) -> float:
    """SNR (dB) where the rate-k code from seq hits the target BLER.

    Bisection until the measured BLER falls in [target/2, 2*target] with at
    least 100 observed errors. The bracket must straddle the target.
    """
    info = seq.info_set(k)
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ValueError("bracket must satisfy lo < hi")

    def probe(snr_db):
        return estimate_bler(seq.N, info, channel, snr_db, dec, stop, seed,
                             crc=crc, es_n0=es_n0, cache=cache, jobs=jobs)

    def in_band(est):
        return (target_bler / 2 <= est.bler <= target_bler * 2
                and est.errors >= min(100, stop.target_errors or 100))

    lo_est = probe(lo)
    if in_band(lo_est):
        return lo
    hi_est = probe(hi)
    if in_band(hi_est):
        return hi
    if not (lo_est.bler > target_bler and hi_est.bler < target_bler):
        raise CalibrationError(
            f"bracket does not straddle target: bler({lo} dB)={lo_est.bler:.4g} "
            f"({lo_est.errors}/{lo_est.frames}), bler({hi} dB)={hi_est.bler:.4g} "
            f"({hi_est.errors}/{hi_est.frames}), target={target_bler}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        est = probe(mid)
        if in_band(est):
            return mid
        if est.bler > target_bler:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(
        f"no point within [{target_bler/2}, {target_bler*2}] after {max_iter} "
        f"bisection steps; last interval [{lo}, {hi}] dB")


def calibrate_rate_weights(seq: ReliabilitySequence, weights: RateWeights,
                           channel: str, dec: DecoderConfig,
                           target_bler: float = 0.01,
                           stop: StopRule = StopRule(), seed: int = 0,
                           crc: CrcConfig = CRC4_0X3, es_n0: bool = False,
                           cache: RewardCache = None, jobs: int = 1,
                           bracket=(-4.0, 40.0)) -> RateWeights:
    """Fill per-rate training SNRs for every k with c_k > 0, calibrated
    against the given baseline sequence."""
    snr = weights.snr_db.copy()
    for k in weights.active_rates():
        snr[k] = calibrate_training_snr(seq, int(k), channel, dec, target_bler,
                                        bracket, stop, seed, crc, es_n0, cache, jobs)
    return RateWeights(c=weights.c.copy(), snr_db=snr)


@dataclass
class RewardEnv:
    """Simulation handles episodes score prefixes against.

    Rewards and objectives share the cache, so repeated prefixes cost one
    simulation total.
    """

    N: int
    channel: str = AWGN
    dec: DecoderConfig = DecoderConfig()
    stop: StopRule = StopRule()
    seed: int = 0
    crc: CrcConfig = CRC4_0X3
    es_n0: bool = False
    cache: RewardCache = field(default_factory=RewardCache)
    jobs: int = 1

    def reward(self, prefix, weights: RateWeights) -> float:
        k = len(prefix)
        return reward(self.N, frozenset(prefix), k, weights, self.channel,
                      self.dec, self.stop, self.seed, self.crc, self.es_n0,
                      self.cache, self.jobs)

    def rate_bler(self, info_set, k: int, weights: RateWeights,
                  stop: StopRule = None) -> float:
        snr = float(weights.snr_db[k])
        est = estimate_bler(self.N, info_set, self.channel, snr, self.dec,
                            stop or self.stop, self.seed, crc=self.crc,
                            es_n0=self.es_n0, cache=self.cache, jobs=self.jobs)
        return est.bler

    def objective(self, order, weights: RateWeights, stop: StopRule = None) -> float:
        """Weighted nested objective sum_k c_k * J_k for a full order."""
        total = 0.0
        for k in weights.active_rates():
            k = int(k)
            if k > len(order):
                continue
            total += float(weights.c[k]) * self.rate_bler(frozenset(order[:k]), k,
                                                          weights, stop)
        return total
