"""SC, SCL, and CRC-aided SCL decoding over LLRs.

The engine is iterative over leaves with per-level scratch memories and is
vectorized over a batch of frames and, for list decoding, over the L paths
of every frame. Decode order follows the natural-order butterfly: at each
tree level the first half of a block is the check side (f), the second half
the extend side (g).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .polar import CodeConfig, crc_check, crc_check_many

LLR_CLIP = 40.0


@dataclass(frozen=True)
class DecoderConfig:
    list_size: int = 8
    metric: str = "exact"  # or "min-sum"
    crc_aided: bool = True
    llr_clip: float = LLR_CLIP

    def __post_init__(self):
        if self.list_size < 1:
            raise ValueError("list_size must be >= 1")
        if self.metric not in ("exact", "min-sum"):
            raise ValueError("metric must be 'exact' or 'min-sum'")
        if not self.llr_clip > 0:
            raise ValueError("llr_clip must be positive")

    def digest(self) -> str:
        return f"L{self.list_size}-{self.metric}-crc{int(self.crc_aided)}-clip{self.llr_clip:g}"


@dataclass
class DecodeResult:
    u_hat: np.ndarray
    payload: np.ndarray
    crc_pass: bool
    path_metric: float


def f_combine(a, b, metric: str = "exact"):
    """Check-node LLR combine.

    exact: 2*atanh(tanh(a/2)*tanh(b/2)), evaluated in the overflow-safe
    box-plus form; min-sum: sign(a)*sign(b)*min(|a|, |b|).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    core = np.sign(a) * np.sign(b) * np.minimum(np.abs(a), np.abs(b))
    if metric == "min-sum":
        return core
    with np.errstate(invalid="ignore"):
        out = core + np.log1p(np.exp(-np.abs(a + b))) - np.log1p(np.exp(-np.abs(a - b)))
    both = np.isinf(a) & np.isinf(b)
    if np.any(both):
        out = np.where(both, np.sign(a) * np.sign(b) * np.inf, out)
    return out


def g_combine(a, b, u):
    """Extend-node combine: b + a when u = 0, b - a when u = 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    u = np.asarray(u)
    return b + (1.0 - 2.0 * u) * a


def _penalty(lam, u_is_one: bool, metric: str):
    """Path-metric increment for deciding bit u given decision LLR lam."""
    if metric == "exact":
        # softplus(-(1-2u) * lam)
        return np.logaddexp(0.0, lam if u_is_one else -lam)
    if u_is_one:
        return np.where(lam > 0, lam, 0.0)
    return np.where(lam < 0, -lam, 0.0)


@lru_cache(maxsize=None)
def _plan(N: int):
    """Per-leaf update schedule and level layout for block length N.

    Levels run from 1 (two halves of the full block) to n (single leaf).
    Returns (n, level offsets into the packed scratch, per-leaf update
    lists of (level, is_g)).
    """
    n = N.bit_length() - 1
    off = [0] * (n + 1)
    for lev in range(2, n + 1):
        off[lev] = off[lev - 1] + (N >> (lev - 1))
    updates = []
    for phi in range(N):
        if phi == 0:
            ups = [(lev, False) for lev in range(1, n + 1)]
        else:
            tz = (phi & -phi).bit_length() - 1
            start = n - tz
            ups = [(start, True)] + [(lev, False) for lev in range(start + 1, n + 1)]
        updates.append(tuple(ups))
    return n, tuple(off), tuple(updates)


def _run_levels(chan, llr_mem, bs, ups, N, off, metric, clip):
    """Apply one leaf's worth of f/g level updates in place."""
    for lev, is_g in ups:
        w = N >> lev
        if lev == 1:
            a = chan[..., :w]
            b = chan[..., w:]
        else:
            base = off[lev - 1]
            src = llr_mem[..., base : base + 2 * w]
            a = src[..., :w]
            b = src[..., w:]
        if is_g:
            u = bs[..., 2 * off[lev] : 2 * off[lev] + w]
            val = b + (1.0 - 2.0 * u) * a
        else:
            val = f_combine(a, b, metric)
        np.clip(val, -clip, clip, out=val)
        llr_mem[..., off[lev] : off[lev] + w] = val


def _propagate(bs, phi, n, N, off, u):
    """Fold a decided leaf bit back into the partial-sum memory."""
    bs[..., 2 * off[n] + (phi & 1)] = u
    p, lev = phi, n
    while (p & 1) and lev > 1:
        w = N >> lev
        base = 2 * off[lev]
        left = bs[..., base : base + w]
        right = bs[..., base + w : base + 2 * w]
        p >>= 1
        pbase = 2 * off[lev - 1] + (p & 1) * 2 * w
        bs[..., pbase : pbase + w] = left ^ right
        bs[..., pbase + w : pbase + 2 * w] = right
        lev -= 1


def sc_decode_many(llrs: np.ndarray, frozen_mask: np.ndarray,
                   metric: str = "exact", clip: float = LLR_CLIP) -> np.ndarray:
    """Successive cancellation over a batch of frames; returns u_hat (B, N).

    frozen_mask is boolean of length N; an all-true mask is allowed and
    yields all zeros.
    """
    chan = np.clip(np.asarray(llrs, dtype=np.float64), -clip, clip)
    if chan.ndim == 1:
        chan = chan[None, :]
    B, N = chan.shape
    n, off, updates = _plan(N)
    llr_mem = np.empty((B, N - 1), dtype=np.float64)
    bs = np.zeros((B, 2 * (N - 1)), dtype=np.uint8)
    u_hat = np.zeros((B, N), dtype=np.uint8)
    leaf = off[n]
    for phi in range(N):
        _run_levels(chan, llr_mem, bs, updates[phi], N, off, metric, clip)
        if frozen_mask[phi]:
            u = np.zeros(B, dtype=np.uint8)
        else:
            u = (llr_mem[:, leaf] < 0).astype(np.uint8)
            u_hat[:, phi] = u
        _propagate(bs, phi, n, N, off, u)
    return u_hat


def list_decode_many(llrs: np.ndarray, frozen_mask: np.ndarray, L: int,
                     metric: str = "exact", clip: float = LLR_CLIP):
    """SCL over a batch; returns (u_hats (B, L, N), metrics (B, L)).

    Inactive list slots carry +inf metrics. Fork survivors are the L
    lowest-metric candidates; ties prefer the u=0 branch of the lower
    path index (stable sort), which pins tie-breaking determinism.
    """
    chan = np.clip(np.asarray(llrs, dtype=np.float64), -clip, clip)
    if chan.ndim == 1:
        chan = chan[None, :]
    B, N = chan.shape
    n, off, updates = _plan(N)
    chan = chan[:, None, :]
    llr_mem = np.empty((B, L, N - 1), dtype=np.float64)
    bs = np.zeros((B, L, 2 * (N - 1)), dtype=np.uint8)
    u_hat = np.zeros((B, L, N), dtype=np.uint8)
    pm = np.full((B, L), np.inf)
    pm[:, 0] = 0.0
    leaf = off[n]
    bidx = np.arange(B)[:, None]
    for phi in range(N):
        _run_levels(chan, llr_mem, bs, updates[phi], N, off, metric, clip)
        lam = llr_mem[:, :, leaf]
        if frozen_mask[phi]:
            pm = pm + _penalty(lam, False, metric)
            u = np.zeros((B, L), dtype=np.uint8)
        else:
            cand = np.concatenate([pm + _penalty(lam, False, metric),
                                   pm + _penalty(lam, True, metric)], axis=1)
            order = np.argsort(cand, axis=1, kind="stable")[:, :L]
            pm = np.take_along_axis(cand, order, axis=1)
            parent = order % L
            u = (order >= L).astype(np.uint8)
            llr_mem = llr_mem[bidx, parent]
            bs = bs[bidx, parent]
            u_hat = u_hat[bidx, parent]
            u_hat[:, :, phi] = u
        _propagate(bs, phi, n, N, off, u)
    return u_hat, pm


def _sorted_results(u_hats, pms, cfg: CodeConfig):
    """Build DecodeResults for one frame, metric-ascending, ties by slot."""
    order = np.argsort(pms, kind="stable")
    info = cfg.info_positions()
    out = []
    for slot in order:
        if not np.isfinite(pms[slot]):
            continue
        u = u_hats[slot]
        kbits = u[info]
        ok = crc_check(kbits, cfg.crc) if cfg.crc.enabled else True
        out.append(DecodeResult(u_hat=u, payload=kbits[: cfg.payload_bits].copy(),
                                crc_pass=bool(ok), path_metric=float(pms[slot])))
    return out


def sc_decode(llrs, cfg: CodeConfig, metric: str = "exact",
              clip: float = LLR_CLIP) -> DecodeResult:
    """Plain successive cancellation for a single frame."""
    llr = np.asarray(llrs, dtype=np.float64)
    if llr.shape != (cfg.N,):
        raise ValueError(f"llrs must have length {cfg.N}")
    u = sc_decode_many(llr[None, :], cfg.frozen_mask(), metric, clip)[0]
    kbits = u[cfg.info_positions()]
    ok = crc_check(kbits, cfg.crc) if cfg.crc.enabled else True
    return DecodeResult(u_hat=u, payload=kbits[: cfg.payload_bits].copy(),
                        crc_pass=bool(ok), path_metric=0.0)


def scl_decode(llrs, cfg: CodeConfig, dec: DecoderConfig) -> list:
    """List decode one frame; results sorted by path metric ascending."""
    llr = np.asarray(llrs, dtype=np.float64)
    if llr.shape != (cfg.N,):
        raise ValueError(f"llrs must have length {cfg.N}")
    u_hats, pms = list_decode_many(llr[None, :], cfg.frozen_mask(),
                                   dec.list_size, dec.metric, dec.llr_clip)
    return _sorted_results(u_hats[0], pms[0], cfg)


def ca_scl_decode(llrs, cfg: CodeConfig, dec: DecoderConfig) -> DecodeResult:
    """CRC-aided selection: lowest-metric path that passes the CRC, else
    the lowest-metric path flagged crc_pass=False."""
    if dec.crc_aided and not cfg.crc.enabled:
        raise ValueError("crc_aided decoding requires a CRC in the code config")
    results = scl_decode(llrs, cfg, dec)
    if dec.crc_aided:
        for r in results:
            if r.crc_pass:
                return r
        best = results[0]
        best.crc_pass = False
        return best
    return results[0]


def decode_payloads_many(llrs: np.ndarray, cfg: CodeConfig, dec: DecoderConfig):
    """Batched decode straight to chosen payloads.

    Returns (payloads (B, K-r), crc_ok (B,)). Selection matches
    ca_scl_decode when dec.crc_aided, otherwise best metric wins.
    """
    frozen = cfg.frozen_mask()
    if dec.list_size == 1 and not dec.crc_aided:
        u = sc_decode_many(llrs, frozen, dec.metric, dec.llr_clip)
        kbits = u[:, cfg.info_positions()]
        ok = crc_check_many(kbits, cfg.crc)
        return kbits[:, : cfg.payload_bits], ok
    u_hats, pms = list_decode_many(llrs, frozen, dec.list_size,
                                   dec.metric, dec.llr_clip)
    B, L, _ = u_hats.shape
    kbits = u_hats[:, :, cfg.info_positions()]
    ok = crc_check_many(kbits.reshape(B * L, -1), cfg.crc).reshape(B, L)
    ok &= np.isfinite(pms)
    rank = np.argsort(pms, axis=1, kind="stable")
    rows = np.arange(B)[:, None]
    ok_ranked = np.take_along_axis(ok, rank, axis=1)
    if dec.crc_aided:
        any_ok = ok_ranked.any(axis=1)
        first_ok = np.argmax(ok_ranked, axis=1)
        pick = np.where(any_ok, first_ok, 0)
    else:
        any_ok = ok_ranked[:, 0]
        pick = np.zeros(B, dtype=np.int64)
    slot = rank[np.arange(B), pick]
    chosen = kbits[np.arange(B), slot]
    chosen_ok = ok[np.arange(B), slot] if dec.crc_aided else any_ok
    return chosen[:, : cfg.payload_bits], chosen_ok
