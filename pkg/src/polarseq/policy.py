"""Pure-numpy transformer policy over channel indices.

The policy reads the prefix of indices chosen so far (plus a START token)
and emits a distribution over the remaining indices. Forward and backward
passes are written out by hand so the whole parameter vector can be
checked against finite differences.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

MASK_FILL = -1e9
CHECKPOINT_MAGIC = b"polarseq-policy-v1\n"


@dataclass(frozen=True)
class PolicyConfig:
    N: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    use_pe: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.N < 2 or self.n_layers < 1:
            raise ValueError("need N >= 2 and at least one layer")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def param_shapes(cfg: PolicyConfig) -> dict:
    """Parameter manifest in a fixed order; flatten/unflatten follow it."""
    d, h, dk, f = cfg.d_model, cfg.n_heads, cfg.d_head, cfg.d_ff
    shapes = {"embed": (cfg.N + 1, d)}
    for i in range(cfg.n_layers):
        p = f"l{i}."
        shapes[p + "wq"] = (h, d, dk)
        shapes[p + "wk"] = (h, d, dk)
        shapes[p + "wv"] = (h, d, dk)
        shapes[p + "wo"] = (d, d)
        shapes[p + "ln1_g"] = (d,)
        shapes[p + "ln1_b"] = (d,)
        shapes[p + "w1"] = (d, f)
        shapes[p + "b1"] = (f,)
        shapes[p + "w2"] = (f, d)
        shapes[p + "b2"] = (d,)
        shapes[p + "ln2_g"] = (d,)
        shapes[p + "ln2_b"] = (d,)
    shapes["head_w"] = (d, cfg.N)
    shapes["head_b"] = (cfg.N,)
    return shapes


def init_params(cfg: PolicyConfig, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        base = name.split(".")[-1]
        if base.endswith("_g"):
            params[name] = np.ones(shape)
        elif base.endswith("_b") or base.startswith("b") or base == "head_b":
            params[name] = np.zeros(shape)
        elif base == "embed":
            params[name] = rng.standard_normal(shape) / np.sqrt(cfg.d_model)
        else:
            fan_in = shape[-2] if len(shape) > 1 else shape[0]
            params[name] = rng.standard_normal(shape) / np.sqrt(fan_in)
    return params


def zeros_like_params(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def flatten_params(params: dict) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in params])


def unflatten_params(flat: np.ndarray, template: dict) -> dict:
    out = {}
    pos = 0
    for k, v in template.items():
        out[k] = flat[pos:pos + v.size].reshape(v.shape).copy()
        pos += v.size
    if pos != flat.size:
        raise ValueError("flat vector length mismatch")
    return out


def positional_encoding(T: int, d: int) -> np.ndarray:
    """Sinusoidal table (T, d): sin on even columns, cos on odd."""
    pos = np.arange(T)[:, None]
    idx = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (idx // 2)) / d)
    pe = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return pe


def _layer_norm(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)

def _layer_norm_bwd(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _softmax_last(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def self_attention(x, wq, wk, wv, wo):
    """Multi-head self attention over the full input; returns output and
    the cache needed for the backward pass."""
    dk = wq.shape[-1]
    q = np.einsum("btd,hdk->bhtk", x, wq)
    k = np.einsum("btd,hdk->bhtk", x, wk)
    v = np.einsum("btd,hdk->bhtk", x, wv)
    scores = np.einsum("bhtk,bhsk->bhts", q, k) / np.sqrt(dk)
    att = _softmax_last(scores)
    ctx = np.einsum("bhts,bhsk->bhtk", att, v)
    B, H, T, _ = ctx.shape
    merged = ctx.transpose(0, 2, 1, 3).reshape(B, T, H * dk)
    out = merged @ wo
    return out, (x, q, k, v, att, merged)

def self_attention_bwd(dout, wq, wk, wv, wo, cache):
    x, q, k, v, att, merged = cache
    B, T, d = x.shape
    H, _, dk = wq.shape
    dwo = np.einsum("btm,btd->md", merged, dout)
    dmerged = dout @ wo.T
    dctx = dmerged.reshape(B, T, H, dk).transpose(0, 2, 1, 3)
    datt = np.einsum("bhtk,bhsk->bhts", dctx, v)
    dv = np.einsum("bhts,bhtk->bhsk", att, dctx)
    dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
    dscores /= np.sqrt(dk)
    dq = np.einsum("bhts,bhsk->bhtk", dscores, k)
    dk_ = np.einsum("bhts,bhtk->bhsk", dscores, q)
    dwq = np.einsum("btd,bhtk->hdk", x, dq)
    dwk = np.einsum("btd,bhtk->hdk", x, dk_)
    dwv = np.einsum("btd,bhtk->hdk", x, dv)
    dx = (np.einsum("bhtk,hdk->btd", dq, wq)
          + np.einsum("bhtk,hdk->btd", dk_, wk)
          + np.einsum("bhtk,hdk->btd", dv, wv))
    return dx, dwq, dwk, dwv, dwo


class Policy:
    """Transformer policy; grads accumulate across backward_step calls."""

    def __init__(self, cfg: PolicyConfig, params: dict = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        got = {k: v.shape for k, v in self.params.items()}
        want = param_shapes(cfg)
        if got != want:
            raise ValueError("parameter manifest does not match config")
        self._pe = positional_encoding(cfg.N + 1, cfg.d_model)

    def forward_step(self, tokens: np.ndarray, chosen_mask: np.ndarray):
        """Action probabilities for one decision step.

        tokens: (B, T) int, column 0 is START (token 0), others are index+1.
        chosen_mask: (B, N) bool, True where the action is spent.
        Returns (probs (B, N), cache).
        """
        cfg, P = self.cfg, self.params
        tokens = np.asarray(tokens)
        B, T = tokens.shape
        x = P["embed"][tokens]
        if cfg.use_pe:
            x = x + self._pe[:T]
        caches = []
        for i in range(cfg.n_layers):
            p = f"l{i}."
            a, att_cache = self_attention(x, P[p + "wq"], P[p + "wk"], P[p + "wv"], P[p + "wo"])
            y1, ln1_cache = _layer_norm(x + a, P[p + "ln1_g"], P[p + "ln1_b"], cfg.ln_eps)
            h_pre = y1 @ P[p + "w1"] + P[p + "b1"]
            h = np.maximum(h_pre, 0.0)
            f = h @ P[p + "w2"] + P[p + "b2"]
            x, ln2_cache = _layer_norm(y1 + f, P[p + "ln2_g"], P[p + "ln2_b"], cfg.ln_eps)
            caches.append((att_cache, ln1_cache, y1, h, ln2_cache))
        read = x[:, -1] if cfg.use_pe else x[:, 0]
        logits = read @ P["head_w"] + P["head_b"]
        masked = np.where(chosen_mask, MASK_FILL, logits)
        probs = _softmax_last(masked)
        probs = np.where(chosen_mask, 0.0, probs)
        probs = probs / probs.sum(axis=-1, keepdims=True)
        cache = (tokens, caches, read, probs, chosen_mask, x.shape)
        return probs, cache

    def backward_step(self, cache, dlogits: np.ndarray, grads: dict):
        """Accumulate parameter grads for one step given dL/dlogits."""
        cfg, P = self.cfg, self.params
        tokens, caches, read, _probs, _mask, xshape = cache
        B, T, d = xshape
        grads["head_w"] += read.T @ dlogits
        grads["head_b"] += dlogits.sum(axis=0)
        dread = dlogits @ P["head_w"].T
        dx = np.zeros((B, T, d))
        if cfg.use_pe:
            dx[:, -1] = dread
        else:
            dx[:, 0] = dread
        for i in reversed(range(cfg.n_layers)):
            p = f"l{i}."
            att_cache, ln1_cache, y1, h, ln2_cache = caches[i]
            dy, dg2, db2 = _layer_norm_bwd(dx, P[p + "ln2_g"], ln2_cache)
            grads[p + "ln2_g"] += dg2
            grads[p + "ln2_b"] += db2
            grads[p + "w2"] += np.einsum("btf,btd->fd", h, dy)
            grads[p + "b2"] += dy.sum(axis=(0, 1))
            dh = (dy @ P[p + "w2"].T) * (h > 0)
            grads[p + "w1"] += np.einsum("btd,btf->df", y1, dh)
            grads[p + "b1"] += dh.sum(axis=(0, 1))
            dy1 = dy + dh @ P[p + "w1"].T
            dz, dg1, db1 = _layer_norm_bwd(dy1, P[p + "ln1_g"], ln1_cache)
            grads[p + "ln1_g"] += dg1
            grads[p + "ln1_b"] += db1
            dxa, dwq, dwk, dwv, dwo = self_attention_bwd(
                dz, P[p + "wq"], P[p + "wk"], P[p + "wv"], P[p + "wo"], att_cache)
            grads[p + "wq"] += dwq
            grads[p + "wk"] += dwk
            grads[p + "wv"] += dwv
            grads[p + "wo"] += dwo
            dx = dz + dxa
        np.add.at(grads["embed"], tokens, dx)

    def sample_actions(self, probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF draw per row."""
        cdf = np.cumsum(probs, axis=-1)
        u = rng.random(probs.shape[0]) * cdf[:, -1]
        return np.minimum((u[:, None] >= cdf).sum(axis=-1), probs.shape[-1] - 1)

    def greedy_actions(self, probs: np.ndarray) -> np.ndarray:
        return probs.argmax(axis=-1)


def save_checkpoint(path, cfg: PolicyConfig, params: dict, extra: dict = None):
    """Binary checkpoint: magic, JSON header line, float64 payload.

    The header pins the parameter manifest and a payload digest, so loads
    fail loudly on any mismatch.
    """
    flat = flatten_params(params)
    payload = flat.astype("<f8").tobytes()
    header = {
        "config": asdict(cfg),
        "manifest": [[k, list(v.shape)] for k, v in params.items()],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(payload)


def load_checkpoint(path):
    """Returns (cfg, params, extra)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a policy checkpoint")
        header = json.loads(fh.readline().decode())
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ValueError(f"{path}: payload digest mismatch")
    cfg = PolicyConfig(**header["config"])
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    template = {k: np.empty(shape) for k, shape in header["manifest"]}
    params = unflatten_params(flat, template)
    want = param_shapes(cfg)
    got = {k: v.shape for k, v in params.items()}
    if got != {k: tuple(s) for k, s in want.items()}:
        raise ValueError(f"{path}: manifest does not match config")
    return cfg, params, header.get("extra", {})
