"""REINFORCE training of the sequence policy.

One epoch = one batch of sampled episodes, a policy-gradient step with a
moving-average baseline, and an optional greedy evaluation.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass

import numpy as np

from .policy import Policy, PolicyConfig, flatten_params, save_checkpoint, zeros_like_params
from .rewards import RateWeights, RewardEnv
from .sequences import ReliabilitySequence


@dataclass
class Trajectory:
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    returns: np.ndarray

    def __post_init__(self):
        K = len(self.actions)
        if not (len(self.log_probs) == len(self.rewards) == len(self.returns) == K):
            raise ValueError("per-step arrays must share one length")
        if len(set(int(a) for a in self.actions)) != K:
            raise ValueError("actions must be distinct")

    @property
    def K(self) -> int:
        return len(self.actions)


@dataclass
class TrainConfig:
    N: int
    weights: RateWeights
    K: int = None
    gamma: float = 1.0
    lr: float = 5e-4
    batch_size: int = 100
    epochs: int = 20000
    beta: float = 0.99
    eval_every: int = 100
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.K is None:
            self.K = self.N
        if not 1 <= self.K <= self.N:
            raise ValueError("need 1 <= K <= N")
        if self.lr < 0 or not 0.0 <= self.gamma <= 1.0 or not 0.0 < self.beta < 1.0:
            raise ValueError("bad hyperparameters")
        if self.weights.N != self.N:
            raise ValueError("weights sized for a different N")


@dataclass
class BaselineTracker:
    b: float = 0.0
    beta: float = 0.99


def update_baseline(tracker: BaselineTracker, mean_return: float) -> BaselineTracker:
    tracker.b = tracker.beta * tracker.b + (1.0 - tracker.beta) * float(mean_return)
    return tracker


def compute_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted suffix sums along the last axis."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(rewards)
    acc = np.zeros(rewards.shape[:-1])
    for t in range(rewards.shape[-1] - 1, -1, -1):
        acc = rewards[..., t] + gamma * acc
        out[..., t] = acc
    return out


def policy_loss(log_probs: np.ndarray, returns: np.ndarray, baseline: float) -> float:
    """-(1/B) sum_episodes sum_t log pi * (G_t - b)."""
    log_probs = np.atleast_2d(log_probs)
    returns = np.atleast_2d(returns)
    if log_probs.size == 0:
        raise ValueError("empty batch")
    if not np.isfinite(log_probs).all():
        raise ValueError("non-finite log-probability in batch")
    return float(-(log_probs * (returns - baseline)).sum() / log_probs.shape[0])


@dataclass
class BatchRollout:
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    step_caches: list = None
    step_probs: list = None


def rollout_batch(policy: Policy, weights: RateWeights, env: RewardEnv,
                  rng: np.random.Generator, batch_size: int, K: int,
                  greedy: bool = False, collect: bool = False) -> BatchRollout:
    """Advance batch_size episodes in lockstep for K steps.

    Rewards come per step from the environment; steps whose rate weight is
    zero skip simulation entirely.
    """
    N = policy.cfg.N
    B = batch_size
    tokens = np.zeros((B, 1), dtype=np.int64)
    mask = np.zeros((B, N), dtype=bool)
    actions = np.zeros((B, K), dtype=np.int64)
    log_probs = np.zeros((B, K))
    rewards = np.zeros((B, K))
    caches = [] if collect else None
    probs_hist = [] if collect else None
    rows = np.arange(B)
    for t in range(K):
        probs, cache = policy.forward_step(tokens, mask)
        a = policy.greedy_actions(probs) if greedy else policy.sample_actions(probs, rng)
        log_probs[:, t] = np.log(probs[rows, a])
        actions[:, t] = a
        if collect:
            caches.append(cache)
            probs_hist.append(probs)
        mask[rows, a] = True
        tokens = np.concatenate([tokens, a[:, None] + 1], axis=1)
        k = t + 1
        if weights is not None and weights.c[k] != 0.0:
            for b in range(B):
                rewards[b, t] = env.reward(actions[b, :k], weights)
    return BatchRollout(actions=actions, log_probs=log_probs, rewards=rewards,
                        step_caches=caches, step_probs=probs_hist)


def run_episode(policy: Policy, weights: RateWeights, env: RewardEnv,
                rng: np.random.Generator, K: int = None,
                greedy: bool = False) -> Trajectory:
    K = policy.cfg.N if K is None else K
    roll = rollout_batch(policy, weights, env, rng, 1, K, greedy=greedy)
    returns = compute_returns(roll.rewards, 1.0)
    return Trajectory(actions=roll.actions[0], log_probs=roll.log_probs[0],
                      rewards=roll.rewards[0], returns=returns[0])


class AdamState:
    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = zeros_like_params(params)
        self.v = zeros_like_params(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for k in grads:
            grads[k] *= scale
    return total


def extract_sequence(policy: Policy, seed: int = 0) -> ReliabilitySequence:
    """Greedy rollout of length N, most reliable index first."""
    N = policy.cfg.N
    roll = rollout_batch(policy, None, None, np.random.default_rng(0),
                         1, N, greedy=True)
    digest = hashlib.sha256(
        flatten_params(policy.params).astype("<f8").tobytes()).hexdigest()
    prov = {"scheme": "RL", "policy_sha256": digest, "seed": seed,
            "use_pe": policy.cfg.use_pe, "d_model": policy.cfg.d_model,
            "n_layers": policy.cfg.n_layers, "n_heads": policy.cfg.n_heads}
    return ReliabilitySequence(N=N, order=tuple(int(a) for a in roll.actions[0]),
                               provenance=prov)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, params: dict, log_rows: list):
        super().__init__(f"non-finite parameters after epoch {epoch}; "
                         f"restored last good state")
        self.epoch = epoch
        self.params = params
        self.log_rows = log_rows


@dataclass
class TrainResult:
    policy: Policy
    sequence: ReliabilitySequence
    log_rows: list
    baseline: float


LOG_COLUMNS = ["epoch", "mean_return", "baseline", "loss", "greedy_objective", "wall_ms"]


def write_training_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def train(cfg: TrainConfig, env: RewardEnv, policy_cfg: PolicyConfig = None,
          log_path=None, checkpoint_path=None, progress=None) -> TrainResult:
    """Run the full policy-gradient loop.

    Deterministic given (cfg, env seeds); wall_ms is the only log column
    that varies between runs. Divergence restores the last finite
    parameter set, saves it when checkpoint_path is given, and raises
    TrainingDiverged.
    """
    if policy_cfg is None:
        policy_cfg = PolicyConfig(N=cfg.N)
    if policy_cfg.N != cfg.N:
        raise ValueError("policy sized for a different N")
    policy = Policy(policy_cfg, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    adam = AdamState(policy.params)
    tracker = BaselineTracker(b=0.0, beta=cfg.beta)
    rows = []
    rows_idx = np.arange(cfg.batch_size)

    def greedy_eval():
        seq = extract_sequence(policy, seed=cfg.seed)
        return seq, env.objective(seq.order, cfg.weights)

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        snapshot = {k: v.copy() for k, v in policy.params.items()}
        roll = rollout_batch(policy, cfg.weights, env, rng, cfg.batch_size,
                             cfg.K, greedy=False, collect=True)
        returns = compute_returns(roll.rewards, cfg.gamma)
        loss = policy_loss(roll.log_probs, returns, tracker.b)
        grads = zeros_like_params(policy.params)
        for t in range(cfg.K):
            adv = returns[:, t] - tracker.b
            probs = roll.step_probs[t]
            d = probs.copy()
            d[rows_idx, roll.actions[:, t]] -= 1.0
            d *= adv[:, None] / cfg.batch_size
            policy.backward_step(roll.step_caches[t], d, grads)
        clip_grad_norm(grads, cfg.grad_clip)
        adam.step(policy.params, grads, cfg.lr)
        update_baseline(tracker, returns.mean())

        diverged = not all(np.isfinite(v).all() for v in policy.params.values())
        if diverged:
            policy.params.update(snapshot)
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, policy_cfg, policy.params,
                                extra={"epoch": epoch, "diverged_after": epoch})
            if log_path is not None:
                write_training_log(log_path, rows)
            raise TrainingDiverged(epoch, policy.params, rows)

        do_eval = cfg.eval_every > 0 and (epoch % cfg.eval_every == 0
                                          or epoch == cfg.epochs - 1)
        greedy_obj = ""
        if do_eval:
            _, obj = greedy_eval()
            greedy_obj = f"{obj:.8g}"
        wall_ms = (time.perf_counter() - t0) * 1000.0
        rows.append({"epoch": epoch, "mean_return": f"{returns.mean():.8g}",
                     "baseline": f"{tracker.b:.8g}", "loss": f"{loss:.8g}",
                     "greedy_objective": greedy_obj, "wall_ms": f"{wall_ms:.1f}"})
        if progress is not None:
            progress(rows[-1])

    seq, _ = greedy_eval()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, policy_cfg, policy.params,
                        extra={"epoch": cfg.epochs, "baseline": tracker.b})
    if log_path is not None:
        write_training_log(log_path, rows)
    return TrainResult(policy=policy, sequence=seq, log_rows=rows,
                       baseline=tracker.b)
