"""Proximal policy optimization for the weekly closure MDP, in plain numpy.

Two small multi-layer perceptrons — a policy trunk ending in one sigmoid
unit per controlled district (the probability of *closing* its schools
that week) and a value trunk ending in a linear unit — are trained with
the clipped surrogate objective, generalized advantage estimation and
Adam.  The joint action distribution factorizes as independent Bernoulli
draws per district, so the joint log-probability is the per-district sum.

Everything here is hand-rolled on purpose: forward passes keep their
activations, backward passes are written out layer by layer, and the
test-suite checks every gradient against central finite differences.

Rollouts run 1024 steps regardless of episode boundaries (a 43-week
episode is much shorter than a batch); done flags stop the advantage
recursion from leaking across resets.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

from epimdp.errors import ConfigError, DataError, NumericalError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"EPPO"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PpoHyper:
    """Training hyperparameters; defaults are the tuned operating point."""

    local_steps: int = 1024
    minibatch: int = 128
    clip: float = 0.2
    epochs: int = 24
    entropy_coef: float = 0.0059
    discount: float = 0.99
    gae_lambda: float = 0.95
    hidden_layers: int = 1
    hidden_units: int = 20
    learning_rate: float = 0.002
    grad_clip_norm: float = 1.0
    value_coef: float = 0.5

    def __post_init__(self):
        positive = {
            "local_steps": self.local_steps,
            "minibatch": self.minibatch,
            "epochs": self.epochs,
            "entropy_coef": self.entropy_coef,
            "hidden_layers": self.hidden_layers,
            "hidden_units": self.hidden_units,
            "learning_rate": self.learning_rate,
            "grad_clip_norm": self.grad_clip_norm,
            "value_coef": self.value_coef,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if not 0.0 < self.clip < 1.0:
            raise ConfigError(f"clip must lie in (0, 1), got {self.clip}")
        if not 0.0 < self.discount <= 1.0:
            raise ConfigError(f"discount must lie in (0, 1], got {self.discount}")
        if not 0.0 < self.gae_lambda <= 1.0:
            raise ConfigError(f"gae_lambda must lie in (0, 1], got {self.gae_lambda}")
        if self.minibatch > self.local_steps:
            raise ConfigError("minibatch cannot exceed local_steps")


def _orthogonal(rows: int, cols: int, gain: float, rng) -> np.ndarray:
    """Orthogonal(-ish) weight matrix: QR of a Gaussian, sign-fixed, scaled."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


class Mlp:
    """Dense tanh network with a linear output layer and manual backprop."""

    def __init__(self, sizes, rng, out_gain: float):
        self.sizes = tuple(int(s) for s in sizes)
        self.weights = []
        self.biases = []
        last = len(self.sizes) - 2
        for k, (d_in, d_out) in enumerate(zip(self.sizes, self.sizes[1:])):
            gain = out_gain if k == last else math.sqrt(2.0)
            self.weights.append(_orthogonal(d_out, d_in, gain, rng))
            self.biases.append(np.zeros(d_out))

    def forward(self, x: np.ndarray):
        """Returns (output, activations); activations[k] feeds layer k."""
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w.T + b)
            acts.append(h)
        out = h @ self.weights[-1].T + self.biases[-1]
        return out, acts

    def backward(self, acts, d_out: np.ndarray):
        """Gradient of a scalar loss given d(loss)/d(output); returns
        per-layer (dW, db) in the same order as self.weights."""
        grads = [None] * len(self.weights)
        grads[-1] = (d_out.T @ acts[-1], d_out.sum(axis=0))
        d_h = d_out @ self.weights[-1]
        for k in range(len(self.weights) - 2, -1, -1):
            d_pre = d_h * (1.0 - acts[k + 1] ** 2)
            grads[k] = (d_pre.T @ acts[k], d_pre.sum(axis=0))
            d_h = d_pre @ self.weights[k]
        return grads

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


class ActorCritic:
    """Separate policy and value networks over the same observation."""

    def __init__(self, obs_size: int, n_actions: int, hyper: PpoHyper, rng):
        self.obs_size = int(obs_size)
        self.n_actions = int(n_actions)
        trunk = [self.obs_size] + [hyper.hidden_units] * hyper.hidden_layers
        self.policy = Mlp(trunk + [self.n_actions], rng, out_gain=0.01)
        self.value_net = Mlp(trunk + [1], rng, out_gain=1.0)

    def _check_obs(self, obs: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if obs.shape[1] != self.obs_size:
            raise ConfigError(
                f"observation has {obs.shape[1]} features, expected {self.obs_size}"
            )
        return obs

    def policy_logits(self, obs: np.ndarray) -> np.ndarray:
        z, _ = self.policy.forward(self._check_obs(obs))
        return z

    def close_probabilities(self, obs: np.ndarray) -> np.ndarray:
        return _sigmoid(self.policy_logits(obs))

    def value(self, obs: np.ndarray) -> np.ndarray:
        v, _ = self.value_net.forward(self._check_obs(obs))
        return v[:, 0]

    def greedy_actions(self, obs: np.ndarray) -> np.ndarray:
        return (self.close_probabilities(obs) > 0.5).astype(np.int64)

    def parameters(self):
        return self.policy.parameters() + self.value_net.parameters()

    def set_parameters(self, params) -> None:
        own = self.parameters()
        if len(own) != len(params):
            raise ConfigError("parameter list length mismatch")
        for dst, src in zip(own, params):
            if dst.shape != np.shape(src):
                raise ConfigError("parameter shape mismatch")
            dst[...] = src


def forward(nets: ActorCritic, obs) -> tuple:
    """Close-probabilities and state value for a single observation."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1:
        raise ConfigError(f"expected a flat observation, got shape {obs.shape}")
    probs = nets.close_probabilities(obs[None])[0]
    value = float(nets.value(obs[None])[0])
    return probs, value


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _bernoulli_log_prob(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Joint log-probability per row: sum of per-district Bernoulli terms.

    Written in terms of softplus so it stays finite even when the sigmoid
    saturates to exactly 0 or 1 in floating point.
    """
    a = actions.astype(np.float64)
    return (-a * _softplus(-logits) - (1.0 - a) * _softplus(logits)).sum(axis=-1)


def _bernoulli_entropy(logits: np.ndarray) -> np.ndarray:
    """Joint entropy per row (sum over independent districts)."""
    p = _sigmoid(logits)
    return (p * _softplus(-logits) + (1.0 - p) * _softplus(logits)).sum(axis=-1)


def sample_action(probs: np.ndarray, rng) -> tuple:
    """Independent Bernoulli draw per district and its joint log-probability."""
    probs = np.asarray(probs, dtype=np.float64)
    actions = (rng.random(probs.shape) < probs).astype(np.int64)
    chosen = np.where(actions == 1, probs, 1.0 - probs)
    return actions, float(np.log(chosen).sum())


def gae(rewards, values, dones, last_value, gamma, lam):
    """Generalized advantage estimation over a batch that may cross resets.

    ``values`` aligns with ``rewards``; ``last_value`` bootstraps the state
    after the final step (ignored when that step ended its episode).
    Returns (advantages, returns) with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)
    t_max = len(rewards)
    if not (len(values) == len(not_done) == t_max):
        raise ConfigError("rewards, values and dones must have equal length")
    advantages = np.zeros(t_max)
    carry = 0.0
    next_value = float(last_value)
    for t in range(t_max - 1, -1, -1):
        delta = rewards[t] + gamma * next_value * not_done[t] - values[t]
        carry = delta + gamma * lam * not_done[t] * carry
        advantages[t] = carry
        next_value = values[t]
    return advantages, advantages + values


@dataclass
class RolloutBatch:
    """One collection phase's worth of transitions, advantage-annotated."""

    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __post_init__(self):
        t = len(self.observations)
        fields = (self.actions, self.log_probs, self.rewards, self.values,
                  self.dones, self.advantages, self.returns)
        if any(len(f) != t for f in fields):
            raise ConfigError("rollout arrays must share their first dimension")
        if not np.isfinite(self.advantages).all():
            raise NumericalError("non-finite advantages in rollout batch")

    def __len__(self) -> int:
        return len(self.observations)


def compute_loss(nets: ActorCritic, obs, actions, log_probs_old, advantages,
                 returns, hyper: PpoHyper, with_grads: bool = True):
    """Clipped-surrogate PPO loss (+ optional analytic gradients).

    loss = −mean min(ρA, clip(ρ)A) + value_coef·mean (V−R)² − entropy_coef·mean H

    Returns (loss, grads, stats); grads is None when with_grads is False and
    otherwise aligns with ``nets.parameters()``.
    """
    obs = np.asarray(obs, dtype=np.float64)
    b = len(obs)
    logits, p_acts = nets.policy.forward(obs)
    log_probs_new = _bernoulli_log_prob(logits, actions)
    ratio = np.exp(log_probs_new - log_probs_old)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - hyper.clip, 1.0 + hyper.clip) * advantages
    pg_loss = -np.minimum(surr1, surr2).mean()
    entropy = _bernoulli_entropy(logits).mean()

    values_pred, v_acts = nets.value_net.forward(obs)
    values_pred = values_pred[:, 0]
    v_err = values_pred - returns
    v_loss = np.mean(v_err**2)

    loss = pg_loss + hyper.value_coef * v_loss - hyper.entropy_coef * entropy
    stats = {
        "policy_loss": float(pg_loss),
        "value_loss": float(v_loss),
        "entropy": float(entropy),
        "approx_kl": float(np.mean(log_probs_old - log_probs_new)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > hyper.clip)),
    }
    if not with_grads:
        return float(loss), None, stats

    # d(pg_loss)/d(log p) is nonzero only where the unclipped branch wins
    probs = _sigmoid(logits)
    unclipped_wins = (surr1 <= surr2).astype(np.float64)
    d_logp = -(unclipped_wins * ratio * advantages) / b
    d_logits = d_logp[:, None] * (actions.astype(np.float64) - probs)
    # entropy enters the loss as −coef·mean H with dH/dlogit = −z·p·(1−p)
    d_logits += hyper.entropy_coef * logits * probs * (1.0 - probs) / b
    policy_grads = nets.policy.backward(p_acts, d_logits)

    d_values = (hyper.value_coef * 2.0 * v_err / b)[:, None]
    value_grads = nets.value_net.backward(v_acts, d_values)

    grads = []
    for dw, db in policy_grads + value_grads:
        grads.extend((dw, db))
    return float(loss), grads, stats


def global_grad_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g**2)) for g in grads))


def clip_grads(grads, max_norm: float) -> float:
    """Scale the whole gradient list so its global norm is at most max_norm."""
    norm = global_grad_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class Adam:
    """Standard Adam with bias correction (β1=0.9, β2=0.999, ε=1e-8)."""

    def __init__(self, params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_copy(self):
        return (self.t, [m.copy() for m in self.m], [v.copy() for v in self.v])

    def restore(self, state) -> None:
        self.t, m, v = state
        self.m = [a.copy() for a in m]
        self.v = [a.copy() for a in v]


def ppo_update(nets: ActorCritic, batch: RolloutBatch, hyper: PpoHyper,
               adam: Adam, rng) -> dict:
    """Run the full epoch/minibatch schedule on one batch, in place.

    Advantages are normalized to zero mean, unit variance across the batch
    before any epoch.  A non-finite loss aborts the update: parameters and
    optimizer state roll back to their pre-update values and the returned
    diagnostics carry ``aborted=True``.
    """
    adv = batch.advantages
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    params = nets.parameters()
    snapshot = ([p.copy() for p in params], adam.state_copy())
    tallies = {"policy_loss": [], "value_loss": [], "entropy": [],
               "approx_kl": [], "clip_fraction": [], "grad_norm": []}
    for _ in range(hyper.epochs):
        order = rng.permutation(len(batch))
        for start in range(0, len(batch), hyper.minibatch):
            idx = order[start : start + hyper.minibatch]
            loss, grads, stats = compute_loss(
                nets,
                batch.observations[idx],
                batch.actions[idx],
                batch.log_probs[idx],
                adv[idx],
                batch.returns[idx],
                hyper,
            )
            if not math.isfinite(loss):
                nets.set_parameters(snapshot[0])
                adam.restore(snapshot[1])
                logger.warning("non-finite loss %r; update rolled back", loss)
                return {k: float("nan") for k in tallies} | {"aborted": True}
            tallies["grad_norm"].append(clip_grads(grads, hyper.grad_clip_norm))
            adam.step(params, grads)
            for key in stats:
                tallies[key].append(stats[key])
    out = {k: float(np.mean(v)) for k, v in tallies.items()}
    out["aborted"] = False
    return out


@dataclass
class TrainResult:
    """One trial: the trained networks plus its learning curve."""

    nets: ActorCritic
    returns: list
    diagnostics: list
    hyper: PpoHyper
    seed: int

    @property
    def final_score(self) -> float:
        """Mean episode return over the last (up to) 100 episodes."""
        tail = self.returns[-100:]
        return float(np.mean(tail)) if tail else 0.0


def train(env, hyper: PpoHyper, episodes: int, seed,
          checkpoint_every: int | None = None, checkpoint_dir=None) -> TrainResult:
    """One PPO trial: alternate 1024-step rollouts with update phases.

    The master seed fans out into network initialization, action sampling,
    per-episode environment seeds, and minibatch shuffling, so a fixed seed
    reproduces the learning curve bit for bit.
    """
    if episodes <= 0:
        raise ConfigError("episodes must be positive")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    init_seq, action_seq, env_seq, shuffle_seq = ss.spawn(4)
    init_rng = np.random.Generator(np.random.Philox(init_seq))
    action_rng = np.random.Generator(np.random.Philox(action_seq))
    env_seed_rng = np.random.Generator(np.random.Philox(env_seq))
    shuffle_rng = np.random.Generator(np.random.Philox(shuffle_seq))

    n_actions = env.config.n_controlled
    nets = ActorCritic(env.config.obs_size, n_actions, hyper, init_rng)
    adam = Adam(nets.parameters(), hyper.learning_rate)

    t_steps = hyper.local_steps
    obs_buf = np.zeros((t_steps, env.config.obs_size))
    act_buf = np.zeros((t_steps, n_actions), dtype=np.int64)
    logp_buf = np.zeros(t_steps)
    rew_buf = np.zeros(t_steps)
    val_buf = np.zeros(t_steps)
    done_buf = np.zeros(t_steps)

    episode_returns = []
    diagnostics = []
    ep_return = 0.0
    obs = env.reset(seed=int(env_seed_rng.integers(2**63)))
    updates = 0
    while len(episode_returns) < episodes:
        for t in range(t_steps):
            logits = nets.policy_logits(obs[None])[0]
            actions = (action_rng.random(n_actions) < _sigmoid(logits)).astype(np.int64)
            obs_buf[t] = obs
            act_buf[t] = actions
            logp_buf[t] = _bernoulli_log_prob(logits, actions)
            val_buf[t] = nets.value(obs[None])[0]
            obs, reward, done, _ = env.step(actions)
            rew_buf[t] = reward
            done_buf[t] = float(done)
            ep_return += reward
            if done:
                episode_returns.append(ep_return)
                ep_return = 0.0
                obs = env.reset(seed=int(env_seed_rng.integers(2**63)))
        last_value = float(nets.value(obs[None])[0])
        advantages, returns = gae(rew_buf, val_buf, done_buf, last_value,
                                  hyper.discount, hyper.gae_lambda)
        batch = RolloutBatch(obs_buf.copy(), act_buf.copy(), logp_buf.copy(),
                             rew_buf.copy(), val_buf.copy(), done_buf.copy(),
                             advantages, returns)
        diagnostics.append(ppo_update(nets, batch, hyper, adam, shuffle_rng))
        updates += 1
        if checkpoint_every and checkpoint_dir and updates % checkpoint_every == 0:
            save_checkpoint(
                f"{checkpoint_dir}/checkpoint_{updates:05d}.bin", nets, hyper, ss.entropy
            )
    return TrainResult(nets, episode_returns[:episodes], diagnostics, hyper,
                       seed=ss.entropy)


def run_trials(env, hyper: PpoHyper, episodes: int, trials: int, seed=0) -> list:
    """Independent repeats of ``train`` with spawned seeds, best-last order
    preserved: the caller picks a winner via ``TrainResult.final_score``."""
    if trials <= 0:
        raise ConfigError("trials must be positive")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    results = []
    for k, child in enumerate(ss.spawn(trials)):
        result = train(env, hyper, episodes, seed=child)
        logger.info("trial %d/%d: final score %.5f", k + 1, trials,
                    result.final_score)
        results.append(result)
    return results


class NetPolicy:
    """Mode-action wrapper: close a district iff its probability exceeds 1/2."""

    def __init__(self, nets: ActorCritic):
        self.nets = nets

    def act(self, obs, week: int) -> np.ndarray:
        return self.nets.greedy_actions(obs[None])[0]


class SchedulePolicy:
    """Replays a fixed weekly bit-schedule (1 = open, 0 = closed)."""

    def __init__(self, bits, n_actions: int):
        self.closed = np.asarray([int(b) == 0 for b in bits], dtype=bool)
        self.n_actions = int(n_actions)

    @classmethod
    def all_open(cls, weeks: int, n_actions: int) -> "SchedulePolicy":
        return cls([1] * weeks, n_actions)

    def act(self, obs, week: int) -> np.ndarray:
        closed = week < len(self.closed) and self.closed[week]
        return np.full(self.n_actions, int(closed), dtype=np.int64)


@dataclass(frozen=True)
class ImprovementDistribution:
    """Paired attack-rate improvements of a policy over leaving schools open."""

    samples: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.samples.mean())

    @property
    def median(self) -> float:
        return float(np.median(self.samples))

    def percentile(self, q: float) -> float:
        return float(np.percentile(self.samples, q))

    def summary(self) -> dict:
        return {
            "n": int(len(self.samples)),
            "mean": self.mean,
            "median": self.median,
            "p5": self.percentile(5),
            "p25": self.percentile(25),
            "p75": self.percentile(75),
            "p95": self.percentile(95),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def _run_episode(env, policy, seed) -> float:
    obs = env.reset(seed=seed)
    week = 0
    done = False
    while not done:
        obs, _, done, _ = env.step(policy.act(obs, week))
        week += 1
    return env.attack_rate()


def evaluate_policy(env, policy, n: int = 1000, seed=0) -> ImprovementDistribution:
    """Attack-rate improvement of ``policy`` over all-open across n episodes.

    Each episode seed is shared between the policy run and its all-open
    baseline run (common random numbers), so the sample distribution
    reflects policy effect rather than draw-to-draw noise.
    """
    if isinstance(policy, ActorCritic):
        policy = NetPolicy(policy)
    baseline = SchedulePolicy.all_open(env.config.horizon_weeks,
                                       env.config.n_controlled)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seed_rng = np.random.Generator(np.random.Philox(ss))
    episode_seeds = seed_rng.integers(2**63, size=n)
    samples = np.zeros(n)
    for k, ep_seed in enumerate(episode_seeds):
        ar_policy = _run_episode(env, policy, int(ep_seed))
        ar_open = _run_episode(env, baseline, int(ep_seed))
        samples[k] = ar_open - ar_policy
    return ImprovementDistribution(samples=samples)


def write_learning_curve(path, returns) -> None:
    """CSV of per-episode returns with a 100-episode rolling mean."""
    with open(path, "w") as fh:
        fh.write("episode,return,rolling_mean_100\n")
        window = []
        for k, r in enumerate(returns):
            window.append(r)
            if len(window) > 100:
                window.pop(0)
            fh.write(f"{k},{r!r},{float(np.mean(window))!r}\n")


def save_checkpoint(path, nets: ActorCritic, hyper: PpoHyper, seed) -> None:
    """Versioned binary dump: shapes + little-endian float64 parameters."""
    params = nets.parameters()
    header = json.dumps(
        {
            "obs_size": nets.obs_size,
            "n_actions": nets.n_actions,
            "hyper": {k: getattr(hyper, k) for k in PpoHyper.__dataclass_fields__},
            "seed": int(seed),
            "shapes": [list(p.shape) for p in params],
        }
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for p in params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint: returns (nets, hyper, seed)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not a policy checkpoint")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    meta = json.loads(blob[12 : 12 + header_len].decode())
    hyper = PpoHyper(**meta["hyper"])
    nets = ActorCritic(meta["obs_size"], meta["n_actions"], hyper,
                       np.random.default_rng(0))
    offset = 12 + header_len
    counts = [int(np.prod(shape)) for shape in meta["shapes"]]
    if offset + 8 * sum(counts) != len(blob):
        raise DataError(f"{path} has trailing or missing parameter bytes")
    params = []
    for shape, count in zip(meta["shapes"], counts):
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        params.append(arr.reshape(shape).astype(np.float64))
        offset += count * 8
    nets.set_parameters(params)
    return nets, hyper, meta["seed"]
