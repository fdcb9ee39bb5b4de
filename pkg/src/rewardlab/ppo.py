"""Clipped-surrogate actor-critic (PPO) with generalized advantage estimation.

Rollouts are collected from a lockstep batch of environments and assembled
in environment-index order, so results do not depend on scheduling. The
trainer only ever sees ``RewardBreakdown.total``; the individual components
are logged, never optimized separately. No return scaling is applied.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from .env import OBS_DIM, ChoiceReactionBatch, EnvConfig, Status, observation_scaling
from .reward import EffortNormalizer, RewardSpec, composite

log = logging.getLogger(__name__)

N_ACTIONS = 6
LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
CHECKPOINT_FORMAT = "rewardlab.checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 2_000_000
    rollout_length: int = 2048
    minibatch_size: int = 256
    epochs: int = 10
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    learning_rate: float = 3e-4
    entropy_coef: float = 1e-3
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    init_log_std: float = -0.5
    hidden: int = 64
    n_envs: int = 8
    # training episodes are cut after this many resolved trials (time-limit truncation)
    max_trials_per_episode: int = 10
    # updates between periodic checkpoints when a checkpoint directory is given (0: only at the end)
    checkpoint_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.rollout_length < 1 or self.total_steps < self.rollout_length:
            raise ValueError("total_steps must be >= rollout_length >= 1")
        if self.rollout_length % self.n_envs:
            raise ValueError("rollout_length must be a multiple of n_envs")
        if not (0 <= self.gamma <= 1 and 0 <= self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if not self.clip_ratio > 0:
            raise ValueError("clip_ratio must be > 0")
        if self.minibatch_size < 1 or self.epochs < 1:
            raise ValueError("minibatch_size and epochs must be >= 1")

    @property
    def n_updates(self) -> int:
        return self.total_steps // self.rollout_length

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> TrainConfig:
        data = dict(data or {})
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train key(s): {sorted(unknown)}")
        return cls(**data)


def _mlp(n_in: int, hidden: int, n_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(n_in, hidden), nn.Tanh(), nn.Linear(hidden, hidden), nn.Tanh(), nn.Linear(hidden, n_out))


class ActorCritic(nn.Module):
    """Policy parameters: Gaussian actor over pre-squash commands, scalar critic.

    Commands are ``sigmoid(z)``, so a zero actor output maps to 0.5 on every
    muscle. Observations are normalized by fixed physical ranges.
    """

    def __init__(self, obs_dim: int = OBS_DIM, n_actions: int = N_ACTIONS, hidden: int = 64, init_log_std: float = -0.5,
                 obs_center=None, obs_scale=None):
        super().__init__()
        self.actor = _mlp(obs_dim, hidden, n_actions)
        self.critic = _mlp(obs_dim, hidden, 1)
        self.log_std = nn.Parameter(torch.full((n_actions,), float(init_log_std)))
        if obs_center is None:
            obs_center, obs_scale = observation_scaling()
        self.register_buffer("obs_center", torch.as_tensor(np.asarray(obs_center), dtype=torch.float32))
        self.register_buffer("obs_scale", torch.as_tensor(np.asarray(obs_scale), dtype=torch.float32))

    def init_weights(self, generator: torch.Generator) -> None:
        for net, out_gain in ((self.actor, 0.01), (self.critic, 1.0)):
            layers = [m for m in net if isinstance(m, nn.Linear)]
            for k, layer in enumerate(layers):
                gain = out_gain if k == len(layers) - 1 else math.sqrt(2)
                w = torch.empty_like(layer.weight)
                nn.init.orthogonal_(w, gain=gain, generator=generator)
                with torch.no_grad():
                    layer.weight.copy_(w)
                    layer.bias.zero_()

    @property
    def obs_dim(self) -> int:
        return self.actor[0].in_features

    def normalize(self, obs: torch.Tensor) -> torch.Tensor:
        return (obs - self.obs_center) / self.obs_scale

    def forward(self, obs: torch.Tensor):
        x = self.normalize(obs)
        mean = self.actor(x)
        log_std = self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)
        value = self.critic(x).squeeze(-1)
        return mean, log_std, value

    def log_prob(self, mean, log_std, z):
        return (-0.5 * ((z - mean) / log_std.exp()) ** 2 - log_std - 0.5 * math.log(2 * math.pi)).sum(-1)

    def entropy(self, log_std):
        return (log_std + 0.5 * (1.0 + math.log(2 * math.pi))).sum(-1)


PolicyParams = ActorCritic


def squash(z):
    """Bounded map from pre-squash actions to muscle commands in [0, 1]."""
    # logistic via tanh: same function, no overflow for large |z|
    return 0.5 + 0.5 * np.tanh(0.5 * np.asarray(z, dtype=np.float64))


def _obs_array(obs) -> np.ndarray:
    return obs.vector() if hasattr(obs, "vector") else np.asarray(obs, dtype=np.float64)


def act(params: ActorCritic, obs, deterministic: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    """Muscle commands for one observation (or a batch of them)."""
    x = _obs_array(obs)
    if x.shape[-1] != params.obs_dim:
        raise ValueError(f"observation has {x.shape[-1]} entries, network expects {params.obs_dim}")
    dtype = next(params.parameters()).dtype
    with torch.no_grad():
        mean, log_std, _ = params(torch.as_tensor(x, dtype=dtype))
    mean = mean.double().numpy()
    if deterministic:
        return squash(mean)
    rng = rng if rng is not None else np.random.default_rng()
    z = mean + np.exp(log_std.double().numpy()) * rng.standard_normal(mean.shape)
    return squash(z)


def compute_advantages(rewards, values, terminals, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """GAE over axis 0.

    ``values`` has one more entry than ``rewards`` (the bootstrap value);
    ``terminals[t]`` cuts both the bootstrap and the recursion after step t.
    Extra trailing axes (parallel environments) are carried along.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(terminals, dtype=np.float64)
    if v.shape[0] != r.shape[0] + 1 or d.shape != r.shape or v.shape[1:] != r.shape[1:]:
        raise ValueError(f"length mismatch: rewards {r.shape}, values {v.shape}, terminals {d.shape}")
    adv = np.zeros_like(r)
    last = np.zeros(r.shape[1:])
    for t in range(r.shape[0] - 1, -1, -1):
        nonterminal = 1.0 - d[t]
        delta = r[t] + gamma * nonterminal * v[t + 1] - v[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + v[:-1]


def normalize_advantages(adv):
    """Shift and scale to zero mean, unit variance (order-preserving)."""
    return (adv - adv.mean()) / (adv.std() + 1e-8)


@dataclass
class UpdateRecord:
    update: int
    env_steps: int
    mean_episode_return: float | None
    episodes: int
    successes: int
    trials: int
    policy_loss: float
    value_loss: float
    entropy: float
    mean_bonus: float
    mean_distance: float
    mean_effort: float
    wall_clock: float = field(default=0.0, compare=False)


@dataclass
class TrainingLog:
    records: list[UpdateRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def to_dicts(self) -> list[dict]:
        return [asdict(r) for r in self.records]

    @classmethod
    def from_dicts(cls, rows: list[dict]) -> TrainingLog:
        return cls([UpdateRecord(**r) for r in rows])


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, record: dict):
        super().__init__(message)
        self.record = record


@dataclass
class Batch:
    obs: torch.Tensor
    z: torch.Tensor
    logp: torch.Tensor
    adv: torch.Tensor
    ret: torch.Tensor


def ppo_loss(model: ActorCritic, batch: Batch, clip_ratio: float, value_coef: float, entropy_coef: float):
    """Total loss plus (policy, value, entropy) terms for one minibatch."""
    mean, log_std, value = model(batch.obs)
    logp = model.log_prob(mean, log_std, batch.z)
    ratio = torch.exp(logp - batch.logp)
    surr = torch.min(ratio * batch.adv, ratio.clamp(1 - clip_ratio, 1 + clip_ratio) * batch.adv)
    policy_loss = -surr.mean()
    value_loss = 0.5 * ((value - batch.ret) ** 2).mean()
    entropy = model.entropy(log_std)
    loss = policy_loss + value_coef * value_loss - entropy_coef * entropy
    return loss, policy_loss, value_loss, entropy


def default_env_factory(config: EnvConfig | None = None) -> Callable[[int], ChoiceReactionBatch]:
    return lambda n: ChoiceReactionBatch(n, config)


class Trainer:
    """Rollout/update loop; the whole loop state is checkpointable."""

    def __init__(self, spec: RewardSpec, cfg: TrainConfig, env_factory=None, norm: EffortNormalizer | None = None):
        self.spec = spec
        self.cfg = cfg
        self.norm = norm or EffortNormalizer()
        self.env = (env_factory or default_env_factory())(cfg.n_envs)
        self.env_config = self.env.config
        gen = torch.Generator().manual_seed(cfg.seed)
        center, scale = observation_scaling(self.env_config.arm)
        self.model = ActorCritic(hidden=cfg.hidden, init_log_std=cfg.init_log_std, obs_center=center, obs_scale=scale)
        self.model.init_weights(gen)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=cfg.learning_rate, eps=1e-5)
        root = np.random.SeedSequence(cfg.seed)
        env_ss = root.spawn(cfg.n_envs + 2)
        self.episode_seed_rngs = [np.random.default_rng(s) for s in env_ss[: cfg.n_envs]]
        self.action_rng = np.random.default_rng(env_ss[cfg.n_envs])
        self.shuffle_rng = np.random.default_rng(env_ss[cfg.n_envs + 1])
        for i in range(cfg.n_envs):
            self.env.reset_one(i, self._episode_seed(i))
        self.obs = self.env.observation().vector()
        self.ep_return = np.zeros(cfg.n_envs)
        self.update_index = 0
        self.env_steps = 0
        self.log = TrainingLog()

    def _episode_seed(self, i: int) -> int:
        return int(self.episode_seed_rngs[i].integers(2**31))

    def collect(self):
        cfg = self.cfg
        n = cfg.n_envs
        T = cfg.rollout_length // n
        obs_buf = np.zeros((T, n, OBS_DIM))
        z_buf = np.zeros((T, n, N_ACTIONS))
        logp_buf = np.zeros((T, n))
        val_buf = np.zeros((T + 1, n))
        rew_buf = np.zeros((T, n))
        term_buf = np.zeros((T, n))
        comp = np.zeros(3)
        returns, successes, trials = [], 0, 0
        model = self.model
        with torch.no_grad():
            for t in range(T):
                x = torch.as_tensor(self.obs, dtype=torch.float32)
                mean, log_std, value = model(x)
                mean = mean.numpy().astype(np.float64)
                std = np.exp(log_std.numpy().astype(np.float64))
                z = mean + std * self.action_rng.standard_normal(mean.shape)
                zt = torch.as_tensor(z, dtype=torch.float32)
                logp_buf[t] = model.log_prob(torch.as_tensor(mean, dtype=torch.float32), log_std, zt).numpy()
                obs_buf[t] = self.obs
                z_buf[t] = z
                val_buf[t] = value.numpy()

                next_obs, snap, status = self.env.step(squash(z))
                rb = composite(self.spec, snap, self.norm)
                reward = np.asarray(rb.total, dtype=np.float64).copy()
                comp += [np.sum(rb.bonus_term), np.sum(rb.distance_term), np.sum(rb.effort_term)]
                successes += int(np.sum(snap.pressed_correct))
                trials += int(np.sum(status != Status.RUNNING))
                self.ep_return += reward

                done = status == Status.EPISODE_DONE
                truncated = ~done & (self.env.trials_resolved >= cfg.max_trials_per_episode)
                next_vec = next_obs.vector()
                if np.any(truncated):
                    _, _, v_last = model(torch.as_tensor(next_vec[truncated], dtype=torch.float32))
                    reward[truncated] += cfg.gamma * v_last.numpy()
                rew_buf[t] = reward
                ended = done | truncated
                term_buf[t] = ended
                for i in np.flatnonzero(ended):
                    returns.append(self.ep_return[i])
                    self.ep_return[i] = 0.0
                    self.env.reset_one(i, self._episode_seed(i))
                if np.any(ended):
                    next_vec = self.env.observation().vector()
                self.obs = next_vec
            _, _, last_v = model(torch.as_tensor(self.obs, dtype=torch.float32))
            val_buf[T] = last_v.numpy()

        adv, ret = compute_advantages(rew_buf, val_buf, term_buf, cfg.gamma, cfg.gae_lambda)
        self.env_steps += T * n
        # environment-major order keeps each environment's steps contiguous
        flat = lambda a: torch.as_tensor(np.swapaxes(a, 0, 1).reshape(T * n, *a.shape[2:]), dtype=torch.float32)
        batch = Batch(obs=flat(obs_buf), z=flat(z_buf), logp=flat(logp_buf), adv=flat(adv), ret=flat(ret))
        stats = {
            "mean_episode_return": float(np.mean(returns)) if returns else None,
            "episodes": len(returns),
            "successes": successes,
            "trials": trials,
            "mean_bonus": float(comp[0] / (T * n)),
            "mean_distance": float(comp[1] / (T * n)),
            "mean_effort": float(comp[2] / (T * n)),
        }
        return batch, stats

    def update(self, batch: Batch) -> dict:
        cfg = self.cfg
        batch = Batch(obs=batch.obs, z=batch.z, logp=batch.logp, adv=normalize_advantages(batch.adv), ret=batch.ret)
        size = batch.obs.shape[0]
        p_losses, v_losses, ents = [], [], []
        for _ in range(cfg.epochs):
            perm = torch.as_tensor(self.shuffle_rng.permutation(size))
            for start in range(0, size, cfg.minibatch_size):
                idx = perm[start : start + cfg.minibatch_size]
                mb = Batch(obs=batch.obs[idx], z=batch.z[idx], logp=batch.logp[idx], adv=batch.adv[idx], ret=batch.ret[idx])
                loss, pl, vl, ent = ppo_loss(self.model, mb, cfg.clip_ratio, cfg.value_coef, cfg.entropy_coef)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at update {self.update_index}",
                        {"update": self.update_index, "policy_loss": pl.item(), "value_loss": vl.item(), "entropy": ent.item()},
                    )
                self.optimizer.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(self.model.parameters(), cfg.max_grad_norm)
                self.optimizer.step()
                p_losses.append(pl.item())
                v_losses.append(vl.item())
                ents.append(ent.item())
        return {"policy_loss": float(np.mean(p_losses)), "value_loss": float(np.mean(v_losses)), "entropy": float(np.mean(ents))}

    def step_update(self) -> UpdateRecord:
        t0 = time.perf_counter()
        batch, stats = self.collect()
        losses = self.update(batch)
        self.update_index += 1
        rec = UpdateRecord(update=self.update_index, env_steps=self.env_steps, **stats, **losses,
                           wall_clock=time.perf_counter() - t0)
        self.log.records.append(rec)
        return rec

    def run(self, checkpoint_dir: str | Path | None = None, progress: Callable[[UpdateRecord], None] | None = None):
        while self.update_index < self.cfg.n_updates:
            rec = self.step_update()
            if progress:
                progress(rec)
            every = self.cfg.checkpoint_every
            if checkpoint_dir and every and self.update_index % every == 0:
                self.save(Path(checkpoint_dir) / "checkpoint.pt")
        if checkpoint_dir:
            self.save(Path(checkpoint_dir) / "checkpoint.pt")
        return self.model, self.log

    def state_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "model": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "train_config": self.cfg.to_dict(),
            "reward_spec": self.spec.to_dict(),
            "env_config": self.env_config.to_dict(),
            "normalizer": asdict(self.norm),
            "update_index": self.update_index,
            "env_steps": self.env_steps,
            "env_state": self.env.get_state(),
            "obs": self.obs.copy(),
            "ep_return": self.ep_return.copy(),
            "rngs": {
                "episode": [r.bit_generator.state for r in self.episode_seed_rngs],
                "action": self.action_rng.bit_generator.state,
                "shuffle": self.shuffle_rng.bit_generator.state,
            },
            "log": self.log.to_dicts(),
        }

    def load_state_dict(self, state: dict) -> None:
        _check_format(state)
        self.model.load_state_dict(state["model"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.update_index = state["update_index"]
        self.env_steps = state["env_steps"]
        self.env.set_state(state["env_state"])
        self.obs = np.array(state["obs"])
        self.ep_return = np.array(state["ep_return"])
        for r, s in zip(self.episode_seed_rngs, state["rngs"]["episode"]):
            r.bit_generator.state = s
        self.action_rng.bit_generator.state = state["rngs"]["action"]
        self.shuffle_rng.bit_generator.state = state["rngs"]["shuffle"]
        self.log = TrainingLog.from_dicts(state["log"])

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        torch.save(self.state_dict(), tmp)
        tmp.replace(path)
        return path

    @classmethod
    def from_checkpoint(cls, path: str | Path, env_factory=None) -> Trainer:
        state = load_checkpoint(path)
        env_factory = env_factory or default_env_factory(EnvConfig.from_dict(state["env_config"]))
        trainer = cls(RewardSpec.from_dict(state["reward_spec"]), TrainConfig.from_dict(state["train_config"]), env_factory,
                      EffortNormalizer(**state["normalizer"]))
        trainer.load_state_dict(state)
        return trainer


def _check_format(state: dict) -> None:
    if state.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a rewardlab checkpoint")
    if state.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {state.get('version')}")


def load_checkpoint(path: str | Path) -> dict:
    # checkpoints carry numpy generator states, so the full unpickler is needed
    state = torch.load(Path(path), map_location="cpu", weights_only=False)
    _check_format(state)
    return state


def load_policy(path: str | Path) -> tuple[ActorCritic, dict]:
    """Policy network and the checkpoint dictionary it came from."""
    state = load_checkpoint(path)
    cfg = TrainConfig.from_dict(state["train_config"])
    model = ActorCritic(hidden=cfg.hidden)
    model.load_state_dict(state["model"])
    model.eval()
    return model, state


def train(env_factory, spec: RewardSpec, cfg: TrainConfig, checkpoint_dir=None, progress=None,
          norm: EffortNormalizer | None = None) -> tuple[ActorCritic, TrainingLog]:
    torch.set_num_threads(1)
    trainer = Trainer(spec, cfg, env_factory, norm)
    return trainer.run(checkpoint_dir=checkpoint_dir, progress=progress)
