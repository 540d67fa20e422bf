"""Proximal Policy Optimization with actor-critic heads for both agents.

The surrogate objective is the clipped importance-ratio form; the advantage is
the one-step TD residual r + gamma*V(s') - V(s) (GAE is available behind
config but off by default). Two action heads exist: a bounded continuous
Gaussian (state-independent learned log-scale, tanh-squashed mean, samples
clipped to [-1, 1]) and a Bernoulli head for binary gating.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import params_io


class NonFiniteLossError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


class DivergenceError(RuntimeError):
    def __init__(self, message: str, curve: list):
        super().__init__(message)
        self.curve = curve


@dataclass
class PPOConfig:
    gamma: float = 0.99
    clip_eps: float = 0.2
    lr: float = 3e-4
    rollout_len: int = 2048
    update_epochs: int = 10
    minibatch_size: int = 256
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    total_steps: int = 50_000
    n_envs: int = 8
    seed: int = 0
    max_grad_norm: float = 0.5
    normalize_adv: bool = True
    use_gae: bool = False
    gae_lambda: float = 0.95
    anneal_lr: bool = False  # decay lr linearly to 0 over total_steps
    entropy_off_frac: float | None = None  # drop entropy_coef to 0 past this training fraction
    checkpoint_every: int | None = None
    checkpoint_dir: str | None = None
    collapse_threshold: float | None = None  # early stop if mean return drops this far below its peak

    def __post_init__(self) -> None:
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must be in (0, 1)")


def _trunk(in_dim: int, hidden: tuple[int, ...], dtype) -> nn.Sequential:
    layers: list[nn.Module] = []
    last = in_dim
    for h in hidden:
        layers += [nn.Linear(last, h, dtype=dtype), nn.Tanh()]
        last = h
    return nn.Sequential(*layers)


class ActorCritic(nn.Module):
    """Base class: subclasses encode observations and define the action head."""

    kind: str = ""
    action_head: str = ""  # "continuous" or "binary"

    def encode_actor(self, obs: dict[str, torch.Tensor]) -> torch.Tensor:
        raise NotImplementedError

    def encode_critic(self, obs: dict[str, torch.Tensor]) -> torch.Tensor:
        raise NotImplementedError

    def value(self, obs: dict[str, torch.Tensor]) -> torch.Tensor:
        return self.critic_head(self.encode_critic(obs)).squeeze(-1)

    # --- distributions -----------------------------------------------------

    def _dist_params(self, obs: dict[str, torch.Tensor]) -> torch.Tensor:
        return self.actor_head(self.encode_actor(obs)).squeeze(-1)

    def log_prob(self, obs: dict[str, torch.Tensor], actions: torch.Tensor) -> torch.Tensor:
        if self.action_head == "continuous":
            mean = torch.tanh(self._dist_params(obs))
            std = torch.exp(self.log_std)
            var = std ** 2
            return -((actions - mean) ** 2) / (2 * var) - self.log_std - 0.5 * math.log(2 * math.pi)
        logits = self._dist_params(obs)
        # Bernoulli log-prob, exact: a*log p + (1-a)*log(1-p) via logits.
        return -nn.functional.binary_cross_entropy_with_logits(
            logits, actions.to(logits.dtype), reduction="none")

    def entropy(self, obs: dict[str, torch.Tensor]) -> torch.Tensor:
        if self.action_head == "continuous":
            n = self._dist_params(obs).shape[0]
            ent = 0.5 * (1 + math.log(2 * math.pi)) + self.log_std
            return ent.expand(n)
        logits = self._dist_params(obs)
        p = torch.sigmoid(logits)
        return nn.functional.binary_cross_entropy_with_logits(
            logits, p.detach(), reduction="none")

    @torch.no_grad()
    def act(self, obs_np: dict[str, np.ndarray], generator: torch.Generator,
            deterministic: bool = False):
        obs = self.obs_to_tensors(obs_np)
        if self.action_head == "continuous":
            mean = torch.tanh(self._dist_params(obs))
            std = torch.exp(self.log_std)
            if deterministic:
                actions = mean
            else:
                noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
                actions = mean + std * noise
        else:
            logits = self._dist_params(obs)
            p = torch.sigmoid(logits)
            if deterministic:
                actions = (p >= 0.5).to(logits.dtype)
            else:
                u = torch.rand(p.shape, generator=generator, dtype=p.dtype)
                actions = (u < p).to(logits.dtype)
        logp = self.log_prob(obs, actions)
        value = self.value(obs)
        return actions.numpy().copy(), logp.numpy().copy(), value.numpy().copy()

    def obs_to_tensors(self, obs_np: dict[str, np.ndarray]) -> dict[str, torch.Tensor]:
        dtype = next(self.parameters()).dtype
        out = {}
        for k, v in obs_np.items():
            t = torch.as_tensor(v)
            out[k] = t if t.dtype in (torch.int64, torch.int32) else t.to(dtype)
        return out

    # --- persistence ---------------------------------------------------------

    def save(self, path, meta: dict | None = None) -> None:
        meta = dict(meta or {})
        meta.update({"kind": self.kind, "ctor": self.ctor_kwargs})
        arrays = {k: v.detach().numpy().copy() for k, v in self.state_dict().items()}
        params_io.save_params(path, arrays, meta)


class VectorActorCritic(ActorCritic):
    """Separate actor/critic MLPs over a flat observation vector (key "x")."""

    kind = "vector"

    def __init__(self, obs_dim: int, action_head: str = "binary",
                 hidden: tuple[int, ...] = (64, 64), dtype: torch.dtype = torch.float32):
        super().__init__()
        if action_head not in ("continuous", "binary"):
            raise ValueError(f"unknown action head {action_head!r}")
        self.action_head = action_head
        self.ctor_kwargs = {"obs_dim": obs_dim, "action_head": action_head,
                            "hidden": list(hidden)}
        self.actor = _trunk(obs_dim, tuple(hidden), dtype)
        self.critic = _trunk(obs_dim, tuple(hidden), dtype)
        self.actor_head = nn.Linear(hidden[-1], 1, dtype=dtype)
        self.critic_head = nn.Linear(hidden[-1], 1, dtype=dtype)
        if action_head == "continuous":
            self.log_std = nn.Parameter(torch.zeros((), dtype=dtype))

    def encode_actor(self, obs):
        return self.actor(obs["x"])

    def encode_critic(self, obs):
        return self.critic(obs["x"])


class SimActorCritic(ActorCritic):
    """Policy for the per-frame simulation agent (continuous action).

    Front end shared by actor and critic: embedded question tokens, a one-layer
    image encoder over the flattened stimulus frame, and the raw recent-pressure
    window, concatenated. The window is additionally summarized into a decayed
    pressure-load scalar (each pressured trial adds one unit, each unpressured
    trial clears two, floored at zero, oldest first): the same window density
    can mean "scattered pressure, load long gone" or "sustained run, load
    high", and the raw bits alone make that distinction hard for the trunk to
    pick up.
    """

    kind = "sim"

    def __init__(self, token_len: int = 8, vocab_size: int = 13, embed_dim: int = 8,
                 image_shape: tuple[int, int] = (8, 64), history_len: int = 10,
                 image_hidden: int = 64, hidden: tuple[int, ...] = (64, 64),
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.action_head = "continuous"
        self.ctor_kwargs = {"token_len": token_len, "vocab_size": vocab_size,
                            "embed_dim": embed_dim, "image_shape": list(image_shape),
                            "history_len": history_len, "image_hidden": image_hidden,
                            "hidden": list(hidden)}
        self.embed = nn.Embedding(vocab_size, embed_dim, dtype=dtype)
        img_dim = image_shape[0] * image_shape[1]
        self.image_fc = nn.Linear(img_dim, image_hidden, dtype=dtype)
        feat_dim = token_len * embed_dim + image_hidden + history_len + 1
        self.actor = _trunk(feat_dim, tuple(hidden), dtype)
        self.critic = _trunk(feat_dim, tuple(hidden), dtype)
        self.actor_head = nn.Linear(hidden[-1], 1, dtype=dtype)
        self.critic_head = nn.Linear(hidden[-1], 1, dtype=dtype)
        self.log_std = nn.Parameter(torch.zeros((), dtype=dtype))

    @staticmethod
    def pressure_load(history: torch.Tensor) -> torch.Tensor:
        """Decayed pressure-load summary of a (batch, history_len) window,
        oldest flag first: load <- max(load + 1, 0) on pressured trials,
        max(load - 2, 0) otherwise, starting from zero."""
        load = history.new_zeros(history.shape[0])
        for i in range(history.shape[1]):
            load = torch.clamp(load + 3.0 * history[:, i] - 2.0, min=0.0)
        return load

    def _features(self, obs):
        tokens = self.embed(obs["tokens"]).flatten(1)
        image = torch.tanh(self.image_fc(obs["image"].flatten(1)))
        load = self.pressure_load(obs["history"]).unsqueeze(1) / 4.0
        return torch.cat([tokens, image, obs["history"], load], dim=1)

    def encode_actor(self, obs):
        return self.actor(self._features(obs))

    def encode_critic(self, obs):
        return self.critic(self._features(obs))


POLICY_KINDS = {"vector": VectorActorCritic, "sim": SimActorCritic}


def load_policy(path) -> ActorCritic:
    arrays, meta = params_io.load_params(path)
    cls = POLICY_KINDS[meta["kind"]]
    kwargs = dict(meta["ctor"])
    for key in ("hidden", "image_shape"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    policy = cls(**kwargs)
    policy.load_state_dict({k: torch.as_tensor(v) for k, v in arrays.items()})
    return policy.eval()


# --- rollouts ----------------------------------------------------------------


class SyncVectorEnv:
    """Steps a list of single environments in lockstep with auto-reset."""

    def __init__(self, envs: list):
        self.envs = envs

    def __len__(self) -> int:
        return len(self.envs)

    @staticmethod
    def _stack(obs_list: list[dict]) -> dict[str, np.ndarray]:
        return {k: np.stack([o[k] for o in obs_list]) for k in obs_list[0]}

    def reset(self) -> dict[str, np.ndarray]:
        return self._stack([e.reset() for e in self.envs])

    def step(self, actions: np.ndarray):
        obs, rewards, dones, infos = [], [], [], []
        for env, a in zip(self.envs, actions):
            o, r, d, info = env.step(a)
            if d:
                info = dict(info)
                info["episode_return"] = env.episode_return
                o = env.reset()
            obs.append(o)
            rewards.append(r)
            dones.append(d)
            infos.append(info)
        return (self._stack(obs), np.asarray(rewards, dtype=float),
                np.asarray(dones, dtype=bool), infos)


@dataclass
class Trajectory:
    """Rollout buffer; arrays are (T, B, ...) with B parallel env instances."""

    obs: dict[str, np.ndarray]
    actions: np.ndarray
    log_probs: np.ndarray   # under the collecting (old) policy
    values: np.ndarray      # (T+1, B): V of each visited state plus bootstrap
    rewards: np.ndarray
    dones: np.ndarray
    episode_returns: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return self.rewards.shape[0] * self.rewards.shape[1]


def collect_rollout(venv: SyncVectorEnv, policy: ActorCritic, n_steps: int,
                    generator: torch.Generator, obs0: dict | None = None) -> tuple[Trajectory, dict]:
    """Collect exactly n_steps transitions per env instance, auto-resetting."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    obs = venv.reset() if obs0 is None else obs0
    obs_buf: list[dict] = []
    act_buf, logp_buf, val_buf, rew_buf, done_buf = [], [], [], [], []
    episode_returns: list[float] = []
    for _ in range(n_steps):
        actions, logp, values = policy.act(obs, generator)
        next_obs, rewards, dones, infos = venv.step(actions)
        obs_buf.append(obs)
        act_buf.append(actions)
        logp_buf.append(logp)
        val_buf.append(values)
        rew_buf.append(rewards)
        done_buf.append(dones)
        episode_returns.extend(i["episode_return"] for i in infos if "episode_return" in i)
        obs = next_obs
    with torch.no_grad():
        final_values = policy.value(policy.obs_to_tensors(obs)).numpy()
    traj = Trajectory(
        obs={k: np.stack([o[k] for o in obs_buf]) for k in obs_buf[0]},
        actions=np.stack(act_buf),
        log_probs=np.stack(logp_buf),
        values=np.concatenate([np.stack(val_buf), final_values[None]], axis=0),
        rewards=np.stack(rew_buf),
        dones=np.stack(done_buf),
        episode_returns=episode_returns,
    )
    return traj, obs


def advantage(traj: Trajectory, gamma: float, use_gae: bool = False,
              gae_lambda: float = 0.95) -> np.ndarray:
    """One-step TD advantage: r + gamma*V(s') - V(s), with V(s')=0 at done."""
    v = traj.values[:-1]
    v_next = traj.values[1:]
    not_done = 1.0 - traj.dones.astype(float)
    deltas = traj.rewards + gamma * v_next * not_done - v
    if not use_gae:
        return deltas
    adv = np.zeros_like(deltas)
    running = np.zeros(deltas.shape[1])
    for t in reversed(range(deltas.shape[0])):
        running = deltas[t] + gamma * gae_lambda * not_done[t] * running
        adv[t] = running
    return adv


def clipped_surrogate(policy: ActorCritic, obs: dict[str, torch.Tensor],
                      actions: torch.Tensor, old_log_probs: torch.Tensor,
                      advantages: torch.Tensor, clip_eps: float) -> torch.Tensor:
    """Mean clipped objective (to be maximized): E[min(r*A, clip(r)*A)]."""
    ratio = torch.exp(policy.log_prob(obs, actions) - old_log_probs)
    clipped = torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    return torch.min(ratio * advantages, clipped * advantages).mean()


def ppo_update(policy: ActorCritic, optimizer: torch.optim.Optimizer,
               traj: Trajectory, cfg: PPOConfig, generator: torch.Generator) -> dict:
    """Run cfg.update_epochs of minibatch updates; returns diagnostics."""
    t, b = traj.rewards.shape
    n = t * b
    flat_obs = {k: v.reshape(n, *v.shape[2:]) for k, v in traj.obs.items()}
    obs_t = policy.obs_to_tensors(flat_obs)
    dtype = next(policy.parameters()).dtype
    actions = torch.as_tensor(traj.actions.reshape(n)).to(dtype)
    old_logp = torch.as_tensor(traj.log_probs.reshape(n)).to(dtype)
    adv = advantage(traj, cfg.gamma, cfg.use_gae, cfg.gae_lambda)
    td_target = torch.as_tensor((adv + traj.values[:-1]).reshape(n)).to(dtype)
    adv_t = torch.as_tensor(adv.reshape(n)).to(dtype)

    diags = {"mean_ratio": 0.0, "clip_fraction": 0.0, "policy_loss": 0.0,
             "value_loss": 0.0, "entropy": 0.0}
    count = 0
    for _ in range(cfg.update_epochs):
        perm = torch.randperm(n, generator=generator)
        for lo in range(0, n, cfg.minibatch_size):
            idx = perm[lo:lo + cfg.minibatch_size]
            mb_obs = {k: v[idx] for k, v in obs_t.items()}
            mb_adv = adv_t[idx]
            if cfg.normalize_adv and len(idx) > 1:
                mb_adv = (mb_adv - mb_adv.mean()) / (mb_adv.std(unbiased=False) + 1e-8)
            logp = policy.log_prob(mb_obs, actions[idx])
            ratio = torch.exp(logp - old_logp[idx])
            clipped = torch.clamp(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps)
            policy_loss = -torch.min(ratio * mb_adv, clipped * mb_adv).mean()
            value_loss = ((policy.value(mb_obs) - td_target[idx]) ** 2).mean()
            entropy = policy.entropy(mb_obs).mean()
            loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
            if not torch.isfinite(loss):
                raise NonFiniteLossError("non-finite PPO loss; update aborted", {
                    "policy_loss": float(policy_loss), "value_loss": float(value_loss),
                    "entropy": float(entropy)})
            optimizer.zero_grad()
            loss.backward()
            if cfg.max_grad_norm:
                nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm)
            optimizer.step()
            with torch.no_grad():
                diags["mean_ratio"] += float(ratio.mean())
                diags["clip_fraction"] += float(((ratio - 1).abs() > cfg.clip_eps).float().mean())
                diags["policy_loss"] += float(policy_loss)
                diags["value_loss"] += float(value_loss)
                diags["entropy"] += float(entropy)
            count += 1
    return {k: v / max(count, 1) for k, v in diags.items()}


@dataclass
class TrainResult:
    policy: ActorCritic
    curve: list  # rows: (step, mean_return, clip_fraction, value_loss)
    stopped_early: bool = False
    stop_reason: str | None = None


def train(env_factory, policy: ActorCritic, cfg: PPOConfig) -> TrainResult:
    """Train until cfg.total_steps environment steps; reproducible given seed."""
    torch.manual_seed(cfg.seed)
    generator = torch.Generator().manual_seed(cfg.seed)
    venv = SyncVectorEnv([env_factory(i) for i in range(cfg.n_envs)])
    optimizer = torch.optim.Adam(policy.parameters(), lr=cfg.lr)
    curve: list[tuple] = []
    if cfg.total_steps < cfg.rollout_len:
        return TrainResult(policy, curve)

    steps_per_env = max(cfg.rollout_len // cfg.n_envs, 1)
    steps_done = 0
    peak_return = -float("inf")
    obs = None
    while steps_done < cfg.total_steps:
        frac_done = steps_done / cfg.total_steps
        if cfg.anneal_lr:
            optimizer.param_groups[0]["lr"] = (1.0 - frac_done) * cfg.lr
        step_cfg = cfg
        if cfg.entropy_off_frac is not None and frac_done >= cfg.entropy_off_frac:
            step_cfg = dataclasses.replace(cfg, entropy_coef=0.0)
        traj, obs = collect_rollout(venv, policy, steps_per_env, generator, obs)
        steps_done += traj.n_steps
        diags = ppo_update(policy, optimizer, traj, step_cfg, generator)
        mean_return = float(np.mean(traj.episode_returns)) if traj.episode_returns else float("nan")
        curve.append((steps_done, mean_return, diags["clip_fraction"], diags["value_loss"]))
        if np.isfinite(mean_return):
            peak_return = max(peak_return, mean_return)
            if (cfg.collapse_threshold is not None
                    and mean_return < peak_return - cfg.collapse_threshold):
                return TrainResult(policy, curve, stopped_early=True,
                                   stop_reason=f"return collapse: {mean_return:.3f} "
                                               f"vs peak {peak_return:.3f}")
        if (cfg.checkpoint_every and cfg.checkpoint_dir
                and steps_done % cfg.checkpoint_every < cfg.rollout_len):
            import os
            policy.save(os.path.join(cfg.checkpoint_dir, f"ckpt_{steps_done}.npz"),
                        {"step": steps_done})
    return TrainResult(policy, curve)


def curve_to_csv(path, curve: list) -> None:
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "mean_return", "clip_fraction", "value_loss"])
        for row in curve:
            w.writerow(row)
