"""Soft actor-critic with twin critics, Polyak targets, and automatic temperature.

Networks are small ReLU MLPs differentiated by :mod:`clgdrive.autodiff`.
The loss functions are standalone so they can be checked against finite
differences; :class:`SACAgent` wires them into the update step.
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import Tensor, concat, minimum

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
ACTION_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
_LOG2 = math.log(2.0)

CKPT_MAGIC = b"VLRC"
CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.99
    tau_polyak: float = 0.005
    lr: float = 3e-4
    batch_size: int = 256
    warmup_steps: int = 1000
    target_entropy: float = -2.0
    updates_per_step: int = 1
    seed: int = 0
    hidden_sizes: Tuple[int, ...] = (256, 256)
    init_temperature: float = 1.0
    total_steps: int = 50_000
    bev_size: int = 16
    checkpoint_interval: int = 10_000

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau_polyak <= 1.0:
            raise ValueError("tau_polyak must lie in (0, 1]")
        if self.lr <= 0 or self.batch_size < 1 or self.updates_per_step < 1:
            raise ValueError("lr, batch_size and updates_per_step must be positive")
        if self.init_temperature <= 0:
            raise ValueError("init_temperature must be positive")
        if self.bev_size and 64 % self.bev_size:
            raise ValueError("bev_size must divide 64 (or be 0 to drop the BEV input)")


class MLP:
    """ReLU multilayer perceptron; weights ``(fan_in, fan_out)``."""

    def __init__(self, sizes: Sequence[int], rng: Optional[np.random.Generator] = None,
                 params: Optional[List[np.ndarray]] = None):
        self.sizes = tuple(int(s) for s in sizes)
        if params is None:
            params = []
            for fan_in, fan_out in zip(self.sizes, self.sizes[1:]):
                bound = 1.0 / math.sqrt(fan_in)
                params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
                params.append(rng.uniform(-bound, bound, (1, fan_out)))
        self.params = [Tensor(np.array(p, dtype=np.float64), requires_grad=True) for p in params]

    def forward(self, x: Tensor, frozen: bool = False) -> Tensor:
        ps = [Tensor(p.data) for p in self.params] if frozen else self.params
        n = len(ps) // 2
        for i in range(n):
            x = x @ ps[2 * i] + ps[2 * i + 1]
            if i < n - 1:
                x = x.relu()
        return x

    def predict(self, x: np.ndarray) -> np.ndarray:
        n = len(self.params) // 2
        for i in range(n):
            x = x @ self.params[2 * i].data + self.params[2 * i + 1].data
            if i < n - 1:
                x = np.maximum(x, 0.0)
        return x

    def copy(self) -> "MLP":
        return MLP(self.sizes, params=[p.data.copy() for p in self.params])

    def flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.params])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 3e-4,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None


# -- squashed Gaussian policy -------------------------------------------------

def _split(out, act_dim: int):
    return out[:, :act_dim], out[:, act_dim:]


def squash_correction_np(u: np.ndarray) -> np.ndarray:
    """``log(1 - tanh(u)^2)`` in a numerically stable form."""
    return 2.0 * (_LOG2 - u - np.logaddexp(0.0, -2.0 * u))


def policy_sample_np(actor: MLP, obs: np.ndarray, noise: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Reparameterized tanh-Gaussian actions and their log-probabilities (no graph)."""
    out = actor.predict(obs)
    act_dim = out.shape[1] // 2
    mean, log_std = out[:, :act_dim], np.clip(out[:, act_dim:], LOG_STD_MIN, LOG_STD_MAX)
    u = mean + np.exp(log_std) * noise
    logp = np.sum(-0.5 * noise * noise - log_std - _HALF_LOG_2PI - squash_correction_np(u), axis=1)
    return np.tanh(u), logp


def policy_sample(actor: MLP, obs: Tensor, noise: np.ndarray) -> Tuple[Tensor, Tensor]:
    out = actor.forward(obs)
    act_dim = out.shape[1] // 2
    mean, log_std = out[:, :act_dim], out[:, act_dim:].clip(LOG_STD_MIN, LOG_STD_MAX)
    u = mean + log_std.exp() * noise
    corr = (_LOG2 - u - (-2.0 * u).softplus()) * 2.0
    logp = (log_std * -1.0 - corr + (-0.5 * noise * noise - _HALF_LOG_2PI)).sum(axis=1)
    return u.tanh(), logp


def sample_action(actor: MLP, state: np.ndarray, rng: Optional[np.random.Generator] = None,
                  deterministic: bool = False) -> Tuple[np.ndarray, float]:
    """One action for one state; deterministic mode returns ``tanh(mean)``."""
    obs = np.asarray(state, dtype=np.float64).reshape(1, -1)
    out = actor.predict(obs)
    act_dim = out.shape[1] // 2
    noise = np.zeros((1, act_dim)) if deterministic else rng.standard_normal((1, act_dim))
    a, logp = policy_sample_np(actor, obs, noise)
    return a[0], float(logp[0])


def log_prob(actor: MLP, state: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Log-density of given squashed actions, clamped to ``+-(1 - 1e-6)``."""
    obs = np.atleast_2d(np.asarray(state, dtype=np.float64))
    a = np.clip(np.atleast_2d(action), -1.0 + ACTION_EPS, 1.0 - ACTION_EPS)
    out = actor.predict(obs)
    act_dim = out.shape[1] // 2
    mean, log_std = out[:, :act_dim], np.clip(out[:, act_dim:], LOG_STD_MIN, LOG_STD_MAX)
    u = np.arctanh(a)
    z = (u - mean) / np.exp(log_std)
    return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI - squash_correction_np(u), axis=1)


# -- losses -------------------------------------------------------------------

def q_values_np(critic: MLP, obs: np.ndarray, act: np.ndarray) -> np.ndarray:
    return critic.predict(np.concatenate([obs, act], axis=1))[:, 0]


def soft_target(batch, actor: MLP, targets: Sequence[MLP], temperature: float, gamma: float,
                next_noise: np.ndarray) -> np.ndarray:
    """``r + gamma * (1 - done) * (min target Q - alpha * log pi)`` at a sampled next action."""
    next_act, next_logp = policy_sample_np(actor, batch["next_obs"], next_noise)
    q_next = np.min([q_values_np(t, batch["next_obs"], next_act) for t in targets], axis=0)
    soft_v = q_next - temperature * next_logp
    return batch["reward"] + gamma * (1.0 - batch["done"]) * soft_v


def critic_loss(batch, critics: Sequence[MLP], targets: Sequence[MLP], actor: MLP,
                temperature: float, gamma: float, next_noise: np.ndarray) -> Tensor:
    """Mean over critics of the mean squared soft Bellman residual."""
    y = soft_target(batch, actor, targets, temperature, gamma, next_noise)[:, None]
    x = Tensor(np.concatenate([batch["obs"], batch["action"]], axis=1))
    total = None
    for c in critics:
        l = (c.forward(x) - y).square().mean()
        total = l if total is None else total + l
    return total * (1.0 / len(critics))


def actor_loss(batch, actor: MLP, critics: Sequence[MLP], temperature: float,
               noise: np.ndarray) -> Tuple[Tensor, np.ndarray]:
    """Mean of ``alpha * log pi(a|s) - min_i Q_i(s, a)`` with reparameterized ``a``."""
    obs = Tensor(batch["obs"])
    act, logp = policy_sample(actor, obs, noise)
    x = concat([obs, act], axis=1)
    qs = [c.forward(x, frozen=True) for c in critics]
    q = qs[0]
    for other in qs[1:]:
        q = minimum(q, other)
    loss = (logp * temperature - q[:, 0]).mean()
    return loss, logp.data.copy()


def temperature_loss(log_alpha: Tensor, log_probs: np.ndarray, target_entropy: float) -> Tensor:
    """``mean(alpha * (-log pi - target_entropy))`` with ``alpha = exp(log_alpha)``."""
    return (log_alpha.exp() * (-np.asarray(log_probs) - target_entropy)).mean()


def polyak_update(critics: Sequence[MLP], targets: Sequence[MLP], tau: float) -> None:
    for c, t in zip(critics, targets):
        for p, tp in zip(c.params, t.params):
            tp.data *= 1.0 - tau
            tp.data += tau * p.data


class SACAgent:
    def __init__(self, obs_dim: int, act_dim: int = 2, cfg: TrainerConfig = TrainerConfig(),
                 rng: Optional[np.random.Generator] = None, metadata: Optional[dict] = None):
        self.cfg = cfg
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        h = tuple(cfg.hidden_sizes)
        self.actor = MLP((obs_dim, *h, 2 * act_dim), self.rng)
        self.critics = [MLP((obs_dim + act_dim, *h, 1), self.rng) for _ in range(2)]
        self.targets = [c.copy() for c in self.critics]
        for t in self.targets:
            for p in t.params:
                p.requires_grad = False
        self.log_alpha = Tensor(np.array(math.log(cfg.init_temperature)), requires_grad=True)
        self.actor_opt = Adam(self.actor.params, cfg.lr)
        self.critic_opt = Adam([p for c in self.critics for p in c.params], cfg.lr)
        self.alpha_opt = Adam([self.log_alpha], cfg.lr)
        self.metadata = dict(metadata or {})
        self.n_updates = 0

    @property
    def temperature(self) -> float:
        return float(np.exp(self.log_alpha.data))

    def act(self, state: np.ndarray, deterministic: bool = False) -> np.ndarray:
        return sample_action(self.actor, state, self.rng, deterministic)[0]

    def update(self, batch) -> Dict[str, float]:
        cfg = self.cfg
        n = len(batch["reward"])
        alpha = self.temperature
        next_noise = self.rng.standard_normal((n, self.act_dim))
        qloss = critic_loss(batch, self.critics, self.targets, self.actor, alpha, cfg.gamma, next_noise)
        qloss.backward()
        self.critic_opt.step()

        noise = self.rng.standard_normal((n, self.act_dim))
        ploss, logp = actor_loss(batch, self.actor, self.critics, alpha, noise)
        ploss.backward()
        self.actor_opt.step()

        aloss = temperature_loss(self.log_alpha, logp, cfg.target_entropy)
        aloss.backward()
        self.alpha_opt.step()

        polyak_update(self.critics, self.targets, cfg.tau_polyak)
        self.n_updates += 1
        return {"critic_loss": float(qloss.data), "actor_loss": float(ploss.data),
                "temperature_loss": float(aloss.data), "temperature": self.temperature}

    # -- persistence -----------------------------------------------------------
    def named_tensors(self) -> List[Tuple[str, np.ndarray]]:
        out = []
        for name, net in [("actor", self.actor), ("critic0", self.critics[0]), ("critic1", self.critics[1]),
                          ("target0", self.targets[0]), ("target1", self.targets[1])]:
            for i, p in enumerate(net.params):
                out.append((f"{name}.{i}", p.data))
        out.append(("log_alpha", self.log_alpha.data.reshape(1)))
        return out

    def save(self, path: Union[str, Path]) -> None:
        meta = dict(self.metadata, obs_dim=self.obs_dim, act_dim=self.act_dim,
                    hidden_sizes=list(self.cfg.hidden_sizes))
        write_checkpoint(path, self.named_tensors(), meta)

    @classmethod
    def load(cls, path: Union[str, Path], cfg: Optional[TrainerConfig] = None) -> "SACAgent":
        tensors, meta = read_checkpoint(path)
        hidden = tuple(meta["hidden_sizes"])
        if cfg is None:
            cfg = TrainerConfig(hidden_sizes=hidden)
        elif tuple(cfg.hidden_sizes) != hidden:
            cfg = TrainerConfig(**{**_cfg_dict(cfg), "hidden_sizes": hidden})
        agent = cls(meta["obs_dim"], meta["act_dim"], cfg, metadata=meta)
        for name, arr in agent.named_tensors():
            if name not in tensors or tensors[name].shape != arr.shape:
                raise ValueError(f"checkpoint tensor {name!r} missing or mis-shaped")
            arr[...] = tensors[name]
        return agent


def _cfg_dict(cfg: TrainerConfig) -> dict:
    return asdict(cfg)


def write_checkpoint(path: Union[str, Path], tensors: Sequence[Tuple[str, np.ndarray]],
                     metadata: Optional[dict] = None) -> None:
    """``VLRC`` file: header with shapes and JSON metadata, then float32 LE data.

    Written to a temporary file and renamed so readers never see a partial file.
    """
    meta = json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<III", CKPT_VERSION, len(tensors), len(meta)), meta]
    for name, arr in tensors:
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for _, arr in tensors:
        parts.append(np.asarray(arr, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    try:
        return _parse_checkpoint(data, path)
    except struct.error as exc:
        raise ValueError(f"{path}: truncated checkpoint header ({exc})") from None


def _parse_checkpoint(data: bytes, path) -> Tuple[Dict[str, np.ndarray], dict]:
    if data[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, count, mlen = struct.unpack_from("<III", data, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    meta = json.loads(data[off:off + mlen].decode("utf-8"))
    off += mlen
    shapes = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        shapes.append((name, shape))
    tensors = {}
    for name, shape in shapes:
        n = int(np.prod(shape)) if shape else 1
        if off + 4 * n > len(data):
            raise ValueError(f"{path}: truncated tensor data for {name!r}")
        tensors[name] = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 4 * n
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes after tensor data")
    return tensors, meta
