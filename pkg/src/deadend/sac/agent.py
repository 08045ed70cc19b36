"""Soft actor-critic: squashed-Gaussian actor, twin critics with targets, learned temperature."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from deadend.sac.nn import MLP, Adam

_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SACConfig:
    obs_dim: int = 45
    act_dim: int = 2
    hidden: tuple = (256, 256)
    lr: float = 3e-4
    gamma: float = 0.99
    tau: float = 0.005
    init_alpha: float = 1.0
    # None means -act_dim
    target_entropy: Optional[float] = None
    auto_alpha: bool = True
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    batch_size: int = 40

    @property
    def entropy_target(self) -> float:
        return -float(self.act_dim) if self.target_entropy is None else float(self.target_entropy)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SACConfig":
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


class Batch(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    d: np.ndarray


def tanh_log_jacobian(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2), computed without cancellation for large |u|."""
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


class SACAgent:
    def __init__(self, config: SACConfig = SACConfig(), seed: int = 0):
        self.config = c = config
        self.rng = np.random.default_rng(seed)
        self.actor = MLP((c.obs_dim, *c.hidden, 2 * c.act_dim), self.rng)
        self.q1 = MLP((c.obs_dim + c.act_dim, *c.hidden, 1), self.rng)
        self.q2 = MLP((c.obs_dim + c.act_dim, *c.hidden, 1), self.rng)
        self.q1_targ = self.q1.copy()
        self.q2_targ = self.q2.copy()
        self.log_alpha = np.array([math.log(c.init_alpha)])
        self.actor_opt = Adam(c.lr)
        self.q1_opt = Adam(c.lr)
        self.q2_opt = Adam(c.lr)
        self.alpha_opt = Adam(c.lr)
        self.n_updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    # -- policy -------------------------------------------------------------

    def _head(self, out: np.ndarray):
        A = self.config.act_dim
        mu, raw = out[:, :A], out[:, A:]
        log_std = np.clip(raw, self.config.log_std_min, self.config.log_std_max)
        inside = (raw >= self.config.log_std_min) & (raw <= self.config.log_std_max)
        return mu, log_std, inside

    def policy(self, s: np.ndarray, xi: Optional[np.ndarray]):
        """Squashed action and its log density for given standard-normal noise.

        ``xi=None`` gives the deterministic action ``tanh(mu)`` (log density
        evaluated at zero noise).
        """
        s = np.atleast_2d(s)
        out, cache = self.actor.forward(s)
        mu, log_std, inside = self._head(out)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite policy output")
        xi = np.zeros_like(mu) if xi is None else np.atleast_2d(xi)
        std = np.exp(log_std)
        u = mu + std * xi
        a = np.tanh(u)
        logp = np.sum(-0.5 * xi * xi - log_std - _HALF_LOG_2PI - tanh_log_jacobian(u), axis=1)
        return a, logp, (cache, u, std, xi, inside)

    def sample_action(self, s: np.ndarray, deterministic: bool = False):
        """One action (and log-probability) for a single observation."""
        xi = None if deterministic else self.rng.standard_normal((1, self.config.act_dim))
        a, logp, _ = self.policy(np.asarray(s, float).reshape(1, -1), xi)
        return a[0], float(logp[0])

    def act(self, s: np.ndarray, deterministic: bool = False) -> np.ndarray:
        return self.sample_action(s, deterministic)[0]

    # -- losses -------------------------------------------------------------

    @staticmethod
    def _q(net: MLP, s: np.ndarray, a: np.ndarray):
        out, cache = net.forward(np.concatenate([s, a], axis=1))
        return out[:, 0], cache

    def critic_targets(self, batch: Batch, xi_next: np.ndarray) -> np.ndarray:
        """y = r + gamma (1 - d) (min target Q(s', a') - alpha log pi(a'|s'))."""
        a2, logp2, _ = self.policy(batch.s2, xi_next)
        q1t, _ = self._q(self.q1_targ, batch.s2, a2)
        q2t, _ = self._q(self.q2_targ, batch.s2, a2)
        soft_v = np.minimum(q1t, q2t) - self.alpha * logp2
        return batch.r + self.config.gamma * (1.0 - batch.d) * soft_v

    def critic_loss(self, net: MLP, batch: Batch, y: np.ndarray):
        """Mean squared error to fixed targets, with parameter gradients."""
        q, cache = self._q(net, batch.s, batch.a)
        err = q - y
        grads, _ = net.backward(cache, (2.0 * err / len(err))[:, None])
        return float(np.mean(err * err)), grads

    def actor_loss(self, batch: Batch, xi: np.ndarray):
        """mean(alpha log pi - min Q) via reparameterization; returns (loss, grads, logp)."""
        B, A = xi.shape
        alpha = self.alpha
        a, logp, (cache, u, std, xi, inside) = self.policy(batch.s, xi)
        q1, c1 = self._q(self.q1, batch.s, a)
        q2, c2 = self._q(self.q2, batch.s, a)
        use1 = q1 <= q2
        qmin = np.where(use1, q1, q2)
        loss = float(np.mean(alpha * logp - qmin))

        w1 = use1.astype(float)
        _, gx1 = self.q1.backward(c1, (-w1 / B)[:, None], params=False)
        _, gx2 = self.q2.backward(c2, (-(1.0 - w1) / B)[:, None], params=False)
        g_a = (gx1 + gx2)[:, self.config.obs_dim:]
        g_u = g_a * (1.0 - a * a) + (alpha / B) * 2.0 * a
        g_mu = g_u
        g_log_std = (g_u * std * xi - alpha / B) * inside
        grads, _ = self.actor.backward(cache, np.concatenate([g_mu, g_log_std], axis=1))
        return loss, grads, logp

    def alpha_loss(self, logp: np.ndarray):
        """-mean(log_alpha (log pi + target entropy)), gradient w.r.t. log_alpha."""
        slack = logp + self.config.entropy_target
        loss = float(-self.log_alpha[0] * np.mean(slack))
        return loss, np.array([-np.mean(slack)])

    # -- update -------------------------------------------------------------

    def update(self, batch: Batch, noise: Optional[tuple] = None) -> dict:
        """One gradient step on both critics, the actor and the temperature, then Polyak averaging."""
        c = self.config
        B = len(batch.r)
        if noise is None:
            noise = (self.rng.standard_normal((B, c.act_dim)), self.rng.standard_normal((B, c.act_dim)))
        xi_next, xi = noise
        y = self.critic_targets(batch, xi_next)
        l1, g1 = self.critic_loss(self.q1, batch, y)
        l2, g2 = self.critic_loss(self.q2, batch, y)
        self.q1_opt.step(self.q1.flat, g1)
        self.q2_opt.step(self.q2.flat, g2)

        la, ga, logp = self.actor_loss(batch, xi)
        self.actor_opt.step(self.actor.flat, ga)

        lt = 0.0
        if c.auto_alpha:
            lt, gt = self.alpha_loss(logp)
            self.alpha_opt.step(self.log_alpha, gt)

        self.q1_targ.soft_update_from(self.q1, c.tau)
        self.q2_targ.soft_update_from(self.q2, c.tau)
        self.n_updates += 1
        return {"q1": l1, "q2": l2, "actor": la, "alpha_loss": lt, "alpha": self.alpha,
                "entropy": float(-np.mean(logp))}

    # -- persistence --------------------------------------------------------

    _NETS = ("actor", "q1", "q2", "q1_targ", "q2_targ")
    _OPTS = ("actor_opt", "q1_opt", "q2_opt", "alpha_opt")

    def state_dict(self) -> dict:
        nets = {n: {"sizes": list(getattr(self, n).sizes), "params": getattr(self, n).get_flat().tolist()}
                for n in self._NETS}
        return {
            "config": self.config.to_dict(),
            "nets": nets,
            "log_alpha": float(self.log_alpha[0]),
            "optimizers": {n: getattr(self, n).state_dict() for n in self._OPTS},
            "n_updates": self.n_updates,
            "rng": self.rng.bit_generator.state,
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "SACAgent":
        agent = cls(SACConfig.from_dict(d["config"]))
        for n in cls._NETS:
            net = getattr(agent, n)
            if list(net.sizes) != d["nets"][n]["sizes"]:
                raise ValueError(f"network {n} shape mismatch")
            net.set_flat(np.array(d["nets"][n]["params"], float))
        agent.log_alpha = np.array([d["log_alpha"]])
        for n in cls._OPTS:
            setattr(agent, n, Adam.from_state_dict(d["optimizers"][n]))
        agent.n_updates = d["n_updates"]
        agent.rng.bit_generator.state = d["rng"]
        return agent


def dumps_checkpoint(agent: SACAgent, extra: Optional[dict] = None) -> str:
    doc = {"schema_version": CHECKPOINT_VERSION, "agent": agent.state_dict(), "extra": extra or {}}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def loads_checkpoint(text: str) -> tuple[SACAgent, dict]:
    doc = json.loads(text)
    if doc.get("schema_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint schema_version {doc.get('schema_version')!r}")
    return SACAgent.from_state_dict(doc["agent"]), doc.get("extra", {})


def save_checkpoint(path, agent: SACAgent, extra: Optional[dict] = None) -> None:
    Path(path).write_text(dumps_checkpoint(agent, extra))


def load_checkpoint(path) -> tuple[SACAgent, dict]:
    return loads_checkpoint(Path(path).read_text())
