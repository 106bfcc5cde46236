"""PPO with GAE for a tanh-squashed diagonal Gaussian policy.

The actor and critic are separate ELU MLPs of the same hidden widths. Actions
are sampled as u ~ N(mu, sigma) and executed as tanh(u); the squash
correction cancels in the probability ratio, so the loss works on u directly.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .nn import MLP, Adam, RunningNorm, clip_grad_norm

LOG_2PI = math.log(2.0 * math.pi)
JUMPING_WIDTHS = (256, 128, 128)
WALKING_WIDTHS = (512, 256, 128)


class Divergence(RuntimeError):
    """Non-finite loss or parameters during an update."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class PPOConfig:
    learning_rate: float = 3e-4
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    epochs: int = 4
    minibatches: int = 4
    entropy_coef: float = 0.003
    value_coef: float = 1.0
    max_grad_norm: float = 1.0
    horizon: int = 48
    num_envs: int = 256
    max_updates: int = 1500
    seed: int = 0
    init_log_std: float = -0.7
    lr_schedule: str = "adaptive"   # "fixed" or "adaptive" (KL-driven)
    kl_target: float = 0.01
    normalize_value: bool = True

    def validation_errors(self) -> list[str]:
        errors = []
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            errors.append("ppo.gamma/lam: must be in (0, 1]")
        if not self.clip > 0:
            errors.append("ppo.clip: must be > 0")
        if self.learning_rate < 0:
            errors.append("ppo.learning_rate: must be >= 0")
        if self.epochs < 1 or self.minibatches < 1 or self.horizon < 1 or self.num_envs < 1:
            errors.append("ppo.epochs/minibatches/horizon/num_envs: must be >= 1")
        if self.max_updates < 0:
            errors.append("ppo.max_updates: must be >= 0")
        if self.lr_schedule not in ("fixed", "adaptive"):
            errors.append("ppo.lr_schedule: must be 'fixed' or 'adaptive'")
        return errors


class PolicyNetwork:
    def __init__(self, obs_dim: int, act_dim: int, widths=JUMPING_WIDTHS, rng: np.random.Generator | None = None,
                 init_log_std: float = -0.7, zero: bool = False):
        rng = rng or np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.widths = tuple(widths)
        self.actor = MLP((obs_dim, *widths, act_dim), rng, out_scale=0.01, zero=zero)
        self.critic = MLP((obs_dim, *widths, 1), rng, out_scale=1.0, zero=zero)
        self.log_std = np.full(act_dim, 0.0 if zero else float(init_log_std))
        self.obs_norm = RunningNorm(obs_dim)
        self.value_norm = RunningNorm(1)

    def actor_params(self):
        return self.actor.params + [self.log_std]

    def named_arrays(self):
        out = []
        for i, p in enumerate(self.actor.params):
            out.append((f"actor.{i}", p))
        out.append(("log_std", self.log_std))
        for i, p in enumerate(self.critic.params):
            out.append((f"critic.{i}", p))
        out += [("obs_norm.mean", self.obs_norm.mean), ("obs_norm.var", self.obs_norm.var),
                ("obs_norm.count", np.array([self.obs_norm.count])),
                ("value_norm.mean", self.value_norm.mean), ("value_norm.var", self.value_norm.var),
                ("value_norm.count", np.array([self.value_norm.count]))]
        return out

    def load_arrays(self, arrays: dict) -> None:
        for i in range(len(self.actor.params)):
            self.actor.params[i][...] = arrays[f"actor.{i}"]
        self.log_std[...] = arrays["log_std"]
        for i in range(len(self.critic.params)):
            self.critic.params[i][...] = arrays[f"critic.{i}"]
        self.obs_norm.mean = arrays["obs_norm.mean"].copy()
        self.obs_norm.var = arrays["obs_norm.var"].copy()
        self.obs_norm.count = float(arrays["obs_norm.count"][0])
        self.value_norm.mean = arrays["value_norm.mean"].copy()
        self.value_norm.var = arrays["value_norm.var"].copy()
        self.value_norm.count = float(arrays["value_norm.count"][0])


def policy_forward(net: PolicyNetwork, obs, normalized: bool = False):
    """(tanh-squashed mean action, log-std, value) for a batch of observations.

    The value is in return units (denormalized).
    """
    x = obs if normalized else net.obs_norm(obs)
    mu = net.actor.forward(x)
    v = net.critic.forward(x)[:, 0]
    value = v * np.sqrt(net.value_norm.var[0] + 1e-8) + net.value_norm.mean[0]
    return np.tanh(mu), net.log_std.copy(), value


def act(net: PolicyNetwork, obs, rng: np.random.Generator, deterministic: bool = False):
    """Returns (action in [-1, 1], pre-squash sample u, log-prob of u, value, mu, normalized obs)."""
    x = net.obs_norm(obs)
    mu = net.actor.forward(x)
    v = net.critic.forward(x)[:, 0]
    value = v * np.sqrt(net.value_norm.var[0] + 1e-8) + net.value_norm.mean[0]
    if deterministic:
        u = mu
    else:
        u = mu + np.exp(net.log_std) * rng.standard_normal(mu.shape)
    logp = gaussian_logp(u, mu, net.log_std)
    return np.tanh(u), u, logp, value, mu, x


def gaussian_logp(u, mu, log_std):
    z = (u - mu) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def squashed_logp(u, mu, log_std):
    """log-density of a = tanh(u)."""
    return gaussian_logp(u, mu, log_std) - np.sum(np.log(1.0 - np.tanh(u) ** 2 + 1e-6), axis=-1)


def gaussian_entropy(log_std):
    return float(np.sum(log_std + 0.5 + 0.5 * LOG_2PI))


def compute_gae(rewards, values, dones, gamma: float, lam: float, last_value=None):
    """Standard GAE over (T, ...) arrays.

    ``dones[t]`` marks that the episode ended after step t (no bootstrap
    across it). ``last_value`` is V(s_T); zero if omitted.
    Returns (advantages, returns = advantages + values).
    """
    r = np.asarray(rewards, float)
    v = np.asarray(values, float)
    d = np.asarray(dones, float)
    T = r.shape[0]
    nxt = np.zeros_like(v[0]) if last_value is None else np.asarray(last_value, float)
    adv = np.zeros_like(r)
    gae = np.zeros_like(r[0])
    for t in reversed(range(T)):
        nonterminal = 1.0 - d[t]
        delta = r[t] + gamma * nxt * nonterminal - v[t]
        gae = delta + gamma * lam * nonterminal * gae
        adv[t] = gae
        nxt = v[t]
    return adv, adv + v


@dataclass
class RolloutBuffer:
    obs: np.ndarray        # (T, N, obs_dim) normalized observations
    u: np.ndarray          # (T, N, act_dim) pre-squash samples
    mu: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @classmethod
    def empty(cls, T, N, obs_dim, act_dim):
        z = lambda *s: np.zeros(s)
        return cls(z(T, N, obs_dim), z(T, N, act_dim), z(T, N, act_dim), z(T, N), z(T, N), z(T, N), z(T, N))

    def finish(self, last_value, gamma, lam) -> None:
        self.advantages, self.returns = compute_gae(self.rewards, self.values, self.dones, gamma, lam, last_value)


def ppo_loss_and_grads(net: PolicyNetwork, batch: dict, cfg: PPOConfig):
    """Loss and gradients for one minibatch.

    batch: obs (normalized), u, logp_old, adv (already normalized), ret_n
    (value targets in normalized units). Returns (loss, stats, actor_grads,
    critic_grads) with actor_grads ordered like ``net.actor_params()``.
    """
    x = batch["obs"]
    B = x.shape[0]
    mu, a_cache = net.actor.forward(x, keep=True)
    v, c_cache = net.critic.forward(x, keep=True)
    v = v[:, 0]
    log_std = net.log_std
    inv_var = np.exp(-2.0 * log_std)
    diff = batch["u"] - mu
    logp = np.sum(-0.5 * diff * diff * inv_var - log_std - 0.5 * LOG_2PI, axis=-1)
    ratio = np.exp(logp - batch["logp_old"])
    adv = batch["adv"]
    surr1 = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
    surr2 = clipped * adv
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
    err = v - batch["ret_n"]
    value_loss = float(np.mean(err * err))
    entropy = gaussian_entropy(log_std)
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy

    # d loss / d logp per sample; the clipped branch carries no gradient
    use_unclipped = surr1 <= surr2
    g_logp = np.where(use_unclipped, -adv * ratio, 0.0) / B
    g_mu = g_logp[:, None] * diff * inv_var
    g_log_std = np.sum(g_logp[:, None] * (diff * diff * inv_var - 1.0), axis=0) - cfg.entropy_coef
    actor_grads, _ = net.actor.backward(a_cache, g_mu)
    g_v = (2.0 * cfg.value_coef / B) * err
    critic_grads, _ = net.critic.backward(c_cache, g_v[:, None])

    approx_kl = float(np.mean(batch["logp_old"] - logp))
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > cfg.clip))
    stats = {"loss": loss, "policy_loss": policy_loss, "value_loss": value_loss, "entropy": entropy,
             "approx_kl": approx_kl, "clip_frac": clip_frac}
    return loss, stats, actor_grads + [g_log_std], critic_grads


def gaussian_kl(mu_old, mu_new, log_std_old, log_std_new):
    """Mean KL(old || new) between diagonal Gaussians."""
    var_old = np.exp(2 * log_std_old)
    var_new = np.exp(2 * log_std_new)
    kl = log_std_new - log_std_old + (var_old + (mu_old - mu_new) ** 2) / (2 * var_new) - 0.5
    return float(np.mean(np.sum(kl, axis=-1)))


class PPO:
    def __init__(self, net: PolicyNetwork, cfg: PPOConfig):
        self.net = net
        self.cfg = cfg
        self.lr = cfg.learning_rate
        self.actor_opt = Adam(net.actor_params(), lr=self.lr)
        self.critic_opt = Adam(net.critic.params, lr=self.lr)

    def update(self, buf: RolloutBuffer, rng: np.random.Generator) -> dict:
        """Clipped-surrogate epochs over shuffled minibatches; raises Divergence on non-finite loss."""
        cfg = self.cfg
        net = self.net
        T, N = buf.rewards.shape
        n = T * N
        obs = buf.obs.reshape(n, -1)
        u = buf.u.reshape(n, -1)
        mu_old = buf.mu.reshape(n, -1)
        logp_old = buf.logp.reshape(n)
        adv = buf.advantages.reshape(n)
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        ret = buf.returns.reshape(n)
        if cfg.normalize_value:
            net.value_norm.update(ret[:, None])
            ret_n = (ret - net.value_norm.mean[0]) / np.sqrt(net.value_norm.var[0] + 1e-8)
        else:
            ret_n = ret
        log_std_old = net.log_std.copy()
        mb = max(1, n // cfg.minibatches)
        stats_acc = []
        kl = 0.0
        for epoch in range(cfg.epochs):
            perm = rng.permutation(n)
            for k in range(cfg.minibatches):
                idx = perm[k * mb:(k + 1) * mb] if k < cfg.minibatches - 1 else perm[k * mb:]
                batch = {"obs": obs[idx], "u": u[idx], "logp_old": logp_old[idx], "adv": adv[idx],
                         "ret_n": ret_n[idx]}
                loss, stats, ga, gc = ppo_loss_and_grads(net, batch, cfg)
                if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in ga + gc):
                    raise Divergence("non-finite PPO loss", {**stats, "epoch": epoch, "minibatch": k})
                ga, stats["actor_grad_norm"] = clip_grad_norm(ga, cfg.max_grad_norm)
                gc, stats["critic_grad_norm"] = clip_grad_norm(gc, cfg.max_grad_norm)
                self.actor_opt.lr = self.lr
                self.critic_opt.lr = self.lr
                self.actor_opt.step(ga)
                self.critic_opt.step(gc)
                np.clip(net.log_std, -5.0, 1.0, out=net.log_std)
                stats_acc.append(stats)
            mu_new = net.actor.forward(obs)
            kl = gaussian_kl(mu_old, mu_new, log_std_old, net.log_std)
            if cfg.lr_schedule == "adaptive":
                if kl > 2.0 * cfg.kl_target:
                    self.lr = max(self.lr / 1.5, 1e-6)
                elif kl < 0.5 * cfg.kl_target:
                    self.lr = min(self.lr * 1.5, 1e-2)
        for p in net.actor_params() + net.critic.params:
            if not np.isfinite(p).all():
                raise Divergence("non-finite parameters after update")
        out = {k: float(np.mean([s[k] for s in stats_acc])) for k in stats_acc[0]}
        out["kl"] = kl
        out["lr"] = self.lr
        return out
