"""Small numpy MLP with manual backprop, and Adam."""

from __future__ import annotations

import numpy as np


def elu(x):
    # expm1(x) >= x everywhere, so the max picks the right branch
    return np.maximum(x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def elu_grad_from_output(h):
    """ELU derivative written in terms of the activation h = elu(x)."""
    return np.minimum(h, 0.0) + 1.0


class MLP:
    """Fully connected net: ELU on hidden layers, linear output.

    Parameters live in ``self.params`` as [W0, b0, W1, b1, ...] with W of shape
    (fan_in, fan_out) so a batch forward is ``x @ W + b``.
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None, out_scale: float = 1.0, zero: bool = False):
        self.sizes = tuple(int(s) for s in sizes)
        self.params = []
        for i, (fi, fo) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if zero:
                W = np.zeros((fi, fo))
            else:
                # orthogonal-ish init scaled for ELU; last layer shrunk
                W = rng.normal(0.0, 1.0, (fi, fo)) * np.sqrt(2.0 / fi)
                if i == len(self.sizes) - 2:
                    W *= out_scale
            self.params += [W, np.zeros(fo)]

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def forward(self, x, keep: bool = False):
        cache = [x]
        h = x
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ W + b
            if i < self.n_layers - 1:
                cache.append(z)
                h = elu(z)
                cache.append(h)
            else:
                h = z
        return (h, cache) if keep else h

    def backward(self, cache, dout):
        """Gradients of sum(dout * output) w.r.t. params (same order) and the input."""
        grads = [None] * len(self.params)
        d = dout
        for i in reversed(range(self.n_layers)):
            h_in = cache[2 * i] if i > 0 else cache[0]
            W = self.params[2 * i]
            grads[2 * i] = h_in.T @ d
            grads[2 * i + 1] = d.sum(0)
            d = d @ W.T
            if i > 0:
                d *= elu_grad_from_output(h_in)
        return grads, d

    def n_params(self) -> int:
        return sum(p.size for p in self.params)


class Adam:
    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        if self.lr == 0.0:
            return
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {"t": self.t, "m": self.m, "v": self.v}


def clip_grad_norm(grads, max_norm: float):
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm


class RunningNorm:
    """Running mean/variance (parallel Welford merge) for observation normalization."""

    def __init__(self, dim: int, clip: float = 10.0):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip

    def update(self, x) -> None:
        x = np.asarray(x, float).reshape(-1, self.mean.size)
        b_mean = x.mean(0)
        b_var = x.var(0)
        b_n = x.shape[0]
        delta = b_mean - self.mean
        tot = self.count + b_n
        self.mean = self.mean + delta * b_n / tot
        m2 = self.var * self.count + b_var * b_n + delta * delta * self.count * b_n / tot
        self.var = m2 / tot
        self.count = tot

    def __call__(self, x):
        return np.clip((x - self.mean) / np.sqrt(self.var + 1e-8), -self.clip, self.clip)
