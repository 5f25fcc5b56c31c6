"""Small feedforward networks with hand-written backprop, in float64 numpy.

The dynamics nets carry two linear heads on a shared tanh trunk: a mean head
and a log-variance head.  Log-variance is soft-clamped into
[logvar_min, logvar_max] with a pair of softplus folds, so the map stays
differentiable everywhere (hard clamps would break finite-difference
gradient checks right at the boundary).  tanh is the fixed trunk
nonlinearity for the same reason: smooth everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathcore import RngStream


def softplus(z):
    # log(1 + e^z), overflow-safe
    return np.logaddexp(0.0, z)


def sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def soft_clamp(raw, lo, hi):
    """Smoothly squash `raw` into (lo, hi); identity-like deep inside the range."""
    u = hi - softplus(hi - raw)
    return lo + softplus(u - lo)


def soft_clamp_grad(raw, lo, hi):
    """d soft_clamp / d raw, elementwise."""
    u = hi - softplus(hi - raw)
    return sigmoid(u - lo) * sigmoid(hi - raw)


@dataclass
class Layer:
    W: np.ndarray  # (n_in, n_out)
    b: np.ndarray  # (n_out,)


def _glorot(n_in: int, n_out: int, gen: np.random.Generator) -> Layer:
    limit = np.sqrt(6.0 / (n_in + n_out))
    W = gen.uniform(-limit, limit, size=(n_in, n_out)).astype(np.float64)
    return Layer(W=W, b=np.zeros(n_out, dtype=np.float64))


class FeedforwardNet:
    """tanh MLP trunk with a mean head and (optionally) a log-variance head.

    forward(x) -> mean                        if not probabilistic
    forward(x) -> (mean, logvar)              if probabilistic, logvar soft-clamped
    """

    def __init__(self, in_dim, hidden, out_dim, *, probabilistic, rng: RngStream,
                 logvar_min=-10.0, logvar_max=4.0):
        self.in_dim = int(in_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.out_dim = int(out_dim)
        self.probabilistic = bool(probabilistic)
        self.logvar_min = float(logvar_min)
        self.logvar_max = float(logvar_max)
        gen = rng.gen
        widths = (self.in_dim,) + self.hidden
        self.layers = [_glorot(widths[i], widths[i + 1], gen) for i in range(len(self.hidden))]
        self.head_mean = _glorot(widths[-1], self.out_dim, gen)
        self.head_logvar = _glorot(widths[-1], self.out_dim, gen) if probabilistic else None

    # -- parameter plumbing ------------------------------------------------

    def param_arrays(self) -> list[np.ndarray]:
        arrs = []
        for layer in self.layers:
            arrs += [layer.W, layer.b]
        arrs += [self.head_mean.W, self.head_mean.b]
        if self.head_logvar is not None:
            arrs += [self.head_logvar.W, self.head_logvar.b]
        return arrs

    def get_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.param_arrays()])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for a in self.param_arrays():
            a[...] = flat[i:i + a.size].reshape(a.shape)
            i += a.size
        if i != flat.size:
            raise ValueError(f"flat vector has {flat.size} entries, net needs {i}")

    # -- forward / backward --------------------------------------------------

    def _trunk(self, x):
        h = x
        acts = [h]
        for layer in self.layers:
            h = np.tanh(h @ layer.W + layer.b)
            acts.append(h)
        return acts

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        h = self._trunk(x)[-1]
        mean = h @ self.head_mean.W + self.head_mean.b
        if not self.probabilistic:
            return mean
        raw = h @ self.head_logvar.W + self.head_logvar.b
        return mean, soft_clamp(raw, self.logvar_min, self.logvar_max)

    def forward_cache(self, x):
        x = np.asarray(x, dtype=np.float64)
        acts = self._trunk(x)
        h = acts[-1]
        mean = h @ self.head_mean.W + self.head_mean.b
        if not self.probabilistic:
            return mean, None, acts
        raw = h @ self.head_logvar.W + self.head_logvar.b
        logvar = soft_clamp(raw, self.logvar_min, self.logvar_max)
        return mean, logvar, (acts, raw)

    def backward(self, cache, d_mean, d_logvar=None) -> list[np.ndarray]:
        """Exact gradients of a scalar loss wrt every parameter array.

        `d_mean` (and `d_logvar` for probabilistic nets) are the loss
        gradients wrt the head outputs, shape (n, out_dim).  Returned list is
        aligned with `param_arrays()`.
        """
        if self.probabilistic:
            acts, raw = cache
        else:
            acts = cache
        h = acts[-1]
        d_h = d_mean @ self.head_mean.W.T
        g_mean = [h.T @ d_mean, d_mean.sum(axis=0)]
        g_logvar = []
        if self.probabilistic:
            d_raw = d_logvar * soft_clamp_grad(raw, self.logvar_min, self.logvar_max)
            d_h = d_h + d_raw @ self.head_logvar.W.T
            g_logvar = [h.T @ d_raw, d_raw.sum(axis=0)]
        g_layers: list[np.ndarray] = []
        for k in range(len(self.layers) - 1, -1, -1):
            a_out, a_in = acts[k + 1], acts[k]
            d_z = d_h * (1.0 - a_out * a_out)  # tanh'
            g_layers[:0] = [a_in.T @ d_z, d_z.sum(axis=0)]
            d_h = d_z @ self.layers[k].W.T
        return g_layers + g_mean + g_logvar


class Adam:
    """Adaptive-moment gradient descent over a net's parameter arrays."""

    def __init__(self, net: FeedforwardNet, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.net = net
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in net.param_arrays()]
        self.v = [np.zeros_like(a) for a in net.param_arrays()]

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.net.param_arrays(), grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
