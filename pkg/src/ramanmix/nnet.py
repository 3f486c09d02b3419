"""Minimal differentiable-layer kernel: forward/backward pairs plus Adam.

Static per-layer forward/backward implementations composed explicitly by the
autoencoder module; there is no general tape. All tensors are float64 numpy
arrays. Dense layers operate on the last axis, so the same layer code serves
both flat batches (B, F) and token batches (B, T, F).

Layers cache what their backward pass needs during forward; a layer instance
therefore belongs to exactly one training run at a time.
"""

from __future__ import annotations

import numpy as np


class NumericalError(Exception):
    """Non-finite values or solver breakdown inside numerical code."""


# ---------------------------------------------------------------------------
# activations (functional forms)

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def leaky_relu(x: np.ndarray, slope: float = 0.02) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def softmax(x: np.ndarray) -> np.ndarray:
    """Softmax along the last axis; rows sum to 1 and are strictly positive."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def soft_rect_tanh(x: np.ndarray, gamma: float = 10.0) -> np.ndarray:
    """Softly-rectified tanh: log(1 + exp(gamma * tanh(x))) / gamma.

    Monotone, with range (log(1+e^-gamma)/gamma, log(1+e^gamma)/gamma),
    i.e. a hair above 0 to a hair above 1 for gamma = 10.
    """
    return np.logaddexp(0.0, gamma * np.tanh(x)) / gamma


def soft_rect_tanh_grad(x: np.ndarray, gamma: float = 10.0) -> np.ndarray:
    t = np.tanh(x)
    sig = 1.0 / (1.0 + np.exp(np.clip(-gamma * t, -60.0, 60.0)))
    return sig * (1.0 - t * t)


def clip_nonnegative(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, 0.0)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int
                   ) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _check_finite(arr: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values produced in {where}")
    return arr


# ---------------------------------------------------------------------------
# layers

class Layer:
    """Forward/backward pair with named parameters and matching gradients."""

    trainable = True

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return []

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        return []

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Dense(Layer):
    """Affine map on the last axis: y = x @ W + b."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 use_bias: bool = True):
        self.n_in = n_in
        self.n_out = n_out
        self.W = glorot_uniform(rng, (n_in, n_out), n_in, n_out)
        self.b = np.zeros(n_out) if use_bias else None
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros(n_out) if use_bias else None
        self._cache = None

    def parameters(self):
        out = [("W", self.W)]
        if self.b is not None:
            out.append(("b", self.b))
        return out

    def gradients(self):
        out = [("W", self.gW)]
        if self.b is not None:
            out.append(("b", self.gb))
        return out

    def forward(self, x, train=False, rng=None):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"dense expects last dim {self.n_in}, got {x.shape[-1]}")
        self._cache = x
        y = x @ self.W
        if self.b is not None:
            y = y + self.b
        return _check_finite(y, "dense forward")

    def backward(self, grad_out):
        x = self._cache
        x2 = x.reshape(-1, self.n_in)
        g2 = grad_out.reshape(-1, self.n_out)
        self.gW[...] = x2.T @ g2
        if self.b is not None:
            self.gb[...] = g2.sum(axis=0)
        return (g2 @ self.W.T).reshape(x.shape)


class Conv1D(Layer):
    """Length-preserving 1-D convolution with zero padding, odd kernel."""

    def __init__(self, n_in: int, n_out: int, kernel: int,
                 rng: np.random.Generator):
        if kernel % 2 == 0:
            raise ValueError("kernel size must be odd to preserve length")
        self.n_in = n_in
        self.n_out = n_out
        self.kernel = kernel
        fan_in = kernel * n_in
        fan_out = kernel * n_out
        self.W = glorot_uniform(rng, (kernel, n_in, n_out), fan_in, fan_out)
        self.b = np.zeros(n_out)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def parameters(self):
        return [("W", self.W), ("b", self.b)]

    def gradients(self):
        return [("W", self.gW), ("b", self.gb)]

    def forward(self, x, train=False, rng=None):
        # x: (B, L, C_in)
        if x.ndim != 3 or x.shape[-1] != self.n_in:
            raise ValueError(f"conv1d expects (B, L, {self.n_in}), got {x.shape}")
        pad = self.kernel // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        windows = np.lib.stride_tricks.sliding_window_view(xp, self.kernel, axis=1)
        # windows: (B, L, C_in, K); contract K and C_in against W (K, C_in, C_out)
        y = np.tensordot(windows, self.W, axes=([3, 2], [0, 1])) + self.b
        self._cache = (windows, x.shape)
        return _check_finite(y, "conv1d forward")

    def backward(self, grad_out):
        windows, x_shape = self._cache
        B, L, _ = x_shape
        pad = self.kernel // 2
        gW = np.tensordot(windows, grad_out, axes=([0, 1], [0, 1]))  # (C_in, K, C_out)
        self.gW[...] = gW.transpose(1, 0, 2)
        self.gb[...] = grad_out.sum(axis=(0, 1))
        gx_pad = np.zeros((B, L + 2 * pad, self.n_in))
        for k in range(self.kernel):
            gx_pad[:, k:k + L, :] += grad_out @ self.W[k].T
        return gx_pad[:, pad:pad + L, :]


class LayerNorm(Layer):
    """Normalization over the last axis with learnable gain and bias."""

    def __init__(self, n_features: int, eps: float = 1e-6):
        self.n_features = n_features
        self.eps = eps
        self.gamma = np.ones(n_features)
        self.beta = np.zeros(n_features)
        self.ggamma = np.zeros_like(self.gamma)
        self.gbeta = np.zeros_like(self.beta)
        self._cache = None

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def gradients(self):
        return [("gamma", self.ggamma), ("beta", self.gbeta)]

    def forward(self, x, train=False, rng=None):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv_std
        self._cache = (xhat, inv_std)
        return _check_finite(self.gamma * xhat + self.beta, "layernorm forward")

    def backward(self, grad_out):
        xhat, inv_std = self._cache
        axes = tuple(range(grad_out.ndim - 1))
        self.ggamma[...] = (grad_out * xhat).sum(axis=axes)
        self.gbeta[...] = grad_out.sum(axis=axes)
        gxhat = grad_out * self.gamma
        mean_g = gxhat.mean(axis=-1, keepdims=True)
        mean_gx = (gxhat * xhat).mean(axis=-1, keepdims=True)
        return inv_std * (gxhat - mean_g - xhat * mean_gx)


class Dropout(Layer):
    """Inverted dropout: identity at inference, seeded mask in training."""

    trainable = False

    def __init__(self, rate: float):
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self._mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad_out):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask


class Activation(Layer):
    """Element-wise nonlinearity (softmax acts along the last axis)."""

    trainable = False
    KINDS = ("relu", "leaky_relu", "softmax", "soft_rect_tanh", "identity")

    def __init__(self, kind: str, param: float = None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind
        if kind == "leaky_relu":
            self.param = 0.02 if param is None else param
        elif kind == "soft_rect_tanh":
            self.param = 10.0 if param is None else param
        else:
            self.param = None
        self._cache = None

    def forward(self, x, train=False, rng=None):
        if self.kind == "relu":
            self._cache = x
            return relu(x)
        if self.kind == "leaky_relu":
            self._cache = x
            return leaky_relu(x, self.param)
        if self.kind == "softmax":
            y = softmax(x)
            self._cache = y
            return y
        if self.kind == "soft_rect_tanh":
            self._cache = x
            return soft_rect_tanh(x, self.param)
        self._cache = None
        return x

    def backward(self, grad_out):
        if self.kind == "relu":
            return grad_out * (self._cache > 0)
        if self.kind == "leaky_relu":
            return grad_out * np.where(self._cache >= 0, 1.0, self.param)
        if self.kind == "softmax":
            y = self._cache
            return y * (grad_out - (grad_out * y).sum(axis=-1, keepdims=True))
        if self.kind == "soft_rect_tanh":
            return grad_out * soft_rect_tanh_grad(self._cache, self.param)
        return grad_out


class MultiHeadAttention(Layer):
    """Scaled dot-product self-attention over token sequences (B, T, F)."""

    def __init__(self, n_features: int, n_heads: int, head_dim: int,
                 rng: np.random.Generator):
        self.n_features = n_features
        self.n_heads = n_heads
        self.head_dim = head_dim
        inner = n_heads * head_dim
        self.Wq = glorot_uniform(rng, (n_features, inner), n_features, inner)
        self.Wk = glorot_uniform(rng, (n_features, inner), n_features, inner)
        self.Wv = glorot_uniform(rng, (n_features, inner), n_features, inner)
        self.Wo = glorot_uniform(rng, (inner, n_features), inner, n_features)
        self.bq = np.zeros(inner)
        self.bk = np.zeros(inner)
        self.bv = np.zeros(inner)
        self.bo = np.zeros(n_features)
        for name in ("Wq", "Wk", "Wv", "Wo", "bq", "bk", "bv", "bo"):
            setattr(self, "g" + name, np.zeros_like(getattr(self, name)))
        self._cache = None

    def parameters(self):
        return [(n, getattr(self, n))
                for n in ("Wq", "Wk", "Wv", "Wo", "bq", "bk", "bv", "bo")]

    def gradients(self):
        return [(n, getattr(self, "g" + n))
                for n in ("Wq", "Wk", "Wv", "Wo", "bq", "bk", "bv", "bo")]

    def _split(self, x):
        B, T, _ = x.shape
        return x.reshape(B, T, self.n_heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge(self, x):
        B, H, T, D = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, T, H * D)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 3 or x.shape[-1] != self.n_features:
            raise ValueError(f"attention expects (B, T, {self.n_features}), got {x.shape}")
        Q = self._split(x @ self.Wq + self.bq)
        K = self._split(x @ self.Wk + self.bk)
        V = self._split(x @ self.Wv + self.bv)
        scale = 1.0 / np.sqrt(self.head_dim)
        scores = (Q @ K.transpose(0, 1, 3, 2)) * scale
        attn = softmax(scores)
        ctx = attn @ V
        out = self._merge(ctx) @ self.Wo + self.bo
        self._cache = (x, Q, K, V, attn)
        return _check_finite(out, "attention forward")

    def backward(self, grad_out):
        x, Q, K, V, attn = self._cache
        B, T, F = x.shape
        scale = 1.0 / np.sqrt(self.head_dim)
        ctx = attn @ V
        ctx_m = self._merge(ctx)
        g2 = grad_out.reshape(-1, F)
        self.gWo[...] = ctx_m.reshape(-1, ctx_m.shape[-1]).T @ g2
        self.gbo[...] = g2.sum(axis=0)
        g_ctx = self._split(grad_out @ self.Wo.T)
        g_attn = g_ctx @ V.transpose(0, 1, 3, 2)
        gV = attn.transpose(0, 1, 3, 2) @ g_ctx
        g_scores = attn * (g_attn - (g_attn * attn).sum(axis=-1, keepdims=True))
        g_scores *= scale
        gQ = g_scores @ K
        gK = g_scores.transpose(0, 1, 3, 2) @ Q
        x2 = x.reshape(-1, F)

        def proj_back(g_heads, W, gW_name, gb_name):
            g_m = self._merge(g_heads)
            gm2 = g_m.reshape(-1, g_m.shape[-1])
            getattr(self, gW_name)[...] = x2.T @ gm2
            getattr(self, gb_name)[...] = gm2.sum(axis=0)
            return g_m @ W.T

        gx = proj_back(gQ, self.Wq, "gWq", "gbq")
        gx += proj_back(gK, self.Wk, "gWk", "gbk")
        gx += proj_back(gV, self.Wv, "gWv", "gbv")
        return gx


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Bias-corrected Adam over a fixed list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("moment decays must lie in [0, 1)")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.params = params
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
