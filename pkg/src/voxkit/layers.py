"""Stateful layers with manual forward/backward and parameter bookkeeping.

Each layer owns its parameters inside a shared :class:`ParameterSet` and
caches whatever the matching backward pass needs. backward() accumulates
parameter gradients in place and returns the gradient w.r.t. the layer
input. Caches are consumed by backward, so calling backward twice for one
forward raises.
"""

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, StateError, TrainingError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def kaiming_uniform(rng, shape, fan_in):
    """ReLU-gain uniform init: U(-sqrt(6/fan_in), sqrt(6/fan_in))."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Parameter:
    __slots__ = ("name", "value", "grad", "trainable")

    def __init__(self, name, value, trainable=True):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=T.DTYPE)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.value.shape}, trainable={self.trainable})"


class ParameterSet:
    """Ordered, uniquely named collection of parameters and buffers."""

    def __init__(self):
        self._params = {}

    def add(self, name, value, trainable=True):
        if name in self._params:
            raise ContractError(f"duplicate parameter name: {name}")
        p = Parameter(name, value, trainable)
        self._params[name] = p
        return p

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return list(self._params)

    def trainable(self):
        return [p for p in self._params.values() if p.trainable]

    def zero_grads(self):
        for p in self._params.values():
            p.grad[...] = 0.0

    def global_grad_norm(self):
        sq = 0.0
        for p in self.trainable():
            sq += float(np.sum(p.grad * p.grad))
        return np.sqrt(sq)

    def state(self):
        """Ordered (name, value) pairs, buffers included."""
        return [(p.name, p.value) for p in self._params.values()]


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def same_padding(kernel):
    return ((kernel[0] - 1) // 2, (kernel[1] - 1) // 2)


class Conv2DLayer:
    def __init__(self, params, name, in_ch, out_ch, kernel=(3, 3), stride=(1, 1),
                 padding="same", rng=None, bias=True):
        # a conv feeding a normalization layer should set bias=False: the
        # norm cancels any per-channel constant, leaving a dead parameter
        kh, kw = kernel
        self.stride = tuple(stride)
        self.padding = same_padding(kernel) if padding == "same" else tuple(padding)
        rng = rng or np.random.default_rng(0)
        fan_in = in_ch * kh * kw
        self.weight = params.add(f"{name}.weight",
                                 kaiming_uniform(rng, (out_ch, in_ch, kh, kw), fan_in))
        self.bias = params.add(f"{name}.bias", np.zeros(out_ch)) if bias else None
        self._x = None

    def forward(self, x, mode="train"):
        self._x = x
        y = T.conv2d(x, self.weight.value, self.stride, self.padding)
        if self.bias is not None:
            y = y + self.bias.value[None, :, None, None]
        return y

    def backward(self, grad_out):
        if self._x is None:
            raise StateError("Conv2DLayer.backward called without cached forward")
        gx, gw = T.conv2d_backward(self._x, self.weight.value, grad_out,
                                   self.stride, self.padding)
        self.weight.grad += gw
        if self.bias is not None:
            self.bias.grad += grad_out.sum(axis=(0, 2, 3))
        self._x = None
        return gx


class BatchNorm2D:
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes with batch statistics and updates the running
    buffers; eval mode is a pure function of the running statistics and
    never mutates them.
    """

    def __init__(self, params, name, channels, eps=BN_EPS, momentum=BN_MOMENTUM):
        self.eps = eps
        self.momentum = momentum
        self.gamma = params.add(f"{name}.gamma", np.ones(channels))
        self.beta = params.add(f"{name}.beta", np.zeros(channels))
        self.running_mean = params.add(f"{name}.running_mean", np.zeros(channels),
                                       trainable=False)
        self.running_var = params.add(f"{name}.running_var", np.ones(channels),
                                      trainable=False)
        self._cache = None

    def forward(self, x, mode="train"):
        if x.ndim != 4 or x.shape[1] != self.gamma.value.shape[0]:
            raise DimensionError(
                f"BatchNorm2D expects (N,{self.gamma.value.shape[0]},H,W), got {x.shape}")
        if mode == "train":
            n, _, h, w = x.shape
            m = n * h * w
            if m < 2:
                raise ContractError(
                    "BatchNorm2D train mode needs batch*H*W >= 2 (degenerate statistics)")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))  # population variance
            ivar = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean[None, :, None, None]) * ivar[None, :, None, None]
            self.running_mean.value[...] = (1 - self.momentum) * self.running_mean.value \
                + self.momentum * mean
            self.running_var.value[...] = (1 - self.momentum) * self.running_var.value \
                + self.momentum * var
            self._cache = ("train", xhat, ivar, m)
        else:
            ivar = 1.0 / np.sqrt(self.running_var.value + self.eps)
            xhat = (x - self.running_mean.value[None, :, None, None]) * ivar[None, :, None, None]
            self._cache = ("eval", xhat, ivar, None)
        return self.gamma.value[None, :, None, None] * xhat + self.beta.value[None, :, None, None]

    def backward(self, grad_out):
        if self._cache is None:
            raise StateError("BatchNorm2D.backward called without cached forward")
        mode, xhat, ivar, m = self._cache
        self._cache = None
        g = grad_out
        self.beta.grad += g.sum(axis=(0, 2, 3))
        self.gamma.grad += (g * xhat).sum(axis=(0, 2, 3))
        gxhat = g * self.gamma.value[None, :, None, None]
        if mode == "eval":
            return gxhat * ivar[None, :, None, None]
        # full train-mode Jacobian through the batch statistics
        sum_gxhat = gxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        sum_gxhat_xhat = (gxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        return (ivar[None, :, None, None] / m) * (m * gxhat - sum_gxhat - xhat * sum_gxhat_xhat)


class FullyConnected:
    """Affine map on the last axis: y = x @ W.T + b, weight shape (out, in)."""

    def __init__(self, params, name, in_features, out_features, rng=None,
                 init_scale=1.0, bias=True):
        # bias=False for maps whose constant offset is cancelled downstream
        # (e.g. scores fed into a softmax), where it would be untrainable
        rng = rng or np.random.default_rng(0)
        w = kaiming_uniform(rng, (out_features, in_features), in_features) * init_scale
        self.weight = params.add(f"{name}.weight", w)
        self.bias = params.add(f"{name}.bias", np.zeros(out_features)) if bias else None
        self._x = None

    def forward(self, x, mode="train"):
        if x.shape[-1] != self.weight.value.shape[1]:
            raise DimensionError(
                f"FullyConnected expects last axis {self.weight.value.shape[1]}, got {x.shape}")
        self._x = x
        x2 = x.reshape(-1, x.shape[-1])
        y = T.matmul(x2, self.weight.value.T)
        if self.bias is not None:
            y = y + self.bias.value
        return y.reshape(x.shape[:-1] + (self.weight.value.shape[0],))

    def backward(self, grad_out):
        if self._x is None:
            raise StateError("FullyConnected.backward called without cached forward")
        x = self._x
        self._x = None
        g2 = grad_out.reshape(-1, grad_out.shape[-1])
        x2 = x.reshape(-1, x.shape[-1])
        self.weight.grad += T.matmul(g2.T, x2)
        if self.bias is not None:
            self.bias.grad += g2.sum(axis=0)
        gx = T.matmul(g2, self.weight.value)
        return gx.reshape(x.shape)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

def _check_grads_finite(params):
    for p in params.trainable():
        if not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in parameter '{p.name}'")


def clip_grad_norm(params, max_norm):
    """Scale all trainable gradients so the global L2 norm is <= max_norm."""
    norm = params.global_grad_norm()
    if max_norm is not None and norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params.trainable():
            p.grad *= scale
    return norm


def sgd_step(params, lr, grad_clip=5.0):
    """p <- p - lr * clip(g); gradients are zeroed afterwards."""
    if lr < 0:
        raise ContractError(f"learning rate must be >= 0, got {lr}")
    _check_grads_finite(params)
    clip_grad_norm(params, grad_clip)
    for p in params.trainable():
        p.value -= lr * p.grad
    params.zero_grads()


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, grad_clip=5.0):
        if lr < 0:
            raise ContractError(f"learning rate must be >= 0, got {lr}")
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self._m = {p.name: np.zeros_like(p.value) for p in params.trainable()}
        self._v = {p.name: np.zeros_like(p.value) for p in params.trainable()}

    def step(self):
        _check_grads_finite(self.params)
        clip_grad_norm(self.params, self.grad_clip)
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p in self.params.trainable():
            m = self._m[p.name]
            v = self._v[p.name]
            m[...] = self.b1 * m + (1 - self.b1) * p.grad
            v[...] = self.b2 * v + (1 - self.b2) * p.grad * p.grad
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.params.zero_grads()
