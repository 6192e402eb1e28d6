"""Minimal neural-network layer kit with hand-derived forward and backward passes.

Every layer computes its own exact gradients; there is no autodiff graph.
Activations are channels-last: fully-connected layers take ``(N, features)``,
spatial layers take ``(N, H, W, C)``. All math preserves the input dtype, so
the same code runs in float32 for training and float64 for gradient checks.

Convolutions use cross-correlation semantics (no kernel flip). The transposed
convolution is implemented literally as the adjoint of the matching strided
convolution, which makes the inner-product adjoint test exact.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import DimensionError, StateError

Array = np.ndarray


# ---------------------------------------------------------------------------
# convolution arithmetic (shared by Conv2d and UpConv2d)
# ---------------------------------------------------------------------------

def _out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _conv_forward(x: Array, w: Array, stride: int, pad: int) -> Array:
    """Cross-correlate ``x (N,H,W,Ci)`` with ``w (Co,Ci,k,k)`` -> ``(N,Ho,Wo,Co)``.

    One GEMM per kernel tap. For stride 1 the GEMM runs over the whole padded
    array and taps are combined with shifted-view adds, which avoids strided
    gather copies.
    """
    n, h, wd, ci = x.shape
    co, ci_w, k, _ = w.shape
    if ci_w != ci:
        raise DimensionError(f"conv input has {ci} channels, kernel expects {ci_w}")
    ho = _out_size(h, k, stride, pad)
    wo = _out_size(wd, k, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    wt = np.ascontiguousarray(w.transpose(2, 3, 1, 0))  # (k,k,Ci,Co)
    if stride == 1:
        hp, wp = h + 2 * pad, wd + 2 * pad
        xf = xp.reshape(-1, ci)
        y = np.zeros((n, ho, wo, co), x.dtype)
        for ki in range(k):
            for kj in range(k):
                contrib = (xf @ wt[ki, kj]).reshape(n, hp, wp, co)
                y += contrib[:, ki:ki + ho, kj:kj + wo, :]
        return y
    acc = np.zeros((n * ho * wo, co), x.dtype)
    for ki in range(k):
        for kj in range(k):
            xs = np.ascontiguousarray(
                xp[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride, :])
            acc += xs.reshape(-1, ci) @ wt[ki, kj]
    return acc.reshape(n, ho, wo, co)


def _conv_input_grad(g: Array, w: Array, in_hw: tuple[int, int],
                     stride: int, pad: int) -> Array:
    """Adjoint of :func:`_conv_forward` with respect to its input."""
    n, ho, wo, co = g.shape
    co_w, ci, k, _ = w.shape
    if co_w != co:
        raise DimensionError(f"upstream has {co} channels, kernel expects {co_w}")
    h, wd = in_hw
    gx = np.zeros((n, h + 2 * pad, wd + 2 * pad, ci), g.dtype)
    wt = np.ascontiguousarray(w.transpose(2, 3, 0, 1))  # (k,k,Co,Ci)
    gf = g.reshape(-1, co)
    for ki in range(k):
        for kj in range(k):
            contrib = (gf @ wt[ki, kj]).reshape(n, ho, wo, ci)
            gx[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride, :] += contrib
    return gx[:, pad:pad + h, pad:pad + wd, :]


def _conv_weight_grad(g: Array, x: Array, kernel: int, stride: int, pad: int) -> Array:
    """Gradient of :func:`_conv_forward` with respect to ``w`` -> ``(Co,Ci,k,k)``."""
    n, ho, wo, co = g.shape
    ci = x.shape[3]
    gf = g.reshape(-1, co)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    gw = np.empty((co, ci, kernel, kernel), x.dtype)
    for ki in range(kernel):
        for kj in range(kernel):
            xs = np.ascontiguousarray(
                xp[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride, :])
            gw[:, :, ki, kj] = gf.T @ xs.reshape(-1, ci)
    return gw


# ---------------------------------------------------------------------------
# weight initialization
# ---------------------------------------------------------------------------

def _uniform_init(shape: tuple[int, ...], fan_in: int, fan_out: int,
                  scheme: str, rng: np.random.Generator) -> Array:
    if scheme == "he":
        limit = np.sqrt(6.0 / fan_in)
    elif scheme == "xavier":
        limit = np.sqrt(6.0 / (fan_in + fan_out))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class FullyConnected:
    """Dense layer: ``y = x @ W.T + b`` with ``W`` of shape (out, in)."""

    kind = "fully-connected"

    def __init__(self, in_features: int, out_features: int, *,
                 rng: np.random.Generator | None = None, init: str = "he"):
        self.in_features = in_features
        self.out_features = out_features
        if rng is None:
            self.weights = np.zeros((out_features, in_features), np.float32)
        else:
            self.weights = _uniform_init((out_features, in_features),
                                         in_features, out_features, init, rng)
        self.bias = np.zeros(out_features, np.float32)

    @property
    def params(self):
        return (self.weights, self.bias)

    def describe(self):
        return {"kind": self.kind, "in": self.in_features, "out": self.out_features}

    def forward(self, x: Array, *, train: bool = False,
                rng: np.random.Generator | None = None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(
                f"expected (N, {self.in_features}) input, got {x.shape}")
        return x @ self.weights.T.astype(x.dtype) + self.bias.astype(x.dtype), x

    def backward(self, g: Array, cache, *, need_param_grads: bool = True):
        if cache is None:
            raise StateError("fully-connected backward requires the forward cache")
        x = cache
        gx = g @ self.weights.astype(g.dtype)
        if not need_param_grads:
            return gx, ()
        return gx, (g.T @ x, g.sum(axis=0))

    def astype(self, dtype):
        out = FullyConnected(self.in_features, self.out_features)
        out.weights = self.weights.astype(dtype)
        out.bias = self.bias.astype(dtype)
        return out


class Conv2d:
    """3x3 stride-1 pad-1 convolution (architecture constants, overridable)."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, *,
                 kernel: int = 3, stride: int = 1, pad: int = 1,
                 rng: np.random.Generator | None = None, init: str = "he"):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        shape = (out_channels, in_channels, kernel, kernel)
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        if rng is None:
            self.weights = np.zeros(shape, np.float32)
        else:
            self.weights = _uniform_init(shape, fan_in, fan_out, init, rng)
        self.bias = np.zeros(out_channels, np.float32)

    @property
    def params(self):
        return (self.weights, self.bias)

    def describe(self):
        return {"kind": self.kind, "in": self.in_channels, "out": self.out_channels,
                "kernel": self.kernel, "stride": self.stride, "pad": self.pad}

    def forward(self, x: Array, *, train: bool = False,
                rng: np.random.Generator | None = None):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise DimensionError(
                f"expected (N,H,W,{self.in_channels}) input, got {x.shape}")
        y = _conv_forward(x, self.weights.astype(x.dtype), self.stride, self.pad)
        return y + self.bias.astype(x.dtype), x

    def backward(self, g: Array, cache, *, need_param_grads: bool = True):
        if cache is None:
            raise StateError("conv2d backward requires the forward cache")
        x = cache
        w = self.weights.astype(g.dtype)
        gx = _conv_input_grad(g, w, x.shape[1:3], self.stride, self.pad)
        if not need_param_grads:
            return gx, ()
        gw = _conv_weight_grad(g, x, self.kernel, self.stride, self.pad)
        return gx, (gw, g.sum(axis=(0, 1, 2)))

    def astype(self, dtype):
        out = Conv2d(self.in_channels, self.out_channels, kernel=self.kernel,
                     stride=self.stride, pad=self.pad)
        out.weights = self.weights.astype(dtype)
        out.bias = self.bias.astype(dtype)
        return out


class UpConv2d:
    """4x4 stride-2 pad-1 transposed convolution: exact adjoint of the
    matching strided convolution, so the output spatial size is (2H, 2W).

    Weights are stored as ``(Ci, Co, k, k)``, i.e. the weight tensor of the
    strided convolution this layer is the transpose of.
    """

    kind = "upconv2d"

    def __init__(self, in_channels: int, out_channels: int, *,
                 kernel: int = 4, stride: int = 2, pad: int = 1,
                 rng: np.random.Generator | None = None, init: str = "he"):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        shape = (in_channels, out_channels, kernel, kernel)
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        if rng is None:
            self.weights = np.zeros(shape, np.float32)
        else:
            self.weights = _uniform_init(shape, fan_in, fan_out, init, rng)
        self.bias = np.zeros(out_channels, np.float32)

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        s, k, p = self.stride, self.kernel, self.pad
        return s * (h - 1) + k - 2 * p, s * (w - 1) + k - 2 * p

    @property
    def params(self):
        return (self.weights, self.bias)

    def describe(self):
        return {"kind": self.kind, "in": self.in_channels, "out": self.out_channels,
                "kernel": self.kernel, "stride": self.stride, "pad": self.pad}

    def forward(self, x: Array, *, train: bool = False,
                rng: np.random.Generator | None = None):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise DimensionError(
                f"expected (N,H,W,{self.in_channels}) input, got {x.shape}")
        w = self.weights.astype(x.dtype)
        y = _conv_input_grad(x, w, self.out_hw(*x.shape[1:3]), self.stride, self.pad)
        return y + self.bias.astype(x.dtype), x

    def backward(self, g: Array, cache, *, need_param_grads: bool = True):
        if cache is None:
            raise StateError("upconv2d backward requires the forward cache")
        x = cache
        w = self.weights.astype(g.dtype)
        gx = _conv_forward(g, w, self.stride, self.pad)
        if not need_param_grads:
            return gx, ()
        gw = _conv_weight_grad(x, g, self.kernel, self.stride, self.pad)
        return gx, (gw, g.sum(axis=(0, 1, 2)))

    def astype(self, dtype):
        out = UpConv2d(self.in_channels, self.out_channels, kernel=self.kernel,
                       stride=self.stride, pad=self.pad)
        out.weights = self.weights.astype(dtype)
        out.bias = self.bias.astype(dtype)
        return out


class ReLU:
    kind = "relu"
    params = ()

    def describe(self):
        return {"kind": self.kind}

    def forward(self, x, *, train=False, rng=None):
        return np.maximum(x, 0), x > 0

    def backward(self, g, cache, *, need_param_grads=True):
        if cache is None:
            raise StateError("relu backward requires the forward cache")
        return g * cache, ()


class Sigmoid:
    """Logistic activation, clipped away from the saturation endpoints so
    outputs stay strictly inside (0, 1) in the working dtype."""

    kind = "sigmoid"
    params = ()

    def describe(self):
        return {"kind": self.kind}

    def forward(self, x, *, train=False, rng=None):
        y = expit(x)
        one = x.dtype.type(1)
        y = np.clip(y, np.finfo(x.dtype).tiny, np.nextafter(one, x.dtype.type(0)))
        return y, y

    def backward(self, g, cache, *, need_param_grads=True):
        if cache is None:
            raise StateError("sigmoid backward requires the forward cache")
        y = cache
        return g * y * (1 - y), ()


class Dropout:
    """Inverted dropout: train mode zeroes with probability ``rate`` and
    scales survivors by 1/(1-rate); eval mode is the identity."""

    kind = "dropout"
    params = ()

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0,1), got {rate}")
        self.rate = rate

    def describe(self):
        return {"kind": self.kind, "rate": self.rate}

    def forward(self, x, *, train=False, rng=None):
        if not train or self.rate == 0.0:
            return x, None
        if rng is None:
            raise StateError("dropout in train mode requires an rng")
        keep = (rng.random(x.shape) >= self.rate).astype(x.dtype)
        keep /= x.dtype.type(1 - self.rate)
        return x * keep, keep

    def backward(self, g, cache, *, need_param_grads=True):
        if cache is None:  # eval mode
            return g, ()
        return g * cache, ()


class Reshape:
    kind = "reshape"
    params = ()

    def __init__(self, target: tuple[int, ...]):
        self.target = tuple(target)

    def describe(self):
        return {"kind": self.kind, "target": list(self.target)}

    def forward(self, x, *, train=False, rng=None):
        n = x.shape[0]
        if int(np.prod(x.shape[1:])) != int(np.prod(self.target)):
            raise DimensionError(
                f"cannot reshape {x.shape[1:]} to {self.target}")
        return x.reshape((n,) + self.target), x.shape

    def backward(self, g, cache, *, need_param_grads=True):
        if cache is None:
            raise StateError("reshape backward requires the forward cache")
        return g.reshape(cache), ()


# ---------------------------------------------------------------------------
# loss and optimizer
# ---------------------------------------------------------------------------

def mse_loss(pred: Array, target: Array) -> tuple[float, Array]:
    """Mean squared error and its gradient ``2*(pred-target)/N``."""
    if pred.shape != target.shape:
        raise DimensionError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    return loss, diff * pred.dtype.type(2.0 / diff.size)


class Adam:
    """Adam with bias correction and a stepwise exponential lr schedule.

    The effective learning rate for update number ``t`` (1-based) is
    ``lr * decay ** (t // decay_interval)``; ``decay_interval == 0`` disables
    the schedule. Defaults beta1=0.9, beta2=0.999, eps=1e-8.
    """

    def __init__(self, params: list[Array], lr: float, *, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 decay: float = 1.0, decay_interval: int = 0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.decay = decay
        self.decay_interval = decay_interval
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def effective_lr(self, step: int) -> float:
        if self.decay_interval <= 0:
            return self.lr
        return self.lr * self.decay ** (step // self.decay_interval)

    def step(self, params: list[Array], grads: list[Array]) -> None:
        """Update ``params`` in place from ``grads`` (same order and shapes)."""
        if len(params) != len(self.m):
            raise DimensionError("parameter count does not match optimizer state")
        t = self.step_count + 1
        lr_t = self.effective_lr(t)
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise DimensionError(
                    f"gradient shape {g.shape} does not match parameter {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (lr_t * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
        self.step_count = t


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def max_relative_error(actual: Array, expected: Array) -> float:
    """Max absolute deviation normalized by the oracle's max magnitude."""
    scale = max(float(np.max(np.abs(expected))), 1e-12)
    return float(np.max(np.abs(actual - expected))) / scale


def finite_diff_grad(f, x: Array, eps: float = 1e-5) -> Array:
    """Central finite differences of a scalar function at x (64-bit)."""
    x = x.astype(np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * eps)
    return g


def check_layer_gradients(layer, x: Array, rng: np.random.Generator,
                          eps: float = 1e-5) -> dict[str, float]:
    """Finite-difference check of a layer's input and parameter gradients.

    Runs in float64 with a linear probe loss ``sum(r * y)`` whose upstream
    gradient is exactly ``r``. Returns the max relative error per gradient.
    """
    layer64 = layer.astype(np.float64) if layer.params else layer
    x = x.astype(np.float64)
    y0, _ = layer64.forward(x)
    probe = rng.standard_normal(y0.shape)

    def loss_of_input(xv):
        y, _ = layer64.forward(xv)
        return float(np.sum(probe * y))

    y, cache = layer64.forward(x)
    gx, pgrads = layer64.backward(probe, cache)
    errors = {"input": max_relative_error(gx, finite_diff_grad(loss_of_input, x, eps))}

    names = ("weights", "bias")
    for idx, (pname, analytic) in enumerate(zip(names, pgrads)):

        def loss_of_param(pv, _idx=idx):
            saved = layer64.params[_idx].copy()
            layer64.params[_idx][...] = pv
            yv, _ = layer64.forward(x)
            layer64.params[_idx][...] = saved
            return float(np.sum(probe * yv))

        fd = finite_diff_grad(loss_of_param, layer64.params[idx], eps)
        errors[pname] = max_relative_error(analytic, fd)
    return errors
