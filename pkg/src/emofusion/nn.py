"""Layer kernels and the convolutional network used on face crops.

All tensors are float64 numpy arrays in NHWC layout. Every forward kernel is a
pure function; the matching backward kernel takes the upstream gradient plus
the forward inputs (the "cache") and recomputes whatever it needs.  Single
images of shape ``(H, W, C)`` are accepted wherever a batch is.
"""
from dataclasses import dataclass, field, asdict

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigError, DimensionError, UsageError

# per-chunk ceiling for im2col buffers, in float64 elements (~64 MB)
_IM2COL_BUDGET = 8 * 1024 * 1024

LOG_CLIP = 1e-12


def _batched(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise DimensionError(f"expected an (H, W, C) or (N, H, W, C) tensor, got shape {x.shape}")
    return x, False


def _unbatch(x, single):
    return x[0] if single else x


# --------------------------------------------------------------------------
# convolution (stride 1, zero "same" padding)
# --------------------------------------------------------------------------

def _check_conv(x, weights, bias):
    if weights.ndim != 4 or weights.shape[0] != weights.shape[1]:
        raise DimensionError(f"conv weights must be (k, k, C, F), got {weights.shape}")
    k, _, c, f = weights.shape
    if k % 2 == 0:
        raise DimensionError(f"conv kernel size must be odd, got {k}")
    if x.shape[-1] != c:
        raise DimensionError(
            f"input has {x.shape[-1]} channels but weights expect {c}"
        )
    if bias is not None and np.shape(bias) != (f,):
        raise DimensionError(f"conv bias must have shape ({f},), got {np.shape(bias)}")


def _chunks(n, per_item):
    step = max(1, _IM2COL_BUDGET // max(per_item, 1))
    return [slice(i, min(i + step, n)) for i in range(0, n, step)]


def _im2col(x, k):
    n, h, w, c = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    sn, sh, sw, sc = xp.strides
    windows = as_strided(xp, (n, h, w, k, k, c), (sn, sh, sw, sh, sw, sc), writeable=False)
    return windows.reshape(n * h * w, k * k * c)


def _col2im(gcols, shape, k):
    n, h, w, c = shape
    p = k // 2
    gcols = gcols.reshape(n, h, w, k, k, c)
    gxp = np.zeros((n, h + 2 * p, w + 2 * p, c))
    for i in range(k):
        for j in range(k):
            gxp[:, i:i + h, j:j + w, :] += gcols[:, :, :, i, j, :]
    return gxp[:, p:p + h, p:p + w, :]


def conv_forward(x, weights, bias):
    x, single = _batched(x)
    weights = np.asarray(weights, dtype=np.float64)
    _check_conv(x, weights, bias)
    k, _, c, f = weights.shape
    n, h, w, _ = x.shape
    wmat = weights.reshape(k * k * c, f)
    out = np.empty((n, h, w, f))
    for s in _chunks(n, h * w * k * k * c):
        m = s.stop - s.start
        out[s] = (_im2col(x[s], k) @ wmat).reshape(m, h, w, f)
    out += bias
    return _unbatch(out, single)


def conv_backward(grad_out, cache, input_grad=True):
    """Gradients of a convolution.

    ``cache`` is the ``(x, weights)`` pair given to :func:`conv_forward`.
    Returns ``(grad_input, grad_weights, grad_bias)``; ``grad_input`` is
    ``None`` when ``input_grad`` is false (first layer of a network).
    """
    if cache is None:
        raise UsageError("conv_backward needs the forward inputs (x, weights)")
    x, weights = cache
    x, single = _batched(x)
    g, _ = _batched(grad_out)
    _check_conv(x, weights, None)
    k, _, c, f = weights.shape
    n, h, w, _ = x.shape
    if g.shape != (n, h, w, f):
        raise DimensionError(f"grad_out shape {g.shape} != forward output shape {(n, h, w, f)}")
    wmat = weights.reshape(k * k * c, f)
    gw = np.zeros((k * k * c, f))
    gx = np.empty_like(x) if input_grad else None
    for s in _chunks(n, h * w * k * k * c):
        gs = g[s].reshape(-1, f)
        gw += _im2col(x[s], k).T @ gs
        if input_grad:
            gx[s] = _col2im(gs @ wmat.T, x[s].shape, k)
    gb = g.sum(axis=(0, 1, 2))
    if gx is not None:
        gx = _unbatch(gx, single)
    return gx, gw.reshape(weights.shape), gb


# --------------------------------------------------------------------------
# max pooling (same padding)
# --------------------------------------------------------------------------

def _pool_geometry(size, kernel, stride):
    out = -(-size // stride)
    pad = max((out - 1) * stride + kernel - size, 0)
    return out, pad // 2, pad - pad // 2


def _pool_windows(x, kernel, stride):
    n, h, w, c = x.shape
    ho, top, bottom = _pool_geometry(h, kernel, stride)
    wo, left, right = _pool_geometry(w, kernel, stride)
    xp = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)), constant_values=-np.inf)
    offsets = [(i, j) for i in range(kernel) for j in range(kernel)]

    def window(i, j):
        return (slice(None), slice(i, i + stride * (ho - 1) + 1, stride),
                slice(j, j + stride * (wo - 1) + 1, stride), slice(None))

    return xp, offsets, window, (top, left)


def _maxpool_with_arg(x, kernel, stride):
    xp, offsets, window, _ = _pool_windows(x, kernel, stride)
    out = xp[window(0, 0)].copy()
    arg = np.zeros(out.shape, dtype=np.int8)
    for o, (i, j) in enumerate(offsets[1:], start=1):
        sl = xp[window(i, j)]
        # strict comparison keeps the first maximum on ties
        np.copyto(arg, o, where=sl > out)
        np.maximum(out, sl, out=out)
    return out, arg


def maxpool_forward(x, kernel=3, stride=2):
    x, single = _batched(x)
    if min(x.shape[1:3]) < 1:
        raise DimensionError(f"cannot pool an input of shape {x.shape}")
    xp, offsets, window, _ = _pool_windows(x, kernel, stride)
    out = None
    for i, j in offsets:
        sl = xp[window(i, j)]
        out = sl.copy() if out is None else np.maximum(out, sl)
    return _unbatch(out, single)


def maxpool_backward(grad_out, x, kernel=3, stride=2, arg=None):
    """Route each output gradient to the first maximal input of its window.

    ``arg`` is the window-offset index of each maximum, as recorded by the
    network's forward pass; it is recomputed when absent.
    """
    x, single = _batched(x)
    g, _ = _batched(grad_out)
    if arg is None:
        _, arg = _maxpool_with_arg(x, kernel, stride)
    n, h, w, c = x.shape
    ho, top, bottom = _pool_geometry(h, kernel, stride)
    wo, left, right = _pool_geometry(w, kernel, stride)
    gxp = np.zeros((n, h + top + bottom, w + left + right, c))
    for o in range(kernel * kernel):
        i, j = divmod(o, kernel)
        gxp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += np.where(arg == o, g, 0.0)
    return _unbatch(gxp[:, top:top + h, left:left + w, :], single)


# --------------------------------------------------------------------------
# local response normalization across channels
# --------------------------------------------------------------------------

LRN_DEFAULTS = dict(k=2.0, n=5, alpha=1e-4, beta=0.75)


def _channel_window_sum(a, radius):
    s = a.copy()
    for d in range(1, radius + 1):
        s[..., d:] += a[..., :-d]
        s[..., :-d] += a[..., d:]
    return s


def _lrn_check(k, n):
    if k <= 0:
        raise ConfigError(f"LRN bias k must be positive, got {k}")
    if n < 1:
        raise ConfigError(f"LRN window n must be >= 1, got {n}")


def lrn_denominator(x, k=2.0, n=5, alpha=1e-4):
    """k + alpha * (sum of squares over the n channels centred on each channel)"""
    _lrn_check(k, n)
    x = np.asarray(x, dtype=np.float64)
    return k + alpha * _channel_window_sum(x * x, n // 2)


def _inverse_power(d, beta):
    if beta == 0.75:
        # much cheaper than a general power
        r = np.sqrt(d)
        return 1.0 / (r * np.sqrt(r))
    return d ** -beta


def lrn_forward(x, k=2.0, n=5, alpha=1e-4, beta=0.75):
    """b_c = a_c / (k + alpha * sum of a^2 over the n channels centred on c) ** beta"""
    x = np.asarray(x, dtype=np.float64)
    return x * _inverse_power(lrn_denominator(x, k, n, alpha), beta)


def lrn_backward(grad_out, x, k=2.0, n=5, alpha=1e-4, beta=0.75):
    _lrn_check(k, n)
    x = np.asarray(x, dtype=np.float64)
    denom = lrn_denominator(x, k, n, alpha)
    return _lrn_grad(grad_out, x, denom, _inverse_power(denom, beta), dict(n=n, alpha=alpha, beta=beta))


def _lrn_grad(grad_out, x, denom, scale, params):
    alpha, beta, n = params["alpha"], params["beta"], params["n"]
    t = grad_out * x * scale / denom
    return grad_out * scale - 2.0 * alpha * beta * x * _channel_window_sum(t, n // 2)


# --------------------------------------------------------------------------
# pointwise layers, dense, softmax and loss
# --------------------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, x):
    return np.where(x > 0, grad_out, 0.0)


def dropout_mask(shape, keep_prob, rng):
    """Inverted-dropout mask: kept units are scaled by 1/keep_prob."""
    if not 0.0 < keep_prob <= 1.0:
        raise ConfigError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    return (rng.random(shape) < keep_prob) / keep_prob


def dense_forward(x, weights, bias):
    """Affine map. A 1-D input is one vector; otherwise axis 0 is the batch."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(1, -1) if x.ndim == 1 else x.reshape(x.shape[0], -1)
    if flat.shape[1] != weights.shape[0]:
        raise DimensionError(
            f"dense input has {flat.shape[1]} features but weights expect {weights.shape[0]}"
        )
    out = flat @ weights + bias
    return out[0] if x.ndim == 1 else out


def dense_backward(grad_out, cache):
    if cache is None:
        raise UsageError("dense_backward needs the forward inputs (x, weights)")
    x, weights = cache
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(1, -1) if x.ndim == 1 else x.reshape(x.shape[0], -1)
    g = np.asarray(grad_out).reshape(flat.shape[0], -1)
    gx = (g @ weights.T).reshape(x.shape)
    return gx, flat.T @ g, g.sum(axis=0)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(targets, outputs):
    """Mean categorical cross-entropy -1/N sum_n sum_c t_nc ln o_nc."""
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    o = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    if t.shape[0] == 0:
        raise UsageError("cross_entropy_loss needs a non-empty batch")
    if t.shape != o.shape:
        raise DimensionError(f"targets {t.shape} and outputs {o.shape} differ in shape")
    o = np.clip(o, LOG_CLIP, 1.0 - LOG_CLIP)
    return float(-(t * np.log(o)).sum() / t.shape[0])


def cross_entropy_grad(targets, outputs):
    """Gradient of the mean loss with respect to the pre-softmax logits."""
    t = np.atleast_2d(targets)
    return (np.atleast_2d(outputs) - t) / t.shape[0]


# --------------------------------------------------------------------------
# network description
# --------------------------------------------------------------------------

LAYER_KINDS = ("conv", "maxpool", "lrn", "relu", "dense", "dropout", "softmax")

INPUT_SHAPE = (64, 64, 3)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel_size: int = 0
    out_channels: int = 0
    units: int = 0
    keep_prob: float = 1.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")

    def to_dict(self):
        return asdict(self)


def canonical_layers():
    return (
        LayerSpec("conv", kernel_size=11, out_channels=64),
        LayerSpec("lrn"),
        LayerSpec("relu"),
        LayerSpec("maxpool", kernel_size=3),
        LayerSpec("conv", kernel_size=5, out_channels=128),
        LayerSpec("lrn"),
        LayerSpec("relu"),
        LayerSpec("maxpool", kernel_size=3),
        LayerSpec("conv", kernel_size=3, out_channels=256),
        LayerSpec("relu"),
        LayerSpec("dense", units=512),
        LayerSpec("relu"),
        LayerSpec("dropout", keep_prob=0.5),
        LayerSpec("dense", units=3),
        LayerSpec("softmax"),
    )


def layer_shapes(layers, input_shape=INPUT_SHAPE):
    """Output shape (without the batch axis) of every layer in order."""
    shape = tuple(input_shape)
    shapes = []
    for spec in layers:
        if spec.kind == "conv":
            shape = shape[:2] + (spec.out_channels,)
        elif spec.kind == "maxpool":
            shape = (-(-shape[0] // 2), -(-shape[1] // 2), shape[2])
        elif spec.kind == "dense":
            shape = (spec.units,)
        shapes.append(shape)
    return shapes


def param_layout(layers, input_shape=INPUT_SHAPE):
    """Map layer index -> (name, weight shape, fan_in, fan_out) for parametrized layers."""
    layout = {}
    counts = {"conv": 0, "dense": 0}
    shape = tuple(input_shape)
    for idx, (spec, out_shape) in enumerate(zip(layers, layer_shapes(layers, input_shape))):
        if spec.kind == "conv":
            counts["conv"] += 1
            k, c, f = spec.kernel_size, shape[-1], spec.out_channels
            layout[idx] = (f"conv{counts['conv']}", (k, k, c, f), k * k * c, k * k * f)
        elif spec.kind == "dense":
            counts["dense"] += 1
            d = int(np.prod(shape))
            layout[idx] = (f"dense{counts['dense']}", (d, spec.units), d, spec.units)
        shape = out_shape
    return layout


@dataclass
class ConvNet:
    """Layer list plus parameters ``{"conv1.w": ..., "conv1.b": ..., ...}``."""

    layers: tuple
    params: dict
    input_shape: tuple = INPUT_SHAPE
    lrn: dict = field(default_factory=lambda: dict(LRN_DEFAULTS))

    def __post_init__(self):
        self.layers = tuple(self.layers)
        self.input_shape = tuple(self.input_shape)
        if not self.layers or self.layers[-1].kind != "softmax":
            raise ConfigError("the last layer must be softmax")
        self._layout = param_layout(self.layers, self.input_shape)

    def _check_input(self, x):
        x, single = _batched(x)
        if x.shape[1:] != self.input_shape:
            raise DimensionError(
                f"network expects inputs of shape {self.input_shape}, got {x.shape[1:]}"
            )
        return x, single

    def deterministic_prefix(self):
        """Number of leading layers that do not depend on dropout randomness."""
        for idx, spec in enumerate(self.layers):
            if spec.kind == "dropout":
                return idx
        return len(self.layers) - 1

    def forward_layers(self, x, start, stop, train=False, rng=None):
        """Run layers ``start:stop`` (softmax excluded); returns ``(output, cache)``."""
        if train and rng is None:
            raise UsageError("train-mode forward needs an rng for dropout")
        cache = []
        for idx in range(start, min(stop, len(self.layers) - 1)):
            spec = self.layers[idx]
            kind = spec.kind
            if kind in ("conv", "dense"):
                name = self._layout[idx][0]
                w, b = self.params[name + ".w"], self.params[name + ".b"]
                cache.append((x, w))
                x = conv_forward(x, w, b) if kind == "conv" else dense_forward(x, w, b)
            elif kind == "dropout":
                if train:
                    mask = dropout_mask(x.shape, spec.keep_prob, rng)
                    cache.append(mask)
                    x = x * mask
                else:
                    cache.append(None)
            elif kind == "lrn":
                denom = lrn_denominator(x, self.lrn["k"], self.lrn["n"], self.lrn["alpha"])
                scale = _inverse_power(denom, self.lrn["beta"])
                cache.append((x, denom, scale))
                x = x * scale
            elif kind == "maxpool":
                out, arg = _maxpool_with_arg(x, spec.kernel_size, 2)
                cache.append((x, arg))
                x = out
            else:
                cache.append(x)
                x = relu_forward(x)
        return x, cache

    def backward_layers(self, cache, grad, start, grads):
        """Backpropagate through the layers whose cache entries are given.

        Parameter gradients are accumulated into ``grads``; the gradient with
        respect to the input of layer ``start`` is returned (None at layer 0).
        """
        g = grad
        for offset in range(len(cache) - 1, -1, -1):
            idx = start + offset
            spec, entry = self.layers[idx], cache[offset]
            kind = spec.kind
            if kind in ("conv", "dense"):
                name = self._layout[idx][0]
                if kind == "conv":
                    g, gw, gb = conv_backward(g, entry, input_grad=idx > 0)
                else:
                    g, gw, gb = dense_backward(g, entry)
                for key, value in ((name + ".w", gw), (name + ".b", gb)):
                    if key in grads:
                        grads[key] += value
                    else:
                        grads[key] = value
            elif kind == "dropout":
                if entry is not None:
                    g = g * entry
            elif kind == "lrn":
                x, denom, scale = entry
                g = _lrn_grad(g, x, denom, scale, self.lrn)
            elif kind == "relu":
                g = relu_backward(g, entry)
            elif kind == "maxpool":
                x, arg = entry
                g = maxpool_backward(g, x, spec.kernel_size, 2, arg)
        return g

    def forward(self, x, train=False, rng=None):
        """Return ``(probabilities, cache)`` for a batch of inputs."""
        x, _ = self._check_input(x)
        logits, cache = self.forward_layers(x, 0, len(self.layers) - 1, train, rng)
        return softmax(logits), cache

    def backward(self, cache, grad_logits):
        """Parameter gradients given d(loss)/d(logits) for the cached batch."""
        grads = {}
        self.backward_layers(cache, grad_logits, 0, grads)
        return grads

    def predict_proba(self, x, batch_size=16):
        """Inference-mode probabilities, evaluated in fixed-size chunks."""
        x, single = self._check_input(x)
        out = np.empty((x.shape[0], self.layers[-2].units))
        for s in range(0, x.shape[0], batch_size):
            out[s:s + batch_size] = self.forward(x[s:s + batch_size])[0]
        return _unbatch(out, single)


def network_forward(image, net, mode="infer", rng=None):
    """Class distribution for one image (or a batch) in train or infer mode."""
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
    x, single = _batched(image)
    probs, _ = net.forward(x, train=mode == "train", rng=rng)
    return _unbatch(probs, single)
