"""Layer specifications and their forward/backward implementations.

Conventions:
  * all arrays are float64, batch axis first;
  * image tensors are (batch, height, width, channels);
  * a layer computes core-op -> activation -> noise, noise being applied
    after the activation;
  * eval mode is deterministic (noise layers are the identity), train mode
    draws multiplicative noise from the Generator passed to ``forward``.

Dropout uses the inverted convention: Bernoulli noise zeroes each unit with
probability ``rate`` and rescales survivors by 1/(1-rate), so eval mode needs
no rescaling. Gaussian dropout multiplies by N(1, sigma^2) with
sigma = sqrt(rate / (1 - rate)), which makes rate 0.5 correspond to unit
standard deviation.
"""

from dataclasses import dataclass

import numpy as np

from catgeo.errors import ConfigurationError

KINDS = ("dense", "conv2d", "maxpool2d", "upsample2d", "globalavgpool", "flatten")
ACTIVATIONS = ("identity", "sigmoid", "relu", "softmax")
NOISE_KINDS = ("none", "bernoulli", "gaussian")
PADDINGS = ("same", "valid")


def gaussian_dropout_sigma(rate):
    """Noise std for Gaussian dropout at the given rate (0.5 -> 1.0)."""
    return float(np.sqrt(rate / (1.0 - rate)))


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0          # dense
    filters: int = 0        # conv2d
    kernel: tuple = (3, 3)  # conv2d
    stride: int = 1         # conv2d
    padding: str = "same"   # conv2d
    pool: int = 2           # maxpool2d / upsample2d factor
    activation: str = "identity"
    noise: str = "none"
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.noise not in NOISE_KINDS:
            raise ConfigurationError(f"unknown noise kind {self.noise!r}")
        if not 0.0 <= self.rate < 1.0:
            raise ConfigurationError(f"noise rate must lie in [0, 1), got {self.rate}")
        if self.kind == "dense" and self.units < 1:
            raise ConfigurationError("dense layer needs units >= 1")
        if self.kind == "conv2d":
            if self.filters < 1:
                raise ConfigurationError("conv2d layer needs filters >= 1")
            if self.padding not in PADDINGS:
                raise ConfigurationError(f"unknown padding {self.padding!r}")
            if self.stride < 1:
                raise ConfigurationError("conv2d stride must be >= 1")
            kh, kw = self.kernel
            if kh < 1 or kw < 1:
                raise ConfigurationError("conv2d kernel dims must be >= 1")
        if self.kind in ("maxpool2d", "upsample2d") and self.pool < 1:
            raise ConfigurationError("pool factor must be >= 1")


def dense(units, activation="identity", noise="none", rate=0.0):
    return LayerSpec("dense", units=units, activation=activation, noise=noise, rate=rate)


def conv2d(filters, kernel=(3, 3), stride=1, padding="same",
           activation="identity", noise="none", rate=0.0):
    if isinstance(kernel, int):
        kernel = (kernel, kernel)
    return LayerSpec("conv2d", filters=filters, kernel=tuple(kernel), stride=stride,
                     padding=padding, activation=activation, noise=noise, rate=rate)


def max_pool2d(pool=2, noise="none", rate=0.0):
    return LayerSpec("maxpool2d", pool=pool, noise=noise, rate=rate)


def upsample2d(pool=2):
    return LayerSpec("upsample2d", pool=pool)


def global_avg_pool(noise="none", rate=0.0):
    return LayerSpec("globalavgpool", noise=noise, rate=rate)


def flatten():
    return LayerSpec("flatten")


# --- activations -----------------------------------------------------------

def apply_activation(z, activation):
    if activation == "identity":
        return z
    if activation == "sigmoid":
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-z))
    if activation == "relu":
        return np.maximum(z, 0.0)
    # softmax over the last axis, shifted for stability
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def activation_backward(dout, out, activation):
    """Gradient w.r.t. the pre-activation, given the post-activation value."""
    if activation == "identity":
        return dout
    if activation == "sigmoid":
        return dout * out * (1.0 - out)
    if activation == "relu":
        return dout * (out > 0.0)
    # softmax Jacobian-vector product
    return out * (dout - np.sum(dout * out, axis=-1, keepdims=True))


# --- noise -----------------------------------------------------------------

def draw_noise_multiplier(spec, shape, mode, rng):
    """Multiplicative noise factor for a layer output, or None if inactive."""
    if mode != "train" or spec.noise == "none" or spec.rate == 0.0:
        return None
    if rng is None:
        raise ConfigurationError("train-mode forward through a noise layer needs an rng")
    if spec.noise == "bernoulli":
        keep = 1.0 - spec.rate
        return (rng.random(shape) >= spec.rate) / keep
    sigma = gaussian_dropout_sigma(spec.rate)
    return 1.0 + sigma * rng.standard_normal(shape)


# --- layer implementations -------------------------------------------------

class LayerImpl:
    """Runtime layer: core op caches + activation + noise."""

    def __init__(self, spec, in_shape):
        self.spec = spec
        self.in_shape = tuple(in_shape)
        self.out_shape = self._infer_out_shape()
        self.params = {}

    def _infer_out_shape(self):
        raise NotImplementedError

    def init_params(self, rng):
        pass

    def forward(self, x, mode, rng):
        z, core_cache = self._core_forward(x)
        a = apply_activation(z, self.spec.activation)
        mult = draw_noise_multiplier(self.spec, a.shape, mode, rng)
        out = a if mult is None else a * mult
        return out, (core_cache, a, mult)

    def backward(self, cache, dout):
        """Returns (grad wrt layer input, dict of param grads)."""
        core_cache, a, mult = cache
        if mult is not None:
            dout = dout * mult
        dz = activation_backward(dout, a, self.spec.activation)
        return self._core_backward(core_cache, dz)

    def _core_forward(self, x):
        raise NotImplementedError

    def _core_backward(self, core_cache, dz):
        raise NotImplementedError


class DenseImpl(LayerImpl):
    def _infer_out_shape(self):
        if len(self.in_shape) != 1:
            raise ConfigurationError(
                f"dense layer expects a flat input, got shape {self.in_shape} "
                "(insert a flatten layer)")
        return (self.spec.units,)

    def init_params(self, rng):
        fan_in, fan_out = self.in_shape[0], self.spec.units
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.params["W"] = rng.uniform(-limit, limit, (fan_in, fan_out))
        self.params["b"] = np.zeros(fan_out)

    def _core_forward(self, x):
        return x @ self.params["W"] + self.params["b"], x

    def _core_backward(self, x, dz):
        grads = {"W": x.T @ dz, "b": dz.sum(axis=0)}
        return dz @ self.params["W"].T, grads


def _conv_padding(in_size, k, stride, padding):
    """(out_size, pad_before, pad_after) for one spatial axis."""
    if padding == "valid":
        if in_size < k:
            raise ConfigurationError(f"conv2d kernel {k} larger than input {in_size}")
        return (in_size - k) // stride + 1, 0, 0
    out = -(-in_size // stride)  # ceil
    total = max(0, (out - 1) * stride + k - in_size)
    return out, total // 2, total - total // 2


class Conv2DImpl(LayerImpl):
    def _infer_out_shape(self):
        if len(self.in_shape) != 3:
            raise ConfigurationError(
                f"conv2d expects (h, w, c) input, got shape {self.in_shape}")
        h, w, _ = self.in_shape
        kh, kw = self.spec.kernel
        oh, self._pad_t, self._pad_b = _conv_padding(h, kh, self.spec.stride, self.spec.padding)
        ow, self._pad_l, self._pad_r = _conv_padding(w, kw, self.spec.stride, self.spec.padding)
        return (oh, ow, self.spec.filters)

    def init_params(self, rng):
        kh, kw = self.spec.kernel
        cin, f = self.in_shape[2], self.spec.filters
        fan_in, fan_out = kh * kw * cin, kh * kw * f
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.params["W"] = rng.uniform(-limit, limit, (kh, kw, cin, f))
        self.params["b"] = np.zeros(f)

    def _core_forward(self, x):
        kh, kw = self.spec.kernel
        s = self.spec.stride
        cin, f = self.in_shape[2], self.spec.filters
        oh, ow, _ = self.out_shape
        xp = np.pad(x, ((0, 0), (self._pad_t, self._pad_b),
                        (self._pad_l, self._pad_r), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
        win = win[:, ::s, ::s]  # (b, oh, ow, cin, kh, kw)
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
        cols = cols.reshape(-1, kh * kw * cin)
        z = cols @ self.params["W"].reshape(-1, f) + self.params["b"]
        return z.reshape(x.shape[0], oh, ow, f), (cols, x.shape)

    def _core_backward(self, core_cache, dz):
        cols, x_shape = core_cache
        kh, kw = self.spec.kernel
        s = self.spec.stride
        cin, f = self.in_shape[2], self.spec.filters
        b = x_shape[0]
        oh, ow, _ = self.out_shape
        dz_mat = dz.reshape(-1, f)
        grads = {"W": (cols.T @ dz_mat).reshape(kh, kw, cin, f),
                 "b": dz_mat.sum(axis=0)}
        # scatter window grads back onto the (padded) input, one kernel offset
        # at a time; handles any stride
        dwin = (dz_mat @ self.params["W"].reshape(-1, f).T)
        dwin = dwin.reshape(b, oh, ow, kh, kw, cin)
        hp = x_shape[1] + self._pad_t + self._pad_b
        wp = x_shape[2] + self._pad_l + self._pad_r
        dxp = np.zeros((b, hp, wp, cin))
        for a in range(kh):
            for c in range(kw):
                dxp[:, a:a + oh * s:s, c:c + ow * s:s, :] += dwin[:, :, :, a, c, :]
        dx = dxp[:, self._pad_t:self._pad_t + x_shape[1],
                 self._pad_l:self._pad_l + x_shape[2], :]
        return dx, grads


class MaxPool2DImpl(LayerImpl):
    def _infer_out_shape(self):
        if len(self.in_shape) != 3:
            raise ConfigurationError(
                f"maxpool2d expects (h, w, c) input, got shape {self.in_shape}")
        h, w, c = self.in_shape
        k = self.spec.pool
        if h < k or w < k:
            raise ConfigurationError(f"pool factor {k} larger than input {h}x{w}")
        return (h // k, w // k, c)

    def _core_forward(self, x):
        k = self.spec.pool
        b = x.shape[0]
        oh, ow, c = self.out_shape
        xv = x[:, :oh * k, :ow * k, :].reshape(b, oh, k, ow, k, c)
        win = xv.transpose(0, 1, 3, 5, 2, 4).reshape(b, oh, ow, c, k * k)
        am = win.argmax(axis=-1)  # first occurrence wins ties
        z = np.take_along_axis(win, am[..., None], axis=-1)[..., 0]
        return z, (am, x.shape)

    def _core_backward(self, core_cache, dz):
        am, x_shape = core_cache
        k = self.spec.pool
        b = x_shape[0]
        oh, ow, c = self.out_shape
        dwin = np.zeros((b, oh, ow, c, k * k))
        np.put_along_axis(dwin, am[..., None], dz[..., None], axis=-1)
        dx = np.zeros(x_shape)
        dx[:, :oh * k, :ow * k, :] = (
            dwin.reshape(b, oh, ow, c, k, k)
                .transpose(0, 1, 4, 2, 5, 3)
                .reshape(b, oh * k, ow * k, c))
        return dx, {}


class UpSample2DImpl(LayerImpl):
    def _infer_out_shape(self):
        if len(self.in_shape) != 3:
            raise ConfigurationError(
                f"upsample2d expects (h, w, c) input, got shape {self.in_shape}")
        h, w, c = self.in_shape
        k = self.spec.pool
        return (h * k, w * k, c)

    def _core_forward(self, x):
        k = self.spec.pool
        return x.repeat(k, axis=1).repeat(k, axis=2), x.shape

    def _core_backward(self, x_shape, dz):
        k = self.spec.pool
        b, h, w, c = x_shape
        dx = dz.reshape(b, h, k, w, k, c).sum(axis=(2, 4))
        return dx, {}


class GlobalAvgPoolImpl(LayerImpl):
    def _infer_out_shape(self):
        if len(self.in_shape) != 3:
            raise ConfigurationError(
                f"globalavgpool expects (h, w, c) input, got shape {self.in_shape}")
        return (self.in_shape[2],)

    def _core_forward(self, x):
        return x.mean(axis=(1, 2)), x.shape

    def _core_backward(self, x_shape, dz):
        b, h, w, c = x_shape
        dx = np.broadcast_to(dz[:, None, None, :] / (h * w), x_shape).copy()
        return dx, {}


class FlattenImpl(LayerImpl):
    def _infer_out_shape(self):
        return (int(np.prod(self.in_shape)),)

    def _core_forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def _core_backward(self, x_shape, dz):
        return dz.reshape(x_shape), {}


IMPLS = {
    "dense": DenseImpl,
    "conv2d": Conv2DImpl,
    "maxpool2d": MaxPool2DImpl,
    "upsample2d": UpSample2DImpl,
    "globalavgpool": GlobalAvgPoolImpl,
    "flatten": FlattenImpl,
}
