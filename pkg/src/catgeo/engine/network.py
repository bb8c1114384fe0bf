"""Network container: layer stack, forward passes, reverse-mode gradients."""

import copy

import numpy as np

from catgeo.errors import ConfigurationError, NumericalError
from catgeo.engine.layers import IMPLS, LayerSpec
from catgeo.rng import derive_rng


class Network:
    """A feed-forward stack of layers with parameter state.

    Eval-mode forward is a deterministic function of the parameters; train
    mode draws multiplicative noise from the Generator handed to ``forward``.
    Instances are single-writer during training, but eval-mode calls are
    read-only and safe to issue concurrently.
    """

    def __init__(self, specs, input_shape, seed):
        if isinstance(input_shape, int):
            input_shape = (input_shape,)
        self.specs = list(specs)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.rng_seed = int(seed)
        for i, spec in enumerate(self.specs):
            if not isinstance(spec, LayerSpec):
                raise ConfigurationError(f"layer {i} is not a LayerSpec")
            if spec.activation == "softmax" and i != len(self.specs) - 1:
                raise ConfigurationError(
                    f"softmax is only allowed on the final layer (found at layer {i})")
        self.layers = []
        shape = self.input_shape
        init_rng = derive_rng(self.rng_seed)
        for i, spec in enumerate(self.specs):
            try:
                impl = IMPLS[spec.kind](spec, shape)
            except ConfigurationError as err:
                raise ConfigurationError(f"layer {i}: {err}") from None
            impl.init_params(init_rng)
            self.layers.append(impl)
            shape = impl.out_shape
        self.output_shape = shape

    @property
    def n_layers(self):
        return len(self.layers)

    def layer_shapes(self):
        return [impl.out_shape for impl in self.layers]

    def copy(self):
        return copy.deepcopy(self)

    def parameters(self):
        """Ordered (layer_index, name, array) triples of all parameters."""
        out = []
        for i, impl in enumerate(self.layers):
            for name in sorted(impl.params):
                out.append((i, name, impl.params[name]))
        return out

    # -- forward -------------------------------------------------------

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.input_shape:
            return x[None], False
        if x.ndim == len(self.input_shape) + 1 and x.shape[1:] == self.input_shape:
            return x, True
        raise ConfigurationError(
            f"input shape {x.shape} does not match network input {self.input_shape}")

    def _forward(self, xb, mode, rng, stop=None, start=0):
        """Batched forward through layers [start, stop]; returns (acts, caches)."""
        stop = self.n_layers - 1 if stop is None else stop
        acts, caches = [], []
        a = xb
        for i in range(start, stop + 1):
            a, cache = self.layers[i].forward(a, mode, rng)
            if not np.all(np.isfinite(a)):
                raise NumericalError(f"non-finite activation at layer {i}")
            acts.append(a)
            caches.append(cache)
        return acts, caches

    def forward(self, x, mode="eval", rng=None, start=0, stop=None):
        """Per-layer activations (list, one entry per layer; last = output).

        Accepts a single input of ``input_shape`` or a batch with a leading
        axis; activations match. ``start`` lets callers resume from an
        intermediate layer's output (used e.g. to decode latent codes).
        """
        if mode not in ("train", "eval"):
            raise ConfigurationError(f"unknown forward mode {mode!r}")
        if start == 0:
            xb, batched = self._as_batch(x)
        else:
            xb = np.asarray(x, dtype=np.float64)
            in_shape = self.layers[start - 1].out_shape
            if xb.shape == in_shape:
                xb, batched = xb[None], False
            elif xb.shape[1:] == in_shape:
                batched = True
            else:
                raise ConfigurationError(
                    f"input shape {xb.shape} does not match layer {start} input {in_shape}")
        acts, _ = self._forward(xb, mode, rng, stop=stop, start=start)
        return acts if batched else [a[0] for a in acts]

    def predict(self, x, batch_size=None):
        """Eval-mode output activations, optionally in memory-bounded chunks."""
        xb, batched = self._as_batch(x)
        if batch_size is None or xb.shape[0] <= batch_size:
            out = self._forward(xb, "eval", None)[0][-1]
        else:
            out = np.concatenate([
                self._forward(xb[i:i + batch_size], "eval", None)[0][-1]
                for i in range(0, xb.shape[0], batch_size)])
        return out if batched else out[0]

    def layer_activations(self, x, layer_index, batch_size=None, flat=True):
        """Eval-mode activations of one layer, flattened per item by default."""
        self._check_layer_index(layer_index)
        xb, batched = self._as_batch(x)
        chunks = []
        step = xb.shape[0] if batch_size is None else batch_size
        for i in range(0, xb.shape[0], max(step, 1)):
            acts, _ = self._forward(xb[i:i + step], "eval", None, stop=layer_index)
            a = acts[-1]
            chunks.append(a.reshape(a.shape[0], -1) if flat else a)
        out = np.concatenate(chunks) if len(chunks) > 1 else chunks[0]
        return out if batched else out[0]

    def _check_layer_index(self, layer_index):
        if not 0 <= layer_index < self.n_layers:
            raise ConfigurationError(
                f"layer index {layer_index} out of range [0, {self.n_layers})")

    # -- backward ------------------------------------------------------

    def _backward(self, caches, delta, start_layer, collect_param_grads=False,
                  skip_activation_at_start=False, stop_layer=0):
        """Propagate d(objective)/d(activation at start_layer) down to the
        input of ``stop_layer``; optionally accumulate parameter grads.

        ``skip_activation_at_start`` treats ``delta`` as the gradient w.r.t.
        the start layer's pre-activation (used for fused softmax/cross-entropy).
        """
        grads = [None] * self.n_layers if collect_param_grads else None
        d = delta
        for i in range(start_layer, stop_layer - 1, -1):
            impl = self.layers[i]
            if i == start_layer and skip_activation_at_start:
                core_cache = caches[i][0]
                d, g = impl._core_backward(core_cache, d)
            else:
                d, g = impl.backward(caches[i], d)
            if collect_param_grads:
                grads[i] = g
        return (d, grads) if collect_param_grads else d

    def input_gradient(self, x, layer_index, target):
        """Gradient w.r.t. x of the squared error sum((f_L(x) - target)^2),
        where f_L is the eval-mode activity of layer ``layer_index``."""
        self._check_layer_index(layer_index)
        xb, batched = self._as_batch(x)
        target = np.asarray(target, dtype=np.float64)
        acts, caches = self._forward(xb, "eval", None, stop=layer_index)
        out = acts[-1]
        tb = target if target.shape == out.shape else target[None]
        if tb.shape != out.shape:
            raise ConfigurationError(
                f"target shape {target.shape} does not match layer "
                f"{layer_index} activity shape {out.shape[1:]}")
        delta = 2.0 * (out - tb)
        grad = self._backward(caches, delta, layer_index)
        return grad if batched else grad[0]

    def input_jacobian(self, x, layer_index):
        """Exact Jacobian d f_i / d x of one layer's eval-mode units.

        For a single input returns (n_units, *input_shape); for a batch,
        (batch, n_units, *input_shape). Computed with one reverse pass per
        unit over the whole batch.
        """
        self._check_layer_index(layer_index)
        xb, batched = self._as_batch(x)
        acts, caches = self._forward(xb, "eval", None, stop=layer_index)
        out = acts[-1]
        flat = out.reshape(out.shape[0], -1)
        n_units = flat.shape[1]
        jac = np.empty((xb.shape[0], n_units) + self.input_shape)
        for u in range(n_units):
            delta = np.zeros_like(flat)
            delta[:, u] = 1.0
            jac[:, u] = self._backward(caches, delta.reshape(out.shape), layer_index)
        return jac if batched else jac[0]


def build_network(specs, input_shape, seed):
    """Construct a network with Glorot-uniform weights and zero biases.

    Deterministic given ``seed``; raises ConfigurationError when consecutive
    layer shapes are inconsistent.
    """
    return Network(specs, input_shape, seed)
