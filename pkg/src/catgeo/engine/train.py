"""Mini-batch training with Adam."""

from dataclasses import dataclass, field

import numpy as np

from catgeo.errors import ConfigurationError, NumericalError
from catgeo.rng import derive_rng

LOSSES = ("cross_entropy", "mse")


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 128
    learning_rate: float = 1e-3
    loss: str = "cross_entropy"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.loss not in LOSSES:
            raise ConfigurationError(f"unknown loss {self.loss!r}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


@dataclass
class History:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss)


class Adam:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999,
                 epsilon=1e-8):
        self.params = list(params)
        self.lr = learning_rate
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.epsilon)


def _loss_and_delta(out, yb, loss):
    """Scalar loss plus gradient w.r.t. the output-layer pre-activation
    (cross-entropy, fused with softmax) or activation (mse)."""
    if loss == "cross_entropy":
        p = np.clip(out, 1e-300, None)
        value = -np.mean(np.sum(yb * np.log(p), axis=-1))
        delta = (out - yb) / out.shape[0]
        return value, delta
    diff = out - yb
    return np.mean(diff * diff), (2.0 / diff.size) * diff


def accuracy(net, inputs, labels, batch_size=512):
    """Eval-mode classification accuracy against integer labels."""
    out = net.predict(inputs, batch_size=batch_size)
    return float(np.mean(out.argmax(axis=-1) == np.asarray(labels)))


def train(net, inputs, targets, cfg, eval_inputs=None, eval_labels=None,
          on_epoch_end=None):
    """Train ``net`` in place over shuffled mini-batches.

    ``targets`` are one-hot rows for cross-entropy (the final layer must be
    softmax) and output-shaped arrays for mse. Returns a History whose lists
    all have length ``cfg.epochs``; the run is a deterministic function of
    (initial parameters, data, cfg.seed). ``on_epoch_end(epoch, net)`` runs
    after each epoch (snapshots, early diagnostics).
    """
    xb, _ = net._as_batch(inputs)
    yb = np.asarray(targets, dtype=np.float64)
    if yb.shape[0] != xb.shape[0]:
        raise ConfigurationError(
            f"{xb.shape[0]} inputs but {yb.shape[0]} targets")
    if yb.shape[1:] != net.output_shape:
        raise ConfigurationError(
            f"target shape {yb.shape[1:]} does not match output {net.output_shape}")
    if cfg.loss == "cross_entropy":
        if net.specs[-1].activation != "softmax":
            raise ConfigurationError("cross_entropy needs a softmax output layer")
        fused = True
    else:
        fused = net.specs[-1].activation == "identity"

    rng = derive_rng(cfg.seed)
    opt = Adam([p for _, _, p in net.parameters()],
               learning_rate=cfg.learning_rate, beta1=cfg.beta1,
               beta2=cfg.beta2, epsilon=cfg.epsilon)
    history = History()
    n = xb.shape[0]
    last = net.n_layers - 1
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        epoch_hits = 0.0
        classification = cfg.loss == "cross_entropy"
        for bstart in range(0, n, cfg.batch_size):
            idx = order[bstart:bstart + cfg.batch_size]
            bx, by = xb[idx], yb[idx]
            acts, caches = net._forward(bx, "train", rng)
            out = acts[-1]
            value, delta = _loss_and_delta(out, by, cfg.loss)
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {bstart // cfg.batch_size}")
            _, grads = net._backward(caches, delta, last, collect_param_grads=True,
                                     skip_activation_at_start=fused)
            flat_grads = []
            for i, impl in enumerate(net.layers):
                for name in sorted(impl.params):
                    flat_grads.append(grads[i][name])
            opt.step(flat_grads)
            epoch_loss += value * len(idx)
            if classification:
                epoch_hits += np.sum(out.argmax(axis=-1) == by.argmax(axis=-1))
        history.loss.append(epoch_loss / n)
        history.accuracy.append(epoch_hits / n if classification else float("nan"))
        if eval_inputs is not None:
            history.val_accuracy.append(accuracy(net, eval_inputs, eval_labels))
        else:
            history.val_accuracy.append(float("nan"))
        if on_epoch_end is not None:
            on_epoch_end(epoch, net)
    return history


def one_hot(labels, n_classes):
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out
