"""Xavier initialization, RMSProp, balanced batches and the training loop."""
import logging
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, DataError, DimensionError, TrainingDivergedError
from .labels import CLASSES, NUM_CLASSES, one_hot
from .nn import (
    INPUT_SHAPE,
    ConvNet,
    canonical_layers,
    cross_entropy_grad,
    cross_entropy_loss,
    param_layout,
    softmax,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    decay: float = 0.9
    epsilon: float = 1e-10
    iterations: int = 1500
    per_class: int = 21
    seed: int = 0
    initial_accumulator: float = 1.0
    # images per forward/backward chunk; bounds memory, not the gradient
    micro_batch: int = 32

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.decay < 1.0:
            raise ConfigError("decay must lie in [0, 1)")
        if self.initial_accumulator < 0:
            raise ConfigError("initial_accumulator must be non-negative")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.per_class < 1 or self.micro_batch < 1:
            raise ConfigError("per_class and micro_batch must be positive")

    @property
    def batch_size(self):
        return NUM_CLASSES * self.per_class

    def to_dict(self):
        return asdict(self)


def rng_streams(seed):
    """Independent generators for weight init, batch sampling and dropout."""
    init, batches, dropout = np.random.SeedSequence(seed).spawn(3)
    return {
        "init": np.random.default_rng(init),
        "batches": np.random.default_rng(batches),
        "dropout": np.random.default_rng(dropout),
    }


def xavier_bound(fan_in, fan_out):
    if fan_in < 1 or fan_out < 1:
        raise ConfigError("fan_in and fan_out must be >= 1")
    return np.sqrt(6.0 / (fan_in + fan_out))


def xavier_init(shape, fan_in, fan_out, seed=None):
    """Uniform samples in +-sqrt(6 / (fan_in + fan_out)).

    ``seed`` may be an int or an existing ``numpy.random.Generator``.
    """
    bound = xavier_bound(fan_in, fan_out)
    return np.random.default_rng(seed).uniform(-bound, bound, size=shape)


def init_network(layers=None, input_shape=INPUT_SHAPE, seed=None):
    layers = canonical_layers() if layers is None else tuple(layers)
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, fan_in, fan_out in param_layout(layers, input_shape).values():
        params[name + ".w"] = xavier_init(shape, fan_in, fan_out, rng)
        params[name + ".b"] = np.zeros(shape[-1])
    return ConvNet(layers, params, input_shape)


def rmsprop_state(params, initial=0.0):
    return {name: np.full_like(p, initial) for name, p in params.items()}


def rmsprop_step(params, grads, state, config):
    """One in-place RMSProp update of ``params`` and ``state``.

    s <- decay * s + (1 - decay) * g**2
    p <- p - lr * g / sqrt(s + eps)
    """
    for name, p in params.items():
        g, s = grads[name], state[name]
        if g.shape != p.shape or s.shape != p.shape:
            raise DimensionError(
                f"{name}: param {p.shape}, grad {g.shape}, state {s.shape} disagree"
            )
        s *= config.decay
        s += (1.0 - config.decay) * g * g
        p -= config.learning_rate * g / np.sqrt(s + config.epsilon)
    return params, state


def balanced_indices(labels, per_class, rng):
    """Indices of ``per_class`` samples from each class, shuffled.

    Classes with fewer than ``per_class`` samples are drawn with replacement.
    """
    labels = np.asarray(labels)
    chosen = []
    for c in range(NUM_CLASSES):
        pool = np.flatnonzero(labels == c)
        if pool.size == 0:
            raise DataError(f"no samples of class {CLASSES[c]!r} to draw a balanced batch from")
        chosen.append(rng.choice(pool, size=per_class, replace=pool.size < per_class))
    idx = np.concatenate(chosen)
    rng.shuffle(idx)
    return idx


def balanced_batch(faces, labels, per_class=21, rng=None):
    idx = balanced_indices(labels, per_class, np.random.default_rng(rng))
    return np.asarray(faces)[idx], np.asarray(labels)[idx]


@dataclass
class TrainResult:
    net: ConvNet
    losses: list
    config: OptimizerConfig

    @property
    def iterations_run(self):
        return len(self.losses)


def batch_gradients(net, faces, labels, micro_batch, dropout_rng, index=None):
    """Mean loss and parameter gradients over the batch ``faces[index]``.

    Layers before the first dropout are deterministic, so each distinct image
    goes through them once however often it was drawn; the gradients of its
    copies are summed before flowing back.  ``micro_batch`` bounds how many
    images pass through the convolutions at a time.
    """
    if index is None:
        index = np.arange(len(labels))
    index = np.asarray(index)
    uniq, inverse = np.unique(index, return_inverse=True)
    split = net.deterministic_prefix()
    chunks = [slice(s, s + micro_batch) for s in range(0, uniq.size, micro_batch)]
    features, caches = [], []
    for chunk in chunks:
        out, cache = net.forward_layers(faces[uniq[chunk]], 0, split)
        features.append(out)
        caches.append(cache)
    features = np.concatenate(features)
    logits, head = net.forward_layers(features[inverse], split, len(net.layers), True, dropout_rng)
    probs = softmax(logits)
    targets = one_hot(np.asarray(labels)[index])
    grads = {}
    g = net.backward_layers(head, cross_entropy_grad(targets, probs), split, grads)
    g_unique = np.zeros_like(features)
    np.add.at(g_unique, inverse, g)
    for chunk, cache in zip(chunks, caches):
        net.backward_layers(cache, g_unique[chunk], 0, grads)
    return cross_entropy_loss(targets, probs), grads


def train_cnn(faces, labels, config=None, layers=None, callback=None):
    """Train a network on preprocessed face crops with balanced batches.

    ``callback(iteration, net, loss)`` runs after every step; returning True
    stops training early.
    """
    config = config or OptimizerConfig()
    faces = np.asarray(faces, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if faces.ndim != 4 or faces.shape[0] != labels.shape[0]:
        raise DataError(f"faces {faces.shape} and labels {labels.shape} do not line up")
    streams = rng_streams(config.seed)
    net = init_network(layers, faces.shape[1:], streams["init"])
    state = rmsprop_state(net.params, config.initial_accumulator)
    losses = []
    for it in range(config.iterations):
        idx = balanced_indices(labels, config.per_class, streams["batches"])
        loss, grads = batch_gradients(net, faces, labels, config.micro_batch, streams["dropout"], idx)
        if not np.isfinite(loss):
            raise TrainingDivergedError(it, loss)
        rmsprop_step(net.params, grads, state, config)
        losses.append(loss)
        log.debug("iteration %d loss %.6f", it, loss)
        if callback is not None and callback(it, net, loss):
            break
    return TrainResult(net, losses, config)


def loss_trace_csv(losses):
    lines = ["iteration,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(losses)]
    return "\n".join(lines) + "\n"
