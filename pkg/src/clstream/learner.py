"""A small numpy classifier: MLP or the two-conv CNN, trained with SGD/Adam.

Parameters are plain float64 arrays held in ``Network.params`` under names
such as ``"fc0.weight"`` or ``"head.bias"``. Layers read them from there at
call time, so optimisers update them in place.

Convolutions run channels-last (NHWC) through an im2col matmul.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .datasets import LabeledDataset, apply_transform
from .stream import TaskSpec

MASK_VALUE = -1e9
WIDTHS = (1, 2, 4, 8, 16)


class NumericalError(ArithmeticError):
    """A loss or parameter update became non-finite."""


# --- layers ------------------------------------------------------------------


class Dense:
    def __init__(self, name: str, fan_in: int, fan_out: int):
        self.name, self.fan_in, self.fan_out = name, fan_in, fan_out

    def init(self, params, rng):
        bound = 1.0 / math.sqrt(self.fan_in)
        params[f"{self.name}.weight"] = rng.uniform(-bound, bound, (self.fan_out, self.fan_in))
        params[f"{self.name}.bias"] = rng.uniform(-bound, bound, self.fan_out)

    def forward(self, params, x):
        out = x @ params[f"{self.name}.weight"].T + params[f"{self.name}.bias"]
        return out, x

    def backward(self, params, cache, dout, grads, need_dx=True):
        x = cache
        grads[f"{self.name}.weight"] = dout.T @ x
        grads[f"{self.name}.bias"] = dout.sum(axis=0)
        return dout @ params[f"{self.name}.weight"] if need_dx else None


class Conv2d:
    """Valid (unpadded) stride-1 convolution on NHWC input.

    The weight is stored torch-style as ``(out, in, k, k)``.
    """

    def __init__(self, name: str, in_channels: int, out_channels: int, kernel: int):
        self.name = name
        self.cin, self.cout, self.k = in_channels, out_channels, kernel

    def init(self, params, rng):
        bound = 1.0 / math.sqrt(self.cin * self.k * self.k)
        params[f"{self.name}.weight"] = rng.uniform(
            -bound, bound, (self.cout, self.cin, self.k, self.k))
        params[f"{self.name}.bias"] = rng.uniform(-bound, bound, self.cout)

    def forward(self, params, x):
        B, H, W, _ = x.shape
        k = self.k
        Ho, Wo = H - k + 1, W - k + 1
        # (B, Ho, Wo, Cin, k, k) -> rows of Cin*k*k matching the weight layout
        cols = sliding_window_view(x, (k, k), axis=(1, 2)).reshape(B * Ho * Wo, -1)
        wmat = params[f"{self.name}.weight"].reshape(self.cout, -1)
        out = cols @ wmat.T + params[f"{self.name}.bias"]
        return out.reshape(B, Ho, Wo, self.cout), (cols, x.shape)

    def backward(self, params, cache, dout, grads, need_dx=True):
        cols, (B, H, W, Cin) = cache
        k = self.k
        d2 = dout.reshape(-1, self.cout)
        grads[f"{self.name}.weight"] = (d2.T @ cols).reshape(self.cout, Cin, k, k)
        grads[f"{self.name}.bias"] = d2.sum(axis=0)
        if not need_dx:
            return None
        Ho, Wo = H - k + 1, W - k + 1
        wmat = params[f"{self.name}.weight"].reshape(self.cout, -1)
        dcols = (d2 @ wmat).reshape(B, Ho, Wo, Cin, k, k)
        dx = np.zeros((B, H, W, Cin))
        for i in range(k):
            for j in range(k):
                dx[:, i:i + Ho, j:j + Wo, :] += dcols[..., i, j]
        return dx


class MaxPool2:
    name = "pool"

    def init(self, params, rng):
        pass

    def forward(self, params, x):
        B, H, W, C = x.shape
        H2, W2 = H // 2, W // 2
        x = x[:, :2 * H2, :2 * W2, :]
        blocks = x.reshape(B, H2, 2, W2, 2, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, H2, W2, C, 4)
        idx = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return out, (idx, (B, H, W, C))

    def backward(self, params, cache, dout, grads, need_dx=True):
        idx, (B, H, W, C) = cache
        H2, W2 = H // 2, W // 2
        d4 = np.zeros((B, H2, W2, C, 4))
        np.put_along_axis(d4, idx[..., None], dout[..., None], axis=-1)
        dx = np.zeros((B, H, W, C))
        dx[:, :2 * H2, :2 * W2, :] = (
            d4.reshape(B, H2, W2, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(B, 2 * H2, 2 * W2, C))
        return dx


class ReLU:
    name = "relu"

    def init(self, params, rng):
        pass

    def forward(self, params, x):
        return np.maximum(x, 0.0), x > 0

    def backward(self, params, cache, dout, grads, need_dx=True):
        return dout * cache


class Reshape:
    name = "reshape"

    def __init__(self, shape):
        self.shape = tuple(shape)

    def init(self, params, rng):
        pass

    def forward(self, params, x):
        return x.reshape((len(x),) + self.shape), x.shape

    def backward(self, params, cache, dout, grads, need_dx=True):
        return dout.reshape(cache)


# --- network -----------------------------------------------------------------


class Network:
    """Sequential stack of layers ending in a single head over all classes."""

    def __init__(self, layers, input_dim: int, num_classes: int, architecture: dict,
                 seed: int = 0):
        self.layers = list(layers)
        self.input_dim = input_dim
        self.num_classes = num_classes
        self.architecture = dict(architecture)
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init(self.params, rng)
        if self.params["head.weight"].shape[0] != num_classes:
            raise ValueError("head must have one output per class")
        self._first_param_layer = min(
            i for i, layer in enumerate(self.layers) if isinstance(layer, (Dense, Conv2d)))

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, x, keep: bool = False):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected inputs of shape (B, {self.input_dim}), got {x.shape}")
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(self.params, x)
            if keep:
                caches.append(cache)
        return (x, caches) if keep else x

    def backward(self, dlogits, caches) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        d = dlogits
        for i in range(len(self.layers) - 1, self._first_param_layer - 1, -1):
            need_dx = i > self._first_param_layer
            d = self.layers[i].backward(self.params, caches[i], d, grads, need_dx=need_dx)
        return {name: grads[name] for name in self.params}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_state_dict(self, state) -> None:
        for k, v in self.params.items():
            if state[k].shape != v.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {v.shape}")
            v[...] = state[k]

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def checksum(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for k, v in self.params.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()


def build_mlp(input_dim: int, num_classes: int, hidden=(50,), width: int = 1,
              seed: int = 0) -> Network:
    dims = [input_dim] + [h * width for h in hidden]
    layers = []
    for i in range(len(hidden)):
        layers += [Dense(f"fc{i}", dims[i], dims[i + 1]), ReLU()]
    layers.append(Dense("head", dims[-1], num_classes))
    arch = {"kind": "mlp", "hidden": list(hidden), "width": width}
    return Network(layers, input_dim, num_classes, arch, seed)


def build_cnn(num_classes: int, width: int = 1, image_shape=(28, 28), channels=(10, 20),
              fc: int = 50, kernel: int = 5, seed: int = 0) -> Network:
    """conv(10k) -> pool -> relu -> conv(20k) -> pool -> relu -> fc(50k) -> relu -> head."""
    H, W = image_shape
    c1, c2, f = channels[0] * width, channels[1] * width, fc * width
    h1, w1 = (H - kernel + 1) // 2, (W - kernel + 1) // 2
    h2, w2 = (h1 - kernel + 1) // 2, (w1 - kernel + 1) // 2
    if h2 < 1 or w2 < 1:
        raise ValueError(f"image {image_shape} too small for two {kernel}x{kernel} convolutions")
    layers = [
        Reshape((H, W, 1)),
        Conv2d("conv1", 1, c1, kernel), MaxPool2(), ReLU(),
        Conv2d("conv2", c1, c2, kernel), MaxPool2(), ReLU(),
        Reshape((h2 * w2 * c2,)),
        Dense("fc1", h2 * w2 * c2, f), ReLU(),
        Dense("head", f, num_classes),
    ]
    arch = {"kind": "cnn", "image_shape": list(image_shape), "channels": list(channels),
            "fc": fc, "kernel": kernel, "width": width}
    return Network(layers, H * W, num_classes, arch, seed)


def build_network(architecture: str, input_dim: int, num_classes: int, width: int = 1,
                  hidden=(50,), image_shape=None, seed: int = 0) -> Network:
    if width not in WIDTHS:
        raise ValueError(f"width multiplier must be one of {WIDTHS}")
    if architecture == "mlp":
        return build_mlp(input_dim, num_classes, hidden, width, seed)
    if architecture == "cnn":
        image_shape = tuple(image_shape or (28, 28))
        if image_shape[0] * image_shape[1] != input_dim:
            raise ValueError(f"input_dim {input_dim} is not a {image_shape} image")
        return build_cnn(num_classes, width, image_shape, seed=seed)
    raise ValueError(f"unknown architecture {architecture!r}")


def save_checkpoint(path, net: Network, **extra) -> None:
    """Named tensors (``param/<name>``) plus any extra arrays, as an .npz file."""
    arrays = {f"param/{k}": v for k, v in net.params.items()}
    arrays.update({f"extra/{k}": np.asarray(v) for k, v in extra.items()})
    np.savez(path, **arrays)


def load_checkpoint(path, net: Network) -> dict[str, np.ndarray]:
    with np.load(path) as data:
        net.load_state_dict({k[6:]: data[k] for k in data.files if k.startswith("param/")})
        return {k[6:]: data[k] for k in data.files if k.startswith("extra/")}


def forward(net: Network, inputs) -> np.ndarray:
    return net.forward(inputs)


# --- loss --------------------------------------------------------------------


@dataclass
class TrainBatch:
    inputs: np.ndarray
    targets: np.ndarray
    present_classes: frozenset = None

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.present_classes is None:
            self.present_classes = frozenset(int(c) for c in np.unique(self.targets))
        else:
            self.present_classes = frozenset(int(c) for c in self.present_classes)
        if not set(int(c) for c in self.targets) <= self.present_classes:
            raise ValueError("every target must be a present class")


def mask_logits(logits, present_classes) -> np.ndarray:
    present = sorted(present_classes)
    if not present:
        raise ValueError("present_classes is empty")
    out = np.full_like(np.asarray(logits, dtype=np.float64), MASK_VALUE)
    out[..., present] = np.asarray(logits)[..., present]
    return out


def cross_entropy(logits, targets) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and the softmax probabilities."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(len(targets)), targets].mean()
    return float(loss), np.exp(logp)


def loss_and_grads(net: Network, batch: TrainBatch, masking: bool):
    logits, caches = net.forward(batch.inputs, keep=True)
    if masking:
        logits = mask_logits(logits, batch.present_classes)
    loss, probs = cross_entropy(logits, batch.targets)
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss}")
    B = len(batch.targets)
    dlogits = probs
    dlogits[np.arange(B), batch.targets] -= 1.0
    dlogits /= B
    if masking:
        # masked logits are constants, so nothing flows back to their rows
        absent = [c for c in range(net.num_classes) if c not in batch.present_classes]
        dlogits[:, absent] = 0.0
    return loss, net.backward(dlogits, caches)


# --- optimisers --------------------------------------------------------------


@dataclass
class Optimizer:
    kind: str = "sgd"
    lr: float = 0.01
    momentum: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    buffers: dict = field(default_factory=dict, repr=False)
    steps: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")

    def fresh(self) -> "Optimizer":
        """Same hyperparameters, empty state."""
        return Optimizer(self.kind, self.lr, self.momentum, self.betas, self.eps)

    def _buffer(self, key, like):
        if key not in self.buffers:
            self.buffers[key] = np.zeros_like(like)
        return self.buffers[key]

    def step(self, net: Network, grads) -> None:
        self.steps += 1
        updates = {}
        for name, p in net.params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != {p.shape}")
            if self.kind == "sgd":
                updates[name] = self.lr * g
            elif self.kind == "sgd_momentum":
                v = self._buffer(("v", name), p)
                v *= self.momentum
                v += g
                updates[name] = self.lr * v
            else:
                b1, b2 = self.betas
                m = self._buffer(("m", name), p)
                v = self._buffer(("v", name), p)
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                m_hat = m / (1 - b1**self.steps)
                v_hat = v / (1 - b2**self.steps)
                updates[name] = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        for name, u in updates.items():
            if not np.isfinite(u).all():
                raise NumericalError(f"non-finite update for {name}")
        for name, u in updates.items():
            net.params[name] -= u


def step(opt: Optimizer, net: Network, grads):
    opt.step(net, grads)
    return net, opt


# --- training / evaluation -----------------------------------------------------


@dataclass
class TrainStats:
    mean_loss: float
    steps: int
    epoch_losses: list[float] = field(default_factory=list)
    epoch_accuracies: list[float] = field(default_factory=list)
    converged: bool = True


def task_arrays(task: TaskSpec, dataset: LabeledDataset):
    """Training inputs/targets of a task with its transform applied."""
    X = apply_transform(dataset.features[task.sample_ids], task.transform)
    return X, dataset.labels[task.sample_ids]


def train_arrays(net: Network, opt: Optimizer, X, y, epochs: int, batch_size: int,
                 masking: bool, rng: np.random.Generator) -> TrainStats:
    if len(y) == 0:
        raise ValueError("cannot train on an empty task")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    steps, losses = 0, []
    for _ in range(epochs):
        order = rng.permutation(len(y))
        total, count = 0.0, 0
        for start in range(0, len(y), batch_size):
            ids = order[start:start + batch_size]
            loss, grads = loss_and_grads(net, TrainBatch(X[ids], y[ids]), masking)
            opt.step(net, grads)
            steps += 1
            total += loss * len(ids)
            count += len(ids)
        losses.append(total / count)
    mean = float(np.mean(losses)) if losses else float("nan")
    return TrainStats(mean, steps, losses)


def train_task(net: Network, opt: Optimizer, task: TaskSpec, dataset: LabeledDataset,
               epochs: int, batch_size: int, masking: bool,
               rng: np.random.Generator) -> TrainStats:
    X, y = task_arrays(task, dataset)
    return train_arrays(net, opt, X, y, epochs, batch_size, masking, rng)


def predict(net: Network, X, classes=None, batch_size: int = 500) -> np.ndarray:
    """Argmax predictions, optionally restricted to a subset of classes."""
    X = np.asarray(X, dtype=np.float64)
    cols = None if classes is None else np.array(sorted(classes))
    preds = np.empty(len(X), dtype=np.int64)
    for start in range(0, len(X), batch_size):
        logits = net.forward(X[start:start + batch_size])
        if cols is None:
            preds[start:start + batch_size] = logits.argmax(axis=1)
        else:
            preds[start:start + batch_size] = cols[logits[:, cols].argmax(axis=1)]
    return preds


def accuracy_on(net: Network, X, y, classes=None) -> float:
    return float((predict(net, X, classes) == np.asarray(y)).mean())


def evaluate(net: Network, test: LabeledDataset, classes=None):
    """Overall accuracy and per-class accuracy vector (NaN where a class has no samples).

    With ``classes`` the evaluation keeps only those classes' samples and takes
    the argmax over their logits alone.
    """
    if classes is None:
        X, y = test.features, test.labels
    else:
        ids = np.sort(np.concatenate([test.class_index[c] for c in classes]))
        X, y = test.features[ids], test.labels[ids]
    correct = predict(net, X, classes) == y
    totals = np.bincount(y, minlength=net.num_classes)
    hits = np.bincount(y, weights=correct, minlength=net.num_classes)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(totals > 0, hits / np.maximum(totals, 1), np.nan)
    return float(correct.mean()), per_class
