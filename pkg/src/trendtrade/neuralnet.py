"""Dense ReLU classifier with softmax output, trained by mini-batch SGD.

Everything is written against numpy in float64. The default topology is
60 -> 500 -> 200 -> 40 -> 20 -> 2, with inverted dropout after the first two
hidden layers during training.
"""

from __future__ import annotations

import csv
import hashlib
import math
import struct
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArtifactError, ConfigurationError, TrainingError, ValidationError

INPUT_DIM = 60
LAYER_SIZES = (INPUT_DIM, 500, 200, 40, 20, 2)
DROPOUT_AFTER = (0, 1)
PROB_FLOOR = 1e-12


def class_index(trend: int) -> int:
    """Map a trend (+1 up / -1 down) to its softmax column (1 / 0)."""
    return 1 if trend > 0 else 0


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Network:
    """Immutable parameter set. ``weights[k]`` has shape (fan_in, fan_out)."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    horizon: int | None = None
    train_end: date | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValidationError("weights and biases must be non-empty and the same length")
        ws = tuple(_readonly(w) for w in self.weights)
        bs = tuple(_readonly(b) for b in self.biases)
        for k, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValidationError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k and w.shape[0] != ws[k - 1].shape[1]:
                raise ValidationError(f"layer {k}: fan-in {w.shape[0]} != {ws[k - 1].shape[1]}")
        if ws[-1].shape[1] != 2:
            raise ValidationError("output layer must have 2 units")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def all_finite(self) -> bool:
        return all(np.isfinite(w).all() and np.isfinite(b).all()
                   for w, b in zip(self.weights, self.biases))

    def with_params(self, weights, biases) -> "Network":
        return replace(self, weights=tuple(weights), biases=tuple(biases))


INIT_SCHEMES = ("gaussian", "he")


def init(
    seed: int,
    sizes: Sequence[int] = LAYER_SIZES,
    std: float = 0.01,
    scheme: str = "gaussian",
) -> Network:
    """Zero biases and Gaussian weights drawn layer by layer from one seeded generator.

    ``scheme="gaussian"`` uses a fixed ``std`` for every layer. ``"he"`` uses
    ``sqrt(2 / fan_in)`` per layer instead; the fixed 0.01 scale leaves the
    five-layer stack with ~1e-6 logits and SGD at lr 1e-3 does not leave that
    saddle within a practical number of epochs.
    """
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    weights = [
        rng.normal(0.0, std if scheme == "gaussian" else math.sqrt(2.0 / a), size=(a, b))
        for a, b in zip(sizes[:-1], sizes[1:])
    ]
    biases = [np.zeros(b) for b in sizes[1:]]
    return Network(tuple(weights), tuple(biases))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class Prediction:
    """Class probabilities ``(P(down), P(up))`` for one input."""

    probs: tuple[float, float]

    def __post_init__(self):
        p1, p2 = (float(p) for p in self.probs)
        if p1 < 0 or p2 < 0 or abs(p1 + p2 - 1.0) > 1e-9:
            raise ValidationError(f"invalid probabilities {self.probs}")
        object.__setattr__(self, "probs", (p1, p2))

    @property
    def hard(self) -> int:
        # ties go to the down class, like the label rule
        return 1 if self.probs[1] > self.probs[0] else -1

    @property
    def margin(self) -> float:
        return abs(self.probs[1] - self.probs[0])


@dataclass
class ForwardPass:
    """Result of :func:`forward`. ``inputs``/``masks`` are kept for backprop."""

    logits: np.ndarray
    probs: np.ndarray
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each dense layer
    pre: list[np.ndarray] = field(default_factory=list)     # pre-activations
    masks: list[np.ndarray | None] = field(default_factory=list)

    def predictions(self) -> list[Prediction]:
        return [Prediction(tuple(p)) for p in np.atleast_2d(self.probs)]


def forward(
    net: Network,
    features: np.ndarray,
    mode: str = "eval",
    seed: int | None = None,
    *,
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.5,
    dropout_after: Sequence[int] = DROPOUT_AFTER,
) -> ForwardPass:
    """Run the network on one feature vector or a (batch, 60) matrix.

    ``mode="train"`` applies inverted dropout after the hidden layers listed in
    ``dropout_after`` and needs either ``seed`` or ``rng`` for the masks.
    """
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != net.sizes[0]:
        raise ValidationError(f"expected {net.sizes[0]} features, got {x.shape[1]}")
    if not np.isfinite(x).all():
        raise ValidationError("non-finite input features")
    if mode not in ("eval", "train"):
        raise ValueError(f"unknown mode {mode!r}")
    train = mode == "train" and dropout_rate > 0
    if train and rng is None:
        if seed is None:
            raise ValueError("train mode needs a seed or rng for dropout masks")
        rng = np.random.default_rng(seed)

    fp = ForwardPass(logits=np.empty(0), probs=np.empty(0))
    h = x
    last = len(net.weights) - 1
    keep = 1.0 - dropout_rate
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        fp.inputs.append(h)
        z = h @ w + b
        fp.pre.append(z)
        if k == last:
            break
        h = np.maximum(z, 0.0)
        mask = None
        if train and k in dropout_after:
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        fp.masks.append(mask)
    fp.logits = fp.pre[-1]
    fp.probs = softmax(fp.logits)
    if single:
        fp.logits, fp.probs = fp.logits[0], fp.probs[0]
    return fp


def predict(net: Network, features: np.ndarray) -> Prediction:
    return Prediction(tuple(forward(net, features).probs))


def predict_proba(net: Network, features: np.ndarray, batch: int = 4096) -> np.ndarray:
    """Eval-mode class probabilities for a (n, 60) matrix, processed in chunks."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    out = np.empty((len(x), 2))
    for i in range(0, len(x), batch):
        out[i:i + batch] = forward(net, x[i:i + batch]).probs
    return out


def loss(probs, target: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of one prediction against class index ``target``.

    Returns the loss and its gradient with respect to the logits.
    """
    p = np.asarray(probs.probs if isinstance(probs, Prediction) else probs, dtype=np.float64)
    onehot = np.zeros_like(p)
    onehot[target] = 1.0
    value = -math.log(max(p[target], PROB_FLOOR))
    return value, p - onehot


def batch_loss(probs: np.ndarray, targets: np.ndarray) -> float:
    p = probs[np.arange(len(targets)), targets]
    return float(-np.log(np.maximum(p, PROB_FLOOR)).mean())


def backward(net: Network, fp: ForwardPass, targets: np.ndarray):
    """Gradients of the mean batch loss. Returns (weight_grads, bias_grads)."""
    probs = np.atleast_2d(fp.probs)
    n = len(probs)
    delta = probs.copy()
    delta[np.arange(n), targets] -= 1.0
    delta /= n
    gw: list[np.ndarray] = [None] * len(net.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(net.weights)  # type: ignore[list-item]
    for k in range(len(net.weights) - 1, -1, -1):
        gw[k] = fp.inputs[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k == 0:
            break
        delta = delta @ net.weights[k].T
        mask = fp.masks[k - 1]
        if mask is not None:
            delta = delta * mask
        delta = delta * (fp.pre[k - 1] > 0)
    return gw, gb


def sgd_step(
    net: Network,
    features: np.ndarray,
    targets: np.ndarray,
    lr: float,
    seed: int | None = None,
    *,
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.0,
    dropout_after: Sequence[int] = DROPOUT_AFTER,
) -> tuple[Network, float]:
    """One plain SGD update on a batch; returns the new network and the batch's mean loss."""
    targets = np.asarray(targets, dtype=np.intp)
    if len(targets) == 0:
        raise ValidationError("empty batch")
    mode = "train" if dropout_rate > 0 else "eval"
    if mode == "train" and rng is None:
        rng = np.random.default_rng(seed)
    fp = forward(net, features, mode, rng=rng, dropout_rate=dropout_rate,
                 dropout_after=dropout_after)
    value = batch_loss(np.atleast_2d(fp.probs), np.atleast_1d(targets))
    gw, gb = backward(net, fp, np.atleast_1d(targets))
    if not (math.isfinite(value) and all(np.isfinite(g).all() for g in gw + gb)):
        raise TrainingError(f"non-finite loss/gradient (loss={value}, lr={lr})")
    weights = [w - lr * g for w, g in zip(net.weights, gw)]
    biases = [b - lr * g for b, g in zip(net.biases, gb)]
    return net.with_params(weights, biases), value


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 100
    lr_initial: float = 1e-3
    lr_decay_factor: float = 5.0
    lr_floor: float = 1e-7
    dropout_rate: float = 0.5
    dropout_after: tuple[int, ...] = DROPOUT_AFTER
    init_std: float = 0.01
    init_scheme: str = "gaussian"
    layer_sizes: tuple[int, ...] = LAYER_SIZES
    patience: int = 3
    early_stop_patience: int = 5
    max_epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")
        if not 0 < self.lr_floor < self.lr_initial:
            raise ConfigurationError("need 0 < lr_floor < lr_initial")
        if self.batch_size < 1 or self.patience < 1 or self.early_stop_patience < 1:
            raise ConfigurationError("batch_size and patience values must be positive")
        if self.init_scheme not in INIT_SCHEMES:
            raise ConfigurationError(f"init_scheme must be one of {INIT_SCHEMES}")
        if self.lr_decay_factor <= 1:
            raise ConfigurationError("lr_decay_factor must exceed 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_error: float


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_error: float = 1.0
    stop_reason: str = ""

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "lr", "train_loss", "val_error"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.val_error)])


def classification_error(net: Network, features: np.ndarray, targets: np.ndarray) -> float:
    probs = predict_proba(net, features)
    hard = (probs[:, 1] > probs[:, 0]).astype(np.intp)
    return float(np.mean(hard != np.asarray(targets)))


def train(
    config: TrainConfig,
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: np.ndarray,
    val_y: np.ndarray,
    net: Network | None = None,
) -> tuple[Network, TrainingHistory]:
    """Train with validation-driven LR decay and early stopping.

    ``train_y``/``val_y`` are class indices (0 = down, 1 = up). After every
    epoch the validation classification error is measured; ``patience`` epochs
    without a new best divide the learning rate by ``lr_decay_factor``.
    Training stops once the rate drops below ``lr_floor``, after
    ``early_stop_patience`` consecutive decays without improvement, or at
    ``max_epochs``. The best-validation snapshot is returned.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    val_x = np.asarray(val_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.intp)
    val_y = np.asarray(val_y, dtype=np.intp)
    if len(train_x) == 0 or len(val_x) == 0:
        raise ConfigurationError("training and validation sets must be non-empty")
    if len(train_x) != len(train_y) or len(val_x) != len(val_y):
        raise ConfigurationError("features and labels differ in length")

    rng = np.random.default_rng(config.seed)
    if net is None:
        net = init(int(rng.integers(2**63)), config.layer_sizes, config.init_std,
                   config.init_scheme)
    history = TrainingHistory()
    best = net
    best_err = classification_error(net, val_x, val_y)
    history.best_val_error = best_err
    lr = config.lr_initial
    stale = 0
    decays_since_best = 0
    n = len(train_x)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            net, value = sgd_step(net, train_x[idx], train_y[idx], lr, rng=rng,
                                  dropout_rate=config.dropout_rate,
                                  dropout_after=config.dropout_after)
            total += value * len(idx)
        err = classification_error(net, val_x, val_y)
        history.records.append(EpochRecord(epoch, lr, total / n, err))
        if err < best_err:
            best, best_err = net, err
            history.best_epoch, history.best_val_error = epoch, err
            stale = decays_since_best = 0
            continue
        stale += 1
        if stale >= config.patience:
            stale = 0
            lr /= config.lr_decay_factor
            decays_since_best += 1
            if lr < config.lr_floor:
                history.stop_reason = "lr below floor"
                break
            if decays_since_best >= config.early_stop_patience:
                history.stop_reason = "no improvement after repeated decays"
                break
    else:
        history.stop_reason = "max epochs"
    return best, history


# -- gradient check -----------------------------------------------------------

@dataclass(frozen=True)
class GradCheckReport:
    per_layer: dict[str, float]
    tolerance: float
    h: float

    @property
    def max_rel_error(self) -> float:
        return max(self.per_layer.values())

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


# Gradients below this magnitude are compared on an absolute scale; central
# differences carry ~1e-11 of roundoff at h=1e-5.
GRAD_FLOOR = 1e-6


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), GRAD_FLOOR)
    return float(np.max(np.abs(a - b) / denom))


def grad_check(
    net: Network,
    features: np.ndarray,
    target: int,
    h: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare backprop against central differences of the loss, parameter by parameter.

    Dropout is disabled. ``target`` is a class index.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    t = np.array([target], dtype=np.intp)
    gw, gb = backward(net, forward(net, x), t)
    params = [np.array(w) for w in net.weights] + [np.array(b) for b in net.biases]
    n_layers = len(net.weights)

    def f() -> float:
        trial = net.with_params(params[:n_layers], params[n_layers:])
        return batch_loss(forward(trial, x).probs, t)

    per_layer: dict[str, float] = {}
    for i, (p, analytic) in enumerate(zip(params, gw + gb)):
        numeric = np.zeros_like(p)
        flat, nflat = p.reshape(-1), numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = f()
            flat[j] = orig - h
            down = f()
            flat[j] = orig
            nflat[j] = (up - down) / (2 * h)
        name = f"W{i + 1}" if i < n_layers else f"b{i - n_layers + 1}"
        per_layer[name] = _relative_error(analytic, numeric)
    return GradCheckReport(per_layer, tolerance, h)


# -- serialization ------------------------------------------------------------

MAGIC = b"TRNDNET\x00"
FORMAT_VERSION = 1
_DIGEST = 32


def save_network(net: Network, path) -> None:
    """Write the versioned little-endian model file with a SHA-256 trailer."""
    sizes = net.sizes
    header = MAGIC + struct.pack(
        "<IIiq" + "I" * len(sizes),
        FORMAT_VERSION,
        len(sizes),
        net.horizon if net.horizon is not None else -1,
        net.train_end.toordinal() if net.train_end is not None else -1,
        *sizes,
    )
    body = b"".join(
        np.ascontiguousarray(w, dtype="<f8").tobytes() + np.ascontiguousarray(b, dtype="<f8").tobytes()
        for w, b in zip(net.weights, net.biases)
    )
    payload = header + body
    Path(path).write_bytes(payload + hashlib.sha256(payload).digest())


def load_network(path) -> Network:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 20 + _DIGEST or not data.startswith(MAGIC):
        raise ArtifactError(f"{path}: not a model file")
    payload, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(payload).digest() != digest:
        raise ArtifactError(f"{path}: checksum mismatch")
    off = len(MAGIC)
    version, n_sizes, horizon, end_ord = struct.unpack_from("<IIiq", payload, off)
    if version != FORMAT_VERSION:
        raise ArtifactError(f"{path}: unsupported format version {version}")
    off += struct.calcsize("<IIiq")
    sizes = struct.unpack_from("<" + "I" * n_sizes, payload, off)
    off += 4 * n_sizes
    weights, biases = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(payload, dtype="<f8", count=a * b, offset=off).reshape(a, b)
        off += 8 * a * b
        bias = np.frombuffer(payload, dtype="<f8", count=b, offset=off)
        off += 8 * b
        weights.append(w.astype(np.float64))
        biases.append(bias.astype(np.float64))
    if off != len(payload):
        raise ArtifactError(f"{path}: trailing bytes in parameter block")
    return Network(
        tuple(weights),
        tuple(biases),
        horizon=horizon if horizon >= 0 else None,
        train_end=date.fromordinal(end_ord) if end_ord >= 0 else None,
    )
