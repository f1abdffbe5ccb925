"""Plain-numpy multilayer perceptron with manual backprop and sgd/adam.

The final layer is always identity (logits); hidden layers are relu. All
prediction ties break toward the lowest class index. Training scenarios:

    OT  plain cross-entropy, the sampler is never touched
    RT  cross-entropy plus an opposite term on a uniform not-y label
    SD  cross-entropy plus an opposite term on a label outside y's colony

Checkpoint layout (little-endian), version 1:

    u8  version
    u32 input_dim, u32 class_count, u32 n_layers
    per layer: u32 fan_out, u32 fan_in, u8 activation (0=relu, 1=identity)
    body: per layer, weight rows (row-major f64) then bias (f64)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .losses import CompositeLossConfig, batch_composite_loss_grad, softmax
from .sampler import RT, SD, SeededRng, resample_per_iteration, sample_opposite_rt
from .taxonomy import SemanticPrior

OT = "OT"
SCENARIOS = (OT, RT, SD)

RELU = "relu"
IDENTITY = "identity"
_ACT_CODES = {RELU: 0, IDENTITY: 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}

MLP3_HIDDEN = (256, 256, 256)

_CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Composite loss became non-finite during training."""


class CheckpointError(ValueError):
    """Malformed model checkpoint bytes."""


@dataclass
class Layer:
    weight: np.ndarray  # [fan_out, fan_in]
    bias: np.ndarray  # [fan_out]
    activation: str


@dataclass
class MlpModel:
    layers: list[Layer]
    input_dim: int
    class_count: int

    def __post_init__(self):
        dim = self.input_dim
        for i, layer in enumerate(self.layers):
            fan_out, fan_in = layer.weight.shape
            if fan_in != dim:
                raise ValueError(
                    f"layer {i} expects fan_in {fan_in}, previous width is {dim}"
                )
            if layer.bias.shape != (fan_out,):
                raise ValueError(f"layer {i} bias shape {layer.bias.shape}")
            if layer.activation not in _ACT_CODES:
                raise ValueError(f"layer {i} activation {layer.activation!r}")
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise ValueError(f"layer {i} has non-finite parameters")
            dim = fan_out
        if dim != self.class_count:
            raise ValueError(
                f"final width {dim} != class_count {self.class_count}"
            )
        if self.layers and self.layers[-1].activation != IDENTITY:
            raise ValueError("final layer must use the identity activation")


@dataclass(frozen=True)
class SolverConfig:
    """sgd (momentum) or adam, with the shared batching knobs."""

    kind: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9  # sgd only
    beta1: float = 0.9  # adam only
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128
    epochs: int = 10

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"solver kind must be 'sgd' or 'adam', got {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


def sgd_defaults(epochs: int = 10, batch_size: int = 128) -> SolverConfig:
    return SolverConfig(
        kind="sgd", learning_rate=0.05, momentum=0.9,
        batch_size=batch_size, epochs=epochs,
    )


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    probs: np.ndarray
    label: int


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    positive_loss: float
    opposite_loss: float
    composite_loss: float
    train_accuracy: float
    test_accuracy: float


@dataclass
class TrainingLog:
    epochs: list[EpochStats] = field(default_factory=list)
    sampler_draws: int = 0


def init_mlp(
    input_dim: int,
    hidden_sizes,
    class_count: int,
    rng: SeededRng,
    dtype=np.float64,
) -> MlpModel:
    """He-initialized MLP: std sqrt(2/fan_in) weights, zero biases."""
    widths = [input_dim, *hidden_sizes, class_count]
    layers = []
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        w = rng.normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        layers.append(
            Layer(
                weight=w.astype(dtype),
                bias=np.zeros(fan_out, dtype=dtype),
                activation=IDENTITY if i == len(widths) - 2 else RELU,
            )
        )
    return MlpModel(layers=layers, input_dim=input_dim, class_count=class_count)


def _forward_batch(model: MlpModel, X: np.ndarray):
    """Returns (per-layer inputs, pre-activations, logits)."""
    inputs = [X]
    pre = []
    a = X
    for layer in model.layers:
        z = a @ layer.weight.T + layer.bias
        pre.append(z)
        a = np.maximum(z, 0) if layer.activation == RELU else z
        inputs.append(a)
    return inputs, pre, inputs[-1]


def logits_batch(model: MlpModel, X: np.ndarray) -> np.ndarray:
    a = X
    for layer in model.layers:
        z = a @ layer.weight.T + layer.bias
        a = np.maximum(z, 0) if layer.activation == RELU else z
    return a


def forward(model: MlpModel, x: np.ndarray) -> Prediction:
    """Single-sample prediction; argmax ties go to the lowest index."""
    x = np.asarray(x, dtype=model.layers[0].weight.dtype)
    if x.shape != (model.input_dim,):
        raise ValueError(
            f"input shape {x.shape} does not match input_dim {model.input_dim}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("input features must be finite")
    logits = logits_batch(model, x[None, :])[0]
    probs = softmax(logits.astype(np.float64))
    return Prediction(logits=logits, probs=probs, label=int(np.argmax(probs)))


def _backprop(model: MlpModel, inputs, pre, dlogits):
    """Parameter gradients given d(loss)/d(logits), batch already reduced."""
    grads = [None] * len(model.layers)
    delta = dlogits
    for li in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[li]
        grads[li] = (delta.T @ inputs[li], delta.sum(axis=0))
        if li > 0:
            delta = delta @ layer.weight
            if model.layers[li - 1].activation == RELU:
                delta = delta * (pre[li - 1] > 0)
    return grads


def backward(
    model: MlpModel,
    x: np.ndarray,
    y: int,
    y_bar,
    cfg: CompositeLossConfig,
):
    """Exact composite-loss gradients for one sample: [(dW, db), ...]."""
    x = np.asarray(x, dtype=np.float64)[None, :]
    inputs, pre, logits = _forward_batch(model, x)
    yb = None if y_bar is None else np.array([int(getattr(y_bar, "value", y_bar))])
    _, _, dz = batch_composite_loss_grad(logits, np.array([y]), yb, cfg)
    return _backprop(model, inputs, pre, dz)


class _SolverState:
    def __init__(self, model: MlpModel, cfg: SolverConfig):
        self.cfg = cfg
        self.t = 0
        shapes = [(l.weight, l.bias) for l in model.layers]
        self.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in shapes]
        if cfg.kind == "adam":
            self.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in shapes]

    def step(self, model: MlpModel, grads):
        cfg = self.cfg
        self.t += 1
        if cfg.kind == "sgd":
            for layer, (gw, gb), (mw, mb) in zip(model.layers, grads, self.m):
                mw *= cfg.momentum
                mw += gw
                mb *= cfg.momentum
                mb += gb
                layer.weight -= cfg.learning_rate * mw
                layer.bias -= cfg.learning_rate * mb
        else:
            c1 = 1.0 - cfg.beta1**self.t
            c2 = 1.0 - cfg.beta2**self.t
            for layer, (gw, gb), (mw, mb), (vw, vb) in zip(
                model.layers, grads, self.m, self.v
            ):
                for g, m, v, param in ((gw, mw, vw, layer.weight), (gb, mb, vb, layer.bias)):
                    m *= cfg.beta1
                    m += (1 - cfg.beta1) * g
                    v *= cfg.beta2
                    v += (1 - cfg.beta2) * np.square(g)
                    param -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def train(
    model: MlpModel,
    train_ds,
    prior: SemanticPrior | None,
    scenario: str,
    solver: SolverConfig,
    loss_cfg: CompositeLossConfig,
    rng: SeededRng,
    test_ds=None,
    loss_reduction: str = "mean",
    dtype=np.float64,
) -> TrainingLog:
    """Minibatch training; returns per-epoch mean losses and accuracies.

    Train accuracy is the running accuracy of the pre-update batch
    predictions over the epoch. OT performs zero sampler draws; RT/SD draw
    one fresh opposite label per sample per iteration. Raises
    TrainingDivergedError as soon as a batch loss goes non-finite.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
    if scenario == SD and prior is None:
        raise ValueError("SD training requires a semantic prior")
    if loss_reduction not in ("mean", "sum"):
        raise ValueError(f"loss_reduction must be 'mean' or 'sum', got {loss_reduction!r}")
    X = np.asarray(train_ds.features, dtype=dtype)
    y = np.asarray(train_ds.labels, dtype=np.int64)
    if prior is not None and y.max() >= prior.class_count:
        raise ValueError("dataset labels exceed the prior's class count")
    n = X.shape[0]
    state = _SolverState(model, solver)
    log = TrainingLog()
    for epoch in range(1, solver.epochs + 1):
        order = rng.permutation(n)
        pos_sum = opp_sum = 0.0
        hits = 0
        for start in range(0, n, solver.batch_size):
            idx = order[start : start + solver.batch_size]
            xb, yb = X[idx], y[idx]
            inputs, pre, logits = _forward_batch(model, xb)
            hits += int(np.sum(np.argmax(logits, axis=1) == yb))
            if scenario == OT:
                ybar = None
            else:
                if scenario == RT and prior is None:
                    # RT never consults the taxonomy, only the class count
                    drawn = [
                        sample_opposite_rt(model.class_count, int(v), rng)
                        for v in yb
                    ]
                else:
                    drawn = resample_per_iteration(yb, prior, rng, scenario)
                log.sampler_draws += len(drawn)
                ybar = np.array([o.value for o in drawn], dtype=np.int64)
            pos, opp, dz = batch_composite_loss_grad(logits, yb, ybar, loss_cfg, dtype)
            batch_comp = loss_cfg.alpha1 * float(pos.mean()) + loss_cfg.alpha2 * float(
                opp.mean()
            )
            if not np.isfinite(batch_comp):
                raise TrainingDivergedError(
                    f"composite loss {batch_comp!r} at epoch {epoch}"
                )
            if loss_reduction == "mean":
                dz = dz / dtype(len(idx))
            state.step(model, _backprop(model, inputs, pre, dz))
            pos_sum += float(pos.sum())
            opp_sum += float(opp.sum())
        pos_mean = pos_sum / n
        opp_mean = opp_sum / n
        log.epochs.append(
            EpochStats(
                epoch=epoch,
                positive_loss=pos_mean,
                opposite_loss=opp_mean,
                composite_loss=loss_cfg.alpha1 * pos_mean + loss_cfg.alpha2 * opp_mean,
                train_accuracy=hits / n,
                test_accuracy=evaluate(model, test_ds) if test_ds is not None else float("nan"),
            )
        )
    return log


def evaluate(model: MlpModel, dataset, chunk: int = 4096) -> float:
    """Fraction of samples whose argmax prediction matches the label."""
    X = np.asarray(dataset.features, dtype=model.layers[0].weight.dtype)
    y = np.asarray(dataset.labels, dtype=np.int64)
    hits = 0
    for start in range(0, X.shape[0], chunk):
        logits = logits_batch(model, X[start : start + chunk])
        hits += int(np.sum(np.argmax(logits, axis=1) == y[start : start + chunk]))
    return hits / X.shape[0]


def save_model(model: MlpModel, path) -> None:
    """Write the checkpoint layout documented in the module docstring."""
    parts = [struct.pack("<BIII", _CHECKPOINT_VERSION, model.input_dim,
                         model.class_count, len(model.layers))]
    for layer in model.layers:
        fan_out, fan_in = layer.weight.shape
        parts.append(struct.pack("<IIB", fan_out, fan_in, _ACT_CODES[layer.activation]))
    for layer in model.layers:
        parts.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise CheckpointError(f"truncated checkpoint at byte offset {off}")
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    version, input_dim, class_count, n_layers = take("<BIII")
    if version != _CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    dims = [take("<IIB") for _ in range(n_layers)]
    layers = []
    for fan_out, fan_in, act in dims:
        if act not in _ACT_NAMES:
            raise CheckpointError(f"unknown activation code {act}")
        n_w, n_b = fan_out * fan_in, fan_out
        need = (n_w + n_b) * 8
        if off + need > len(blob):
            raise CheckpointError(f"truncated checkpoint at byte offset {off}")
        w = np.frombuffer(blob, dtype="<f8", count=n_w, offset=off).reshape(fan_out, fan_in)
        off += n_w * 8
        b = np.frombuffer(blob, dtype="<f8", count=n_b, offset=off)
        off += n_b * 8
        layers.append(Layer(weight=w.copy(), bias=b.copy(), activation=_ACT_NAMES[act]))
    if off != len(blob):
        raise CheckpointError(f"{len(blob) - off} trailing bytes after parameters")
    return MlpModel(layers=layers, input_dim=input_dim, class_count=class_count)
