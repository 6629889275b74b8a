"""Latent feature shifter: small MLPs mapping concat(z, label) to a shifted z.

Forward and backward passes are written out in numpy. All training math is
float64; a trained model is narrowed to float32-representable weights so
that saving and reloading it is lossless.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import npyio
from .errors import FormatError, InvalidArgument, TrainingDiverged
from .numerics import as_batch, mae, mse, r2, rng_for
from .pairs import PairsDataset

LEAKY_SLOPE = 0.01
ACTIVATIONS = ("none", "relu", "leaky_relu")
MODEL_FORMAT = "latentshift-model"
MODEL_MANIFEST = "model.json"

# hidden stacks per architecture; ("drop", rate) entries are dropout layers
_HIDDEN = {
    "a": [(1024, "relu")],
    "b": [(256, "relu")],
    "c": [(1024, "relu"), (2048, "relu"), (1024, "relu")],
    "d": [(256, "leaky_relu"), (128, "leaky_relu"), (256, "leaky_relu")],
    "e": [(1024, "leaky_relu"), ("drop", 0.2), (1024, "leaky_relu"), ("drop", 0.2),
          (1024, "leaky_relu"), ("drop", 0.2)],
}
ARCH_NAMES = tuple(_HIDDEN)


@dataclass(frozen=True)
class Layer:
    kind: str  # "dense" | "dropout"
    width: int = 0
    rate: float = 0.0
    activation: str = "none"


@dataclass(frozen=True)
class ArchSpec:
    name: str
    d: int
    k: int
    layers: tuple[Layer, ...]

    def __post_init__(self):
        dense = [l for l in self.layers if l.kind == "dense"]
        if not dense or dense[-1].width != self.d:
            raise InvalidArgument("the last dense layer must emit d outputs")
        for l in self.layers:
            if l.kind == "dense" and (l.width < 1 or l.activation not in ACTIVATIONS):
                raise InvalidArgument(f"bad dense layer {l}")
            if l.kind == "dropout" and not 0.0 <= l.rate < 1.0:
                raise InvalidArgument(f"bad dropout rate {l.rate}")
            if l.kind not in ("dense", "dropout"):
                raise InvalidArgument(f"unknown layer kind {l.kind!r}")

    @property
    def input_width(self) -> int:
        return self.d + self.k

    def dense_shapes(self) -> list[tuple[int, int]]:
        """(out, in) for each dense layer in order."""
        shapes, fan_in = [], self.input_width
        for l in self.layers:
            if l.kind == "dense":
                shapes.append((l.width, fan_in))
                fan_in = l.width
        return shapes

    def to_dict(self) -> dict:
        return {"name": self.name, "d": self.d, "k": self.k, "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, data: dict) -> "ArchSpec":
        return cls(name=data["name"], d=int(data["d"]), k=int(data["k"]),
                   layers=tuple(Layer(**l) for l in data["layers"]))


def build_arch(name: str, d: int, k: int = 1, max_width: int | None = None) -> ArchSpec:
    """Canonical architecture; ``max_width`` rescales hidden widths for toy-size checks."""
    if name not in _HIDDEN:
        raise InvalidArgument(f"unknown architecture {name!r}; choose from {ARCH_NAMES}")
    if d < 1 or k < 1:
        raise InvalidArgument(f"need d >= 1 and k >= 1, got d={d}, k={k}")
    hidden = _HIDDEN[name]
    widest = max(w for w, _ in hidden if w != "drop")
    layers = []
    for w, extra in hidden:
        if w == "drop":
            layers.append(Layer("dropout", rate=extra))
            continue
        if max_width is not None:
            w = max(1, round(w * max_width / widest))
        layers.append(Layer("dense", width=w, activation=extra))
    layers.append(Layer("dense", width=d, activation="none"))
    return ArchSpec(name=name, d=d, k=k, layers=tuple(layers))


def param_count(spec: ArchSpec) -> int:
    return sum(o * i + o for o, i in spec.dense_shapes())


def init_params(spec: ArchSpec, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    params = []
    for out, fan_in in spec.dense_shapes():
        bound = 1.0 / math.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(out, fan_in))
        b = rng.uniform(-bound, bound, size=out)
        params.append((W, b))
    return params


def _activate(x, kind):
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        return np.where(x > 0.0, x, LEAKY_SLOPE * x)
    return x


def _activation_grad(pre, kind):
    if kind == "relu":
        return (pre > 0.0).astype(pre.dtype)
    if kind == "leaky_relu":
        return np.where(pre > 0.0, 1.0, LEAKY_SLOPE)
    return None


def mlp_forward(spec: ArchSpec, params, X: np.ndarray, rng: np.random.Generator | None = None):
    """Batch forward pass. Dropout is applied only when an rng is given.

    Returns (output, cache) where cache feeds :func:`mlp_backward`.
    """
    h = X
    cache = []
    i = 0
    for layer in spec.layers:
        if layer.kind == "dense":
            W, b = params[i]
            i += 1
            pre = h @ W.T + b
            cache.append(("dense", h, pre, layer.activation))
            h = _activate(pre, layer.activation)
        elif rng is not None and layer.rate > 0.0:
            keep = 1.0 - layer.rate
            mask = (rng.random(h.shape) < keep) / keep
            cache.append(("dropout", mask))
            h = h * mask
    return h, cache


def mlp_backward(spec: ArchSpec, params, cache, grad_out: np.ndarray):
    """Gradients of a scalar loss w.r.t. every (W, b), given dLoss/dOutput."""
    grads = [None] * len(params)
    i = len(params)
    g = grad_out
    for entry in reversed(cache):
        if entry[0] == "dropout":
            g = g * entry[1]
            continue
        _, h_in, pre, act = entry
        i -= 1
        dact = _activation_grad(pre, act)
        if dact is not None:
            g = g * dact
        W = params[i][0]
        grads[i] = (g.T @ h_in, g.sum(axis=0))
        if i > 0:
            g = g @ W
    return grads


def mse_loss_and_grad(spec: ArchSpec, params, X, T, rng=None):
    """Mean squared error over batch and output coordinates, with its gradients."""
    out, cache = mlp_forward(spec, params, X, rng)
    diff = out - T
    loss = float(np.mean(diff * diff))
    grads = mlp_backward(spec, params, cache, (2.0 / diff.size) * diff)
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    epochs: int = 10
    batch_size: int = 16
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidArgument("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidArgument("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls(m=[(np.zeros_like(W), np.zeros_like(b)) for W, b in params],
                   v=[(np.zeros_like(W), np.zeros_like(b)) for W, b in params])


def adam_step(params, grads, state: AdamState, cfg: TrainConfig):
    """One Adam update with bias correction, applied in place."""
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for layer_p, layer_g, layer_m, layer_v in zip(params, grads, state.m, state.v):
        for p, g, m, v in zip(layer_p, layer_g, layer_m, layer_v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return params, state


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    initial_valid_loss: float = float("nan")

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,valid_loss", f"0,,{self.initial_valid_loss!r}"]
        for e, (t, v) in enumerate(zip(self.train_loss, self.valid_loss), start=1):
            lines.append(f"{e},{t!r},{v!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class ShifterModel:
    spec: ArchSpec
    params: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.spec.dense_shapes()
        if len(self.params) != len(shapes):
            raise InvalidArgument(f"expected {len(shapes)} dense layers, got {len(self.params)}")
        for (W, b), (out, fan_in) in zip(self.params, shapes):
            if W.shape != (out, fan_in) or b.shape != (out,):
                raise InvalidArgument(f"weight shapes {W.shape}, {b.shape} do not match layer ({out}, {fan_in})")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise InvalidArgument("model weights must be finite")

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def k(self) -> int:
        return self.spec.k

    def narrowed(self) -> "ShifterModel":
        """Copy whose weights are exactly representable in float32."""
        p = tuple((W.astype(np.float32).astype(np.float64), b.astype(np.float32).astype(np.float64))
                  for W, b in self.params)
        return ShifterModel(self.spec, p, dict(self.metadata))


def zero_model(spec: ArchSpec) -> ShifterModel:
    return ShifterModel(spec, tuple((np.zeros(s), np.zeros(s[0])) for s in spec.dense_shapes()))


def _label_matrix(label, n, k):
    lab = np.asarray(label, dtype=np.float64)
    if lab.ndim == 0:
        lab = np.full((n, k), float(lab))
    elif lab.ndim == 1:
        if lab.shape[0] != k:
            raise InvalidArgument(f"label has length {lab.shape[0]}, model expects k={k}")
        lab = np.broadcast_to(lab, (n, k))
    elif lab.shape != (n, k):
        raise InvalidArgument(f"label matrix shape {lab.shape} does not match ({n}, {k})")
    return lab


def forward(model: ShifterModel, input_latent, label=1.0, training_mode: bool = False,
            seed: int | None = None) -> np.ndarray:
    """Shift one latent (1-D) or a batch (n, d) given its label(s)."""
    single = np.ndim(input_latent) == 1
    z = as_batch(input_latent, model.d)
    X = np.hstack([z, _label_matrix(label, z.shape[0], model.k)])
    rng = rng_for(0 if seed is None else seed) if training_mode else None
    out, _ = mlp_forward(model.spec, model.params, X, rng)
    return out[0] if single else out


def chain_shift(z, models: Sequence[ShifterModel], labels=None) -> np.ndarray:
    """Apply single-feature shifters left to right in inference mode."""
    if labels is None:
        labels = [1.0] * len(models)
    if len(labels) != len(models):
        raise InvalidArgument(f"{len(models)} models but {len(labels)} labels")
    out = np.array(z, dtype=np.float64)
    for model, label in zip(models, labels):
        if out.shape[-1] != model.d:
            raise InvalidArgument(f"model expects d={model.d}, latent has d={out.shape[-1]}")
        out = forward(model, out, label)
    return out


def _design(ds: PairsDataset, spec: ArchSpec):
    if ds.d != spec.d or ds.k != spec.k:
        raise InvalidArgument(f"dataset (d={ds.d}, k={ds.k}) does not match architecture (d={spec.d}, k={spec.k})")
    return np.hstack([ds.inputs, ds.labels]), ds.targets


def _eval_loss(spec, params, X, T, chunk=4096):
    total = 0.0
    for s in range(0, X.shape[0], chunk):
        out, _ = mlp_forward(spec, params, X[s:s + chunk])
        diff = out - T[s:s + chunk]
        total += float(np.sum(diff * diff))
    return total / T.size


def train(train_set: PairsDataset, valid_set: PairsDataset | None, spec: ArchSpec,
          cfg: TrainConfig = TrainConfig()) -> tuple[ShifterModel, TrainHistory]:
    if len(train_set) == 0:
        raise InvalidArgument("training set is empty")
    X, T = _design(train_set, spec)
    has_valid = valid_set is not None and len(valid_set) > 0
    if has_valid:
        Xv, Tv = _design(valid_set, spec)

    rng = rng_for(cfg.seed)
    params = init_params(spec, rng)
    state = AdamState.zeros_like(params)
    history = TrainHistory()
    if has_valid:
        history.initial_valid_loss = _eval_loss(spec, params, Xv, Tv)

    n = X.shape[0]
    use_dropout = any(l.kind == "dropout" and l.rate > 0 for l in spec.layers)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        running = 0.0
        for bi, s in enumerate(range(0, n, cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            loss, grads = mse_loss_and_grad(spec, params, X[idx], T[idx], rng if use_dropout else None)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch + 1}, batch {bi + 1}",
                                       epoch=epoch + 1, batch=bi + 1)
            running += loss * idx.shape[0]
            adam_step(params, grads, state, cfg)
        history.train_loss.append(running / n)
        history.valid_loss.append(_eval_loss(spec, params, Xv, Tv) if has_valid else float("nan"))

    metadata = {"train_config": cfg.to_dict(), "seed": cfg.seed, "n_train": n,
                "feature_name": train_set.feature_name}
    model = ShifterModel(spec, tuple((W, b) for W, b in params), metadata).narrowed()
    return model, history


class Metrics(NamedTuple):
    mse: float
    mae: float
    r2: float


def evaluate_metrics(model: ShifterModel, test_set: PairsDataset) -> Metrics:
    if len(test_set) == 0:
        raise InvalidArgument("test set is empty")
    pred = forward(model, test_set.inputs, test_set.labels)
    return Metrics(mse(test_set.targets, pred), mae(test_set.targets, pred), r2(test_set.targets, pred))


def save_model(model: ShifterModel, path) -> None:
    """Directory with model.json plus layer<i>.npy holding [W | b] as (out, in + 1)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = []
    for i, (W, b) in enumerate(model.params):
        name = f"layer{i}.npy"
        npyio.write_npy(path / name, np.hstack([W, b[:, None]]))
        files.append(name)
    manifest = {
        "format": MODEL_FORMAT,
        "version": 1,
        "arch_name": model.spec.name,
        "d": model.d,
        "k": model.k,
        "layers": [asdict(l) for l in model.spec.layers],
        "param_count": param_count(model.spec),
        "train_config": model.metadata.get("train_config"),
        "seed": model.metadata.get("seed"),
        "metadata": model.metadata,
        "files": files,
    }
    (path / MODEL_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_model(path) -> ShifterModel:
    path = Path(path)
    try:
        meta = json.loads((path / MODEL_MANIFEST).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path / MODEL_MANIFEST}: not valid JSON ({exc})") from exc
    try:
        if meta.get("format") != MODEL_FORMAT:
            raise FormatError(f"{path}: not a shifter model (format={meta.get('format')!r})")
        spec = ArchSpec(name=meta["arch_name"], d=int(meta["d"]), k=int(meta["k"]),
                        layers=tuple(Layer(**l) for l in meta["layers"]))
        if param_count(spec) != meta["param_count"]:
            raise FormatError(f"{path}: manifest param_count {meta['param_count']} != {param_count(spec)}")
        shapes = spec.dense_shapes()
        if len(meta["files"]) != len(shapes):
            raise FormatError(f"{path}: {len(meta['files'])} weight files for {len(shapes)} dense layers")
        params = []
        for name, (out, fan_in) in zip(meta["files"], shapes):
            arr = npyio.read_npy(path / name, ndim=2)
            if arr.shape != (out, fan_in + 1):
                raise FormatError(f"{path / name}: shape {arr.shape}, expected {(out, fan_in + 1)}")
            arr = arr.astype(np.float64)
            params.append((np.ascontiguousarray(arr[:, :fan_in]), arr[:, fan_in].copy()))
        return ShifterModel(spec, tuple(params), meta.get("metadata") or {})
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed model manifest ({exc})") from exc
