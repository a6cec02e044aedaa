"""Single-hidden-layer tanh/SoftMax classifier trained with scaled conjugate gradient."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .features import PcaModel

NUM_OUTPUTS = 9
FORMAT_VERSION = 1
LOSS_CLAMP = 1e-12


class ModelFormatError(ValueError):
    """Corrupted or structurally invalid model payload."""


class VersionMismatchError(ModelFormatError):
    pass


@dataclass
class MlpModel:
    hidden_weights: np.ndarray   # (hidden, input)
    hidden_biases: np.ndarray    # (hidden,)
    output_weights: np.ndarray   # (9, hidden)
    output_biases: np.ndarray    # (9,)

    @property
    def input_dim(self) -> int:
        return self.hidden_weights.shape[1]

    @property
    def hidden_width(self) -> int:
        return self.hidden_weights.shape[0]

    @property
    def num_params(self) -> int:
        return self.hidden_weights.size + self.hidden_biases.size + self.output_weights.size + self.output_biases.size

    @classmethod
    def zeros(cls, input_dim: int, hidden_width: int) -> "MlpModel":
        return cls(np.zeros((hidden_width, input_dim)), np.zeros(hidden_width),
                   np.zeros((NUM_OUTPUTS, hidden_width)), np.zeros(NUM_OUTPUTS))

    @classmethod
    def initialize(cls, input_dim: int, hidden_width: int, seed: int = 0) -> "MlpModel":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        r1 = math.sqrt(6.0 / (input_dim + hidden_width))
        r2 = math.sqrt(6.0 / (hidden_width + NUM_OUTPUTS))
        return cls(rng.uniform(-r1, r1, (hidden_width, input_dim)), np.zeros(hidden_width),
                   rng.uniform(-r2, r2, (NUM_OUTPUTS, hidden_width)), np.zeros(NUM_OUTPUTS))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.hidden_weights.ravel(), self.hidden_biases,
                               self.output_weights.ravel(), self.output_biases])

    def with_flat(self, theta: np.ndarray) -> "MlpModel":
        h, d = self.hidden_weights.shape
        i = 0
        parts = []
        for shape in ((h, d), (h,), (NUM_OUTPUTS, h), (NUM_OUTPUTS,)):
            size = int(np.prod(shape))
            parts.append(np.array(theta[i:i + size]).reshape(shape))
            i += size
        return MlpModel(*parts)

    def copy(self) -> "MlpModel":
        return self.with_flat(self.flat())


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Scores for a batch (n, input_dim) -> (n, 9)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"expected {model.input_dim} inputs, got {x.shape[-1]}")
    a = np.tanh(x @ model.hidden_weights.T + model.hidden_biases)
    return softmax(a @ model.output_weights.T + model.output_biases)


def forward(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward takes a single feature vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return forward_batch(model, x)


def cross_entropy(yhat, y) -> float:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (NUM_OUTPUTS,) or not (np.isin(y, (0.0, 1.0)).all() and y.sum() == 1.0):
        raise ValueError("label must be a one-hot 9-vector")
    return float(-math.log(max(float(np.asarray(yhat)[int(np.argmax(y))]), LOSS_CLAMP)))


def mean_loss(model: MlpModel, x: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy; ``labels`` are integer class indices."""
    p = forward_batch(model, x)
    picked = p[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(picked, LOSS_CLAMP)).mean())


def _loss_and_grad(model: MlpModel, x: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    n = len(labels)
    a = np.tanh(x @ model.hidden_weights.T + model.hidden_biases)
    p = softmax(a @ model.output_weights.T + model.output_biases)
    picked = p[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, LOSS_CLAMP)).mean())
    dz = p.copy()
    dz[np.arange(n), labels] -= 1.0
    dz /= n
    g_ow = dz.T @ a
    g_ob = dz.sum(axis=0)
    da = (dz @ model.output_weights) * (1.0 - a * a)
    g_hw = da.T @ x
    g_hb = da.sum(axis=0)
    return loss, np.concatenate([g_hw.ravel(), g_hb, g_ow.ravel(), g_ob])


def gradient(model: MlpModel, x: np.ndarray, labels: np.ndarray) -> MlpModel:
    """Gradient of the mean cross-entropy, shaped like the model.

    The gradient ignores the 1e-12 loss clamp, which only matters once a
    true-class score underflows.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels.argmax(axis=1)
    if len(labels) == 0:
        raise ValueError("empty batch")
    if x.shape[1] != model.input_dim:
        raise ValueError("input dimension mismatch")
    return model.with_flat(_loss_and_grad(model, x, labels.astype(np.intp))[1])


# -------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 1000
    patience: int = 6
    validation_fraction: float = 0.2
    rng_seed: int = 0
    sigma: float = 1e-4
    lambda_init: float = 1e-6

    def __post_init__(self):
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in (0, 1)")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)     # index 0 = initial
    val_loss: list[float] = field(default_factory=list)       # index 0 = initial
    best_epoch: int = 0
    stop_reason: str = ""

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss) - 1

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]


def split_train_val(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle split; both parts get at least one sample when n >= 2."""
    order = np.random.default_rng(seed).permutation(n)
    n_val = min(max(int(round(n * fraction)), 1), n - 1) if n >= 2 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def scg_train(model: MlpModel, train: tuple[np.ndarray, np.ndarray], val: tuple[np.ndarray, np.ndarray],
              config: TrainConfig = TrainConfig()) -> tuple[MlpModel, TrainHistory]:
    """Full-batch scaled conjugate gradient (Moller, 1993) with early stopping.

    One epoch is one SCG iteration followed by one validation check. The
    returned parameters are those of the best validation check, which may be
    the initial ones.
    """
    xt = np.asarray(train[0], dtype=np.float64)
    yt = np.asarray(train[1]).astype(np.intp)
    xv = np.asarray(val[0], dtype=np.float64)
    yv = np.asarray(val[1]).astype(np.intp)
    if len(yt) == 0 or len(yv) == 0:
        raise ValueError("train and validation sets must be non-empty")

    def fg(theta):
        return _loss_and_grad(model.with_flat(theta), xt, yt)

    def val_loss(theta):
        return mean_loss(model.with_flat(theta), xv, yv)

    w = model.flat()
    n_params = len(w)
    e_w, g = fg(w)
    r = -g
    p = r.copy()
    p2 = float(p @ p)
    lam, lam_bar = config.lambda_init, 0.0
    success = True
    delta = 0.0
    since_restart = 0

    hist = TrainHistory([e_w], [val_loss(w)])
    best_w, best_val = w.copy(), hist.val_loss[0]
    fails = 0

    for epoch in range(1, config.max_epochs + 1):
        if not np.any(r):
            hist.stop_reason = "converged"
            break
        if success:
            if p @ r <= 0:
                p, since_restart = r.copy(), 0
            p2 = float(p @ p)
            sigma_k = config.sigma / math.sqrt(p2)
            _, g_plus = fg(w + sigma_k * p)
            delta = float(p @ (g_plus + r)) / sigma_k   # p^T (E'(w + sigma p) - E'(w)) / sigma
        delta += (lam - lam_bar) * p2
        if delta <= 0:
            lam_bar = 2.0 * (lam - delta / p2)
            delta = -delta + lam * p2
            lam = lam_bar
        mu = float(p @ r)
        alpha = mu / delta
        e_new, g_new = fg(w + alpha * p)
        cmp = 2.0 * delta * (e_w - e_new) / (mu * mu)
        if cmp >= 0:
            w = w + alpha * p
            e_w = e_new
            r_new = -g_new
            lam_bar = 0.0
            success = True
            since_restart += 1
            if since_restart >= n_params:
                p, since_restart = r_new.copy(), 0
            else:
                beta = (float(r_new @ r_new) - float(r_new @ r)) / mu
                p = r_new + beta * p
            r = r_new
            if cmp >= 0.75:
                lam = lam / 4.0
        else:
            lam_bar = lam
            success = False
        if cmp < 0.25:
            lam = min(lam + delta * (1.0 - cmp) / p2, 1e100)

        hist.train_loss.append(e_w)
        v = val_loss(w)
        hist.val_loss.append(v)
        if v < best_val:
            best_val, best_w, hist.best_epoch = v, w.copy(), epoch
            fails = 0
        else:
            fails += 1
            if fails >= config.patience:
                hist.stop_reason = "patience"
                break
    else:
        hist.stop_reason = "max_epochs"
    return model.with_flat(best_w), hist


def train_classifier(x: np.ndarray, labels: np.ndarray, hidden_width: int,
                     config: TrainConfig) -> tuple[MlpModel, TrainHistory]:
    """Seeded init, seeded train/validation split, then ``scg_train``."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels).astype(np.intp)
    tr, va = split_train_val(len(labels), config.validation_fraction, config.rng_seed)
    if len(va) == 0:
        tr = va = np.arange(len(labels))
    model = MlpModel.initialize(x.shape[1], hidden_width, config.rng_seed)
    return scg_train(model, (x[tr], labels[tr]), (x[va], labels[va]), config)


# --------------------------------------------------------- serialization


def model_to_dict(model: MlpModel, strategy: str = "", block_size: int = 0,
                  pca: PcaModel | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "strategy": strategy,
        "block_size": block_size,
        "input_dim": model.input_dim,
        "hidden_width": model.hidden_width,
        "hidden_weights": model.hidden_weights.tolist(),
        "hidden_biases": model.hidden_biases.tolist(),
        "output_weights": model.output_weights.tolist(),
        "output_biases": model.output_biases.tolist(),
        "pca": pca.to_dict() if pca is not None else None,
    }


def model_from_dict(d: dict) -> tuple[MlpModel, dict]:
    """Inverse of ``model_to_dict``; returns the model and its metadata (incl. ``pca``)."""
    if not isinstance(d, dict):
        raise ModelFormatError("model payload must be an object")
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"unsupported model format version {version!r}")
    try:
        d_in, width = int(d["input_dim"]), int(d["hidden_width"])
        model = MlpModel(
            np.asarray(d["hidden_weights"], dtype=np.float64).reshape(width, d_in),
            np.asarray(d["hidden_biases"], dtype=np.float64).reshape(width),
            np.asarray(d["output_weights"], dtype=np.float64).reshape(NUM_OUTPUTS, width),
            np.asarray(d["output_biases"], dtype=np.float64).reshape(NUM_OUTPUTS),
        )
        pca = PcaModel.from_dict(d["pca"]) if d.get("pca") else None
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupted model payload: {exc}") from None
    if not np.all(np.isfinite(model.flat())):
        raise ModelFormatError("model holds non-finite parameters")
    return model, {"strategy": d.get("strategy", ""), "block_size": int(d.get("block_size", 0)), "pca": pca}


def serialize(model: MlpModel, strategy: str = "", block_size: int = 0, pca: PcaModel | None = None) -> bytes:
    return json.dumps(model_to_dict(model, strategy, block_size, pca), indent=1).encode("utf-8")


def deserialize(payload: bytes) -> tuple[MlpModel, dict]:
    try:
        d = json.loads(payload.decode("utf-8") if isinstance(payload, bytes) else payload)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupted model payload: {exc}") from None
    return model_from_dict(d)
