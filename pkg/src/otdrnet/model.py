"""Multi-task 1-D CNN for reflective-event detection and characterization.

Architecture: four conv blocks (conv, ReLU, dropout) with 64/32/32/16
filters, one max-pool, flatten, then three parallel heads of 16 hidden
units each: event probability (sigmoid), position in the window and
reflectance (both linear, trained on [0, 1]-scaled targets).

The training objective is the weighted sum of the per-task losses::

    total = w1 * BCE(p_event) + w2 * MSE(position) + w3 * MSE(reflectance)

where both regression terms are averaged over class-1 samples only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import Dataset
from .exceptions import ConfigError, DataError, ShapeError, TrainingError
from .nn import (Adam, Conv1D, Dense, Dropout, Flatten, MaxPool1D, ReLU, Sequential, Sigmoid, bce,
                 bce_grad, load_checkpoint, mse, mse_grad, save_checkpoint)
from .simulation import WINDOW_LEN
from .validation import check_labels, check_windows

log = logging.getLogger(__name__)

POSITION_SCALE = WINDOW_LEN - 1
TASKS = ("detection", "position", "reflectance")


@dataclass
class ModelConfig:
    conv_filters: tuple[int, ...] = (64, 32, 32, 16)
    head_hidden: int = 16
    loss_weights: tuple[float, float, float] = (0.33, 0.33, 0.33)
    kernel_size: int = 3
    stride: int = 1
    padding: int = 1
    pool_window: int = 2
    dropout: float = 0.1
    dropout_placement: str = "stack"
    lr: float = 1e-3
    lr_decay: float = 0.5
    lr_patience: int = 5
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    reflectance_range: tuple[float, float] = (-45.0, -5.0)
    random_state: int = 0

    def __post_init__(self):
        self.conv_filters = tuple(int(c) for c in self.conv_filters)
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        self.reflectance_range = tuple(float(r) for r in self.reflectance_range)
        if len(self.conv_filters) != 4:
            raise ConfigError("conv_filters must list 4 layers")
        if len(self.loss_weights) != 3 or any(w < 0 for w in self.loss_weights):
            raise ConfigError("loss_weights must be three non-negative numbers")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        if self.dropout_placement not in ("stack", "each"):
            raise ConfigError("dropout_placement must be 'stack' or 'each'")
        if not 0 < self.lr_decay <= 1 or self.lr_patience < 1:
            raise ConfigError("lr_decay must be in (0, 1] and lr_patience >= 1")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be >= 1")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Prediction:
    """Column-wise network outputs for a batch."""

    p_event: np.ndarray
    position_idx_hat: np.ndarray
    reflectance_db_hat: np.ndarray

    def __len__(self):
        return self.p_event.size


class MultiTaskNet:
    """Shared convolutional trunk with three heads.

    ``dropout_placement='stack'`` puts one dropout layer after the last
    convolution; ``'each'`` follows every convolution with one.
    """

    def __init__(self, conv_filters=(64, 32, 32, 16), head_hidden=16, kernel_size=3, stride=1,
                 padding=1, pool_window=2, dropout=0.1, input_len=WINDOW_LEN, seed=0,
                 dropout_placement="stack"):
        rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        layers = []
        in_ch, length = 1, input_len
        for out_ch in conv_filters:
            conv = Conv1D(in_ch, out_ch, kernel_size, stride, padding, rng=rng)
            layers += [conv, ReLU()]
            if dropout_placement == "each":
                layers.append(Dropout(dropout, self.dropout_rng))
            length = conv.output_length(length)
            if length < 1:
                raise ShapeError("input too short for the convolution stack")
            in_ch = out_ch
        if pool_window > length:
            raise ShapeError("pool window exceeds feature length")
        if dropout_placement == "stack":
            layers.append(Dropout(dropout, self.dropout_rng))
        layers += [MaxPool1D(pool_window), Flatten()]
        self.flat_features = in_ch * (length // pool_window)
        self.input_len = input_len
        self.trunk = Sequential(layers)
        self.heads = [
            Sequential([Dense(self.flat_features, head_hidden, rng), ReLU(),
                        Dense(head_hidden, 1, rng, gain=1.0)] + ([Sigmoid()] if i == 0 else []))
            for i in range(3)
        ]

    def modules(self):
        return [self.trunk] + self.heads

    def parameters(self):
        return [layer.params[k] for m in self.modules() for layer, k in m.parameters()]

    def gradients(self):
        return [layer.grads[k] for m in self.modules() for layer, k in m.parameters()]

    def head_parameters(self, head):
        return [layer.params[k] for layer, k in self.heads[head].parameters()]

    def head_gradients(self, head):
        return [layer.grads[k] for layer, k in self.heads[head].parameters()]

    def zero_grad(self):
        for m in self.modules():
            m.zero_grad()

    def forward(self, x, training=False):
        """``x``: ``(B, 35)`` or ``(B, 1, 35)``; returns three ``(B, 1)`` arrays."""
        if x.ndim == 2:
            x = x[:, None, :]
        if x.ndim != 3 or x.shape[1:] != (1, self.input_len):
            raise ShapeError(f"expected input of shape (B, 1, {self.input_len}), got {x.shape}")
        feats = self.trunk.forward(x, training)
        return tuple(h.forward(feats, training) for h in self.heads)

    def backward(self, grads):
        g = sum(h.backward(gi) for h, gi in zip(self.heads, grads))
        return self.trunk.backward(g)

    def describe(self):
        return {"input_len": self.input_len, "trunk": self.trunk.describe(),
                "heads": [h.describe() for h in self.heads]}


def multitask_loss(outputs, targets, weights, with_grad=False):
    """Weighted multi-task loss.

    ``outputs``: ``(p, pos, refl)`` arrays of shape ``(B, 1)`` or ``(B,)``.
    ``targets``: ``(class, pos, refl)`` with regression targets already
    scaled; entries for class-0 rows are ignored.  Returns
    ``(total, components)`` or, with ``with_grad``, also the gradients with
    respect to each output.
    """
    p, pos, refl = (np.asarray(o, dtype=np.float64) for o in outputs)
    y, pos_t, refl_t = (np.asarray(t, dtype=np.float64).reshape(-1) for t in targets)
    n = y.size
    if n == 0:
        raise DataError("empty batch")
    shape = p.shape
    p, pos, refl = p.reshape(-1), pos.reshape(-1), refl.reshape(-1)
    mask = y == 1
    comps = {
        "detection": bce(p, y),
        "position": mse(pos[mask], pos_t[mask]),
        "reflectance": mse(refl[mask], refl_t[mask]),
    }
    w1, w2, w3 = weights
    total = w1 * comps["detection"] + w2 * comps["position"] + w3 * comps["reflectance"]
    if not with_grad:
        return total, comps
    g_pos = np.zeros(n)
    g_refl = np.zeros(n)
    g_pos[mask] = w2 * mse_grad(pos[mask], pos_t[mask])
    g_refl[mask] = w3 * mse_grad(refl[mask], refl_t[mask])
    grads = (w1 * bce_grad(p, y).reshape(shape), g_pos.reshape(shape), g_refl.reshape(shape))
    return total, comps, grads


def total_loss(prediction: Prediction, labels, weights=(0.33, 0.33, 0.33),
               reflectance_range=(-45.0, -5.0)):
    """Loss of denormalized predictions against ``(n, 3)`` labels."""
    labels = check_labels(labels)
    lo, hi = reflectance_range
    outputs = (prediction.p_event, prediction.position_idx_hat / POSITION_SCALE,
               (prediction.reflectance_db_hat - lo) / (hi - lo))
    return multitask_loss(outputs, scale_targets(labels, reflectance_range), weights)


def scale_targets(labels, reflectance_range):
    lo, hi = reflectance_range
    y = labels[:, 0]
    pos = np.where(y == 1, labels[:, 1] / POSITION_SCALE, 0.0)
    refl = np.where(y == 1, (labels[:, 2] - lo) / (hi - lo), 0.0)
    return y, pos, refl


def predict_threshold(p_event, tau):
    """Class 1 iff ``p_event >= tau``."""
    return (np.asarray(p_event) >= tau).astype(np.int64)


@dataclass
class History:
    rows: list = field(default_factory=list)
    best_epoch: int = -1

    def append(self, **row):
        self.rows.append(row)

    def to_csv(self, path):
        cols = ["epoch", "lr"] + [f"{s}_{t}" for s in ("train", "val") for t in ("total",) + TASKS]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                fh.write(",".join(_fmt(r.get(c, "")) for c in cols) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


class ReflectiveEventCNN(ClassifierMixin, BaseEstimator):
    """Estimator wrapper: ``fit(X, y)`` with ``y`` the ``(n, 3)`` label
    matrix ``[class, position index, reflectance dB]`` (NaN where absent).

    ``predict`` thresholds ``p_event`` at ``threshold``;
    ``predict_position`` and ``predict_reflectance`` return the regression
    heads in window samples and dB.
    """

    def __init__(self, conv_filters=(64, 32, 32, 16), head_hidden=16,
                 loss_weights=(0.33, 0.33, 0.33), kernel_size=3, stride=1, padding=1,
                 pool_window=2, dropout=0.1, dropout_placement="stack", lr=1e-3, lr_decay=0.5,
                 lr_patience=5, batch_size=32, max_epochs=100, patience=10,
                 reflectance_range=(-45.0, -5.0), random_state=0, threshold=0.5, verbose=False):
        self.conv_filters = conv_filters
        self.head_hidden = head_hidden
        self.loss_weights = loss_weights
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.pool_window = pool_window
        self.dropout = dropout
        self.dropout_placement = dropout_placement
        self.lr = lr
        self.lr_decay = lr_decay
        self.lr_patience = lr_patience
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.reflectance_range = reflectance_range
        self.random_state = random_state
        self.threshold = threshold
        self.verbose = verbose

    @classmethod
    def from_config(cls, cfg: ModelConfig, **kwargs):
        return cls(**asdict(cfg), **kwargs)

    def config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def _build(self):
        cfg = self.config()
        self.net_ = MultiTaskNet(cfg.conv_filters, cfg.head_hidden, cfg.kernel_size, cfg.stride,
                                 cfg.padding, cfg.pool_window, cfg.dropout, WINDOW_LEN,
                                 seed=cfg.random_state, dropout_placement=cfg.dropout_placement)
        self.classes_ = np.array([0, 1])
        return cfg

    def architecture(self) -> dict:
        cfg = self.config()
        return {"model": "ReflectiveEventCNN", "window_len": WINDOW_LEN,
                "reflectance_range": list(cfg.reflectance_range),
                "network": self.net_.describe()}

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_windows(X)
        y = check_labels(y, n=X.shape[0])
        if (X_val is None) != (y_val is None):
            raise DataError("X_val and y_val must be given together")
        if X_val is not None:
            X_val = check_windows(X_val)
            y_val = check_labels(y_val, n=X_val.shape[0])
        cfg = self._build()
        rng = np.random.default_rng(np.random.SeedSequence([cfg.random_state, 2]))
        opt = Adam(lr=cfg.lr)
        params = self.net_.parameters()
        grads = self.net_.gradients()
        targets = scale_targets(y, cfg.reflectance_range)
        history = History()
        best = (math.inf, None)
        stale = 0
        self.initial_val_loss_ = self._evaluate_loss(X_val, y_val)[0] if X_val is not None else None
        for epoch in range(cfg.max_epochs):
            order = rng.permutation(X.shape[0])
            sums = dict.fromkeys(("total",) + TASKS, 0.0)
            for start in range(0, X.shape[0], cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                self.net_.zero_grad()
                out = self.net_.forward(X[idx], training=True)
                total, comps, g = multitask_loss(out, [t[idx] for t in targets],
                                                 cfg.loss_weights, with_grad=True)
                if not math.isfinite(total):
                    raise TrainingError(f"loss became {total} in epoch {epoch}", epoch=epoch)
                self.net_.backward(g)
                opt.step(params, grads)
                sums["total"] += total * idx.size
                for t in TASKS:
                    sums[t] += comps[t] * idx.size
            row = {"epoch": epoch, "lr": opt.lr}
            row.update({f"train_{k}": v / X.shape[0] for k, v in sums.items()})
            if X_val is not None:
                vtotal, vcomps = self._evaluate_loss(X_val, y_val)
                if not math.isfinite(vtotal):
                    raise TrainingError(f"validation loss became {vtotal} in epoch {epoch}", epoch=epoch)
                row["val_total"] = vtotal
                row.update({f"val_{t}": vcomps[t] for t in TASKS})
            history.append(**row)
            if self.verbose:
                log.info("epoch %d %s", epoch, row)
            if X_val is None:
                continue
            if vtotal < best[0]:
                best = (vtotal, ([p.copy() for p in params], epoch, opt.t,
                                 [m.copy() for m in opt.state_arrays()]))
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
                if stale % cfg.lr_patience == 0:
                    opt.lr *= cfg.lr_decay
        if best[1] is not None:
            saved, history.best_epoch, opt.t, moments = best[1]
            for p, s in zip(params, saved):
                p[...] = s
            for m, s in zip(opt.state_arrays(), moments):
                m[...] = s
        else:
            history.best_epoch = len(history.rows) - 1
        self.history_ = history
        self.optimizer_ = opt
        self.n_features_in_ = WINDOW_LEN
        return self

    def _forward(self, X, chunk=2048):
        X = check_windows(X)
        outs = [self.net_.forward(X[i:i + chunk]) for i in range(0, X.shape[0], chunk)]
        return tuple(np.concatenate([o[k] for o in outs])[:, 0] if outs else np.empty(0)
                     for k in range(3))

    def _evaluate_loss(self, X, y):
        out = self._forward(X)
        return multitask_loss(out, scale_targets(y, self.config().reflectance_range),
                              self.config().loss_weights)

    def predict_all(self, X) -> Prediction:
        check_is_fitted(self, "net_")
        p, pos, refl = self._forward(X)
        lo, hi = self.config().reflectance_range
        return Prediction(p_event=p, position_idx_hat=np.clip(pos * POSITION_SCALE, 0.0, POSITION_SCALE),
                          reflectance_db_hat=lo + refl * (hi - lo))

    def decision_function(self, X):
        return self.predict_all(X).p_event

    name = "CNN"

    def score_windows(self, X):
        """``(p_event, position_idx_hat, reflectance_db_hat)`` arrays."""
        pr = self.predict_all(X)
        return pr.p_event, pr.position_idx_hat, pr.reflectance_db_hat

    def predict_proba(self, X):
        p = self.decision_function(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return predict_threshold(self.decision_function(X), self.threshold)

    def predict_position(self, X):
        return self.predict_all(X).position_idx_hat

    def predict_reflectance(self, X):
        return self.predict_all(X).reflectance_db_hat

    def loss(self, X, y):
        """``(total, components)`` of the weighted loss on labelled data."""
        check_is_fitted(self, "net_")
        return self._evaluate_loss(check_windows(X), check_labels(y))

    def save(self, path):
        check_is_fitted(self, "net_")
        opt = getattr(self, "optimizer_", None)
        save_checkpoint(path, self.architecture(), self.net_.parameters(),
                        opt.t if opt else 0, opt.state_arrays() if opt and opt.m else ())

    @classmethod
    def load(cls, path, **params):
        """Restore a checkpoint; hyperparameters come from its header."""
        arch, _, _, _ = load_checkpoint(path)
        net = arch["network"]
        convs = [l for l in net["trunk"]["layers"] if l["type"] == "Conv1D"]
        drops = [l for l in net["trunk"]["layers"] if l["type"] == "Dropout"]
        pool = next(l["window"] for l in net["trunk"]["layers"] if l["type"] == "MaxPool1D")
        est = cls(conv_filters=tuple(c["out"] for c in convs),
                  head_hidden=net["heads"][0]["layers"][0]["out"],
                  kernel_size=convs[0]["kernel"], stride=convs[0]["stride"],
                  padding=convs[0]["padding"], pool_window=pool, dropout=drops[0]["rate"],
                  dropout_placement="each" if len(drops) > 1 else "stack",
                  reflectance_range=tuple(arch["reflectance_range"]), **params)
        est._build()
        _, saved, opt_t, moments = load_checkpoint(path, est.architecture())
        for p, s in zip(est.net_.parameters(), saved):
            p[...] = s
        est.optimizer_ = Adam(lr=est.lr)
        est.optimizer_.t = opt_t
        half = len(moments) // 2
        est.optimizer_.m, est.optimizer_.v = moments[:half], moments[half:]
        est.n_features_in_ = WINDOW_LEN
        return est


def train(dataset: Dataset, cfg: ModelConfig | None = None, verbose=False):
    """Fit on the train split with early stopping on the val split.

    Returns ``(estimator, history)``.
    """
    cfg = cfg or ModelConfig()
    sim = dataset.manifest.get("sim_config", {})
    if "reflectance_db_range" in sim:
        cfg = replace(cfg, reflectance_range=tuple(sim["reflectance_db_range"]))
    tr, va = dataset.subset("train"), dataset.subset("val")
    if len(tr) == 0 or len(va) == 0:
        raise DataError("dataset needs non-empty train and val splits")
    est = ReflectiveEventCNN.from_config(cfg, verbose=verbose)
    est.fit(tr.values, tr.labels, va.values, va.labels)
    return est, est.history_
