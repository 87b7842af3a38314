"""Phase 1: train the backbone and exit heads on the depth-weighted
cross-entropy objective."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .model import LayerReadout, MultiExitModel
from .nn import Adam, TrainingError

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    lr: float = 1e-2
    seed: int = 0
    patience: int = 2
    val_fraction: float = 0.2
    freeze_backbone: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs must be >= 0, batch_size and patience >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")


def depth_weights(n: int) -> np.ndarray:
    """Weights i / sum(i) for layers 1..n."""
    i = np.arange(1, n + 1, dtype=np.float64)
    return i / i.sum()


def _clamped_log(p: np.ndarray) -> np.ndarray:
    if np.any(p < PROB_FLOOR):
        warnings.warn(f"probability below {PROB_FLOOR} clamped in log-loss", RuntimeWarning)
        p = np.maximum(p, PROB_FLOOR)
    return np.log(p)


def ec_loss(readouts, y: int) -> tuple[float, np.ndarray]:
    """Depth-weighted cross-entropy for one sample.

    ``readouts`` is a list of :class:`LayerReadout` or an (n, C) array of
    class probabilities. Returns the aggregate and the per-layer losses.
    """
    if isinstance(readouts, (list, tuple)) and readouts and isinstance(readouts[0], LayerReadout):
        probs = np.stack([r.class_probs for r in readouts])
    else:
        probs = np.asarray(readouts, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise ValueError("need at least one layer of class probabilities")
    per_layer = -_clamped_log(probs[:, y])
    return float(depth_weights(len(per_layer)) @ per_layer), per_layer


def ec_loss_batch(model: MultiExitModel, X, y):
    """Mean depth-weighted loss over a batch, its per-layer means and the
    gradients w.r.t. ``model.ec_params()``."""
    cache = model.forward_batch(X)
    probs = cache.probs
    m, n = probs.shape[:2]
    rows = np.arange(m)
    per_layer = -_clamped_log(probs[rows, :, y]).mean(axis=0)
    w = depth_weights(n)
    loss = float(w @ per_layer)
    d = probs.copy()
    d[rows, :, y] -= 1.0
    d *= w[None, :, None] / m
    return loss, per_layer, model.backward_ec(cache, d)


def layer_accuracy(model: MultiExitModel, ds: Dataset) -> np.ndarray:
    probs, _, _ = model.scores(ds.X)
    return (probs.argmax(axis=2) == ds.y[:, None]).mean(axis=0)


@dataclass
class ECTrainResult:
    history: list = field(default_factory=list)  # dict rows: epoch, layer, train_loss, val_accuracy
    epoch_losses: list = field(default_factory=list)  # mean aggregate training loss per epoch
    val_losses: list = field(default_factory=list)
    best_epoch: int = 0

    def val_accuracy(self) -> np.ndarray:
        """(epochs, n) matrix of per-layer validation accuracy."""
        if not self.history:
            return np.zeros((0, 0))
        n = max(r["layer"] for r in self.history)
        acc = [r["val_accuracy"] for r in self.history]
        return np.array(acc).reshape(-1, n)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "layer", "train_loss", "val_accuracy"])
            for r in self.history:
                w.writerow([r["epoch"], r["layer"], repr(r["train_loss"]), repr(r["val_accuracy"])])


def split_validation(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    perm = np.random.default_rng([seed, 7919]).permutation(len(ds))
    n_val = max(1, int(round(fraction * len(ds))))
    if n_val >= len(ds):
        raise ValueError("validation split leaves no training data")
    return ds.subset(perm[n_val:], "train"), ds.subset(perm[:n_val], "val")


def train_ecs(
    model: MultiExitModel, train: Dataset, config: TrainConfig, val: Dataset | None = None
) -> tuple[MultiExitModel, ECTrainResult]:
    """Jointly train backbone and exit heads; keep the best-validation weights.

    Deferral heads are never touched. When ``val`` is omitted a
    ``config.val_fraction`` slice of ``train`` is held out.
    """
    if len(train) == 0:
        raise ValueError("empty training set")
    if train.y.max() >= model.n_classes:
        raise ValueError("labels exceed the model's class count")
    if val is None:
        train, val = split_validation(train, config.val_fraction, config.seed)
    result = ECTrainResult()
    if config.epochs == 0:
        return model, result

    params = model.ec_params()
    names = model.ec_param_names()
    if config.freeze_backbone:
        k = 2 * model.n_layers
        params, names = params[k:], names[k:]
    opt = Adam(lr=config.lr)
    n = model.n_layers
    w = depth_weights(n)

    def val_loss():
        probs, _, _ = model.scores(val.X)
        p = np.maximum(probs[np.arange(len(val)), :, val.y], PROB_FLOOR)
        return float(w @ (-np.log(p)).mean(axis=0))

    best = (val_loss(), [p.copy() for p in params])
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train))
        layer_sum = np.zeros(n)
        seen = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, per_layer, grads = ec_loss_batch(model, train.X[idx], train.y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"epoch {epoch}: non-finite training loss")
            if config.freeze_backbone:
                grads = grads[2 * n :]
            opt.step(params, grads, names)
            layer_sum += per_layer * len(idx)
            seen += len(idx)
        layer_mean = layer_sum / seen
        acc = layer_accuracy(model, val)
        vl = val_loss()
        result.epoch_losses.append(float(w @ layer_mean))
        result.val_losses.append(vl)
        for i in range(n):
            result.history.append(
                {
                    "epoch": epoch,
                    "layer": i + 1,
                    "train_loss": float(layer_mean[i]),
                    "val_accuracy": float(acc[i]),
                }
            )
        log.info("epoch %d: train loss %.4f, val loss %.4f, final-layer acc %.3f",
                 epoch, result.epoch_losses[-1], vl, acc[-1])
        if vl < best[0]:
            best = (vl, [p.copy() for p in params])
            result.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop after epoch %d", epoch)
                break
    for p, saved in zip(params, best[1]):
        p[...] = saved
    return model, result
