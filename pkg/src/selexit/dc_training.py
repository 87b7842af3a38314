"""Phase 3: fit the deferral heads on hard/easy labels with everything else frozen."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .dc_data import HardnessLabeledSet
from .ec_training import PROB_FLOOR, TrainConfig, _clamped_log, depth_weights
from .model import MultiExitModel
from .nn import Adam, TrainingError

log = logging.getLogger(__name__)

HOLDOUT_FRACTION = 0.2


def _bce(s: np.ndarray, z) -> np.ndarray:
    # z is 0/1, so only one of the two log terms is live
    return -_clamped_log(np.where(np.asarray(z) == 1, s, 1.0 - s))


def dc_loss(scores, z: int) -> float:
    """Depth-weighted binary cross-entropy of one sample's hardness scores."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("need a non-empty vector of per-layer hardness scores")
    return float(depth_weights(s.size) @ _bce(s, z))


def dc_loss_batch(model: MultiExitModel, X, z):
    """Mean weighted loss, per-layer means and gradients w.r.t. ``model.dc_params()``."""
    cache = model.forward_batch(X)
    s = cache.hardness
    m, n = s.shape
    zz = np.asarray(z, dtype=np.float64)[:, None]
    per_layer = _bce(s, zz).mean(axis=0)
    w = depth_weights(n)
    # d BCE / d logit = s - z
    d = (s - zz) * w[None, :] / m
    return float(w @ per_layer), per_layer, model.backward_dc(cache, d)


def dc_errors(model: MultiExitModel, X, z, threshold: float = 0.5) -> np.ndarray:
    """Per-layer fraction of hard/easy mistakes with hardness >= threshold read as hard."""
    hard = model.forward_batch(X).hardness >= threshold
    return (hard != (np.asarray(z)[:, None] == 1)).mean(axis=0)


@dataclass
class DCTrainResult:
    q_d: np.ndarray  # per-layer holdout error rate
    holdout_loss: np.ndarray  # per-layer holdout BCE
    epoch_losses: list = field(default_factory=list)
    holdout_idx: np.ndarray = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["layer", "q_d_holdout", "loss"])
            for i, (q, l) in enumerate(zip(self.q_d, self.holdout_loss), 1):
                w.writerow([i, repr(float(q)), repr(float(l))])


def train_dcs(
    model: MultiExitModel, labeled: HardnessLabeledSet, config: TrainConfig
) -> tuple[MultiExitModel, DCTrainResult]:
    """Train only the deferral heads; report holdout error rates per layer.

    A seeded 20% slice of ``labeled`` is held out for the error rates.
    """
    z = labeled.z
    if len(labeled) == 0 or z.min() == z.max():
        raise TrainingError("degenerate deferral training set: need both hard and easy samples")
    if labeled.X.shape[1] != model.in_width:
        raise ValueError("labeled set features do not match the model input width")
    perm = np.random.default_rng([config.seed, 104729]).permutation(len(labeled))
    n_hold = max(1, int(round(HOLDOUT_FRACTION * len(labeled))))
    hold, fit = perm[:n_hold], perm[n_hold:]
    if len(fit) == 0:
        raise TrainingError("no samples left for deferral training after holdout")

    params, names = model.dc_params(), model.dc_param_names()
    opt = Adam(lr=config.lr)
    losses = []
    for epoch in range(1, config.epochs + 1):
        order = fit[np.random.default_rng([config.seed, 31, epoch]).permutation(len(fit))]
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, _, grads = dc_loss_batch(model, labeled.X[idx], z[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"epoch {epoch}: non-finite deferral loss")
            opt.step(params, grads, names)
            total += loss * len(idx)
        losses.append(total / len(fit))
        log.info("dc epoch %d: loss %.4f", epoch, losses[-1])

    Xh, zh = labeled.X[hold], z[hold]
    s = np.clip(model.forward_batch(Xh).hardness, PROB_FLOOR, 1 - PROB_FLOOR)
    holdout_loss = _bce(s, zh[:, None]).mean(axis=0)
    return model, DCTrainResult(dc_errors(model, Xh, zh), holdout_loss, losses, hold)
