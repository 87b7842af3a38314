"""Infer / defer / continue gating across exits, plus selective metrics.

At every layer but the last a sample is deferred when its hardness score
reaches ``beta``, otherwise it exits when its confidence reaches ``alpha``,
otherwise it moves on. At the last layer only confidence matters: exit if
it reaches ``alpha``, else defer.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import Dataset
from .model import LayerReadout, MultiExitModel
from .nn import activate, linear, sigmoid, softmax


class Decision(enum.Enum):
    EXIT = "exit"
    DEFER = "defer"
    CONTINUE = "continue"


@dataclass(frozen=True)
class Thresholds:
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass
class GateOutcome:
    decision: Decision
    label: int | None = None  # predicted class when decision is EXIT
    layer: int = 0  # 1-based layer where the walk stopped
    visited: list = field(default_factory=list)  # (confidence, hardness) per visited layer
    from_expert: bool = False


class ExpertUnavailable(RuntimeError):
    pass


class GoldOracle:
    """Expert that answers with the gold label of a sample id."""

    def __init__(self, labels):
        self.labels = np.asarray(labels)

    def __call__(self, x, sample_id):
        if sample_id is None or not 0 <= sample_id < len(self.labels):
            raise ExpertUnavailable(f"no gold label for sample {sample_id}")
        return int(self.labels[sample_id])


class NoisyOracle(GoldOracle):
    """Gold-label expert that answers a uniformly random wrong class with probability ``flip``."""

    def __init__(self, labels, n_classes, flip=0.1, seed=0):
        super().__init__(labels)
        self.n_classes = n_classes
        self.flip = flip
        self.seed = seed

    def __call__(self, x, sample_id):
        y = super().__call__(x, sample_id)
        rng = np.random.default_rng([self.seed, sample_id])
        if rng.random() < self.flip:
            return int((y + rng.integers(1, self.n_classes)) % self.n_classes)
        return y


def gate_step(readout: LayerReadout, thresholds: Thresholds, is_final: bool) -> GateOutcome:
    if is_final:
        if readout.confidence >= thresholds.alpha:
            return GateOutcome(Decision.EXIT, readout.predicted, readout.layer)
        return GateOutcome(Decision.DEFER, None, readout.layer)
    if readout.hardness >= thresholds.beta:
        return GateOutcome(Decision.DEFER, None, readout.layer)
    if readout.confidence >= thresholds.alpha:
        return GateOutcome(Decision.EXIT, readout.predicted, readout.layer)
    return GateOutcome(Decision.CONTINUE, None, readout.layer)


def infer(model: MultiExitModel, x, thresholds: Thresholds, oracle=None, sample_id=None):
    """Walk one sample through the layers, computing only what is visited.

    Returns ``(label, outcome)``; deferred samples are labelled by ``oracle``.
    """
    h = np.asarray(x, dtype=np.float64)
    n = model.n_layers
    visited = []
    for i in range(n):
        h = activate(linear(model.backbone[i], h), model.backbone[i].activation)
        probs = softmax(linear(model.exit_heads[i], h))
        hard = float(sigmoid(linear(model.deferral_heads[i], h))[0])
        readout = LayerReadout(i + 1, probs, float(probs.max()), hard)
        visited.append((readout.confidence, readout.hardness))
        step = gate_step(readout, thresholds, i == n - 1)
        if step.decision is Decision.CONTINUE:
            continue
        step.visited = visited
        if step.decision is Decision.EXIT:
            return step.label, step
        if oracle is None:
            raise ExpertUnavailable(f"sample deferred at layer {i + 1} but no expert is available")
        step.label = None
        step.from_expert = True
        return oracle(x, sample_id), step
    raise AssertionError("unreachable: the last layer always terminates")


@dataclass
class SelectiveMetrics:
    alpha: float
    beta: float
    n_samples: int
    covered: int
    miscovered: int
    deferrals: int
    exit_hist: np.ndarray  # terminations (exits and deferrals) per layer
    layer_covered: np.ndarray
    layer_miscovered: np.ndarray
    system_correct: int = 0

    @property
    def n_layers(self) -> int:
        return len(self.exit_hist)

    @property
    def coverage(self) -> float:
        return self.covered / self.n_samples

    @property
    def risk_defined(self) -> bool:
        return self.covered > 0

    @property
    def risk(self) -> float:
        return self.miscovered / self.covered if self.covered else 0.0

    @property
    def speedup(self) -> float:
        i = np.arange(1, self.n_layers + 1)
        return float(self.n_layers * self.exit_hist.sum() / (i @ self.exit_hist))

    @property
    def system_accuracy(self) -> float:
        return self.system_correct / self.n_samples

    def layer_risk(self) -> np.ndarray:
        """Error rate among samples covered at each layer; NaN where none exited."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.layer_covered > 0, self.layer_miscovered / np.maximum(self.layer_covered, 1), np.nan)

    def row(self) -> dict:
        out = {
            "alpha": self.alpha,
            "beta": self.beta,
            "risk": self.risk,
            "coverage": self.coverage,
            "speedup": self.speedup,
            "deferrals": self.deferrals,
        }
        for i, x in enumerate(self.exit_hist, 1):
            out[f"exit_hist_{i}"] = int(x)
        return out


def speedup_ratio(exit_hist) -> float:
    x = np.asarray(exit_hist, dtype=np.float64)
    n = len(x)
    return float(n * x.sum() / (np.arange(1, n + 1) @ x))


def metrics_from_decisions(kind, layer, correct, n_layers, alpha, beta, oracle_correct=None):
    """Reduce per-sample terminal decisions to :class:`SelectiveMetrics`.

    ``correct[k]`` says whether the exit head at sample k's terminal layer
    predicts the gold label.
    """
    kind = np.asarray(kind)
    layer = np.asarray(layer)
    correct = np.asarray(correct, dtype=bool)
    cov = kind == kernels.EXIT
    wrong_cov = cov & ~correct
    hist = np.bincount(layer - 1, minlength=n_layers)
    lc = np.bincount(layer[cov] - 1, minlength=n_layers)
    lm = np.bincount(layer[wrong_cov] - 1, minlength=n_layers)
    if oracle_correct is None:
        oracle_correct = np.ones(len(kind), dtype=bool)
    system = int((cov & correct).sum() + (~cov & np.asarray(oracle_correct, dtype=bool)).sum())
    return SelectiveMetrics(
        float(alpha), float(beta), len(kind), int(cov.sum()), int(wrong_cov.sum()),
        int((~cov).sum()), hist, lc, lm, system,
    )


@dataclass
class ScoreTable:
    """Every layer's scores for a dataset, computed once and reused across thresholds."""

    conf: np.ndarray  # (m, n)
    hard: np.ndarray  # (m, n)
    correct: np.ndarray  # (m, n) bool: exit head argmax equals gold label
    pred: np.ndarray  # (m, n) argmax class

    @classmethod
    def from_model(cls, model: MultiExitModel, ds: Dataset) -> "ScoreTable":
        if len(ds) == 0:
            raise ValueError("empty evaluation set")
        probs, conf, hard = model.scores(ds.X)
        pred = probs.argmax(axis=2)
        return cls(conf, hard, pred == ds.y[:, None], pred)

    @property
    def n_layers(self) -> int:
        return self.conf.shape[1]


def _oracle_correct(oracle, ds, kind):
    if oracle is None:
        return None
    out = np.ones(len(ds), dtype=bool)
    for k in np.flatnonzero(kind != kernels.EXIT):
        out[k] = oracle(ds.X[k], int(k)) == ds.y[k]
    return out


def evaluate_table(table: ScoreTable, thresholds: Thresholds, backend=None):
    kind, layer = kernels.gate_walk(table.conf, table.hard, thresholds.alpha, thresholds.beta, backend)
    correct = table.correct[np.arange(len(layer)), layer - 1]
    m = metrics_from_decisions(kind, layer, correct, table.n_layers, thresholds.alpha, thresholds.beta)
    return m, kind, layer


def evaluate(model: MultiExitModel, ds: Dataset, thresholds: Thresholds, oracle=None, table=None):
    """Gate every sample of ``ds`` and reduce to selective metrics.

    Scores come from one batched forward pass; the walk itself only reads
    the layers it visits, so decisions match :func:`infer` exactly.
    """
    if len(ds) == 0:
        raise ValueError("empty evaluation set")
    table = table or ScoreTable.from_model(model, ds)
    m, kind, layer = evaluate_table(table, thresholds)
    oc = _oracle_correct(oracle, ds, kind)
    if oc is not None:
        correct = table.correct[np.arange(len(layer)), layer - 1]
        cov = kind == kernels.EXIT
        m.system_correct = int((cov & correct).sum() + oc[~cov].sum())
    return m


def baseline_sr_table(table: ScoreTable, alpha: float) -> SelectiveMetrics:
    n = table.n_layers
    m = table.conf.shape[0]
    kind = np.where(table.conf[:, -1] >= alpha, kernels.EXIT, kernels.DEFER)
    layer = np.full(m, n)
    return metrics_from_decisions(kind, layer, table.correct[:, -1], n, alpha, float("nan"))


def baseline_sr(model: MultiExitModel, ds: Dataset, alpha: float, table=None) -> SelectiveMetrics:
    """Softmax-response selection at the final layer, no deferral heads."""
    if len(ds) == 0:
        raise ValueError("empty evaluation set")
    return baseline_sr_table(table or ScoreTable.from_model(model, ds), alpha)


def baseline_at_coverage(table: ScoreTable, target: float) -> SelectiveMetrics:
    """Softmax-response baseline with alpha chosen to cover ``target`` of the samples.

    Covers the ceil(target*m) most confident final-layer samples (fewer if
    confidence ties straddle the cut).
    """
    conf = np.sort(table.conf[:, -1])[::-1]
    k = int(np.clip(np.ceil(target * len(conf) - 1e-9), 1, len(conf)))
    return baseline_sr_table(table, float(conf[k - 1]))


def write_metrics_csv(rows, path, n_layers) -> None:
    cols = ["alpha", "beta", "risk", "coverage", "speedup", "deferrals"] + [
        f"exit_hist_{i}" for i in range(1, n_layers + 1)
    ]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for m in rows:
            r = m.row() if isinstance(m, SelectiveMetrics) else m
            w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in cols])
