"""Admissible deferral-error bounds and their Monte Carlo check.

For an exit classifier with error rate q, a deferral head with error rate
below ``1 / (1 + (1/gamma - 1) * q / (1 - q))`` keeps the error rate among
the samples it lets through under gamma. Applied with the worst per-layer
rates it bounds the whole multi-exit model.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels

log = logging.getLogger(__name__)


def _check_open_unit(**kw):
    for name, v in kw.items():
        if not 0 < v < 1:
            raise ValueError(f"{name} must lie strictly in (0, 1), got {v}")


def lemma_bound(q: float, gamma: float) -> float:
    """Largest deferral error rate that keeps one exit's selective risk below ``gamma``."""
    _check_open_unit(q=q, gamma=gamma)
    return 1.0 / (1.0 + (1.0 / gamma - 1.0) * (q / (1.0 - q)))


def theorem_bound(q_max: float, gamma: float) -> float:
    """Same bound driven by the worst exit error rate; covers the whole model."""
    return lemma_bound(q_max, gamma)


@dataclass
class BoundSpec:
    gamma: float
    q: np.ndarray  # exit error rate per layer
    q_d: np.ndarray  # deferral error rate per layer
    a: np.ndarray | None = None  # probability of passing the reach gate at each layer
    b: np.ndarray | None = None  # probability that confidence clears alpha at each layer

    def __post_init__(self):
        self.q = np.atleast_1d(np.asarray(self.q, dtype=np.float64))
        self.q_d = np.atleast_1d(np.asarray(self.q_d, dtype=np.float64))
        n = len(self.q)
        if self.q_d.shape != (n,):
            raise ValueError("q and q_d must have one entry per layer")
        self.a = np.ones(n) if self.a is None else np.asarray(self.a, dtype=np.float64)
        self.b = np.ones(n) if self.b is None else np.asarray(self.b, dtype=np.float64)
        _check_open_unit(gamma=self.gamma)
        if np.any((self.q <= 0) | (self.q >= 1)):
            raise ValueError("exit error rates must lie in (0, 1)")
        if np.any((self.q_d < 0) | (self.q_d >= 1)):
            raise ValueError("deferral error rates must lie in [0, 1)")
        if np.any((self.a <= 0) | (self.a > 1)) or np.any((self.b <= 0) | (self.b > 1)):
            raise ValueError("gate constants a, b must lie in (0, 1]")

    @property
    def n_layers(self) -> int:
        return len(self.q)

    @classmethod
    def uniform(cls, n, q, q_d, gamma, a=1.0, b=1.0):
        return cls(gamma, np.full(n, q), np.full(n, q_d), np.full(n, a), np.full(n, b))


@dataclass
class SimulationResult:
    trials: int
    covered: np.ndarray  # pipeline walk, per layer
    miscovered: np.ndarray
    deferred: np.ndarray
    cond_covered: np.ndarray  # each layer judged as if reached
    cond_miscovered: np.ndarray

    @property
    def risk(self) -> float:
        c = self.covered.sum()
        return float(self.miscovered.sum() / c) if c else 0.0

    @property
    def std_error(self) -> float:
        c = self.covered.sum()
        if not c:
            return 0.0
        r = self.risk
        return math.sqrt(r * (1.0 - r) / c)

    @property
    def half_width(self) -> float:
        return 3.0 * self.std_error

    def layer_risk(self) -> np.ndarray:
        """Conditional-on-reach selective risk at each layer."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.cond_covered > 0,
                            self.cond_miscovered / np.maximum(self.cond_covered, 1), np.nan)

    def layer_std_error(self) -> np.ndarray:
        r = self.layer_risk()
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.sqrt(r * (1 - r) / self.cond_covered)


def simulate_pipeline(spec: BoundSpec, trials: int, seed: int = 0, backend=None,
                      chunk: int = 50_000) -> SimulationResult:
    """Monte Carlo draw of the binary exit pipeline the bound is derived for.

    Per trial and layer, four uniforms decide: exit-head mistake (prob q_t),
    deferral-head mistake (prob q_d_t), reach gate (prob a_t) and confidence
    clearing alpha (prob b_t). The deferral head lets a sample through when
    it errs on a misclassified sample or is right on a correct one. Trials are
    drawn in fixed chunks with per-chunk seeds, so counts are reproducible
    and independent of the kernel backend.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    n = spec.n_layers
    counts = np.zeros((5, n), dtype=np.int64)
    for c, start in enumerate(range(0, trials, chunk)):
        size = min(chunk, trials - start)
        u = np.random.default_rng([seed, c]).random((size, n, 4))
        counts += kernels.simulate_walk(u, spec.q, spec.q_d, spec.a, spec.b, backend)
    return SimulationResult(trials, *counts)


@dataclass
class BoundReport:
    gamma: float
    q_max: float | None
    q_d_max: float
    bound: float | None
    bound_satisfied: bool
    empirical_risk: float
    half_width: float
    risk_below_gamma: bool
    disagreement: bool
    unavailable_layers: list

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, float):
                v = repr(v)
            elif v is None:
                v = "unavailable"
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


def verify_model_bound(layer_covered, layer_miscovered, q_d, gamma, empirical_risk=None,
                       covered_total=None) -> BoundReport:
    """Check measured per-layer rates against the worst-case bound.

    Exit error q_i is measured among samples covered at layer i; layers with
    no covered sample are excluded with a warning. A bound that holds while
    measured risk still reaches gamma (or the reverse) is flagged.
    """
    _check_open_unit(gamma=gamma)
    lc = np.asarray(layer_covered)
    lm = np.asarray(layer_miscovered)
    q_d = np.asarray(q_d, dtype=np.float64)
    unavailable = [int(i) + 1 for i in np.flatnonzero(lc == 0)]
    if unavailable:
        log.warning("no covered samples at layers %s; their exit error rate is unavailable",
                    unavailable)
    ok = lc > 0
    q_max = float((lm[ok] / lc[ok]).max()) if ok.any() else None
    q_d_max = float(q_d.max())
    if q_max is None:
        bound, satisfied = None, False
    elif q_max == 0.0:
        # a perfect exit head admits any deferral error below 1
        bound, satisfied = 1.0, q_d_max < 1.0
    else:
        bound = theorem_bound(min(q_max, 1 - 1e-12), gamma)
        satisfied = q_d_max < bound
    if empirical_risk is None:
        total = int(lc.sum()) if covered_total is None else covered_total
        empirical_risk = float(lm.sum() / total) if total else 0.0
    total = int(lc.sum()) if covered_total is None else covered_total
    hw = 3.0 * math.sqrt(empirical_risk * (1 - empirical_risk) / total) if total else 0.0
    below = empirical_risk < gamma
    return BoundReport(gamma, q_max, q_d_max, bound, bool(satisfied), float(empirical_risk), hw,
                       bool(below), bool(satisfied and not below), unavailable)
