"""Build deferral-head training targets from per-layer true-class confidence."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .data import Dataset
from .model import MultiExitModel

DEFAULT_K = 33.0


@dataclass(frozen=True)
class ConfidenceProfile:
    sample_id: int
    probs: np.ndarray  # P_i(y*|x), i = 1..n
    mu: float
    sigma: float  # population variance, not a standard deviation


@dataclass
class HardnessLabeledSet:
    ids: np.ndarray
    X: np.ndarray
    z: np.ndarray  # 1 = hard
    k_percent: float
    profiles: list

    def __len__(self):
        return len(self.ids)

    @property
    def n_hard(self) -> int:
        return int(self.z.sum())


def make_profile(sample_id: int, probs) -> ConfidenceProfile:
    probs = np.asarray(probs, dtype=np.float64)
    mu = float(probs.mean())
    sigma = float(((probs - mu) ** 2).mean())
    return ConfidenceProfile(int(sample_id), probs, mu, sigma)


def profile(model: MultiExitModel, ds: Dataset) -> list[ConfidenceProfile]:
    """One confidence profile per sample, ids are row indices of ``ds``."""
    tcp = model.true_class_probs(ds.X, ds.y)
    return [make_profile(i, tcp[i]) for i in range(len(ds))]


def hard_count(k_percent: float, m: int) -> int:
    """round(K*m/100) with halves rounded up, computed in exact decimal arithmetic."""
    exact = Fraction(repr(float(k_percent))) * m / 100
    return math.floor(exact + Fraction(1, 2))


def label_hard(profiles, k_percent: float = DEFAULT_K, X=None) -> HardnessLabeledSet:
    """Label the ``k_percent`` lowest-mean-confidence samples hard.

    Ties in the mean are broken by ascending sample id. The variance is
    carried along for reporting only.
    """
    if not 0 < k_percent < 100:
        raise ValueError(f"K must lie strictly between 0 and 100, got {k_percent}")
    ids = np.array([p.sample_id for p in profiles], dtype=np.int64)
    mu = np.array([p.mu for p in profiles])
    order = np.lexsort((ids, mu))
    z = np.zeros(len(profiles), dtype=np.int64)
    z[order[: hard_count(k_percent, len(profiles))]] = 1
    if X is None:
        X = np.zeros((len(profiles), 0))
    return HardnessLabeledSet(ids, np.asarray(X, dtype=np.float64), z, k_percent, list(profiles))


def build_dc_dataset(model: MultiExitModel, ds: Dataset, k_percent: float = DEFAULT_K):
    return label_hard(profile(model, ds), k_percent, ds.X)


def write_profiles_csv(labeled: HardnessLabeledSet, path) -> None:
    n = len(labeled.profiles[0].probs) if labeled.profiles else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id"] + [f"p_layer_{i + 1}" for i in range(n)] + ["mu", "sigma", "label"])
        for p, z in zip(labeled.profiles, labeled.z):
            w.writerow([p.sample_id] + [repr(float(v)) for v in p.probs]
                       + [repr(p.mu), repr(p.sigma), int(z)])


def read_profiles_csv(path) -> tuple[list[ConfidenceProfile], np.ndarray]:
    profiles, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n = sum(h.startswith("p_layer_") for h in header)
        for row in reader:
            probs = np.array([float(v) for v in row[1 : 1 + n]])
            profiles.append(ConfidenceProfile(int(row[0]), probs, float(row[1 + n]), float(row[2 + n])))
            labels.append(int(row[3 + n]))
    return profiles, np.array(labels, dtype=np.int64)
