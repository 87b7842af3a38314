"""Synthetic Gaussian-mixture data, covariate-shift transforms and CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test", "all")
SHIFT_KINDS = ("translate", "noise", "rotate")


class ParseError(ValueError):
    """A data file could not be parsed."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    split: str = "all"
    note: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.X.shape[0]} feature rows but {self.y.shape[0]} labels")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features contain non-finite values")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")

    def __len__(self):
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx, split=None) -> "Dataset":
        return replace(self, X=self.X[idx], y=self.y[idx], split=split or self.split)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.n_classes == other.n_classes
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )


def class_centroids(d: int, classes: int, radius: float = 2.0) -> np.ndarray:
    """Centroids evenly spaced on a circle in the first two feature dimensions."""
    angles = 2 * np.pi * np.arange(classes) / classes
    c = np.zeros((classes, d))
    c[:, 0] = radius * np.cos(angles)
    if d > 1:
        c[:, 1] = radius * np.sin(angles)
    return c


def gen_mixture(
    d: int,
    classes: int,
    overlap: float,
    m: int,
    seed: int,
    fake_fraction: float = 0.0,
    fake_offset: float = 1.5,
) -> Dataset:
    """Draw ``m`` points from one isotropic Gaussian per class.

    Cluster spread is ``0.25 + overlap`` around centroids 4 units apart, so
    ``overlap=0`` gives well separated classes. A ``fake_fraction`` of the
    points keep their label but are drawn from a different class's cluster,
    displaced by ``fake_offset`` along a fixed direction orthogonal to the
    centroid plane. They sit nearest the wrong centroid (a model becomes
    confidently wrong on them) yet share a common signature a probe can learn.
    """
    if d < 2 or classes < 2:
        raise ValueError("need d >= 2 and at least 2 classes")
    if m < classes:
        raise ValueError("need at least one sample per class (m >= classes)")
    if overlap < 0 or not 0 <= fake_fraction < 1:
        raise ValueError("overlap must be >= 0 and fake_fraction in [0, 1)")
    rng = np.random.default_rng(seed)
    centroids = class_centroids(d, classes)
    spread = 0.25 + overlap
    y = np.arange(m) % classes
    rng.shuffle(y)
    source = y.copy()
    n_fake = int(round(fake_fraction * m))
    fake_idx = rng.choice(m, size=n_fake, replace=False) if n_fake else np.array([], dtype=int)
    # some other class, uniformly
    source[fake_idx] = (y[fake_idx] + rng.integers(1, classes, size=n_fake)) % classes
    X = centroids[source] + spread * rng.standard_normal((m, d))
    if n_fake and d > 2:
        direction = np.zeros(d)
        direction[2:] = rng.standard_normal(d - 2)
        direction /= np.linalg.norm(direction)
        X[fake_idx] += fake_offset * direction
    note = (
        f"gaussian mixture d={d} classes={classes} overlap={overlap} m={m} seed={seed} "
        f"fake_fraction={fake_fraction}"
    )
    return Dataset(X, y, classes, "all", note)


def train_val_test_split(ds: Dataset, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Shuffle once and cut into train / val / test datasets."""
    if abs(sum(fractions) - 1.0) > 1e-12 or min(fractions) <= 0:
        raise ValueError("fractions must be positive and sum to 1")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_train = int(round(fractions[0] * len(ds)))
    n_val = int(round(fractions[1] * len(ds)))
    return (
        ds.subset(perm[:n_train], "train"),
        ds.subset(perm[n_train : n_train + n_val], "val"),
        ds.subset(perm[n_train + n_val :], "test"),
    )


def shift(ds: Dataset, kind: str, magnitude: float, seed: int = 0) -> Dataset:
    """Covariate shift that keeps labels.

    ``translate`` moves every point ``magnitude`` along the all-ones
    direction, ``noise`` adds N(0, magnitude^2) per feature, ``rotate`` turns
    the first two dimensions by ``magnitude`` radians.
    """
    if kind not in SHIFT_KINDS:
        raise ValueError(f"unknown shift kind {kind!r}; expected one of {SHIFT_KINDS}")
    if magnitude < 0:
        raise ValueError("shift magnitude must be >= 0")
    X = ds.X.copy()
    if magnitude > 0:
        if kind == "translate":
            X += magnitude / np.sqrt(ds.dim)
        elif kind == "noise":
            X += magnitude * np.random.default_rng(seed).standard_normal(X.shape)
        else:
            c, s = np.cos(magnitude), np.sin(magnitude)
            x0, x1 = X[:, 0].copy(), X[:, 1].copy()
            X[:, 0] = c * x0 - s * x1
            X[:, 1] = s * x0 + c * x1
    note = f"{ds.note}; shift {kind} {magnitude}".strip("; ")
    return replace(ds, X=X, note=note)


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j + 1}" for j in range(ds.dim)] + ["label"])
        for row, label in zip(ds.X, ds.y):
            # repr() of a float64 is the shortest string that round-trips exactly
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path, n_classes: int | None = None, split: str = "all") -> Dataset:
    """Read ``f1..fd,label`` CSV. ``n_classes`` defaults to max label + 1."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if not header or header[-1].strip() != "label":
            raise ParseError(f"{path}:1: missing 'label' column")
        d = len(header) - 1
        expected = [f"f{j + 1}" for j in range(d)]
        if [h.strip() for h in header[:-1]] != expected or d == 0:
            raise ParseError(f"{path}:1: feature columns must be named f1..f{d}")
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ParseError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
            try:
                feats = [float(v) for v in row[:-1]]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric feature") from None
            try:
                label = int(row[-1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: label must be an integer") from None
            if not np.all(np.isfinite(feats)):
                raise ParseError(f"{path}:{lineno}: non-finite feature")
            rows.append(feats)
            labels.append(label)
    X = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    y = np.array(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1 if y.size else 2
    try:
        return Dataset(X, y, n_classes, split, f"loaded from {path.name}")
    except ValueError as e:
        raise ParseError(f"{path}: {e}") from None
